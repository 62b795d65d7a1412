"""
Run configuration
One JSON document describes a whole pipeline run; every field is optional.
"""
import os
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, Field, model_validator

from .camera import CameraConfig, ring_cameras
from .energy import EnergyConfig
from .errors import AssetError
from .landmarks import NoiseSpec
from .solver import SolveOptions


class PathsConfig(BaseModel):
    """Input files default to the standard names inside output_dir"""
    asset: Optional[str] = None
    prior: Optional[str] = None
    observations: Optional[str] = None
    truth: Optional[str] = None
    fit: Optional[str] = None
    output_dir: str = "./data/runs/default"

    def resolve(self, name: str) -> Path:
        value = getattr(self, name)
        if value is not None:
            return Path(value)
        return Path(self.output_dir) / DEFAULT_FILES[name]


DEFAULT_FILES = {
    "asset": "asset.json",
    "prior": "prior.json",
    "observations": "observations.json",
    "truth": "truth.json",
    "fit": "fit.json",
}


class AssetDims(BaseModel):
    vertex_count: int = Field(default=602, ge=18)
    identity_dims: int = Field(default=16, ge=1)
    expression_dims: int = Field(default=24, ge=1)
    landmark_count: int = Field(default=320, ge=1)
    prior_components: int = Field(default=4, ge=1)


class RigConfig(BaseModel):
    cameras: List[CameraConfig] = Field(default_factory=lambda: [CameraConfig(focal=1000.0)])

    @classmethod
    def ring(cls, count: int, focal: float = 1000.0) -> "RigConfig":
        return cls(cameras=ring_cameras(count, focal=focal))


class SceneConfig(BaseModel):
    """
    Ground-truth sampling for synthetic scenes. Expression and pose move
    linearly from a start to an end sample across the frames.
    """
    frames: int = Field(default=1, ge=1)
    head_distance: float = Field(default=60.0, gt=0)
    expression_range: float = Field(default=0.5, ge=0)
    root_rotation_range: float = Field(default=0.2, ge=0)
    joint_rotation_range: float = Field(default=0.08, ge=0)
    translation_range: float = Field(default=1.5, ge=0)
    noise: NoiseSpec = Field(default_factory=NoiseSpec)


class InitConfig(BaseModel):
    """neutral: zero shape and pose at the head distance; perturbed: ground truth plus noise"""
    kind: Literal["neutral", "perturbed"] = "neutral"
    shape_noise: float = Field(default=0.05, ge=0)
    rotation_noise: float = Field(default=0.02, ge=0)
    translation_noise: float = Field(default=0.5, ge=0)


class BenchConfig(BaseModel):
    landmark_counts: List[int] = Field(default_factory=lambda: [68, 320, 703])
    thresholds: List[float] = Field(default_factory=lambda: [0.0, 1e-8, 1e-6])
    repetitions: int = Field(default=3, ge=1)
    # timing sweeps run a fixed number of LM iterations per solve
    iterations: int = Field(default=10, ge=1)
    trials: int = Field(default=20, ge=1)
    views: int = Field(default=4, ge=2)


class RunConfig(BaseModel):
    paths: PathsConfig = Field(default_factory=PathsConfig)
    asset: AssetDims = Field(default_factory=AssetDims)
    rig: RigConfig = Field(default_factory=RigConfig)
    scene: SceneConfig = Field(default_factory=SceneConfig)
    init: InitConfig = Field(default_factory=InitConfig)
    energy: EnergyConfig = Field(default_factory=EnergyConfig)
    solve: SolveOptions = Field(default_factory=SolveOptions)
    bench: BenchConfig = Field(default_factory=BenchConfig)
    mode: Literal["offline", "tracking"] = "offline"
    seed: int = Field(default=0, ge=0)
    workers: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)
    export_meshes: bool = False

    @model_validator(mode="after")
    def _sync_solver(self):
        # mode and workers are top-level knobs; the solver reads them from its options
        self.solve = self.solve.model_copy(update={"mode": self.mode, "workers": self.workers})
        return self

    @classmethod
    def load(cls, path: Optional[str] = None) -> "RunConfig":
        if path is None:
            return cls()
        file = Path(path)
        if not file.is_file():
            raise AssetError(f"config file not found: {file}")
        return cls.model_validate_json(file.read_text(encoding="utf-8"))

    def override(self, **values) -> "RunConfig":
        """Copy with CLI overrides applied (None values are ignored), revalidated"""
        data = self.model_dump()
        for key, value in values.items():
            if value is None:
                continue
            if key == "output_dir":
                data["paths"]["output_dir"] = value
            else:
                data[key] = value
        return RunConfig.model_validate(data)

    def resolved(self) -> dict:
        """The config as embedded in every output file"""
        return self.model_dump(mode="json")
