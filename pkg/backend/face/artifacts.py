"""
Artifact files
JSON documents for assets, priors, observations, parameters, reports and
metrics. Each document carries a kind tag, a format version, a header with
the dimensions, and the resolved run config that produced it.
"""
from contextlib import contextmanager
import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from .errors import AssetError
from .face_model import EyeballProxy, ModelAsset, Parameters, PARAMETER_FIELDS, TeethHull
from .landmarks import ObservationSet
from .priors import GmmPrior

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
PathLike = Union[str, Path]


class Artifact(BaseModel):
    kind: str
    version: int = FORMAT_VERSION
    header: Dict[str, Any] = Field(default_factory=dict)
    config: Dict[str, Any] = Field(default_factory=dict)
    arrays: Dict[str, Any] = Field(default_factory=dict)
    items: Dict[str, List[Dict[str, Any]]] = Field(default_factory=dict)
    payload: Dict[str, Any] = Field(default_factory=dict)

    def array(self, name: str, dtype=np.float64) -> np.ndarray:
        if name not in self.arrays:
            raise AssetError(f"{self.kind} file has no '{name}' array")
        return np.asarray(self.arrays[name], dtype=dtype)


def _lists(arrays: Mapping[str, np.ndarray]) -> Dict[str, Any]:
    return {name: np.asarray(value).tolist() for name, value in arrays.items()}


def write_artifact(path: PathLike, artifact: Artifact) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(artifact.model_dump_json(), encoding="utf-8")
    logger.info("Wrote %s to %s", artifact.kind, path)
    return path


def read_artifact(path: PathLike, kind: str) -> Artifact:
    path = Path(path)
    if not path.is_file():
        raise AssetError(f"{kind} file not found: {path}")
    try:
        artifact = Artifact.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as exc:
        raise AssetError(f"{path} is not a valid artifact file: {exc.error_count()} error(s)") from exc
    if artifact.kind != kind:
        raise AssetError(f"{path} holds a '{artifact.kind}' document, expected '{kind}'")
    if artifact.version != FORMAT_VERSION:
        raise AssetError(f"{path} has format version {artifact.version}, expected {FORMAT_VERSION}")
    return artifact


@contextmanager
def _decoding(path: PathLike, kind: str) -> Iterator[None]:
    """Turn shape and header errors while rebuilding a document into AssetError"""
    try:
        yield
    except AssetError:
        raise
    except (KeyError, ValueError, TypeError, IndexError, np.linalg.LinAlgError) as exc:
        raise AssetError(f"malformed {kind} file {path}: {type(exc).__name__}: {exc}") from exc


# Model asset

def save_asset(path: PathLike, asset: ModelAsset, seed: Optional[int] = None, config: Optional[dict] = None) -> Path:
    header = {
        "vertex_count": asset.vertex_count,
        "identity_dims": asset.identity_dims,
        "expression_dims": asset.expression_dims,
        "joint_count": asset.joint_count,
        "landmark_count": asset.landmark_count,
        "seed": seed,
    }
    arrays = _lists({
        "base_vertices": asset.base_vertices,
        "identity_basis": asset.identity_basis,
        "expression_basis": asset.expression_basis,
        "joint_parents": asset.joint_parents,
        "base_joints": asset.base_joints,
        "joint_identity_basis": asset.joint_identity_basis,
        "skinning_weights": asset.skinning_weights,
        "landmark_vertices": asset.landmark_vertices,
        "landmark_weights": asset.landmark_weights,
        "lip_vertices": asset.lip_vertices,
        "faces": asset.faces,
    })
    items = {
        "eyeballs": [
            {"joint": e.joint, "center_offset": e.center_offset.tolist(), "radius": e.radius,
             "guarded_vertices": e.guarded_vertices.tolist()}
            for e in asset.eyeballs
        ],
        "teeth_hulls": [
            {"joint": h.joint, "normals": h.normals.tolist(), "offsets": h.offsets.tolist()}
            for h in asset.teeth_hulls
        ],
    }
    artifact = Artifact(kind="model_asset", header=header, config=config or {}, arrays=arrays, items=items,
                        payload={"joint_names": list(asset.joint_names)})
    return write_artifact(path, artifact)


def load_asset(path: PathLike) -> ModelAsset:
    """Read and validate a model asset file"""
    doc = read_artifact(path, "model_asset")
    with _decoding(path, "model_asset"):
        return _asset_from(doc)


def _asset_from(doc: Artifact) -> ModelAsset:
    eyeballs = tuple(
        EyeballProxy(int(e["joint"]), np.asarray(e["center_offset"], dtype=np.float64), float(e["radius"]),
                     np.asarray(e["guarded_vertices"], dtype=np.int64))
        for e in doc.items.get("eyeballs", [])
    )
    hulls = tuple(
        TeethHull(int(h["joint"]), np.asarray(h["normals"], dtype=np.float64).reshape(-1, 3),
                  np.asarray(h["offsets"], dtype=np.float64))
        for h in doc.items.get("teeth_hulls", [])
    )
    nb = int(doc.header["identity_dims"])
    ne = int(doc.header["expression_dims"])
    N = int(doc.header["vertex_count"])
    return ModelAsset(
        base_vertices=doc.array("base_vertices").reshape(-1, 3),
        identity_basis=doc.array("identity_basis").reshape(N, 3, nb),
        expression_basis=doc.array("expression_basis").reshape(N, 3, ne),
        joint_parents=doc.array("joint_parents", np.int64),
        base_joints=doc.array("base_joints").reshape(-1, 3),
        joint_identity_basis=doc.array("joint_identity_basis").reshape(-1, 3, nb),
        skinning_weights=doc.array("skinning_weights"),
        landmark_vertices=doc.array("landmark_vertices", np.int64),
        landmark_weights=doc.array("landmark_weights"),
        eyeballs=eyeballs,
        teeth_hulls=hulls,
        lip_vertices=doc.array("lip_vertices", np.int64),
        faces=doc.array("faces", np.int64).reshape(-1, 3),
        joint_names=tuple(doc.payload.get("joint_names", ())),
    )


# Identity prior

def save_prior(path: PathLike, prior: GmmPrior, seed: Optional[int] = None, config: Optional[dict] = None) -> Path:
    artifact = Artifact(
        kind="gmm_prior",
        header={"components": prior.components, "dims": prior.dims, "seed": seed},
        config=config or {},
        arrays=_lists({"weights": prior.weights, "means": prior.means, "cholesky": prior.cholesky}),
    )
    return write_artifact(path, artifact)


def load_prior(path: PathLike) -> GmmPrior:
    doc = read_artifact(path, "gmm_prior")
    with _decoding(path, "gmm_prior"):
        return GmmPrior.from_cholesky(doc.array("weights"), doc.array("means"), doc.array("cholesky"))


# Parameters

def _parameter_arrays(params: Parameters) -> Dict[str, Any]:
    return _lists({name: getattr(params, name) for name in PARAMETER_FIELDS})


def _parameters_from(doc: Artifact) -> Parameters:
    values = {name: doc.array(name) for name in PARAMETER_FIELDS}
    F = int(doc.header["frames"])
    C = int(doc.header["cameras"])
    return Parameters(
        beta=values["beta"].reshape(-1),
        psi=values["psi"].reshape(F, -1),
        theta=values["theta"].reshape(F, -1),
        cam_rot=values["cam_rot"].reshape(C, 3),
        cam_trans=values["cam_trans"].reshape(C, 3),
        focal=values["focal"].reshape(C),
    )


def save_parameters(path: PathLike, params: Parameters, config: Optional[dict] = None,
                    seed: Optional[int] = None, extra: Optional[dict] = None) -> Path:
    artifact = Artifact(
        kind="parameters",
        header={"frames": params.frames, "cameras": params.cameras, "seed": seed},
        config=config or {},
        arrays=_parameter_arrays(params),
        payload=extra or {},
    )
    return write_artifact(path, artifact)


def load_parameters(path: PathLike) -> Parameters:
    doc = read_artifact(path, "parameters")
    with _decoding(path, "parameters"):
        return _parameters_from(doc)


# Observations

def save_observations(path: PathLike, obs: ObservationSet, config: Optional[dict] = None,
                      seed: Optional[int] = None) -> Path:
    arrays = {
        "frame_idx": obs.frame_idx,
        "camera_idx": obs.camera_idx,
        "landmark_idx": obs.landmark_idx,
        "mu": obs.mu,
        "sigma": obs.sigma,
    }
    if obs.image_sizes is not None:
        arrays["image_sizes"] = obs.image_sizes
    artifact = Artifact(
        kind="observations",
        header={"frames": obs.frames, "cameras": obs.cameras, "landmarks": obs.landmarks,
                "count": len(obs), "seed": seed},
        config=config or {},
        arrays=_lists(arrays),
    )
    return write_artifact(path, artifact)


def load_observations(path: PathLike) -> ObservationSet:
    doc = read_artifact(path, "observations")
    with _decoding(path, "observations"):
        return _observations_from(doc)


def _observations_from(doc: Artifact) -> ObservationSet:
    header = doc.header
    return ObservationSet(
        frames=int(header["frames"]),
        cameras=int(header["cameras"]),
        landmarks=int(header["landmarks"]),
        frame_idx=doc.array("frame_idx", np.int64),
        camera_idx=doc.array("camera_idx", np.int64),
        landmark_idx=doc.array("landmark_idx", np.int64),
        mu=doc.array("mu").reshape(-1, 2),
        sigma=doc.array("sigma"),
        image_sizes=doc.array("image_sizes").reshape(-1, 2) if "image_sizes" in doc.arrays else None,
    )


# Reports and tables

def save_document(path: PathLike, kind: str, payload: BaseModel, config: Optional[dict] = None,
                  seed: Optional[int] = None) -> Path:
    """Pydantic result (solve report, metrics) wrapped as an artifact"""
    artifact = Artifact(kind=kind, header={"seed": seed}, config=config or {},
                        payload=payload.model_dump(mode="json"))
    return write_artifact(path, artifact)


def export_obj(path: PathLike, vertices: np.ndarray, faces: np.ndarray) -> Path:
    """Wavefront OBJ, vertices in asset order, 1-based faces"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in faces]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_csv(path: PathLike, rows: Iterable[Mapping[str, Any]], config: Optional[dict] = None) -> Path:
    """Rows as CSV; the producing config goes to a `.config.json` sidecar"""
    rows = list(rows)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fieldnames: List[str] = []
    for row in rows:
        fieldnames.extend(k for k in row if k not in fieldnames)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    if config is not None:
        path.with_suffix(".config.json").write_text(json.dumps(config, sort_keys=True), encoding="utf-8")
    logger.info("Wrote %d rows to %s", len(rows), path)
    return path
