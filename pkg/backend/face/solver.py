"""
Levenberg-Marquardt fitter
Direct sparse accumulation of J^T J and J^T r over per-block parameter sets,
Cholesky solves of the damped system, and a dense-Jacobian reference solver
used as an equivalence oracle.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Literal, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from pydantic import BaseModel, Field, field_validator

from .camera import CameraRig
from .energy import (
    PARAMETER_GROUPS,
    EnergyConfig,
    ParameterLayout,
    ResidualSystem,
    active_mask,
    assemble,
    system_jacobian,
)
from .errors import ContractViolation, SolverError
from .face_model import ModelAsset, Parameters
from .landmarks import ObservationSet
from .priors import GmmPrior

logger = logging.getLogger(__name__)

CHUNK_SIZE = 256
CHOLESKY_FLOOR = 1e-12
MAX_FACTOR_ATTEMPTS = 8
# setup: layouts and windows; update: step application and iteration records
PHASES = ("setup", "residuals", "accumulation", "factorization", "solve", "update")


class SolveOptions(BaseModel):
    mode: Literal["offline", "tracking"] = "offline"
    max_iterations: Optional[int] = Field(default=None, ge=0)
    initial_damping: float = Field(default=1e-3, gt=0)
    damping_down: float = Field(default=3.0, gt=1)
    damping_up: float = Field(default=5.0, gt=1)
    max_damping: float = Field(default=1e16, gt=0)
    gradient_tolerance: float = Field(default=1e-10, gt=0)
    energy_tolerance: float = Field(default=1e-12, gt=0)
    step_tolerance: float = Field(default=1e-12, gt=0)
    # tracking: identity and cameras are re-estimated every n-th frame (0 = first frame only)
    refresh_interval: int = Field(default=0, ge=0)
    fixed_groups: List[str] = Field(default_factory=list)
    workers: int = Field(default=1, ge=1)

    @field_validator("fixed_groups")
    @classmethod
    def _known_groups(cls, value: List[str]) -> List[str]:
        unknown = sorted(set(value) - set(PARAMETER_GROUPS))
        if unknown:
            raise ValueError(f"unknown parameter groups {unknown}")
        return value

    @property
    def iteration_limit(self) -> int:
        if self.max_iterations is not None:
            return self.max_iterations
        return 200 if self.mode == "offline" else 10


class IterationRecord(BaseModel):
    iteration: int
    frame: Optional[int] = None
    energy: float
    trial_energy: float
    terms: Dict[str, float]
    lm_damping: float
    accepted: bool
    step_norm: float
    gradient_norm: float


class SolveReport(BaseModel):
    """Diagnostics of one fit; serialized next to the fitted parameters"""
    mode: str = "offline"
    solver: str = "sparse"
    iterations: List[IterationRecord] = Field(default_factory=list)
    initial_energy: float = 0.0
    final_energy: float = 0.0
    final_terms: Dict[str, float] = Field(default_factory=dict)
    gradient_norm: float = 0.0
    termination_reason: str = "max_iterations"
    timings: Dict[str, float] = Field(default_factory=lambda: {phase: 0.0 for phase in PHASES})
    total_time: float = 0.0
    frame_times: List[float] = Field(default_factory=list)
    dropped_observations: int = 0

    @property
    def iteration_count(self) -> int:
        return len(self.iterations)

    @property
    def accepted_steps(self) -> int:
        return sum(1 for it in self.iterations if it.accepted)

    def energy_trace(self) -> List[float]:
        return [it.energy for it in self.iterations]

    @contextmanager
    def phase(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] += time.perf_counter() - start


@dataclass(frozen=True, eq=False)
class NormalEquations:
    """J^T J and J^T r over the active parameters, in layout order"""
    jtj: np.ndarray
    jtr: np.ndarray


@dataclass(frozen=True)
class LMStep:
    delta: np.ndarray
    lm_damping: float
    floored: bool
    factor_time: float
    solve_time: float


def _active_positions(system: ResidualSystem) -> Tuple[np.ndarray, int]:
    n = int(system.active.sum())
    position = np.full(system.layout.size, -1, dtype=np.int64)
    position[system.active] = np.arange(n)
    return position, n


def _accumulate_chunk(blocks, jacobians, position: np.ndarray, n: int) -> Tuple[np.ndarray, np.ndarray]:
    jtj = np.zeros((n, n))
    jtr = np.zeros(n)
    for block, jac in zip(blocks, jacobians):
        if not jac.size:
            continue
        idx = position[block.params]
        jtj[np.ix_(idx, idx)] += jac.T @ jac
        jtr[idx] += jac.T @ block.residual
    return jtj, jtr


def accumulate_normal_equations(
    system: ResidualSystem,
    jacobians: Optional[Sequence[np.ndarray]] = None,
    workers: int = 1,
    chunk_size: int = CHUNK_SIZE,
) -> NormalEquations:
    """
    Sum the per-block outer products J_i^T J_i and J_i^T r_i into the active
    parameter space, each confined to its block's sparsity set. Blocks are
    split into fixed chunks whose partial sums are reduced in chunk order, so
    the result does not depend on the worker count.
    """
    if jacobians is None:
        jacobians = [block.jacobian for block in system.blocks]
    position, n = _active_positions(system)
    blocks = system.blocks
    tasks = [(blocks[s: s + chunk_size], jacobians[s: s + chunk_size]) for s in range(0, len(blocks), chunk_size)]

    def run(task):
        return _accumulate_chunk(task[0], task[1], position, n)

    if workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(run, tasks))
    else:
        partials = [run(task) for task in tasks]

    jtj = np.zeros((n, n))
    jtr = np.zeros(n)
    for part_jtj, part_jtr in partials:
        jtj += part_jtj
        jtr += part_jtr
    return NormalEquations(jtj, jtr)


def dense_normal_equations(system: ResidualSystem) -> NormalEquations:
    """J^T J and J^T r from the fully materialized Jacobian"""
    J = system.dense_jacobian()
    return NormalEquations(J.T @ J, J.T @ system.residual_vector())


def lm_step(
    normal_eqs: NormalEquations,
    lm_damping: float,
    damping_up: float = 5.0,
    max_attempts: int = MAX_FACTOR_ATTEMPTS,
) -> LMStep:
    """
    Solve (J^T J + lambda diag(J^T J)) delta = -J^T r by Cholesky. A failed
    factorization first gets a diagonal floor of 1e-12 max(diag); after that
    the damping grows by `damping_up` per retry.
    """
    if lm_damping <= 0:
        raise ContractViolation(f"LM damping must be positive, got {lm_damping}")
    jtj, jtr = normal_eqs.jtj, normal_eqs.jtr
    n = jtr.shape[0]
    if n == 0:
        return LMStep(np.zeros(0), lm_damping, False, 0.0, 0.0)

    diag = np.diag(jtj).copy()
    base = jtj
    floored = False
    factor_time = 0.0
    for attempt in range(max_attempts):
        start = time.perf_counter()
        damped = base + lm_damping * np.diag(diag)
        try:
            factor = scipy.linalg.cho_factor(damped, lower=True, check_finite=True)
        except (np.linalg.LinAlgError, ValueError):
            factor_time += time.perf_counter() - start
            if not floored:
                floor = CHOLESKY_FLOOR * max(float(diag.max()), 0.0)
                logger.warning("Cholesky failed, adding diagonal floor %.3g", floor)
                base = jtj + floor * np.eye(n)
                floored = True
            else:
                lm_damping *= damping_up
                logger.warning("Cholesky failed again, damping raised to %.3g", lm_damping)
            continue
        factor_time += time.perf_counter() - start
        start = time.perf_counter()
        delta = scipy.linalg.cho_solve(factor, -jtr, check_finite=False)
        return LMStep(delta, lm_damping, floored, factor_time, time.perf_counter() - start)

    raise SolverError(
        f"damped normal equations not positive definite after {max_attempts} attempts",
        diagnostics={
            "lm_damping": lm_damping,
            "min_diagonal": float(diag.min()),
            "max_diagonal": float(diag.max()),
            "size": n,
        },
    )


NormalEquationBuilder = Callable[[ResidualSystem], NormalEquations]


@dataclass
class _Problem:
    asset: ModelAsset
    obs: ObservationSet
    rig: CameraRig
    prior: Optional[GmmPrior]
    config: EnergyConfig
    layout: ParameterLayout
    active: np.ndarray

    def evaluate(self, x: np.ndarray) -> ResidualSystem:
        return assemble(self.asset, self.layout.unpack(x), self.rig, self.obs, self.prior, self.config, self.active)


def _run_lm(
    problem: _Problem,
    x: np.ndarray,
    options: SolveOptions,
    build: NormalEquationBuilder,
    report: SolveReport,
    frame: Optional[int] = None,
) -> np.ndarray:
    """Damped LM from x; accepts a step only when the exact energy decreases"""
    with report.phase("residuals"):
        system = problem.evaluate(x)
    energy = system.total_energy
    if not np.isfinite(energy):
        raise SolverError("initial energy is not finite", diagnostics={"terms": system.term_energies()})
    if frame is None or frame == 0:
        report.initial_energy = energy

    active_idx = np.flatnonzero(problem.active)
    lm_damping = options.initial_damping
    reason = "max_iterations"
    gradient_norm = 0.0
    for _ in range(options.iteration_limit):
        with report.phase("accumulation"):
            normal_eqs = build(system)
            gradient_norm = float(np.max(np.abs(normal_eqs.jtr))) if normal_eqs.jtr.size else 0.0
        if gradient_norm <= options.gradient_tolerance:
            reason = "gradient"
            break

        step = lm_step(normal_eqs, lm_damping, options.damping_up)
        lm_damping = step.lm_damping
        report.timings["factorization"] += step.factor_time
        report.timings["solve"] += step.solve_time

        with report.phase("update"):
            trial_x = x.copy()
            trial_x[active_idx] += step.delta
        with report.phase("residuals"):
            trial = problem.evaluate(trial_x)

        with report.phase("update"):
            trial_energy = trial.total_energy
            accepted = bool(np.isfinite(trial_energy) and trial_energy < energy)
            step_norm = float(np.linalg.norm(step.delta))
            if accepted:
                decrease = energy - trial_energy
                x, system, energy = trial_x, trial, trial_energy
            report.iterations.append(IterationRecord(
                iteration=len(report.iterations),
                frame=frame,
                energy=energy,
                trial_energy=float(trial_energy) if np.isfinite(trial_energy) else float("inf"),
                terms=system.term_energies(),
                lm_damping=lm_damping,
                accepted=accepted,
                step_norm=step_norm,
                gradient_norm=gradient_norm,
            ))
            logger.debug("LM iter %d: E=%.9g trial=%.9g damping=%.3g %s",
                         len(report.iterations) - 1, energy, trial_energy, lm_damping,
                         "accepted" if accepted else "rejected")
            converged = accepted and (
                step_norm <= options.step_tolerance * (np.linalg.norm(x[active_idx]) + options.step_tolerance)
            )

        if accepted:
            lm_damping /= options.damping_down
            if converged:
                reason = "step"
                break
            if decrease <= options.energy_tolerance * energy:
                reason = "energy"
                break
        else:
            lm_damping *= options.damping_up
            if lm_damping > options.max_damping:
                reason = "damping"
                break

    with report.phase("update"):
        report.final_energy = energy
        report.final_terms = system.term_energies()
    report.gradient_norm = gradient_norm
    report.termination_reason = reason
    report.dropped_observations += system.dropped
    return x


def _check_inputs(asset: ModelAsset, obs: ObservationSet, rig: CameraRig, init: Parameters) -> None:
    init.validate(asset)
    if init.cameras != rig.count:
        raise ContractViolation(f"init describes {init.cameras} cameras, rig has {rig.count}")
    if obs.frames != init.frames or obs.cameras != rig.count:
        raise ContractViolation(
            f"observations cover {obs.frames} frames x {obs.cameras} cameras, init {init.frames} x {rig.count}"
        )
    for name in ("beta", "psi", "theta", "cam_rot", "cam_trans", "focal"):
        if not np.all(np.isfinite(getattr(init, name))):
            raise SolverError(f"init {name} is not finite")


def _fit_offline(asset, obs, rig, prior, config, options, init, build, report) -> Parameters:
    with report.phase("setup"):
        layout = ParameterLayout.for_problem(asset, init.frames, init.cameras)
        active = active_mask(layout, rig, options.fixed_groups)
        problem = _Problem(asset, obs, rig, prior, config, layout, active)
        x0 = layout.pack(init)
    x = _run_lm(problem, x0, options, build, report)
    with report.phase("update"):
        return layout.unpack(x)


def _fit_tracking(asset, obs, rig, prior, config, options, init, build, report) -> Parameters:
    """
    Frame-by-frame fitting. Frame i is solved in a two-frame window whose
    first frame is the fixed solution of frame i-1, so the temporal term
    links them. Identity and cameras stay frozen except on refresh frames.
    """
    current = init.copy()
    psi, theta = current.psi.copy(), current.theta.copy()
    for i in range(init.frames):
        frame_start = time.perf_counter()
        with report.phase("setup"):
            refresh = i == 0 or (options.refresh_interval > 0 and i % options.refresh_interval == 0)
            fixed = list(options.fixed_groups)
            if not refresh:
                fixed += ["identity", "camera"]
            if i == 0:
                window = current.copy(psi=psi[:1], theta=theta[:1])
                sub_obs = obs.select(obs.frame_idx == 0, frames=1)
            else:
                psi[i], theta[i] = psi[i - 1], theta[i - 1]
                window = current.copy(psi=psi[i - 1: i + 1], theta=theta[i - 1: i + 1])
                sub_obs = obs.select(obs.frame_idx == i, frames=2, frame_offset=i - 1)

            layout = ParameterLayout.for_problem(asset, window.frames, window.cameras)
            active = active_mask(layout, rig, fixed)
            if i > 0:
                active[layout.psi(0)] = False
                active[layout.theta(0)] = False
            problem = _Problem(asset, sub_obs, rig, prior, config, layout, active)
            x0 = layout.pack(window)
        x = _run_lm(problem, x0, options, build, report, frame=i)
        with report.phase("update"):
            solved = layout.unpack(x)
            psi[i], theta[i] = solved.psi[-1], solved.theta[-1]
            current = current.copy(beta=solved.beta, cam_rot=solved.cam_rot, cam_trans=solved.cam_trans,
                                   focal=solved.focal)
        report.frame_times.append(time.perf_counter() - frame_start)
        logger.debug("Tracked frame %d in %.4fs (E=%.6g)", i, report.frame_times[-1], report.final_energy)

    result = current.copy(psi=psi, theta=theta)
    # energy of the whole sequence at the tracked solution
    with report.phase("residuals"):
        layout = ParameterLayout.for_problem(asset, result.frames, result.cameras)
        system = assemble(asset, result, rig, obs, prior, config, active_mask(layout, rig, options.fixed_groups))
        report.final_energy = system.total_energy
        report.final_terms = system.term_energies()
    return result


def _fit(asset, obs, rig, prior, config, options, init, build, solver_name) -> Tuple[Parameters, SolveReport]:
    _check_inputs(asset, obs, rig, init)
    report = SolveReport(mode=options.mode, solver=solver_name)
    start = time.perf_counter()
    if options.mode == "tracking":
        params = _fit_tracking(asset, obs, rig, prior, config, options, init, build, report)
    else:
        params = _fit_offline(asset, obs, rig, prior, config, options, init, build, report)
    report.total_time = time.perf_counter() - start
    logger.info(
        "%s %s fit: %d iterations (%d accepted), E %.6g -> %.6g, stopped on %s in %.3fs",
        solver_name, options.mode, report.iteration_count, report.accepted_steps,
        report.initial_energy, report.final_energy, report.termination_reason, report.total_time,
    )
    return params, report


def fit(
    asset: ModelAsset,
    obs: ObservationSet,
    rig: CameraRig,
    prior: Optional[GmmPrior],
    config: EnergyConfig,
    options: SolveOptions,
    init: Parameters,
) -> Tuple[Parameters, SolveReport]:
    """Minimize the fitting energy from `init` with sparse LM"""

    def build(system: ResidualSystem) -> NormalEquations:
        return accumulate_normal_equations(system, system_jacobian(system, config), workers=options.workers)

    return _fit(asset, obs, rig, prior, config, options, init, build, "sparse")


def fit_dense_reference(
    asset: ModelAsset,
    obs: ObservationSet,
    rig: CameraRig,
    prior: Optional[GmmPrior],
    config: EnergyConfig,
    options: SolveOptions,
    init: Parameters,
) -> Tuple[Parameters, SolveReport]:
    """Same LM loop on the materialized dense Jacobian, sparsity threshold forced to 0"""
    dense_config = config.model_copy(update={"sparsity_threshold": 0.0})
    return _fit(asset, obs, rig, prior, dense_config, options, init, dense_normal_equations, "dense")
