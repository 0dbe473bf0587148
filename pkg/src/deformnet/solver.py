"""Iteration driver: runs the network to force balance and records metrics."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import network as nw
from .collision import penetration_vectors
from .mesh_core import ObjectModel, bounding_box

logger = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITERATIONS = "max_iterations_reached"
DIVERGED = "diverged"


class ConfigError(ValueError):
    pass


@dataclass
class SolverConfig:
    """Iteration controls.

    ``eps1`` (length) and ``eps2`` (force) default to ``1e-3`` of the combined
    bounding-box diagonal and ``1e-3 * k_max * eps1`` respectively when left
    as ``None``.
    """

    gamma: float = 0.1
    beta: float = 0.0
    eps1: Optional[float] = None
    eps2: Optional[float] = None
    max_iterations: int = 10000
    divergence_factor: float = 2.0
    frame_stride: int = 100

    def validate(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must lie in [0, 1], got {self.beta}")
        for name in ("eps1", "eps2"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ConfigError(f"{name} must be positive, got {v}")
        if int(self.max_iterations) != self.max_iterations or self.max_iterations < 1:
            raise ConfigError(f"max_iterations must be a positive integer, got {self.max_iterations}")
        if not self.divergence_factor > 1.0:
            raise ConfigError(f"divergence_factor must exceed 1, got {self.divergence_factor}")
        if int(self.frame_stride) != self.frame_stride or self.frame_stride < 1:
            raise ConfigError(f"frame_stride must be a positive integer, got {self.frame_stride}")

    def resolved(self, model_a: ObjectModel, model_b: ObjectModel) -> "SolverConfig":
        """Copy with default thresholds filled in for this pair of objects."""
        self.validate()
        eps1 = self.eps1
        if eps1 is None:
            eps1 = 1e-3 * scene_diagonal(model_a, model_b)
        eps2 = self.eps2
        if eps2 is None:
            eps2 = 1e-3 * max(model_a.stiffness_k, model_b.stiffness_k) * eps1
        return SolverConfig(
            self.gamma, self.beta, eps1, eps2, int(self.max_iterations), self.divergence_factor, int(self.frame_stride)
        )


def scene_diagonal(model_a: ObjectModel, model_b: ObjectModel) -> float:
    lo, hi = bounding_box(np.concatenate([model_a.rest_positions, model_b.rest_positions]))
    return float(np.linalg.norm(hi - lo))


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    max_penetration: float
    max_force_residual: float
    max_displacement: float


@dataclass
class ConvergenceReport:
    records: list[IterationRecord] = field(default_factory=list)
    verdict: Optional[str] = None
    final_iteration: int = 0

    def append(self, rec: IterationRecord) -> None:
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ValueError("iteration records must be strictly increasing")
        self.records.append(rec)
        self.final_iteration = rec.iteration


@dataclass
class SolverResult:
    positions: np.ndarray  # (N, 3), object A first
    report: ConvergenceReport
    frames: list[tuple[int, np.ndarray]]
    network: nw.Network
    state: nw.NetworkState
    config: SolverConfig

    @property
    def positions_a(self) -> np.ndarray:
        return self.positions[: self.network.n_a]

    @property
    def positions_b(self) -> np.ndarray:
        return self.positions[self.network.n_a :]


def max_penetration(positions, corr) -> float:
    return float(np.linalg.norm(penetration_vectors(positions, corr), axis=1).max(initial=0.0))


def max_force(signals: nw.Signals, network: nw.Network) -> float:
    """Largest net force magnitude over mobile vertices. A fixed vertex's net
    force is its support reaction and is not part of the balance."""
    f = signals.net_force[network.status]
    return float(np.linalg.norm(f, axis=1).max(initial=0.0))


def divergence_guard(report: ConvergenceReport, diagonal: float, divergence_factor: float) -> bool:
    """Whether the last iteration shows runaway growth: a vertex moved more
    than ``divergence_factor`` scene diagonals, or a metric is not finite."""
    if not report.records:
        raise ValueError("divergence guard needs at least one recorded iteration")
    last = report.records[-1]
    values = (last.max_penetration, last.max_force_residual, last.max_displacement)
    if not all(np.isfinite(values)):
        return True
    return last.max_displacement > divergence_factor * diagonal


Observer = Callable[[int, nw.NetworkState, Optional[nw.StepInfo]], None]


def run(
    model_a: ObjectModel,
    model_b: ObjectModel,
    config: Optional[SolverConfig] = None,
    mode: str = "nearest",
    center=None,
    observer: Optional[Observer] = None,
) -> SolverResult:
    """Iterate the network from its initial state until termination.

    Termination: every penetrating vertex within ``eps1`` of its
    correspondents' mean and every net force below ``eps2`` (converged, after
    the same check passes on a fresh detection); the iteration cap; or the
    divergence guard. ``observer(iteration, state, step_info)`` is called
    after initialization (with ``step_info=None``) and after every step.
    """
    cfg = (config or SolverConfig()).resolved(model_a, model_b)
    net = nw.build_network(model_a, model_b)
    detect_fn = nw.make_detector(net, mode, center)
    diagonal = scene_diagonal(model_a, model_b)

    state = nw.init_state(net, detect_fn)
    signals = nw.compute_signals(state, net)
    report = ConvergenceReport()
    report.append(IterationRecord(0, max_penetration(state.chi1, state.chi2), max_force(signals, net), 0.0))
    frames = [(0, state.chi1.copy())]
    if observer:
        observer(0, state, None)

    def balanced(rec):
        return rec.max_penetration < cfg.eps1 and rec.max_force_residual < cfg.eps2

    def confirmed(st):
        # penetration re-checked against a fresh detection; forces stay on chi2
        return max_penetration(st.chi1, detect_fn(st.chi1)) < cfg.eps1

    verdict = None
    if balanced(report.records[0]) and confirmed(state):
        verdict = CONVERGED
    while verdict is None:
        if state.chi3 >= cfg.max_iterations:
            verdict = MAX_ITERATIONS
            break
        a = nw.alpha(cfg.gamma, cfg.beta, state.chi3)
        try:
            new_state, info = nw.step(state, net, detect_fn, a, signals)
        except nw.DivergenceError:
            logger.warning("non-finite update at iteration %d", state.chi3 + 1)
            verdict = DIVERGED
            break
        new_signals = nw.compute_signals(new_state, net)
        rec = IterationRecord(
            new_state.chi3,
            max_penetration(new_state.chi1, new_state.chi2),
            max_force(new_signals, net),
            float(np.linalg.norm(new_state.chi1 - state.chi1, axis=1).max(initial=0.0)),
        )
        report.append(rec)
        if divergence_guard(report, diagonal, cfg.divergence_factor) or not np.all(np.isfinite(new_state.chi1)):
            # keep the last sane state for output
            verdict = DIVERGED
            if np.all(np.isfinite(new_state.chi1)):
                state = new_state
            break
        state, signals = new_state, new_signals
        if observer:
            observer(state.chi3, state, info)
        if state.chi3 % cfg.frame_stride == 0:
            frames.append((state.chi3, state.chi1.copy()))
        if balanced(rec) and confirmed(state):
            verdict = CONVERGED
        elif state.chi3 % 500 == 0:
            logger.info(
                "iteration %d: penetration %.3g force %.3g displacement %.3g",
                rec.iteration, rec.max_penetration, rec.max_force_residual, rec.max_displacement,
            )

    report.verdict = verdict
    if frames[-1][0] != state.chi3 or not np.array_equal(frames[-1][1], state.chi1):
        frames.append((state.chi3, state.chi1.copy()))
    logger.info("%s after %d iterations", verdict, report.final_iteration)
    return SolverResult(state.chi1.copy(), report, frames, net, state, cfg)
