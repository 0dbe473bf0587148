"""The dynamic network: vertex states, edge signals and the state transition.

Every vertex of both objects is a network vertex. Internal edges join
vertices of one object and carry elastic forces; external edges join a
penetrating vertex to its correspondents in the other object and carry the
contact force. One network step is

1. internal signals from the current positions,
2. external signals from the internal ones,
3. a force step ``x += status * alpha * K_inv @ f``,
4. fresh collision detection on the stepped positions,
5. the penetration correction toward the correspondents' mean.

Signals are computed from the snapshot of the previous phase, so the update
is synchronous and independent of vertex order.

Sign convention: a signal is the force on the vertex the edge points to.
For the edge ``m -> n`` that force is ``c * K @ (d_m - d_n)``, where ``d``
is displacement from rest and ``c`` is 1/2 when both ends are mobile, 1
otherwise. The contact signal ``m -> n`` (``m`` a correspondent of ``n``) is
the net internal force on ``m`` divided by ``max(1, #chi2[m])``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import material
from .collision import Correspondence, brute_force_detect, detect
from .mesh_core import ObjectModel

DetectFn = Callable[[np.ndarray], Correspondence]


class DivergenceError(ArithmeticError):
    """Non-finite value produced by a network update."""


@dataclass(frozen=True, eq=False)
class Network:
    """Constant part of the network: vertices, internal edges, materials."""

    model_a: ObjectModel
    model_b: ObjectModel
    rest: np.ndarray  # (N, 3)
    status: np.ndarray  # (N,) bool, True = mobile
    external_force: np.ndarray  # (N, 3)
    object_id: np.ndarray  # (N,) 0 for A, 1 for B
    edges: np.ndarray  # (E, 2) undirected, global ids, i < j
    edge_k: np.ndarray  # (E, 2) (a, b) coefficients of K for each edge's object
    edge_factor: np.ndarray  # (E,) 1/2 if both ends mobile else 1
    compliance: np.ndarray  # (N, 2) (a, b) coefficients of K_inv per vertex
    correction_weight: np.ndarray  # (N,) k_other / (k_a + k_b)

    @property
    def n_a(self) -> int:
        return self.model_a.n_vertices

    @property
    def n_vertices(self) -> int:
        return len(self.rest)

    def split(self, positions):
        return positions[: self.n_a], positions[self.n_a :]


@dataclass(frozen=True, eq=False)
class NetworkState:
    """chi1 (positions), chi2 (correspondence) and chi3 (update count).

    The update is synchronous, so chi3 is one counter shared by all vertices.
    """

    chi1: np.ndarray
    chi2: Correspondence
    chi3: int = 0


@dataclass(frozen=True, eq=False)
class InternalSignals:
    """Signals of both directions of every undirected internal edge.

    ``forward[e]`` acts on ``edges[e, 1]`` (edge ``i -> j``), ``backward[e]``
    acts on ``edges[e, 0]`` (edge ``j -> i``).
    """

    forward: np.ndarray
    backward: np.ndarray


@dataclass(frozen=True, eq=False)
class ExternalSignals:
    """Sparse external edges: ``signal[p]`` acts on ``target[p]`` and comes
    from its correspondent ``source[p]``."""

    target: np.ndarray
    source: np.ndarray
    signal: np.ndarray

    def __len__(self):
        return len(self.target)


@dataclass(frozen=True, eq=False)
class Signals:
    internal: InternalSignals
    internal_net: np.ndarray  # (N, 3) sum of internal signals toward each vertex
    external: ExternalSignals
    net_force: np.ndarray  # (N, 3) external input + all incoming signals


def build_network(model_a: ObjectModel, model_b: ObjectModel) -> Network:
    na = model_a.n_vertices
    rest = np.concatenate([model_a.rest_positions, model_b.rest_positions])
    status = np.concatenate([model_a.mobility, model_b.mobility]).astype(bool)
    ext = np.concatenate([model_a.external_force, model_b.external_force])
    obj = np.concatenate([np.zeros(na, np.int8), np.ones(model_b.n_vertices, np.int8)])
    edges = np.concatenate([model_a.internal_edges, model_b.internal_edges + na]).reshape(-1, 2)

    ka = material.stiffness_coeffs(model_a.stiffness_k, model_a.poisson_h)
    kb = material.stiffness_coeffs(model_b.stiffness_k, model_b.poisson_h)
    edge_k = np.array([ka, kb])[obj[edges[:, 0]]] if len(edges) else np.zeros((0, 2))
    both = status[edges[:, 0]] & status[edges[:, 1]]
    factor = np.where(both, 0.5, 1.0)

    ca = material.compliance_coeffs(model_a.stiffness_k, model_a.poisson_h)
    cb = material.compliance_coeffs(model_b.stiffness_k, model_b.poisson_h)
    compliance = np.array([ca, cb])[obj]
    k1, k2 = model_a.stiffness_k, model_b.stiffness_k
    weight = np.where(obj == 0, k2 / (k1 + k2), k1 / (k1 + k2))

    return Network(
        model_a=model_a,
        model_b=model_b,
        rest=rest,
        status=status,
        external_force=ext,
        object_id=obj,
        edges=edges,
        edge_k=edge_k,
        edge_factor=factor,
        compliance=compliance,
        correction_weight=weight,
    )


def make_detector(network: Network, mode: str = "nearest", center=None, brute: bool = False) -> DetectFn:
    """Collision detection over the network's global vertex array."""
    fn = brute_force_detect if brute else detect

    def detect_fn(positions):
        pa, pb = network.split(positions)
        return fn(pa, pb, network.model_a, network.model_b, mode=mode, center=center)

    return detect_fn


def _scatter(idx, vals, n):
    return np.stack([np.bincount(idx, vals[:, j], n) for j in range(3)], axis=1)


def _correct(network: Network, positions: np.ndarray, corr: Correspondence) -> np.ndarray:
    """Move every penetrating mobile vertex a weighted step toward the mean of
    its correspondents; all targets come from the same ``positions`` snapshot."""
    out = positions.copy()
    if len(corr):
        keys = corr.keys
        target = corr.target_means(positions)
        w = network.correction_weight[keys][:, None]
        moved = positions[keys] + w * (target - positions[keys])
        out[keys] = np.where(network.status[keys][:, None], moved, positions[keys])
    return out


def init_state(network: Network, detect_fn: DetectFn) -> NetworkState:
    """Detection on the rest positions followed by one penetration correction."""
    corr = detect_fn(network.rest)
    chi1 = _correct(network, network.rest, corr)
    return NetworkState(chi1=chi1, chi2=corr, chi3=0)


def update_internal_signals(state: NetworkState, network: Network) -> InternalSignals:
    e = network.edges
    d = state.chi1 - network.rest
    da, db = d[e[:, 0]], d[e[:, 1]]
    a = network.edge_k[:, 0] * network.edge_factor
    b = network.edge_k[:, 1] * network.edge_factor
    forward = material.apply_ab(a, b, da - db)  # on e[:, 1]
    backward = material.apply_ab(a, b, db - da)  # on e[:, 0]
    return InternalSignals(forward=forward, backward=backward)


def internal_net_force(signals: InternalSignals, network: Network) -> np.ndarray:
    n = network.n_vertices
    e = network.edges
    return _scatter(e[:, 1], signals.forward, n) + _scatter(e[:, 0], signals.backward, n)


def update_external_signals(state: NetworkState, network: Network, internal_net: np.ndarray) -> ExternalSignals:
    target, source = state.chi2.pairs()
    counts = np.maximum(state.chi2.counts(network.n_vertices), 1)
    signal = internal_net[source] / counts[source][:, None]
    return ExternalSignals(target=target, source=source, signal=signal)


def compute_signals(state: NetworkState, network: Network) -> Signals:
    internal = update_internal_signals(state, network)
    inet = internal_net_force(internal, network)
    external = update_external_signals(state, network, inet)
    net = network.external_force + inet + _scatter(external.target, external.signal, network.n_vertices)
    return Signals(internal=internal, internal_net=inet, external=external, net_force=net)


def alpha(gamma: float, beta: float, chi3: int) -> float:
    """Damping factor ``gamma ** (beta * chi3 + 1)``."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    if chi3 < 0:
        raise ValueError("chi3 must be non-negative")
    return gamma ** (beta * chi3 + 1)


def step_force(state: NetworkState, network: Network, alpha_value: float, net_force: np.ndarray) -> np.ndarray:
    """Positions after the force step; fixed vertices keep their rest position."""
    with np.errstate(over="ignore", invalid="ignore"):
        delta = alpha_value * material.apply_ab(network.compliance[:, 0], network.compliance[:, 1], net_force)
        moved = state.chi1 + delta
    if not np.all(np.isfinite(moved[network.status])):
        raise DivergenceError("force step produced non-finite positions")
    return np.where(network.status[:, None], moved, network.rest)


def penetration_correction(positions: np.ndarray, fresh_corr: Correspondence, network: Network, chi3: int) -> NetworkState:
    """Close the weighted fraction of each penetration and advance chi3."""
    chi1 = _correct(network, positions, fresh_corr)
    return NetworkState(chi1=chi1, chi2=fresh_corr, chi3=chi3 + 1)


@dataclass(frozen=True, eq=False)
class StepInfo:
    signals: Signals
    alpha: float
    intermediate: np.ndarray


def step(
    state: NetworkState,
    network: Network,
    detect_fn: DetectFn,
    alpha_value: float,
    signals: Optional[Signals] = None,
) -> tuple[NetworkState, StepInfo]:
    """One synchronous network update. ``signals`` may be passed in when they
    were already computed for ``state``."""
    if signals is None:
        signals = compute_signals(state, network)
    mid = step_force(state, network, alpha_value, signals.net_force)
    fresh = detect_fn(mid)
    new = penetration_correction(mid, fresh, network, state.chi3)
    return new, StepInfo(signals=signals, alpha=alpha_value, intermediate=mid)
