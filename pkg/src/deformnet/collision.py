"""Collision detection between the two objects.

:func:`detect` is the fast path used inside the solver loop (grid-binned ray
casting, k-d tree nearest search). :func:`brute_force_detect` has the same
contract but tests every vertex against every triangle with a generalized
winding number and scans all pairwise distances; it is the reference the fast
path is checked against.

Vertex ids in a :class:`Correspondence` are global: object A occupies
``0 .. N_A - 1`` and object B follows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .mesh_core import MeshError, ObjectModel

TIE_TOL = 1e-9
RAY_TOL = 1e-9

# fixed, deliberately irrational ray directions; the first is the default,
# the others are retries when a ray grazes an edge or vertex
_RAW_DIRECTIONS = np.array(
    [
        [0.5377, 0.2513, 0.8049],
        [-0.3134, 0.8811, 0.3541],
        [0.7071, -0.4472, -0.5477],
        [-0.1813, -0.6329, 0.7527],
        [0.8683, 0.4123, -0.2757],
        [-0.6153, 0.1902, -0.7650],
    ]
)
RAY_DIRECTIONS = _RAW_DIRECTIONS / np.linalg.norm(_RAW_DIRECTIONS, axis=1, keepdims=True)


class NonWatertightError(MeshError):
    """Ray parity disagrees between directions: the surface is not closed."""


# --------------------------------------------------------------------------
# ray / triangle classification

_MISS, _HIT, _GRAZE, _ON = 0, 1, 2, 3


def _classify(orig, d, v0, v1, v2):
    """Classify ray ``orig + t*d`` against triangles, elementwise.

    Returns an int array: _HIT for a clean crossing at t > 0, _GRAZE when
    the crossing is within tolerance of an edge or vertex (or the ray lies in
    the triangle's plane), _ON when the origin itself lies on the triangle.
    """
    e1 = v1 - v0
    e2 = v2 - v0
    pvec = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    normal = np.cross(e1, e2)
    nlen = np.linalg.norm(normal, axis=1)
    tvec = orig - v0
    out = np.full(len(v0), _MISS, dtype=np.int8)

    parallel = np.abs(det) <= 1e-12 * np.maximum(nlen, 1e-300)
    if np.any(parallel):
        plane_dist = np.abs(np.einsum("ij,ij->i", normal, tvec)) / np.maximum(nlen, 1e-300)
        out[parallel & (plane_dist <= RAY_TOL)] = _GRAZE

    ok = ~parallel
    if not np.any(ok):
        return out
    inv = np.zeros_like(det)
    inv[ok] = 1.0 / det[ok]
    u = np.einsum("ij,ij->i", tvec, pvec) * inv
    qvec = np.cross(tvec, e1)
    v = (qvec @ d if d.ndim == 1 else np.einsum("ij,ij->i", qvec, d)) * inv
    t = np.einsum("ij,ij->i", e2, qvec) * inv
    w = 1.0 - u - v

    closed = (u >= -RAY_TOL) & (v >= -RAY_TOL) & (w >= -RAY_TOL)
    strict = (u > RAY_TOL) & (v > RAY_TOL) & (w > RAY_TOL)
    ahead = t > RAY_TOL
    on = ok & closed & (np.abs(t) <= RAY_TOL)
    out[ok & strict & ahead] = _HIT
    out[ok & closed & ~strict & ahead] = _GRAZE
    out[on] = _ON
    return out


def _parity_one_direction(p, tri_pos, d):
    """(inside, status) for one point against all triangles along ``d``.

    status is "on", "graze" or "ok".
    """
    n = len(tri_pos)
    orig = np.broadcast_to(p, (n, 3))
    cls = _classify(orig, d, tri_pos[:, 0], tri_pos[:, 1], tri_pos[:, 2])
    if np.any(cls == _ON):
        return False, "on"
    if np.any(cls == _GRAZE):
        return False, "graze"
    return bool(np.count_nonzero(cls == _HIT) % 2), "ok"


def point_in_mesh(p, triangles, positions) -> bool:
    """Whether ``p`` lies strictly inside the closed surface.

    Counts ray crossings along three independent directions (skipping any
    direction whose ray grazes an edge or vertex) and raises
    :class:`NonWatertightError` if the parities disagree. Points on the
    surface, within 1e-9, are not inside.
    """
    p = np.asarray(p, dtype=float).reshape(3)
    tri_pos = np.asarray(positions, dtype=float)[np.asarray(triangles)]
    if len(tri_pos) == 0:
        return False
    votes = []
    for d in RAY_DIRECTIONS:
        inside, status = _parity_one_direction(p, tri_pos, d)
        if status == "on":
            return False
        if status == "ok":
            votes.append(inside)
            if len(votes) == 3:
                break
    if not votes:
        raise MeshError("every ray direction grazed the surface")
    if len(set(votes)) > 1:
        raise NonWatertightError("ray parity differs between directions; surface is not closed")
    return votes[0]


def _perp_basis(d):
    a = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    eu = np.cross(d, a)
    eu /= np.linalg.norm(eu)
    return eu, np.cross(d, eu)


def _grid_candidates(qpts, tri_pos, d):
    """Candidate (query, triangle) pairs whose projections along ``d`` may
    overlap, via uniform binning of triangle footprints."""
    eu, ew = _perp_basis(d)
    tu = tri_pos @ eu  # (T, 3)
    tw = tri_pos @ ew
    qu = qpts @ eu
    qw = qpts @ ew
    pad = 1e-7
    umin, umax = tu.min(axis=1) - pad, tu.max(axis=1) + pad
    wmin, wmax = tw.min(axis=1) - pad, tw.max(axis=1) + pad
    lo_u, lo_w = umin.min(), wmin.min()
    h = max(float(np.mean(np.maximum(umax - umin, wmax - wmin))), 1e-9)
    nu = int((umax.max() - lo_u) // h) + 1
    nw = int((wmax.max() - lo_w) // h) + 1

    iu0 = ((umin - lo_u) // h).astype(np.int64)
    iu1 = ((umax - lo_u) // h).astype(np.int64)
    iw0 = ((wmin - lo_w) // h).astype(np.int64)
    iw1 = ((wmax - lo_w) // h).astype(np.int64)
    spanw = iw1 - iw0 + 1
    cnt = (iu1 - iu0 + 1) * spanw
    tri_rep = np.repeat(np.arange(len(tri_pos)), cnt)
    local = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    cu = iu0[tri_rep] + local // spanw[tri_rep]
    cw = iw0[tri_rep] + local % spanw[tri_rep]
    keys = cu * nw + cw
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    tri_sorted = tri_rep[order]

    qiu = np.floor((qu - lo_u) / h).astype(np.int64)
    qiw = np.floor((qw - lo_w) / h).astype(np.int64)
    valid = (qiu >= 0) & (qiu < nu) & (qiw >= 0) & (qiw < nw)
    qkey = np.where(valid, qiu * nw + qiw, -1)
    start = np.searchsorted(keys, qkey, side="left")
    stop = np.searchsorted(keys, qkey, side="right")
    stop = np.where(valid, stop, start)
    qcnt = stop - start
    q_rep = np.repeat(np.arange(len(qpts)), qcnt)
    offs = np.arange(qcnt.sum()) - np.repeat(np.cumsum(qcnt) - qcnt, qcnt)
    return q_rep, tri_sorted[start[q_rep] + offs]


def points_in_mesh(points, triangles, positions) -> np.ndarray:
    """Vectorized strict inside test for many points (fast path).

    One ray per point; points whose ray grazes an edge or vertex are re-cast
    along the next fixed direction. Assumes a closed surface.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    result = np.zeros(len(pts), dtype=bool)
    tris = np.asarray(triangles)
    if len(pts) == 0 or len(tris) == 0:
        return result
    tri_pos = np.asarray(positions, dtype=float)[tris]
    lo = tri_pos.reshape(-1, 3).min(axis=0) - RAY_TOL
    hi = tri_pos.reshape(-1, 3).max(axis=0) + RAY_TOL
    pending = np.flatnonzero(np.all((pts >= lo) & (pts <= hi), axis=1))
    for d in RAY_DIRECTIONS:
        if len(pending) == 0:
            return result
        q = pts[pending]
        q_rep, t_idx = _grid_candidates(q, tri_pos, d)
        tp = tri_pos[t_idx]
        cls = _classify(q[q_rep], d, tp[:, 0], tp[:, 1], tp[:, 2])
        n = len(q)
        hits = np.bincount(q_rep[cls == _HIT], minlength=n)
        on = np.bincount(q_rep[cls == _ON], minlength=n) > 0
        graze = (np.bincount(q_rep[cls == _GRAZE], minlength=n) > 0) & ~on
        done = ~graze
        result[pending[done]] = (hits[done] % 2 == 1) & ~on[done]
        pending = pending[graze]
    if len(pending):
        raise MeshError(f"{len(pending)} points grazed the surface along every ray direction")
    return result


# --------------------------------------------------------------------------
# winding-number oracle


def _point_triangle_distance(p, v0, v1, v2):
    """Unsigned distance from one point to each triangle."""
    e1 = v1 - v0
    e2 = v2 - v0
    n = np.cross(e1, e2)
    nn = np.einsum("ij,ij->i", n, n)
    good = nn > 1e-300
    rel = p - v0
    safe = np.where(good, nn, 1.0)
    # barycentrics of the projection onto the plane
    s = np.einsum("ij,ij->i", np.cross(rel, e2), n) / safe
    t = np.einsum("ij,ij->i", np.cross(e1, rel), n) / safe
    inside = good & (s >= 0) & (t >= 0) & (s + t <= 1)
    plane = np.abs(np.einsum("ij,ij->i", rel, n)) / np.sqrt(safe)

    def seg(a, b):
        ab = b - a
        denom = np.einsum("ij,ij->i", ab, ab)
        lam = np.einsum("ij,ij->i", p - a, ab) / np.where(denom > 0, denom, 1.0)
        lam = np.clip(lam, 0.0, 1.0)
        return np.linalg.norm(p - (a + lam[:, None] * ab), axis=1)

    edge = np.minimum(np.minimum(seg(v0, v1), seg(v1, v2)), seg(v2, v0))
    return np.where(inside, plane, edge)


def winding_number(p, triangles, positions) -> float:
    """Generalized winding number of the surface around ``p``: the summed
    signed solid angle of all triangles over 4*pi."""
    tri_pos = np.asarray(positions, dtype=float)[np.asarray(triangles)]
    a = tri_pos[:, 0] - p
    b = tri_pos[:, 1] - p
    c = tri_pos[:, 2] - p
    la, lb, lc = (np.linalg.norm(x, axis=1) for x in (a, b, c))
    numer = np.einsum("ij,ij->i", a, np.cross(b, c))
    denom = (
        la * lb * lc
        + np.einsum("ij,ij->i", a, b) * lc
        + np.einsum("ij,ij->i", b, c) * la
        + np.einsum("ij,ij->i", c, a) * lb
    )
    return float(np.sum(2.0 * np.arctan2(numer, denom)) / (4.0 * math.pi))


def winding_inside(p, triangles, positions) -> bool:
    """Oracle inside test: |winding number| > 1/2 and farther than 1e-9
    from the surface."""
    p = np.asarray(p, dtype=float).reshape(3)
    tri_pos = np.asarray(positions, dtype=float)[np.asarray(triangles)]
    if len(tri_pos) == 0:
        return False
    dist = _point_triangle_distance(p, tri_pos[:, 0], tri_pos[:, 1], tri_pos[:, 2])
    if dist.min() <= RAY_TOL:
        return False
    return abs(winding_number(p, triangles, positions)) > 0.5


# --------------------------------------------------------------------------
# correspondence


@dataclass(frozen=True, eq=False)
class Correspondence:
    """Sparse map from penetrating vertex id to its corresponding vertex ids.

    Stored as CSR arrays: ``keys`` sorted ascending, the correspondents of
    ``keys[i]`` are ``indices[indptr[i]:indptr[i+1]]`` (sorted ascending).
    """

    keys: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray

    @classmethod
    def empty(cls) -> "Correspondence":
        return cls(np.zeros(0, np.int64), np.zeros(1, np.int64), np.zeros(0, np.int64))

    @classmethod
    def from_dict(cls, mapping: Mapping[int, Sequence[int]]) -> "Correspondence":
        items = sorted((int(k), sorted(set(int(x) for x in v))) for k, v in mapping.items() if len(v))
        keys = np.array([k for k, _ in items], dtype=np.int64)
        lens = np.array([len(v) for _, v in items], dtype=np.int64)
        indptr = np.concatenate([[0], np.cumsum(lens)]).astype(np.int64)
        indices = np.array([x for _, v in items for x in v], dtype=np.int64)
        return cls(keys, indptr, indices)

    def as_dict(self) -> dict[int, tuple[int, ...]]:
        return {
            int(k): tuple(int(x) for x in self.indices[self.indptr[i] : self.indptr[i + 1]])
            for i, k in enumerate(self.keys)
        }

    def __len__(self):
        return len(self.keys)

    def __contains__(self, v):
        i = np.searchsorted(self.keys, v)
        return bool(i < len(self.keys) and self.keys[i] == v)

    def __getitem__(self, v) -> tuple[int, ...]:
        i = int(np.searchsorted(self.keys, v))
        if i >= len(self.keys) or self.keys[i] != v:
            raise KeyError(v)
        return tuple(int(x) for x in self.indices[self.indptr[i] : self.indptr[i + 1]])

    def __eq__(self, other):
        if not isinstance(other, Correspondence):
            return NotImplemented
        return (
            np.array_equal(self.keys, other.keys)
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
        )

    def counts(self, n_vertices: int) -> np.ndarray:
        """``#chi2[v]`` for every vertex (0 where absent)."""
        c = np.zeros(n_vertices, dtype=np.int64)
        c[self.keys] = np.diff(self.indptr)
        return c

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened ``(v, w)`` pairs, one per correspondent."""
        return np.repeat(self.keys, np.diff(self.indptr)), self.indices

    def target_means(self, positions) -> np.ndarray:
        """Mean correspondent position for each key, in key order."""
        pos = np.asarray(positions, dtype=float)
        if len(self.keys) == 0:
            return np.zeros((0, 3))
        rows, cols = self.pairs()
        seg = np.repeat(np.arange(len(self.keys)), np.diff(self.indptr))
        sums = np.stack([np.bincount(seg, pos[cols, j], len(self.keys)) for j in range(3)], axis=1)
        return sums / np.diff(self.indptr)[:, None]


@dataclass(frozen=True)
class PenetrationSummary:
    max_depth: float
    penetrating_count: int


# --------------------------------------------------------------------------
# detection


def _check_inputs(positions_a, positions_b, model_a, model_b, mode, center):
    pa = np.asarray(positions_a, dtype=float).reshape(-1, 3)
    pb = np.asarray(positions_b, dtype=float).reshape(-1, 3)
    if len(pa) != model_a.n_vertices or len(pb) != model_b.n_vertices:
        raise ValueError("position arrays do not match the models' vertex counts")
    if mode not in ("nearest", "radial"):
        raise ValueError(f"unknown detect mode {mode!r}")
    if mode == "radial":
        if center is None:
            raise ValueError("radial mode needs a center")
        center = np.asarray(center, dtype=float).reshape(3)
    return pa, pb, center


def _ray_distances(c, x, pool):
    """Distance from each pool point to the ray from ``c`` through ``x``
    (rows: queries, columns: pool). Queries at ``c`` fall back to plain
    distance."""
    dirs = x - c
    norms = np.linalg.norm(dirs, axis=1)
    degenerate = norms <= 1e-12
    r = dirs / np.where(degenerate, 1.0, norms)[:, None]
    rel = pool - c  # (P, 3)
    s = r @ rel.T  # (Q, P)
    foot = s[:, :, None] * r[:, None, :]
    perp = np.linalg.norm(rel[None, :, :] - foot, axis=2)
    back = np.linalg.norm(rel, axis=1)[None, :]
    d = np.where(s > 0, perp, back)
    if np.any(degenerate):
        d[degenerate] = np.linalg.norm(x[degenerate, None, :] - pool[None, :, :], axis=2)
    return d


def _select_ties(dist_rows, pool_ids):
    """For each row, pool ids within TIE_TOL of the row minimum."""
    out = []
    for row in dist_rows:
        m = row.min()
        out.append(pool_ids[row <= m + TIE_TOL])
    return out


def _match_fast(q_pos, pool_pos, pool_ids, mode, center):
    if len(q_pos) == 0:
        return []
    if mode == "nearest":
        tree = cKDTree(pool_pos)
        dmin, _ = tree.query(q_pos, k=1)
        hits = tree.query_ball_point(q_pos, dmin + TIE_TOL)
        return [np.sort(pool_ids[np.asarray(h, dtype=np.int64)]) for h in hits]
    out = []
    for lo in range(0, len(q_pos), 256):
        d = _ray_distances(center, q_pos[lo : lo + 256], pool_pos)
        out.extend(_select_ties(d, pool_ids))
    return out


def _one_side(pos_q, pos_o, q_model, o_model, q_inside, o_inside, q_off, o_off, matcher):
    keys = np.flatnonzero(q_inside)
    if len(keys) == 0:
        return {}
    pool_local = np.flatnonzero(o_inside)
    if len(pool_local) == 0:
        pool_local = np.arange(o_model.n_surface)
    matches = matcher(pos_q[keys], pos_o[pool_local], pool_local + o_off)
    return {int(k) + q_off: m for k, m in zip(keys, matches)}


def detect(
    positions_a,
    positions_b,
    model_a: ObjectModel,
    model_b: ObjectModel,
    mode: str = "nearest",
    center=None,
) -> Correspondence:
    """Penetrating vertices of each object and their corresponding vertices.

    A vertex penetrates when it is strictly inside the other object's surface.
    Its correspondents are drawn from the other object's penetrating vertices
    (or, if there are none, from its surface vertices): the closest ones in
    ``nearest`` mode, the ones closest to the ray from ``center`` through the
    vertex in ``radial`` mode. All minimizers within 1e-9 are kept.
    """
    pa, pb, center = _check_inputs(positions_a, positions_b, model_a, model_b, mode, center)
    a_in = points_in_mesh(pa, model_b.triangles, pb[: model_b.n_surface])
    b_in = points_in_mesh(pb, model_a.triangles, pa[: model_a.n_surface])

    def matcher(q, pool, ids):
        return _match_fast(q, pool, ids, mode, center)

    na = model_a.n_vertices
    mapping = _one_side(pa, pb, model_a, model_b, a_in, b_in, 0, na, matcher)
    mapping.update(_one_side(pb, pa, model_b, model_a, b_in, a_in, na, 0, matcher))
    return Correspondence.from_dict(mapping)


def brute_force_detect(
    positions_a,
    positions_b,
    model_a: ObjectModel,
    model_b: ObjectModel,
    mode: str = "nearest",
    center=None,
) -> Correspondence:
    """Reference implementation of :func:`detect` with no acceleration."""
    pa, pb, center = _check_inputs(positions_a, positions_b, model_a, model_b, mode, center)
    a_in = np.array([winding_inside(p, model_b.triangles, pb[: model_b.n_surface]) for p in pa], bool)
    b_in = np.array([winding_inside(p, model_a.triangles, pa[: model_a.n_surface]) for p in pb], bool)

    def matcher(q, pool, ids):
        out = []
        for x in q:
            if mode == "nearest":
                d = np.sqrt(np.sum((pool - x) ** 2, axis=1))
            else:
                r = x - center
                rn = math.sqrt(float(r @ r))
                if rn <= 1e-12:
                    d = np.sqrt(np.sum((pool - x) ** 2, axis=1))
                else:
                    r = r / rn
                    rel = pool - center
                    ahead = rel @ r > 0
                    d = np.where(
                        ahead,
                        np.linalg.norm(np.cross(r, rel), axis=1),
                        np.linalg.norm(rel, axis=1),
                    )
            out.append(ids[d <= d.min() + TIE_TOL])
        return out

    na = model_a.n_vertices
    mapping = _one_side(pa, pb, model_a, model_b, a_in, b_in, 0, na, matcher)
    mapping.update(_one_side(pb, pa, model_b, model_a, b_in, a_in, na, 0, matcher))
    return Correspondence.from_dict(mapping)


def penetration_depth(v: int, positions, corr: Correspondence) -> float:
    """Distance from vertex ``v`` to the mean of its correspondents."""
    if v not in corr:
        raise KeyError(f"vertex {v} is not penetrating")
    pos = np.asarray(positions, dtype=float)
    target = pos[list(corr[v])].mean(axis=0)
    return float(np.linalg.norm(target - pos[v]))


def penetration_vectors(positions, corr: Correspondence) -> np.ndarray:
    """Per-vertex ``mean(correspondents) - position``; zero for absent keys."""
    pos = np.asarray(positions, dtype=float)
    out = np.zeros_like(pos)
    if len(corr):
        out[corr.keys] = corr.target_means(pos) - pos[corr.keys]
    return out


def summarize(positions, corr: Correspondence) -> PenetrationSummary:
    depth = np.linalg.norm(penetration_vectors(positions, corr), axis=1)
    return PenetrationSummary(float(depth.max(initial=0.0)), int(len(corr)))
