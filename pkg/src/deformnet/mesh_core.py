"""Triangle meshes for the two interacting objects.

An :class:`ObjectModel` holds the rest geometry of one object (surface
vertices first, interior points after them), its triangles, per-vertex
mobility, material parameters and external load, and the undirected
internal edges that carry elastic forces between its vertices.

Only a small OBJ subset is read and written: ``v`` and ``f`` records.
"""

from __future__ import annotations

import io
import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, TextIO

import numpy as np
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

EDGE_MODES = ("shared_polygon", "distance_threshold", "combined")


class MeshError(Exception):
    """Invalid mesh topology or geometry."""


class ObjParseError(MeshError):
    """Malformed OBJ record."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class InteriorSpacingWarning(UserWarning):
    """Lattice pitch too coarse to place any interior point."""


def _frozen(a, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class ObjectModel:
    """Rest state and constants of one deformable object.

    Arrays are read-only; derive modified models with :func:`dataclasses.replace`
    or the helpers in this module.
    """

    rest_positions: np.ndarray
    triangles: np.ndarray
    mobility: Optional[np.ndarray] = None
    stiffness_k: float = 1.0
    poisson_h: float = 0.0
    external_force: Optional[np.ndarray] = None
    internal_edges: Optional[np.ndarray] = None
    n_surface: Optional[int] = None

    def __post_init__(self):
        pos = np.asarray(self.rest_positions, dtype=float).reshape(-1, 3)
        n = len(pos)
        tris = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        mob = np.ones(n, dtype=np.int8) if self.mobility is None else self.mobility
        ext = np.zeros((n, 3)) if self.external_force is None else self.external_force
        edges = np.zeros((0, 2), dtype=np.int64) if self.internal_edges is None else self.internal_edges
        n_surface = n if self.n_surface is None else int(self.n_surface)

        object.__setattr__(self, "rest_positions", _frozen(pos, float))
        object.__setattr__(self, "triangles", _frozen(tris, np.int64))
        object.__setattr__(self, "mobility", _frozen(np.asarray(mob).reshape(-1), np.int8))
        object.__setattr__(self, "external_force", _frozen(np.asarray(ext, dtype=float).reshape(-1, 3), float))
        object.__setattr__(self, "internal_edges", _frozen(np.asarray(edges).reshape(-1, 2), np.int64))
        object.__setattr__(self, "n_surface", n_surface)
        object.__setattr__(self, "stiffness_k", float(self.stiffness_k))
        object.__setattr__(self, "poisson_h", float(self.poisson_h))
        self.validate()

    @property
    def n_vertices(self) -> int:
        return len(self.rest_positions)

    @property
    def n_interior(self) -> int:
        return self.n_vertices - self.n_surface

    @property
    def surface_positions(self) -> np.ndarray:
        return self.rest_positions[: self.n_surface]

    def validate(self) -> None:
        n = self.n_vertices
        if not np.all(np.isfinite(self.rest_positions)):
            raise MeshError("vertex coordinates must be finite")
        if not 0 <= self.n_surface <= n:
            raise MeshError(f"n_surface={self.n_surface} outside [0, {n}]")
        if len(self.mobility) != n or len(self.external_force) != n:
            raise MeshError("mobility and external_force must have one entry per vertex")
        if not np.all(np.isin(self.mobility, (0, 1))):
            raise MeshError("mobility entries must be 0 or 1")
        if not np.all(np.isfinite(self.external_force)):
            raise MeshError("external forces must be finite")
        if not self.stiffness_k > 0:
            raise MeshError(f"stiffness_k must be positive, got {self.stiffness_k}")
        if abs(1.0 - self.poisson_h - 2.0 * self.poisson_h**2) <= 1e-12:
            raise MeshError(f"poisson_h={self.poisson_h} makes the stiffness matrix singular")
        t = self.triangles
        if len(t):
            if t.min() < 0 or t.max() >= self.n_surface:
                raise MeshError("triangle index out of range of the surface vertex list")
            if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
                raise MeshError("triangle with repeated vertex index")
        e = self.internal_edges
        if len(e):
            if e.min() < 0 or e.max() >= n:
                raise MeshError("internal edge index out of range")
            if np.any(e[:, 0] == e[:, 1]):
                raise MeshError("internal edge is a self-loop")


# --------------------------------------------------------------------------
# OBJ I/O


def load_obj(stream: TextIO, **params) -> ObjectModel:
    """Read ``v``/``f`` records into a surface-only :class:`ObjectModel`.

    Faces with more than three vertices are fan-triangulated. ``vt``/``vn``
    indices in ``f`` records (``1/2/3`` forms) are dropped. Extra keyword
    arguments are forwarded to :class:`ObjectModel` (e.g. ``stiffness_k``).
    """
    points = []
    faces = []
    for lineno, line in enumerate(stream, start=1):
        strip = line.strip()
        if not strip or strip.startswith("#"):
            continue
        split = strip.split()
        tag = split[0]
        if tag == "v":
            if len(split) < 4:
                raise ObjParseError(lineno, "vertex record needs three coordinates")
            try:
                xyz = [float(s) for s in split[1:4]]
            except ValueError:
                raise ObjParseError(lineno, f"bad vertex coordinate in {strip!r}") from None
            if not all(np.isfinite(xyz)):
                raise ObjParseError(lineno, "non-finite vertex coordinate")
            points.append(xyz)
        elif tag == "f":
            if len(split) < 4:
                raise ObjParseError(lineno, "face record needs at least three indices")
            try:
                idx = [int(s.split("/")[0]) for s in split[1:]]
            except ValueError:
                raise ObjParseError(lineno, f"bad face index in {strip!r}") from None
            if any(i <= 0 for i in idx):
                raise ObjParseError(lineno, "face indices must be positive (1-based)")
            for a, b in zip(idx[1:-1], idx[2:]):
                faces.append((idx[0] - 1, a - 1, b - 1, lineno))
        # vn, vt, o, g, s, usemtl, ... are ignored

    n = len(points)
    for a, b, c, lineno in faces:
        if max(a, b, c) >= n:
            raise MeshError(f"line {lineno}: face index out of range ({n} vertices)")
    tris = np.array([f[:3] for f in faces], dtype=np.int64).reshape(-1, 3)
    return ObjectModel(np.array(points, dtype=float).reshape(-1, 3), tris, **params)


def read_obj(path, **params) -> ObjectModel:
    with open(path, "r", encoding="utf-8") as f:
        return load_obj(f, **params)


def save_obj(
    positions,
    model: ObjectModel,
    stream: Optional[TextIO] = None,
    *,
    include_interior: bool = False,
) -> str:
    """Write the surface of ``model`` at ``positions``.

    Interior points are never referenced by faces; with ``include_interior``
    they are appended as trailing ``v`` records. Returns the text written.
    """
    pos = np.asarray(positions, dtype=float).reshape(-1, 3)
    if len(pos) < model.n_surface:
        raise MeshError(
            f"got {len(pos)} positions for a model with {model.n_surface} surface vertices"
        )
    if not np.all(np.isfinite(pos)):
        raise MeshError("refusing to write non-finite coordinates")
    n_out = model.n_vertices if include_interior else model.n_surface
    if include_interior and len(pos) < n_out:
        raise MeshError("interior points requested but positions do not cover them")
    buf = io.StringIO()
    for x, y, z in pos[:n_out]:
        buf.write("v %.9g %.9g %.9g\n" % (x, y, z))
    for a, b, c in model.triangles + 1:
        buf.write(f"f {a} {b} {c}\n")
    text = buf.getvalue()
    if stream is not None:
        stream.write(text)
    return text


def combine_surfaces(models: Iterable[ObjectModel]) -> ObjectModel:
    """One surface-only model holding the surfaces of all ``models`` in order."""
    pos, tris = [], []
    offset = 0
    for m in models:
        pos.append(m.surface_positions)
        tris.append(m.triangles + offset)
        offset += m.n_surface
    return ObjectModel(np.concatenate(pos), np.concatenate(tris))


# --------------------------------------------------------------------------
# topology helpers


def undirected_triangle_edges(triangles) -> np.ndarray:
    """Unique ``(i, j)`` pairs with ``i < j`` over all triangle sides, sorted."""
    t = np.asarray(triangles, dtype=np.int64).reshape(-1, 3)
    e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0).reshape(-1, 2)


def is_watertight(model: ObjectModel) -> bool:
    """Every triangle side is shared by exactly two triangles, with opposite
    orientation (closed, consistently oriented 2-manifold)."""
    t = model.triangles
    if len(t) == 0:
        return False
    directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    und = np.sort(directed, axis=1)
    _, counts = np.unique(und, axis=0, return_counts=True)
    if np.any(counts != 2):
        return False
    # a consistently oriented closed surface uses each directed side once
    _, dcounts = np.unique(directed, axis=0, return_counts=True)
    return bool(np.all(dcounts == 1))


def bounding_box(points) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    return p.min(axis=0), p.max(axis=0)


# --------------------------------------------------------------------------
# interior points and internal edges


def generate_interior_points(model: ObjectModel, spacing: float) -> ObjectModel:
    """Fill the volume enclosed by the surface with lattice points.

    Lattice nodes have pitch ``spacing`` and are anchored at the minimum
    corner of the surface bounding box. Only nodes strictly inside the
    surface are kept. Existing interior points and edges are discarded, so
    call this before :func:`build_internal_edges`.
    """
    from .collision import points_in_mesh

    if not spacing > 0:
        raise MeshError(f"spacing must be positive, got {spacing}")
    if not is_watertight(model):
        raise MeshError("interior points need a closed, consistently oriented surface")
    lo, hi = bounding_box(model.surface_positions)
    counts = np.floor((hi - lo) / spacing + 1e-9).astype(int) + 1
    if np.any(counts < 3):
        warnings.warn(
            f"spacing {spacing} leaves no lattice node strictly inside the bounding box",
            InteriorSpacingWarning,
            stacklevel=2,
        )
        return model
    axes = [lo[d] + spacing * np.arange(counts[d]) for d in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    inside = points_in_mesh(grid, model.triangles, model.surface_positions)
    interior = grid[inside]
    logger.debug("generated %d interior points at spacing %g", len(interior), spacing)

    n_s = model.n_surface
    mob = np.concatenate([model.mobility[:n_s], np.ones(len(interior), dtype=np.int8)])
    ext = np.concatenate([model.external_force[:n_s], np.zeros((len(interior), 3))])
    return replace(
        model,
        rest_positions=np.concatenate([model.surface_positions, interior]),
        mobility=mob,
        external_force=ext,
        internal_edges=None,
        n_surface=n_s,
    )


def _pairs_within(points, threshold) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        return np.zeros((0, 2), dtype=np.int64)
    pairs = cKDTree(pts).query_pairs(threshold, output_type="ndarray").astype(np.int64)
    if len(pairs) == 0:
        return pairs.reshape(0, 2)
    d = np.linalg.norm(pts[pairs[:, 0]] - pts[pairs[:, 1]], axis=1)
    pairs = pairs[d < threshold]
    pairs.sort(axis=1)
    return pairs


def build_internal_edges(
    model: ObjectModel, mode: Optional[str] = None, threshold: Optional[float] = None
) -> ObjectModel:
    """Connect the vertices of one object.

    ``shared_polygon`` links vertices sharing a triangle. ``distance_threshold``
    links every pair closer than ``threshold`` at rest. ``combined`` (the
    default when the model has interior points) takes the triangle edges of
    the surface plus the threshold edges that touch an interior point.
    """
    if mode is None:
        mode = "combined" if model.n_interior else "shared_polygon"
    if mode not in EDGE_MODES:
        raise ValueError(f"unknown edge mode {mode!r}; expected one of {EDGE_MODES}")
    if mode != "shared_polygon" and not (threshold is not None and threshold > 0):
        raise ValueError(f"{mode} edges need a positive threshold")

    if mode == "shared_polygon":
        edges = undirected_triangle_edges(model.triangles)
    elif mode == "distance_threshold":
        edges = _pairs_within(model.rest_positions, threshold)
    else:
        near = _pairs_within(model.rest_positions, threshold)
        near = near[near[:, 1] >= model.n_surface]  # sorted pairs: larger id is interior
        edges = np.concatenate([undirected_triangle_edges(model.triangles), near])

    edges = np.unique(edges.reshape(-1, 2), axis=0).reshape(-1, 2)
    if len(edges) == 0:
        logger.warning("object has no internal edges")
    return replace(model, internal_edges=edges)


def apply_fixed_region(model: ObjectModel, axis: int, sign: int, offset: float) -> ObjectModel:
    """Fix every vertex on one side of the plane ``x[axis] = offset``.

    ``sign=+1`` fixes ``x[axis] >= offset``, ``sign=-1`` fixes
    ``x[axis] <= offset``; all other vertices are made mobile.
    """
    if axis not in (0, 1, 2) or sign not in (1, -1):
        raise ValueError(f"bad half-space axis={axis} sign={sign}")
    c = model.rest_positions[:, axis]
    fixed = c >= offset if sign > 0 else c <= offset
    return replace(model, mobility=np.where(fixed, 0, 1).astype(np.int8))


def with_external_force(model: ObjectModel, force) -> ObjectModel:
    """Apply the same external force vector to every vertex."""
    f = np.broadcast_to(np.asarray(force, dtype=float), (model.n_vertices, 3))
    return replace(model, external_force=f)
