"""Command-line front end.

    deform --config scene.cfg [--out DIR] [--frames STRIDE]
    deform --scenario sphere-cube-paper [--k-ratio R] [--h H] [--gamma G]

A scenario file is UTF-8 text of ``key = value`` lines; ``#`` starts a
comment. Per-object keys carry an ``a.`` or ``b.`` prefix::

    object_a = sphere.obj          # paths relative to the config file
    object_b = cube.obj
    a.k = 3
    a.fixed_region = z <= -74.7    # or "none"
    b.fixed_region = z >= 0
    detect_mode = radial
    radial_center = 0 0 -74.7      # defaults to the centre of object A's box
    gamma = 0.1

Exit codes: 0 converged, 2 iteration cap reached, 3 diverged, 1 bad usage
or configuration.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import mesh_core
from .mesh_core import MeshError, ObjectModel
from .scenes import SphereCubeScene
from .solver import CONVERGED, DIVERGED, MAX_ITERATIONS, ConfigError, SolverConfig, SolverResult, run

logger = logging.getLogger(__name__)

EXIT_CODES = {CONVERGED: 0, MAX_ITERATIONS: 2, DIVERGED: 3}
EXIT_USAGE = 1
SCENARIOS = ("sphere-cube-paper",)
METRICS_HEADER = "iteration,max_penetration,max_force_residual,max_displacement"
_AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True)
class FixedRegion:
    """Half-space ``x[axis] >= offset`` (sign +1) or ``<= offset`` (sign -1)."""

    axis: int
    sign: int
    offset: float

    @classmethod
    def parse(cls, text: str) -> Optional["FixedRegion"]:
        """``"z >= 0"``, ``"x <= -1.5"`` or ``"none"``."""
        parts = text.split()
        if len(parts) == 1 and parts[0].lower() == "none":
            return None
        if len(parts) != 3 or parts[0].lower() not in _AXES or parts[1] not in (">=", "<="):
            raise ValueError(f"expected '<x|y|z> <>=|<=> <offset>' or 'none', got {text!r}")
        return cls(_AXES[parts[0].lower()], 1 if parts[1] == ">=" else -1, _real(parts[2]))

    def __str__(self):
        return f"{'xyz'[self.axis]} {'>=' if self.sign > 0 else '<='} {self.offset:.9g}"


@dataclass
class ObjectSettings:
    k: float = 1.0
    h: float = 0.0
    fixed_region: Optional[FixedRegion] = None
    interior_spacing: Optional[float] = None
    edge_threshold: Optional[float] = None


@dataclass
class ScenarioConfig:
    object_a: Path
    object_b: Path
    a: ObjectSettings = field(default_factory=ObjectSettings)
    b: ObjectSettings = field(default_factory=ObjectSettings)
    detect_mode: str = "nearest"
    radial_center: Optional[tuple[float, float, float]] = None
    gravity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    solver: SolverConfig = field(default_factory=SolverConfig)
    output_dir: Path = Path("deform_out")


# --------------------------------------------------------------------------
# config parsing


def _real(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError(f"{s!r} is not finite")
    return v


def _positive(s: str) -> float:
    v = _real(s)
    if not v > 0:
        raise ValueError(f"must be positive, got {s}")
    return v


def _optional_positive(s: str) -> Optional[float]:
    return None if s.lower() == "none" else _positive(s)


def _integer(s: str) -> int:
    return int(s)


def _vector(s: str) -> tuple[float, float, float]:
    parts = s.replace(",", " ").split()
    if len(parts) != 3:
        raise ValueError(f"expected three numbers, got {s!r}")
    return tuple(_real(p) for p in parts)


def _mode(s: str) -> str:
    if s not in ("nearest", "radial"):
        raise ValueError(f"expected 'nearest' or 'radial', got {s!r}")
    return s


_OBJECT_KEYS = {
    "k": _positive,
    "h": _real,
    "fixed_region": FixedRegion.parse,
    "interior_spacing": _optional_positive,
    "edge_threshold": _optional_positive,
}
_SOLVER_KEYS = {
    "gamma": _real,
    "beta": _real,
    "eps1": _optional_positive,
    "eps2": _optional_positive,
    "max_iterations": _integer,
    "divergence_factor": _real,
    "frame_stride": _integer,
}
_TOP_KEYS = {
    "object_a": Path,
    "object_b": Path,
    "detect_mode": _mode,
    "radial_center": _vector,
    "gravity": _vector,
    "output_dir": Path,
}


def parse_config(text: str, base_dir=None) -> ScenarioConfig:
    """Parse and validate scenario text.

    Relative paths are resolved against ``base_dir`` when given. Errors name
    the offending key and line.
    """
    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in lines:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} (first set on line {lines[key]})")
        prefix, _, name = key.partition(".")
        if name and prefix in ("a", "b"):
            conv = _OBJECT_KEYS.get(name)
        else:
            conv = _SOLVER_KEYS.get(key) or _TOP_KEYS.get(key)
        if conv is None:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if not value:
            raise ConfigError(f"line {lineno}: key {key!r} has no value")
        try:
            values[key] = conv(value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
        lines[key] = lineno

    for req in ("object_a", "object_b"):
        if req not in values:
            raise ConfigError(f"missing required key {req!r}")

    def where(key):
        return f"line {lines[key]}: " if key in lines else ""

    objs = {}
    for p in ("a", "b"):
        s = ObjectSettings(**{n: values[f"{p}.{n}"] for n in _OBJECT_KEYS if f"{p}.{n}" in values})
        if abs(1.0 - s.h - 2.0 * s.h * s.h) <= 1e-12:
            raise ConfigError(f"{where(p + '.h')}{p}.h={s.h} makes the stiffness matrix singular")
        objs[p] = s

    solver = SolverConfig(**{k: values[k] for k in _SOLVER_KEYS if k in values})
    try:
        solver.validate()
    except ConfigError as exc:
        key = str(exc).split()[0]
        raise ConfigError(f"{where(key)}{exc}") from None

    base = Path(base_dir) if base_dir is not None else None

    def resolve(path: Path) -> Path:
        return path if base is None or path.is_absolute() else base / path

    cfg = ScenarioConfig(
        object_a=resolve(values["object_a"]),
        object_b=resolve(values["object_b"]),
        a=objs["a"],
        b=objs["b"],
        detect_mode=values.get("detect_mode", "nearest"),
        radial_center=values.get("radial_center"),
        gravity=values.get("gravity", (0.0, 0.0, 0.0)),
        solver=solver,
        output_dir=values.get("output_dir", Path("deform_out")),
    )
    for key in ("object_a", "object_b"):
        if not getattr(cfg, key).is_file():
            raise ConfigError(f"{where(key)}{key}: file not found: {getattr(cfg, key)}")
    return cfg


# --------------------------------------------------------------------------
# scene assembly


def apply_fixed_region(model: ObjectModel, region: Optional[FixedRegion]) -> ObjectModel:
    """Status 0 for every vertex in ``region``, 1 elsewhere; ``None`` frees all."""
    if region is None:
        return replace(model, mobility=np.ones(model.n_vertices, dtype=np.int8))
    return mesh_core.apply_fixed_region(model, region.axis, region.sign, region.offset)


def default_edge_threshold(spacing: float) -> float:
    # axis neighbours only; diagonal lattice links make the force step unstable at alpha=0.1
    return 1.05 * spacing


def prepare_object(surface: ObjectModel, settings: ObjectSettings, gravity=(0.0, 0.0, 0.0)) -> ObjectModel:
    """Interior points, internal edges, material, fixed region and load."""
    model = surface
    if settings.interior_spacing is not None:
        model = mesh_core.generate_interior_points(model, settings.interior_spacing)
    threshold = settings.edge_threshold
    if threshold is None and model.n_interior:
        threshold = default_edge_threshold(settings.interior_spacing)
    model = mesh_core.build_internal_edges(model, threshold=threshold)
    model = replace(model, stiffness_k=settings.k, poisson_h=settings.h)
    model = apply_fixed_region(model, settings.fixed_region)
    if any(gravity):
        model = mesh_core.with_external_force(model, gravity)
    return model


def load_scenario(cfg: ScenarioConfig) -> tuple[ObjectModel, ObjectModel, Optional[np.ndarray]]:
    a = prepare_object(mesh_core.read_obj(cfg.object_a), cfg.a, cfg.gravity)
    b = prepare_object(mesh_core.read_obj(cfg.object_b), cfg.b, cfg.gravity)
    center = None
    if cfg.detect_mode == "radial":
        if cfg.radial_center is not None:
            center = np.array(cfg.radial_center, dtype=float)
        else:
            lo, hi = mesh_core.bounding_box(a.surface_positions)
            center = 0.5 * (lo + hi)
    return a, b, center


def preset_scene() -> SphereCubeScene:
    return SphereCubeScene()


def preset_config(k_ratio: float = 3.0, h: float = 0.0, gamma: float = 0.1) -> ScenarioConfig:
    """The sphere-into-cube scenario: object A is the sphere, B the cube,
    the sphere's lower half and the cube's upper half fixed."""
    sc = preset_scene()
    cz = float(sc.sphere_center[2])
    return ScenarioConfig(
        object_a=Path("sphere.obj"),
        object_b=Path("cube.obj"),
        a=ObjectSettings(k=k_ratio, h=h, fixed_region=FixedRegion(2, -1, cz)),
        b=ObjectSettings(k=1.0, h=h, fixed_region=FixedRegion(2, 1, 0.0)),
        detect_mode="radial",
        radial_center=tuple(float(x) for x in sc.sphere_center),
        solver=SolverConfig(gamma=gamma),
        output_dir=Path("deform_out"),
    )


def preset_models(cfg: ScenarioConfig) -> tuple[ObjectModel, ObjectModel, np.ndarray]:
    """Preset objects built from the generated primitives (no file round trip)."""
    sc = preset_scene()
    a = prepare_object(sc.sphere(), cfg.a, cfg.gravity)
    b = prepare_object(sc.cube(), cfg.b, cfg.gravity)
    return a, b, np.array(cfg.radial_center, dtype=float)


def format_config(cfg: ScenarioConfig) -> str:
    """Config text that :func:`parse_config` reads back to ``cfg``."""

    def num(v):
        return "none" if v is None else f"{v:.9g}"

    out = [f"object_a = {cfg.object_a}", f"object_b = {cfg.object_b}"]
    for p in ("a", "b"):
        s: ObjectSettings = getattr(cfg, p)
        out += [
            f"{p}.k = {num(s.k)}",
            f"{p}.h = {num(s.h)}",
            f"{p}.fixed_region = {s.fixed_region if s.fixed_region else 'none'}",
            f"{p}.interior_spacing = {num(s.interior_spacing)}",
            f"{p}.edge_threshold = {num(s.edge_threshold)}",
        ]
    out.append(f"detect_mode = {cfg.detect_mode}")
    if cfg.radial_center is not None:
        out.append("radial_center = " + " ".join(num(x) for x in cfg.radial_center))
    out.append("gravity = " + " ".join(num(x) for x in cfg.gravity))
    sv = cfg.solver
    out += [
        f"gamma = {num(sv.gamma)}",
        f"beta = {num(sv.beta)}",
        f"eps1 = {num(sv.eps1)}",
        f"eps2 = {num(sv.eps2)}",
        f"max_iterations = {sv.max_iterations}",
        f"divergence_factor = {num(sv.divergence_factor)}",
        f"frame_stride = {sv.frame_stride}",
        f"output_dir = {cfg.output_dir}",
    ]
    return "\n".join(out) + "\n"


# --------------------------------------------------------------------------
# outputs


def metrics_text(result: SolverResult) -> str:
    rows = [METRICS_HEADER]
    for r in result.report.records:
        rows.append(
            "%d,%.9g,%.9g,%.9g" % (r.iteration, r.max_penetration, r.max_force_residual, r.max_displacement)
        )
    return "\n".join(rows) + "\n"


def scene_obj_text(positions: np.ndarray, model_a: ObjectModel, model_b: ObjectModel) -> str:
    """Both surfaces in one OBJ, object A first."""
    pa, pb = positions[: model_a.n_vertices], positions[model_a.n_vertices :]
    both = mesh_core.combine_surfaces([model_a, model_b])
    pos = np.concatenate([pa[: model_a.n_surface], pb[: model_b.n_surface]])
    return mesh_core.save_obj(pos, both)


def write_outputs(result: SolverResult, model_a: ObjectModel, model_b: ObjectModel, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for old in out.glob("frame_*.obj"):
        old.unlink()
    for it, pos in result.frames:
        (out / f"frame_{it:05d}.obj").write_text(scene_obj_text(pos, model_a, model_b), encoding="utf-8")
    (out / "final.obj").write_text(scene_obj_text(result.positions, model_a, model_b), encoding="utf-8")
    (out / "metrics.csv").write_text(metrics_text(result), encoding="utf-8")
    return out


def verdict_line(result: SolverResult) -> str:
    last = result.report.records[-1]
    return (
        f"{result.report.verdict} after {result.report.final_iteration} iterations "
        f"(max_penetration={last.max_penetration:.6g}, max_force_residual={last.max_force_residual:.6g})"
    )


# --------------------------------------------------------------------------
# entry point


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="deform", description="Resolve the interpenetration of two triangle meshes.")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--config", type=Path, help="scenario file")
    src.add_argument("--scenario", choices=SCENARIOS, help="built-in scenario")
    p.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    p.add_argument("--frames", type=int, help="write a frame every N iterations")
    p.add_argument("--k-ratio", type=float, default=3.0, help="k_sphere / k_cube for the built-in scenario")
    p.add_argument("--h", type=float, default=0.0, help="Poisson parameter for the built-in scenario")
    p.add_argument("--gamma", type=float, default=0.1, help="damping base for the built-in scenario")
    p.add_argument("--max-iterations", type=int, help="iteration cap (overrides the config)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(f"deform: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    try:
        if args.config is not None:
            try:
                text = args.config.read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from None
            cfg = parse_config(text, base_dir=args.config.parent)
            model_a, model_b, center = load_scenario(cfg)
        else:
            cfg = preset_config(args.k_ratio, args.h, args.gamma)
            model_a, model_b, center = preset_models(cfg)
        if args.frames is not None:
            cfg.solver.frame_stride = args.frames
        if args.max_iterations is not None:
            cfg.solver.max_iterations = args.max_iterations
        cfg.solver.validate()
        out_dir = args.out if args.out is not None else cfg.output_dir
    except (ConfigError, MeshError, ValueError) as exc:
        print(parser.format_usage().rstrip(), file=sys.stderr)
        print(f"deform: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    result = run(model_a, model_b, cfg.solver, mode=cfg.detect_mode, center=center)
    write_outputs(result, model_a, model_b, out_dir)
    print(verdict_line(result))
    return EXIT_CODES[result.report.verdict]


if __name__ == "__main__":
    sys.exit(main())
