"""Parametric 2D shape families standing in for a 3D shape corpus.

Each shape is a closed boundary curve sampled uniformly by arc length. The
observation attached to a shape is a noisy radial histogram plus the family
one-hot: it pins down the radial profile but not the rotation, so a single
observation is consistent with many point clouds.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

FAMILIES = ("circle", "square", "star", "ellipse")
HIST_BINS = 16
HIST_RANGE = (0.0, 0.55)
MAX_RADIUS = 0.5
JITTER = 0.005
HIST_NOISE = 0.02
COND_DIM = HIST_BINS + len(FAMILIES)


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class ShapeSpec:
    family: str
    scale: float = 1.0
    rotation: float = 0.0
    star_arms: int = 5
    aspect: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DataError(f"unknown family {self.family!r}")
        if not 0.5 <= self.scale <= 1.0:
            raise DataError(f"scale {self.scale} outside [0.5, 1.0]")
        if not 0.0 <= self.rotation < 2 * math.pi:
            raise DataError(f"rotation {self.rotation} outside [0, 2pi)")
        if not 4 <= self.star_arms <= 8:
            raise DataError(f"star_arms {self.star_arms} outside [4, 8]")
        if not 0.4 <= self.aspect <= 1.0:
            raise DataError(f"aspect {self.aspect} outside [0.4, 1.0]")


@dataclass(frozen=True)
class Condition:
    radial_histogram: np.ndarray
    family_onehot: np.ndarray
    noise_level: float

    def vector(self) -> np.ndarray:
        return np.concatenate([self.radial_histogram, self.family_onehot])


@dataclass
class DatasetBundle:
    S_l: list
    S_s: list
    test: list
    seed: int
    specs_l: list
    specs_s: list
    specs_test: list


def random_spec(rng: np.random.Generator) -> ShapeSpec:
    return ShapeSpec(
        family=FAMILIES[int(rng.integers(len(FAMILIES)))],
        scale=float(rng.uniform(0.5, 1.0)),
        rotation=float(rng.uniform(0.0, 2 * math.pi)),
        star_arms=int(rng.integers(4, 9)),
        aspect=float(rng.uniform(0.4, 1.0)),
    )


def _boundary(spec: ShapeSpec, theta: np.ndarray) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    if spec.family == "circle":
        return np.stack([c, s], axis=-1)
    if spec.family == "ellipse":
        return np.stack([c, spec.aspect * s], axis=-1)
    if spec.family == "star":
        r = 1.0 + 0.4 * np.cos(spec.star_arms * theta)
        return np.stack([r * c, r * s], axis=-1)
    # square: radial projection of the circle onto the unit-inf-norm ball
    r = 1.0 / np.maximum(np.abs(c), np.abs(s))
    return np.stack([r * c, r * s], axis=-1)


def gen_shape(spec: ShapeSpec, N: int, rng: np.random.Generator,
              jitter: float = JITTER) -> np.ndarray:
    """Sample ``N`` points along the boundary of ``spec``, normalised to
    zero centroid and maximum radius 0.5, plus isotropic per-point jitter."""
    if N < 1:
        raise DataError("N must be positive")
    grid = np.linspace(0.0, 2 * math.pi, 4097)
    curve = _boundary(spec, grid)
    seg = np.linalg.norm(np.diff(curve, axis=0), axis=1)
    arclen = np.concatenate([[0.0], np.cumsum(seg)])
    # one uniform draw per equal-length stratum, random phase: every point is
    # still uniform on the curve, but the sample centroid stays on the curve's
    u = ((rng.uniform() + np.arange(N) + rng.uniform(size=N)) / N % 1.0) * arclen[-1]
    theta = np.interp(u, arclen, grid)
    pts = _boundary(spec, theta) * spec.scale
    rot = np.array([[math.cos(spec.rotation), -math.sin(spec.rotation)],
                    [math.sin(spec.rotation), math.cos(spec.rotation)]])
    pts = pts @ rot.T
    pts = pts - pts.mean(axis=0)
    pts = pts * (MAX_RADIUS / np.linalg.norm(pts, axis=1).max())
    if jitter > 0:
        pts = pts + jitter * rng.standard_normal(pts.shape)
    return pts


def radial_histogram(y0: np.ndarray) -> np.ndarray:
    r = np.linalg.norm(y0 - y0.mean(axis=0), axis=1)
    r = np.clip(r, HIST_RANGE[0], HIST_RANGE[1] - 1e-12)
    h, _ = np.histogram(r, bins=HIST_BINS, range=HIST_RANGE)
    return h / h.sum()


def gen_condition(y0: np.ndarray, spec: ShapeSpec, rng: np.random.Generator,
                  noise: float = HIST_NOISE) -> Condition:
    h = radial_histogram(y0)
    if noise > 0:
        h = np.clip(h + noise * rng.standard_normal(h.shape), 0.0, None)
        if h.sum() <= 0:
            h = radial_histogram(y0)
        h = h / h.sum()
    onehot = np.zeros(len(FAMILIES))
    onehot[FAMILIES.index(spec.family)] = 1.0
    return Condition(h, onehot, float(noise))


def stack_conditions(conds) -> np.ndarray:
    return np.stack([c.vector() for c in conds])


def make_datasets(n_shapes: int, pair_fraction: float, N: int, seed: int,
                  n_test: int = 200, disjoint: bool = False) -> DatasetBundle:
    """Build the standalone set, the paired set and a fresh test split.

    Paired shapes are generated from independent draws of the same shape
    distribution. With ``disjoint=False`` the first ``|S_s|`` paired shapes
    reuse the standalone instances (overlapping regime); with ``disjoint=True``
    they are fresh instances.
    """
    if not 0.0 < pair_fraction <= 1.0:
        raise DataError(f"pair_fraction must be in (0, 1], got {pair_fraction}")
    if n_shapes < 1:
        raise DataError("n_shapes must be positive")
    n_pairs = math.ceil(pair_fraction * n_shapes - 1e-9)
    root = np.random.SeedSequence(seed)
    ss_l, ss_s, ss_test = root.spawn(3)

    def draw(ss, n):
        specs, clouds, conds = [], [], []
        for child in ss.spawn(n):
            rng = np.random.default_rng(child)
            spec = random_spec(rng)
            y = gen_shape(spec, N, rng)
            specs.append(spec)
            clouds.append(y)
            conds.append(gen_condition(y, spec, rng))
        return specs, clouds, conds

    specs_l, S_l, conds_l = draw(ss_l, n_shapes)
    if disjoint:
        specs_s, clouds_s, conds_s = draw(ss_s, n_pairs)
    else:
        specs_s, clouds_s, conds_s = specs_l[:n_pairs], S_l[:n_pairs], conds_l[:n_pairs]
    specs_t, clouds_t, conds_t = draw(ss_test, n_test)
    return DatasetBundle(
        S_l=S_l,
        S_s=list(zip(conds_s, clouds_s)),
        test=list(zip(conds_t, clouds_t)),
        seed=seed,
        specs_l=specs_l,
        specs_s=specs_s,
        specs_test=specs_t,
    )


def write_xyz(path: Path, cloud: np.ndarray) -> None:
    np.savetxt(path, cloud, fmt="%.10g")


def read_xyz(path: Path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path))


def export_bundle(bundle: DatasetBundle, out: Path, extra: dict | None = None) -> None:
    """Write every cloud as XYZ text plus a JSON manifest of specs and conditions."""
    out = Path(out)
    entries = []
    splits = [
        ("standalone", bundle.specs_l, [None] * len(bundle.S_l), bundle.S_l),
        ("paired", bundle.specs_s, [c for c, _ in bundle.S_s], [y for _, y in bundle.S_s]),
        ("test", bundle.specs_test, [c for c, _ in bundle.test], [y for _, y in bundle.test]),
    ]
    for split, specs, conds, clouds in splits:
        d = out / split
        d.mkdir(parents=True, exist_ok=True)
        for i, (spec, cond, y) in enumerate(zip(specs, conds, clouds)):
            name = f"{split}/{i:05d}.xyz"
            write_xyz(out / name, y)
            e = {"split": split, "file": name, "spec": asdict(spec)}
            if cond is not None:
                e["condition"] = {
                    "radial_histogram": cond.radial_histogram.tolist(),
                    "family_onehot": cond.family_onehot.tolist(),
                    "noise_level": cond.noise_level,
                }
            entries.append(e)
    manifest = {"seed": bundle.seed, "entries": entries}
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))


def load_bundle(out: Path) -> DatasetBundle:
    out = Path(out)
    manifest = json.loads((out / "manifest.json").read_text())
    parts = {"standalone": [], "paired": [], "test": []}
    for e in manifest["entries"]:
        y = read_xyz(out / e["file"])
        spec = ShapeSpec(**e["spec"])
        cond = None
        if "condition" in e:
            c = e["condition"]
            cond = Condition(np.array(c["radial_histogram"]), np.array(c["family_onehot"]),
                             c["noise_level"])
        parts[e["split"]].append((spec, cond, y))
    return DatasetBundle(
        S_l=[y for _, _, y in parts["standalone"]],
        S_s=[(c, y) for _, c, y in parts["paired"]],
        test=[(c, y) for _, c, y in parts["test"]],
        seed=manifest["seed"],
        specs_l=[s for s, _, _ in parts["standalone"]],
        specs_s=[s for s, _, _ in parts["paired"]],
        specs_test=[s for s, _, _ in parts["test"]],
    )
