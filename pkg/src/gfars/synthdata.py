"""Procedural mixed-part-set generator and JSON-lines dataset I/O.

Every generated shape draws one latent scale s ~ U(0.6, 1.4) shared by all
of its parts; part dimensions are role proportions times s with an
independent +-5% jitter per dimension. Parts are stored in their own
canonical frame (centered, axis-aligned), so the only grouping cue is
geometric consistency between parts.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grouping import DataError, MixedPartSet
from .partenc import PartCloud

SCALE_RANGE = (0.6, 1.4)
JITTER = 0.05
COORD_DECIMALS = 6

# role -> (primitive, base dimensions at s=1, count)
# box dims are (x, y, z) extents; cylinder/cone dims are (radius, height)
TEMPLATES: dict[str, list[tuple[str, str, tuple[float, ...], int]]] = {
    "chairlike": [
        ("seat", "box", (0.50, 0.06, 0.50), 1),
        ("back", "box", (0.50, 0.55, 0.05), 1),
        ("leg", "cylinder", (0.03, 0.45), 4),
    ],
    "tablelike": [
        ("top", "box", (0.90, 0.06, 0.60), 1),
        ("leg", "cylinder", (0.06, 0.70), 4),
    ],
    "lamplike": [
        ("base", "cylinder", (0.22, 0.04), 1),
        ("pole", "cylinder", (0.02, 0.90), 1),
        ("shade", "cone", (0.24, 0.28), 1),
    ],
}


def template_arity(name: str) -> int:
    return sum(count for *_, count in TEMPLATES[name])


# ------------------------------------------------------------ surface samplers


def _box_surface(dims, n, rng):
    a, b, c = dims
    areas = np.array([b * c, b * c, a * c, a * c, a * b, a * b])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    uv = rng.uniform(-0.5, 0.5, size=(n, 3)) * np.array(dims)
    axis = face // 2
    sign = np.where(face % 2 == 0, -0.5, 0.5)
    uv[np.arange(n), axis] = sign * np.asarray(dims)[axis]
    return uv


def _cylinder_surface(dims, n, rng):
    r, h = dims
    side, cap = 2 * np.pi * r * h, np.pi * r * r
    kind = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
    theta = rng.uniform(0, 2 * np.pi, n)
    rad = np.where(kind == 0, r, r * np.sqrt(rng.uniform(0, 1, n)))
    y = np.where(kind == 0, rng.uniform(-h / 2, h / 2, n), np.where(kind == 1, -h / 2, h / 2))
    return np.stack([rad * np.cos(theta), y, rad * np.sin(theta)], axis=1)


def _cone_surface(dims, n, rng):
    r, h = dims
    slant = np.hypot(r, h)
    lateral, base = np.pi * r * slant, np.pi * r * r
    on_side = rng.uniform(0, lateral + base, n) < lateral
    theta = rng.uniform(0, 2 * np.pi, n)
    u = np.sqrt(rng.uniform(0, 1, n))  # area-uniform along the slant / over the disk
    rad = r * u
    y = np.where(on_side, h / 2 - h * u, -h / 2)
    return np.stack([rad * np.cos(theta), y, rad * np.sin(theta)], axis=1)


_SURFACES = {"box": _box_surface, "cylinder": _cylinder_surface, "cone": _cone_surface}


def generate_shape(template: str, scale: float, rng: np.random.Generator, n_points: int = 64) -> list[PartCloud]:
    """Parts of one shape, each a centered, axis-aligned surface point cloud."""
    if template not in TEMPLATES:
        raise ValueError(f"unknown template {template!r}")
    parts = []
    for role, prim, dims, count in TEMPLATES[template]:
        for _ in range(count):
            jitter = rng.uniform(1 - JITTER, 1 + JITTER, size=len(dims))
            pts = _SURFACES[prim](np.asarray(dims) * scale * jitter, n_points, rng)
            parts.append(PartCloud(len(parts), np.round(pts, COORD_DECIMALS)))
    return parts


def random_shape(rng: np.random.Generator, n_points: int = 64, templates: Sequence[str] = tuple(TEMPLATES)):
    name = templates[rng.integers(len(templates))]
    s = rng.uniform(*SCALE_RANGE)
    return generate_shape(name, s, rng, n_points)


def mix_sets(shapes: Sequence[Sequence[PartCloud]], rng: np.random.Generator, set_id: str = "",
             return_order: bool = False):
    """Pool the parts of several shapes, label by source shape, shuffle, renumber.

    With ``return_order`` the permutation is also returned: mixed part k came
    from position ``order[k]`` of the concatenated input.
    """
    if len(shapes) < 1:
        raise ValueError("need at least one shape")
    pool = [(g, p) for g, shape in enumerate(shapes) for p in shape]
    order = rng.permutation(len(pool))
    parts = [PartCloud(k, pool[j][1].points, pool[j][0]) for k, j in enumerate(order)]
    mixed = MixedPartSet(set_id, parts)
    return (mixed, order) if return_order else mixed


def make_noisy_set(rng: np.random.Generator, set_id: str, n_points: int = 64, distractors=(2, 4)) -> MixedPartSet:
    """One complete shape (label 0) plus single parts taken from other random shapes."""
    main = random_shape(rng, n_points)
    k = int(rng.integers(distractors[0], distractors[1] + 1))
    extras = []
    for _ in range(k):
        donor = random_shape(rng, n_points)
        extras.append([donor[rng.integers(len(donor))]])
    return mix_sets([main, *extras], rng, set_id)


# ------------------------------------------------------------------- datasets


@dataclass
class DatasetManifest:
    split: str = "train"
    sets: int = 2000
    mix_probs: dict = field(default_factory=lambda: {2: 0.7, 3: 0.3})
    seed: int = 0
    n_points: int = 64

    def validate(self) -> None:
        if self.split not in ("train", "test", "val"):
            raise ValueError(f"unknown split {self.split!r}")
        if self.sets < 0:
            raise ValueError("sets must be non-negative")
        probs = np.array(list(self.mix_probs.values()), dtype=float)
        if np.any(probs < 0) or not np.isclose(probs.sum(), 1.0):
            raise ValueError("mix_probs must be a probability distribution")
        if any(int(n) < 1 for n in self.mix_probs):
            raise ValueError("mix counts must be >= 1")

    def to_json(self) -> dict:
        d = asdict(self)
        d["mix_probs"] = {str(k): v for k, v in self.mix_probs.items()}
        return d

    @classmethod
    def from_json(cls, d: dict) -> "DatasetManifest":
        d = dict(d)
        d["mix_probs"] = {int(k): float(v) for k, v in d.get("mix_probs", {2: 0.7, 3: 0.3}).items()}
        return cls(**d)


_SPLIT_CODE = {"train": 1, "test": 2, "val": 3}


def set_rng(manifest: DatasetManifest, index: int) -> np.random.Generator:
    return np.random.default_rng([manifest.seed, _SPLIT_CODE[manifest.split], index])


def generate_set(manifest: DatasetManifest, index: int) -> MixedPartSet:
    rng = set_rng(manifest, index)
    counts = [int(k) for k in manifest.mix_probs]
    probs = np.array([manifest.mix_probs[k] for k in manifest.mix_probs], dtype=float)
    n_shapes = counts[rng.choice(len(counts), p=probs / probs.sum())]
    shapes = [random_shape(rng, manifest.n_points) for _ in range(n_shapes)]
    return mix_sets(shapes, rng, f"{manifest.split}-{manifest.seed}-{index:06d}")


def generate_sets(manifest: DatasetManifest) -> list[MixedPartSet]:
    manifest.validate()
    return [generate_set(manifest, i) for i in range(manifest.sets)]


def set_to_json(s: MixedPartSet) -> dict:
    return {
        "set_id": s.set_id,
        "parts": [{"part_id": p.part_id, "gt_group": p.gt_group, "points": p.points.tolist()} for p in s.parts],
    }


def set_from_json(d: dict) -> MixedPartSet:
    try:
        parts = [PartCloud(int(p["part_id"]), np.asarray(p["points"], dtype=float),
                           None if p.get("gt_group") is None else int(p["gt_group"])) for p in d["parts"]]
        return MixedPartSet(str(d["set_id"]), parts)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(str(exc)) from None


def write_dataset(sets: Iterable[MixedPartSet], path) -> None:
    with open(path, "w") as fh:
        for s in sets:
            fh.write(json.dumps(set_to_json(s), separators=(",", ":")) + "\n")


def read_dataset(path) -> list[MixedPartSet]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(set_from_json(json.loads(line)))
            except (json.JSONDecodeError, DataError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return out


def build_dataset(manifest: DatasetManifest, path) -> list[MixedPartSet]:
    """Generate ``manifest.sets`` sets, write them as JSON lines plus a manifest sidecar."""
    sets = generate_sets(manifest)
    path = Path(path)
    write_dataset(sets, path)
    path.with_name(path.name + ".manifest.json").write_text(json.dumps(manifest.to_json(), indent=2, sort_keys=True))
    return sets


# ---------------------------------------------------- nearest-neighbour probe


def bbox_features(points: np.ndarray) -> np.ndarray:
    return np.sort(points.max(axis=0) - points.min(axis=0))


def nn_scale_baseline(reference: Sequence[tuple[np.ndarray, float]], part_set: MixedPartSet, gap: float = 0.06) -> list[list[int]]:
    """Group parts by 1-NN estimated latent scale, splitting sorted scales at gaps.

    ``reference`` pairs bounding-box features with their known shape scale.
    Used only to check that the generator carries a usable grouping signal.
    """
    ref_x = np.array([np.log(r[0]) for r in reference])
    ref_s = np.array([r[1] for r in reference])
    est = []
    for p in part_set.parts:
        f = np.log(bbox_features(p.points))
        est.append(ref_s[np.argmin(((ref_x - f) ** 2).sum(axis=1))])
    order = np.argsort(est, kind="stable")
    groups, current = [], [part_set.parts[order[0]].part_id]
    for a, b in zip(order[:-1], order[1:]):
        if est[b] - est[a] > gap:
            groups.append(current)
            current = []
        current.append(part_set.parts[b].part_id)
    groups.append(current)
    return groups


def reference_bank(rng: np.random.Generator, shapes: int = 600, n_points: int = 64) -> list[tuple[np.ndarray, float]]:
    bank = []
    for _ in range(shapes):
        name = list(TEMPLATES)[rng.integers(len(TEMPLATES))]
        s = rng.uniform(*SCALE_RANGE)
        for p in generate_shape(name, s, rng, n_points):
            bank.append((bbox_features(p.points), s))
    return bank
