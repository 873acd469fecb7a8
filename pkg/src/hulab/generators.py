"""Seeded samplers for the source processes used in the experiments.

All generators are pure functions of (parameters, generator state): the
same stream always reproduces the same sample.  Sources cover the three
fluctuation regimes exercised downstream: anti-hyperuniform line-process
intersections, Poisson/binomial noise, and hyperuniform (cloaked)
lattices, plus a Matern II hardcore process with exponentially decaying
correlations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from hulab.core import PointSample, SampleMeta, TorusBox, wrap

__all__ = [
    "GeneratorSpec",
    "gen_poisson",
    "gen_binomial",
    "gen_lattice",
    "gen_cloaked_lattice",
    "gen_matern2",
    "gen_phip",
    "generate",
]


@dataclass(frozen=True)
class GeneratorSpec:
    """Declarative description of a source process for pipeline configs."""

    kind: str
    intensity: float = 1.0
    extra: dict = field(default_factory=dict)

    _KINDS = ("poisson", "binomial", "lattice", "cloaked_lattice", "matern2", "phip")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown generator kind {self.kind!r}; expected one of {self._KINDS}")
        if self.kind != "phip" and not self.intensity > 0:
            raise ValueError("intensity must be positive")
        if self.kind == "matern2" and not self.extra.get("r_h", 1.0) > 0:
            raise ValueError("matern2 requires hardcore radius r_h > 0")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "intensity": self.intensity, **self.extra}

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        d = dict(d)
        kind = d.pop("kind")
        intensity = d.pop("intensity", 1.0)
        return cls(kind=kind, intensity=float(intensity), extra=d)


def _meta(rng_label, generator: str, intensity: float | None) -> SampleMeta:
    seed, stream = rng_label if rng_label is not None else (0, 0)
    return SampleMeta(seed=seed, stream=stream, generator=generator, intensity=intensity)


def gen_poisson(box: TorusBox, intensity: float, rng: np.random.Generator,
                rng_label=None) -> PointSample:
    """Homogeneous Poisson sample: Poisson count, iid uniform positions."""
    if not intensity > 0:
        raise ValueError("intensity must be positive")
    n = rng.poisson(intensity * box.volume)
    pts = rng.random((n, box.dim)) * box.side
    return PointSample(box, pts, meta=_meta(rng_label, "poisson", intensity))


def gen_binomial(box: TorusBox, n: int, rng: np.random.Generator,
                 rng_label=None) -> PointSample:
    """Fixed-count variant of the Poisson sampler (conditioned on N = n)."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    pts = rng.random((n, box.dim)) * box.side
    return PointSample(box, pts, meta=_meta(rng_label, "binomial", n / box.volume))


def _lattice_points(box: TorusBox) -> np.ndarray:
    n_side = int(round(box.side))
    if abs(box.side - n_side) > 1e-9 or n_side < 1:
        raise ValueError(f"side {box.side} is not commensurable with unit lattice spacing")
    axes = [np.arange(n_side, dtype=float)] * box.dim
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def gen_lattice(box: TorusBox, rng: np.random.Generator, stationarize: bool = True,
                rng_label=None) -> PointSample:
    """Integer lattice with unit spacing, optionally shifted by one uniform U."""
    pts = _lattice_points(box)
    if stationarize:
        pts = wrap(box, pts + rng.random(box.dim))
    return PointSample(box, pts, meta=_meta(rng_label, "lattice", 1.0))


def gen_cloaked_lattice(box: TorusBox, rng: np.random.Generator,
                        rng_label=None) -> PointSample:
    """Stationarized lattice plus iid uniform unit-cube displacements.

    The per-point displacement kernel has a Fourier transform vanishing on
    the whole reciprocal lattice, so the Bragg peaks are fully suppressed
    and the sample is hyperuniform.
    """
    pts = _lattice_points(box)
    pts = pts + rng.random(box.dim)                 # global stationarizing shift
    pts = pts + rng.random(pts.shape)               # iid uniform [0,1)^d per point
    return PointSample(box, wrap(box, pts), meta=_meta(rng_label, "cloaked_lattice", 1.0))


def gen_matern2(box: TorusBox, proposal_intensity: float, r_h: float,
                rng: np.random.Generator, rng_label=None) -> PointSample:
    """Matern II hardcore thinning of a Poisson proposal process.

    Proposals carry iid uniform marks; a proposal survives iff no other
    proposal with a strictly smaller mark lies within torus distance
    ``r_h``.  The retained process has minimal pairwise distance >= r_h.
    """
    if not r_h > 0:
        raise ValueError("r_h must be positive")
    if r_h >= box.side / 2:
        raise ValueError("r_h must be smaller than side/2")
    proposals = gen_poisson(box, proposal_intensity, rng)
    pts = proposals.points
    marks = rng.random(len(pts))
    keep = np.ones(len(pts), dtype=bool)
    if len(pts) > 1:
        tree = cKDTree(pts, boxsize=box.side)
        pairs = tree.query_pairs(r_h, output_type="ndarray")
        # strictly-within-r_h pairs: the larger mark dies (ties broken by index)
        if len(pairs):
            i, j = pairs[:, 0], pairs[:, 1]
            loser = np.where(
                (marks[i] > marks[j]) | ((marks[i] == marks[j]) & (i > j)), i, j
            )
            keep[loser] = False
    return PointSample(box, pts[keep],
                       meta=_meta(rng_label, "matern2", keep.sum() / box.volume))


def gen_phip(box: TorusBox, line_intensity: float, rng: np.random.Generator,
             rng_label=None) -> PointSample:
    """Intersection points of an isotropic Poisson line process (d = 2).

    Lines are sampled in (angle, signed offset) coordinates against the
    circumscribed disk of the box: angle uniform on [0, pi), offset
    uniform on [-R_c, R_c] with R_c the circumradius, and the number of
    lines Poisson with mean ``line_intensity * 2 * R_c``.  Intersections
    outside the box are discarded; lines are clipped, not wrapped.
    """
    if box.dim != 2:
        raise ValueError("PHIP generator requires dim = 2")
    if not line_intensity > 0:
        raise ValueError("line_intensity must be positive")
    r_c = box.side * np.sqrt(2.0) / 2.0
    center = box.side / 2.0
    n_lines = rng.poisson(line_intensity * 2.0 * r_c)
    thetas = rng.random(n_lines) * np.pi
    offsets = (rng.random(n_lines) * 2.0 - 1.0) * r_c
    pts = []
    cos, sin = np.cos(thetas), np.sin(thetas)
    for a in range(n_lines):
        # solve [cos_a sin_a; cos_b sin_b] x = [p_a; p_b] for all b > a
        det = cos[a] * sin[a + 1:] - sin[a] * cos[a + 1:]
        ok = np.abs(det) > 1e-12
        if not ok.any():
            continue
        pb = offsets[a + 1:][ok]
        x = (offsets[a] * sin[a + 1:][ok] - sin[a] * pb) / det[ok]
        y = (cos[a] * pb - offsets[a] * cos[a + 1:][ok]) / det[ok]
        pts.append(np.column_stack([x + center, y + center]))
    if pts:
        pts = np.concatenate(pts)
        inside = np.all((pts >= 0) & (pts < box.side), axis=1)
        pts = pts[inside]
    else:
        pts = np.empty((0, 2))
    return PointSample(box, pts, meta=_meta(rng_label, "phip", len(pts) / box.volume))


def generate(spec: GeneratorSpec, box: TorusBox, rng: np.random.Generator,
             rng_label=None) -> PointSample:
    """Dispatch a :class:`GeneratorSpec` to the matching sampler."""
    if spec.kind == "poisson":
        return gen_poisson(box, spec.intensity, rng, rng_label)
    if spec.kind == "binomial":
        n = spec.extra.get("n")
        if n is None:
            n = int(round(spec.intensity * box.volume))
        return gen_binomial(box, int(n), rng, rng_label)
    if spec.kind == "lattice":
        return gen_lattice(box, rng, bool(spec.extra.get("stationarize", True)), rng_label)
    if spec.kind == "cloaked_lattice":
        return gen_cloaked_lattice(box, rng, rng_label)
    if spec.kind == "matern2":
        return gen_matern2(box, spec.intensity, float(spec.extra["r_h"]), rng, rng_label)
    if spec.kind == "phip":
        return gen_phip(box, float(spec.extra.get("line_intensity", spec.intensity)),
                        rng, rng_label)
    raise ValueError(f"unknown generator kind {spec.kind!r}")
