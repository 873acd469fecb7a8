"""Geometry, randomness, and data-model foundation.

Everything lives on a cubic torus: a periodic box ``[0, side)^dim`` with
``dim`` in {1, 2, 3}.  All distances and displacements use the minimal
image convention, point configurations are stored in the half-open
fundamental domain, and wavevectors are restricted to the grid
``(2*pi/side) * m`` commensurable with the box.

Randomness is addressed by ``(master_seed, stream_id)`` pairs backed by
the counter-based Philox generator, so independent streams can be farmed
out to workers while staying bit-reproducible.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "TorusBox",
    "SampleMeta",
    "PointSample",
    "KGrid",
    "RngStream",
    "torus_displacement",
    "torus_distance",
    "wrap",
    "allowed_wavevectors",
    "write_sample_csv",
    "read_sample_csv",
]


@dataclass(frozen=True)
class TorusBox:
    """Cubic periodic simulation window with side length ``side``."""

    dim: int
    side: float

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        if not self.side > 0:
            raise ValueError(f"side must be positive, got {self.side}")

    @property
    def volume(self) -> float:
        return self.side**self.dim


@dataclass(frozen=True)
class SampleMeta:
    """Provenance of a sample: seed addressing and generator/transport chain."""

    seed: int = 0
    stream: int = 0
    generator: str = "unknown"
    transports: tuple[str, ...] = ()
    intensity: float | None = None

    def with_transport(self, name: str) -> "SampleMeta":
        return dataclasses.replace(self, transports=self.transports + (name,))

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "stream": self.stream,
            "generator": self.generator,
            "transports": list(self.transports),
            "intensity": self.intensity,
        }


def _as_points(points, dim: int) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1) if dim == 1 else pts.reshape(1, -1)
    if pts.ndim != 2 or pts.shape[1] != dim:
        raise ValueError(f"points must have shape (n, {dim}), got {pts.shape}")
    return pts


@dataclass(frozen=True)
class PointSample:
    """A finite weighted point configuration in a torus box.

    Coordinates are stored in ``[0, side)`` per axis; weights are
    nonnegative, one per point.  Instances are immutable (arrays are
    marked read-only) and safe to share across workers.
    """

    box: TorusBox
    points: np.ndarray
    weights: np.ndarray = None
    meta: SampleMeta = field(default_factory=SampleMeta)

    def __post_init__(self):
        pts = _as_points(self.points, self.box.dim)
        if np.any(pts < 0) or np.any(pts >= self.box.side):
            raise ValueError("coordinates must lie in [0, side)")
        w = self.weights
        if w is None:
            w = np.ones(len(pts))
        w = np.asarray(w, dtype=float)
        if w.shape != (len(pts),):
            raise ValueError(f"weights must have shape ({len(pts)},), got {w.shape}")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        pts = np.ascontiguousarray(pts)
        w = np.ascontiguousarray(w)
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())

    def evolved(self, points: np.ndarray, transport: str,
                weights: np.ndarray | None = None) -> "PointSample":
        """New sample in the same box, appending ``transport`` to the chain."""
        return PointSample(
            box=self.box,
            points=wrap(self.box, points),
            weights=self.weights if weights is None else weights,
            meta=self.meta.with_transport(transport),
        )


def wrap(box: TorusBox, points: np.ndarray) -> np.ndarray:
    """Re-wrap coordinates into the fundamental domain [0, side)."""
    pts = _as_points(points, box.dim)
    out = np.mod(pts, box.side)
    # mod can return side itself for tiny negative inputs
    out[out >= box.side] -= box.side
    return out


def _check_coords(box: TorusBox, x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.shape[-1:] != (box.dim,) and not (box.dim == 1 and arr.ndim == 0):
        raise ValueError(f"expected coordinates of dimension {box.dim}, got shape {arr.shape}")
    return np.atleast_1d(arr)


def torus_displacement(box: TorusBox, x, y) -> np.ndarray:
    """Minimal-image vector from ``x`` to ``y``.

    Each component lies in ``[-side/2, side/2)``; adding the result to
    ``x`` modulo the box recovers ``y``.  Broadcasts over leading axes.
    """
    x = _check_coords(box, x)
    y = _check_coords(box, y)
    half = box.side / 2.0
    d = np.mod(y - x + half, box.side) - half
    d[d >= half] -= box.side
    return d


def torus_distance(box: TorusBox, x, y) -> np.ndarray:
    """Euclidean length of the minimal-image displacement."""
    d = torus_displacement(box, x, y)
    return np.sqrt(np.sum(d * d, axis=-1))


@dataclass(frozen=True)
class KGrid:
    """Allowed wavevectors ``k = (2*pi/side) * m``, integer ``m != 0``.

    ``ms`` holds the integer index vectors with ``max|m_i| <= max_index``,
    ``ks`` the corresponding wavevectors, and ``shell`` the radial shell
    index ``round(|m|)`` used for radial averaging (shell width 2*pi/side).
    """

    box: TorusBox
    max_index: int
    ms: np.ndarray
    ks: np.ndarray
    shell: np.ndarray

    def __len__(self) -> int:
        return len(self.ms)

    @property
    def knorm(self) -> np.ndarray:
        return (2.0 * np.pi / self.box.side) * np.sqrt((self.ms**2).sum(axis=1))


def allowed_wavevectors(box: TorusBox, max_index: int) -> KGrid:
    """All nonzero wavevectors commensurable with the box up to ``max_index``."""
    if max_index < 1:
        raise ValueError(f"max_index must be >= 1, got {max_index}")
    rng1 = np.arange(-max_index, max_index + 1)
    grids = np.meshgrid(*([rng1] * box.dim), indexing="ij")
    ms = np.stack([g.ravel() for g in grids], axis=1)
    ms = ms[np.any(ms != 0, axis=1)]
    ks = (2.0 * np.pi / box.side) * ms.astype(float)
    shell = np.rint(np.sqrt((ms**2).sum(axis=1))).astype(int)
    ms = np.ascontiguousarray(ms)
    for arr in (ms, ks, shell):
        arr.setflags(write=False)
    return KGrid(box=box, max_index=max_index, ms=ms, ks=ks, shell=shell)


_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """Counter-based RNG address: (master_seed, stream_id) -> Philox key.

    Identical pairs reproduce identical draws; distinct stream ids give
    statistically independent streams.
    """

    master_seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        key = (self.master_seed & _MASK64) | ((self.stream_id & _MASK64) << 64)
        return np.random.Generator(np.random.Philox(key=key))

    def substream(self, stream_id: int) -> "RngStream":
        return RngStream(self.master_seed, stream_id)


# ---------------------------------------------------------------------------
# Serialization: CSV of coordinates + weight, JSON manifest sidecar.
# ---------------------------------------------------------------------------

_AXES = ("x", "y", "z")


def write_sample_csv(sample: PointSample, path: str | Path) -> Path:
    """Write ``x[,y[,z]],weight`` CSV plus a ``.json`` manifest sidecar."""
    path = Path(path)
    d = sample.box.dim
    header = ",".join(_AXES[:d]) + ",weight"
    lines = [header]
    for row, w in zip(sample.points, sample.weights):
        lines.append(",".join(repr(float(v)) for v in row) + f",{float(w)!r}")
    path.write_text("\n".join(lines) + "\n")
    manifest = {
        "box_side": sample.box.side,
        "dim": sample.box.dim,
        **sample.meta.to_dict(),
    }
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    )
    return path


def read_sample_csv(path: str | Path) -> PointSample:
    """Read a sample written by :func:`write_sample_csv`."""
    path = Path(path)
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[-1] != "weight" or tuple(header[:-1]) != _AXES[: len(header) - 1]:
            raise ValueError(f"unexpected CSV header {header!r} in {path}")
        dim = len(header) - 1
        body = fh.read().strip()
    if body:
        data = np.loadtxt(body.splitlines(), delimiter=",", ndmin=2)
    else:
        data = np.empty((0, dim + 1))
    side_path = path.with_suffix(path.suffix + ".json")
    meta = SampleMeta()
    if side_path.exists():
        info = json.loads(side_path.read_text())
        box = TorusBox(dim=info["dim"], side=info["box_side"])
        meta = SampleMeta(
            seed=info.get("seed", 0),
            stream=info.get("stream", 0),
            generator=info.get("generator", "unknown"),
            transports=tuple(info.get("transports", ())),
            intensity=info.get("intensity"),
        )
    else:
        raise FileNotFoundError(f"manifest sidecar {side_path} not found")
    return PointSample(box=box, points=data[:, :dim], weights=data[:, dim], meta=meta)
