"""Stationary Gaussian displacement fields and Gaussian mixing bounds.

Displacement fields have iid vector components, each a centered Gaussian
field with a scalar stationary covariance C(h) from a small parametric
family.  Plugging the torus distance into a Euclidean covariance family
approximates a stationary field on the torus; this is accurate when the
range is small against the box, so ranges above side/4 trigger a warning.

Also provides the closed-form total-variation bound for a pair of
jointly Gaussian, identically distributed vectors with pre-whitened
marginals, and partial-sum/tail checks for the lattice summability of
the covariance.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from hulab.core import PointSample, torus_distance

__all__ = [
    "CovarianceModel",
    "DisplacementKernelSpec",
    "sample_field_displacements",
    "gaussian_pair_tv_bound",
    "mixing_sum_check",
    "MixingSum",
]

# dense Cholesky factorization cap for field sampling
MAX_FIELD_POINTS = 5000

_COV_KINDS = ("white", "squared_exponential", "exponential", "spherical")


@dataclass(frozen=True)
class CovarianceModel:
    """Scalar stationary covariance C(h) applied to iid displacement components.

    ``variance`` is C(0); ``rng_range`` (the range ``ell``) sets the decay
    scale.  The spherical kind vanishes identically for h >= ell.
    """

    kind: str
    variance: float = 1.0
    rng_range: float = 1.0

    def __post_init__(self):
        if self.kind not in _COV_KINDS:
            raise ValueError(f"unknown covariance kind {self.kind!r}; expected one of {_COV_KINDS}")
        if self.variance < 0:
            raise ValueError("variance must be >= 0")
        if not self.rng_range > 0:
            raise ValueError("range must be > 0")

    def __call__(self, h) -> np.ndarray:
        """Evaluate C(h) for nonnegative distances h (vectorized)."""
        h = np.asarray(h, dtype=float)
        s2, ell = self.variance, self.rng_range
        if self.kind == "white":
            return np.where(h == 0.0, s2, 0.0)
        if self.kind == "squared_exponential":
            return s2 * np.exp(-(h * h) / (2.0 * ell * ell))
        if self.kind == "exponential":
            return s2 * np.exp(-h / ell)
        # spherical: compactly supported on [0, ell)
        u = np.minimum(h / ell, 1.0)
        return s2 * (1.0 - 1.5 * u + 0.5 * u**3) * (h < ell)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "variance": self.variance, "range": self.rng_range}

    @classmethod
    def from_dict(cls, d: dict) -> "CovarianceModel":
        return cls(kind=d["kind"], variance=float(d.get("variance", 1.0)),
                   rng_range=float(d.get("range", 1.0)))


@dataclass(frozen=True)
class DisplacementKernelSpec:
    """Per-point displacement law: a correlated field or an iid kernel Q.

    kinds: ``field`` (Gaussian field, needs a CovarianceModel),
    ``uniform_ball`` (radius rho), ``gaussian`` (per-axis sigma),
    ``uniform_cube`` (unit cube), ``point_mass`` (identity).
    """

    kind: str
    param: float = 1.0

    _KINDS = ("field", "uniform_ball", "gaussian", "uniform_cube", "point_mass")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(f"unknown displacement kind {self.kind!r}; expected one of {self._KINDS}")
        if self.kind in ("uniform_ball", "gaussian") and not self.param > 0:
            raise ValueError(f"{self.kind} displacement needs a positive parameter")


def sample_field_displacements(sample: PointSample, model: CovarianceModel,
                               rng: np.random.Generator) -> np.ndarray:
    """Draw one Gaussian displacement vector per point of ``sample``.

    Components are independent; each is a centered Gaussian vector with
    covariance matrix ``C(torus_distance(x_i, x_j))``, factorized densely
    with a small diagonal jitter.  Limited to MAX_FIELD_POINTS points.
    """
    n = len(sample)
    d = sample.box.dim
    if n == 0:
        return np.empty((0, d))
    if n > MAX_FIELD_POINTS:
        raise ValueError(
            f"dense factorization limited to {MAX_FIELD_POINTS} points, got {n}"
        )
    if model.variance == 0.0:
        return np.zeros((n, d))
    if model.kind != "white" and model.rng_range > sample.box.side / 4:
        warnings.warn(
            "covariance range exceeds side/4; torus wraparound bias may be significant",
            stacklevel=2,
        )
    if model.kind == "white":
        return rng.standard_normal((n, d)) * np.sqrt(model.variance)
    diff = sample.points[:, None, :] - sample.points[None, :, :]
    half = sample.box.side / 2.0
    diff = np.mod(diff + half, sample.box.side) - half
    dist = np.sqrt((diff * diff).sum(axis=-1))
    cov = model(dist)
    cov[np.diag_indices(n)] += 1e-10 * model.variance
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        eigmin = float(np.linalg.eigvalsh(cov)[0])
        raise np.linalg.LinAlgError(
            f"covariance matrix not PSD after jitter (min eigenvalue {eigmin:.3e}); "
            f"model={model.kind}, range={model.rng_range}, n={n}"
        ) from exc
    return chol @ rng.standard_normal((n, d))


def gaussian_pair_tv_bound(cross_cov: np.ndarray) -> float:
    """Total-variation bound for a whitened jointly Gaussian pair.

    For identically distributed d-vectors with identity marginal
    covariance and cross-covariance A (spectral norm at most 1/2), the
    distance between the joint law and the product of the marginals is
    at most ``sqrt(-d * log(det(I_d - A^T A)))``, capped at the trivial
    bound 2.  Pre-whitening the marginals is the caller's job.
    """
    a = np.atleast_2d(np.asarray(cross_cov, dtype=float))
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"cross-covariance must be square, got {a.shape}")
    d = a.shape[0]
    norm = float(np.linalg.norm(a, 2))
    if norm == 0.0:
        return 0.0
    if norm > 0.5 + 1e-12:
        raise ValueError(
            f"spectral norm {norm:.4f} exceeds 1/2; bound regime violated"
        )
    sign, logdet = np.linalg.slogdet(np.eye(d) - a.T @ a)
    if sign <= 0:
        raise ValueError("I - A^T A is numerically singular")
    return float(min(np.sqrt(-d * logdet), 2.0))


@dataclass(frozen=True)
class MixingSum:
    """Partial lattice sum of ||C(y)|| with an analytic tail bound."""

    partial_sum: float
    tail_bound: float
    cutoff: int
    dim: int
    convergent: bool

    @property
    def total_bound(self) -> float:
        return self.partial_sum + self.tail_bound


def _shell_count(j: int, d: int) -> int:
    """Number of integer lattice vectors with max-norm exactly j."""
    if j == 0:
        return 1
    return (2 * j + 1) ** d - (2 * j - 1) ** d


def mixing_sum_check(model: CovarianceModel, cutoff: int, dim: int = 1) -> MixingSum:
    """Partial sum of ``||C(y)||`` over integer lags with an analytic tail.

    Sums the spectral norm of the cross-covariance matrix C(|y|) * I_d
    (which is |C(|y|)|) over ``max|y_i| <= cutoff`` and bounds the tail by
    shell counting: shell j contributes at most
    ``shell_count(j) * sup_{|h| >= j} |C(h)|``.  All supported families
    decay at least exponentially, so the condition always holds.
    """
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    rng1 = np.arange(-cutoff, cutoff + 1)
    grids = np.meshgrid(*([rng1] * dim), indexing="ij")
    lags = np.stack([g.ravel() for g in grids], axis=1)
    dist = np.sqrt((lags**2).sum(axis=1))
    partial = float(np.abs(model(dist)).sum())

    tail = 0.0
    if model.kind == "white":
        tail = 0.0
    elif model.kind == "spherical":
        # compact support: shells beyond ceil(range) contribute nothing
        j = cutoff + 1
        while j < model.rng_range:
            tail += _shell_count(j, dim) * abs(float(model(j)))
            j += 1
    else:
        # monotone decay: sup over the shell is the value at distance j
        j = cutoff + 1
        while True:
            term = _shell_count(j, dim) * float(model(j))
            tail += term
            if term < 1e-300 or term < 1e-15 * max(tail, partial):
                break
            j += 1
    return MixingSum(partial_sum=partial, tail_bound=tail, cutoff=cutoff,
                     dim=dim, convergent=True)
