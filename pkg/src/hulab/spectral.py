"""Second-order statistics: scattering intensity, number variance, theory.

The scattering intensity |sum_j w_j exp(-i k.x_j)|^2, normalized by the
empirical mean total weight and evaluated on box-commensurable
wavevectors, estimates the structure factor.  Radial averages use shells
of width 2*pi/side (one integer-norm index per shell).  Closed-form
predictions cover the Poisson constant, independently displaced lattices
(continuous part plus Bragg atom weights), and kernel-smoothed measures.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import gamma as _gamma_fn
from pathlib import Path

import numpy as np
from scipy.special import jv

from hulab.core import KGrid, PointSample, TorusBox
from hulab.fields import DisplacementKernelSpec

__all__ = [
    "SpectrumEstimate",
    "VarianceCurve",
    "TheoryModel",
    "SpectralPrediction",
    "scattering_intensity",
    "variance_curve",
    "s_theory",
    "kernel_fourier",
    "s_hyperuniformerer_mc",
    "hyperuniformity_index",
    "HyperuniformityIndex",
    "pixel_spectrum",
    "combine_spectra",
    "ball_volume",
    "plane_wave_sums",
    "write_spectrum_csv",
    "write_radial_csv",
    "write_variance_csv",
    "write_theory_csv",
    "read_pgm",
    "write_pgm",
]


def ball_volume(dim: int, r: float = 1.0) -> float:
    """Volume of the d-ball of radius r."""
    return float(np.pi ** (dim / 2.0) / _gamma_fn(dim / 2.0 + 1.0) * r**dim)


def _msinc(x: np.ndarray) -> np.ndarray:
    """sin(x)/x with the limit value 1 at 0."""
    return np.sinc(np.asarray(x, dtype=float) / np.pi)


def plane_wave_sums(points: np.ndarray, weights: np.ndarray, box: TorusBox,
                    max_index: int) -> np.ndarray:
    """Weighted plane-wave sums on the full index cube.

    Returns the complex array ``rho[m + max_index]`` of
    ``sum_j w_j exp(-i (2*pi/side) m . x_j)`` for all integer vectors
    ``|m_i| <= max_index`` (including m = 0), using separable per-axis
    phase factors so the contraction is a dense matrix product.
    """
    d = box.dim
    m = np.arange(-max_index, max_index + 1)
    base = -1j * (2.0 * np.pi / box.side)
    phases = [np.exp(base * np.outer(points[:, ax], m)) for ax in range(d)]
    w = np.asarray(weights, dtype=complex)
    if d == 1:
        return w @ phases[0]
    if d == 2:
        return (phases[0] * w[:, None]).T @ phases[1]
    return np.einsum("na,nb,nc->abc", phases[0] * w[:, None], phases[1], phases[2])


@dataclass(frozen=True)
class SpectrumEstimate:
    """Scattering intensity on a wavevector grid plus radial averages.

    ``values`` is the per-vector mean over samples; ``radial_k``,
    ``radial_mean``, ``radial_stderr``, ``radial_n`` describe shell
    averages, with the standard error taken across samples (across
    vectors when only one sample is available).  ``sample_bin_means``
    keeps the per-sample shell means so independent estimates can be
    pooled.
    """

    kgrid: KGrid
    values: np.ndarray
    radial_k: np.ndarray
    radial_mean: np.ndarray
    radial_stderr: np.ndarray
    radial_n: np.ndarray
    n_samples: int
    sample_bin_means: np.ndarray | None = None

    def lowest_bins(self, n: int) -> np.ndarray:
        return self.radial_mean[:n]


def _radial_reduce(kgrid: KGrid, per_sample_values: np.ndarray):
    """Shell-average per-sample per-vector values.

    Returns (shell ids, per-sample shell means, per-shell vector counts).
    """
    shells = kgrid.shell
    uniq = np.unique(shells)
    n_s = per_sample_values.shape[0]
    bin_means = np.empty((n_s, len(uniq)))
    counts = np.empty(len(uniq), dtype=int)
    for j, sh in enumerate(uniq):
        mask = shells == sh
        counts[j] = mask.sum()
        bin_means[:, j] = per_sample_values[:, mask].mean(axis=1)
    return uniq, bin_means, counts


def _spectrum_from_rows(kgrid: KGrid, rows: np.ndarray) -> SpectrumEstimate:
    """Assemble a SpectrumEstimate from per-sample per-vector rows."""
    n_s = rows.shape[0]
    values = rows.mean(axis=0)
    uniq, bin_means, counts = _radial_reduce(kgrid, rows)
    k_mid = (2.0 * np.pi / kgrid.box.side) * uniq.astype(float)
    mean = bin_means.mean(axis=0)
    if n_s >= 2:
        stderr = bin_means.std(axis=0, ddof=1) / np.sqrt(n_s)
    else:
        # single sample: spread across the shell's vectors
        stderr = np.empty(len(uniq))
        for j, sh in enumerate(uniq):
            vals = rows[0, kgrid.shell == sh]
            stderr[j] = vals.std(ddof=1) / np.sqrt(len(vals)) if len(vals) > 1 else 0.0
    return SpectrumEstimate(
        kgrid=kgrid, values=values, radial_k=k_mid, radial_mean=mean,
        radial_stderr=stderr, radial_n=counts, n_samples=n_s,
        sample_bin_means=bin_means,
    )


def scattering_intensity(samples: list[PointSample], kgrid: KGrid) -> SpectrumEstimate:
    """Scattering intensity of weighted samples, averaged per wavevector.

    Per sample and vector k the statistic is |sum_j w_j exp(-i k.x_j)|^2
    divided by the empirical mean total weight across samples (the
    plug-in for the expected total mass).
    """
    if not samples:
        raise ValueError("need at least one sample")
    box = samples[0].box
    for s in samples:
        if s.box != box:
            raise ValueError("all samples must share the same box")
    if box != kgrid.box:
        raise ValueError("kgrid box does not match the samples' box")
    mean_mass = float(np.mean([s.total_weight for s in samples]))
    if mean_mass <= 0:
        raise ValueError("mean total weight must be positive")
    m = kgrid.max_index
    idx = tuple((kgrid.ms + m).T)
    rows = np.empty((len(samples), len(kgrid)))
    for i, s in enumerate(samples):
        amp = plane_wave_sums(s.points, s.weights, box, m)
        rows[i] = np.abs(amp[idx]) ** 2 / mean_mass
    return _spectrum_from_rows(kgrid, rows)


@dataclass(frozen=True)
class VarianceCurve:
    """Normalized number variance Var[count in B_r] / vol(B_r) per radius."""

    radii: np.ndarray
    normalized_variance: np.ndarray
    stderr: np.ndarray
    n_samples: int
    n_windows: int


def variance_curve(samples: list[PointSample], radii, n_windows: int,
                   rng: np.random.Generator) -> VarianceCurve:
    """Empirical window-count variance over uniform torus balls.

    For each radius, ``n_windows`` centers per sample are drawn and the
    weighted point count in the torus ball recorded; the variance pools
    all windows of all samples and is normalized by the ball volume.
    Standard errors come from a leave-one-sample-out jackknife.
    """
    radii = np.asarray(radii, dtype=float)
    if not samples:
        raise ValueError("need at least one sample")
    box = samples[0].box
    if np.any(radii >= box.side / 2):
        raise ValueError("radii must be below side/2")
    if np.any(radii <= 0):
        raise ValueError("radii must be positive")
    counts = np.empty((len(samples), n_windows, len(radii)))
    half = box.side / 2.0
    for i, s in enumerate(samples):
        centers = rng.random((n_windows, box.dim)) * box.side
        diff = s.points[None, :, :] - centers[:, None, :]
        diff = np.mod(diff + half, box.side) - half
        dist = np.sqrt((diff * diff).sum(axis=-1))
        for j, r in enumerate(radii):
            counts[i, :, j] = (dist <= r) @ s.weights
    flat = counts.reshape(-1, len(radii))
    vols = np.array([ball_volume(box.dim, r) for r in radii])
    var = flat.var(axis=0, ddof=1) / vols
    n_s = len(samples)
    if n_s >= 2:
        jack = np.empty((n_s, len(radii)))
        for i in range(n_s):
            rest = np.delete(counts, i, axis=0).reshape(-1, len(radii))
            jack[i] = rest.var(axis=0, ddof=1) / vols
        stderr = np.sqrt((n_s - 1) / n_s * ((jack - jack.mean(axis=0)) ** 2).sum(axis=0))
    else:
        stderr = np.full(len(radii), np.nan)
    return VarianceCurve(radii=radii, normalized_variance=var, stderr=stderr,
                         n_samples=n_s, n_windows=n_windows)


# ---------------------------------------------------------------------------
# Closed-form predictions
# ---------------------------------------------------------------------------


def kernel_fourier(spec: DisplacementKernelSpec, ks: np.ndarray, dim: int) -> np.ndarray:
    """Fourier transform q_hat(k) of the displacement kernel (real, symmetric).

    uniform_cube: prod_i sinc(k_i/2); gaussian(sigma): exp(-s^2|k|^2/2);
    uniform_ball(rho): Gamma(d/2+1) (2/(|k| rho))^{d/2} J_{d/2}(|k| rho);
    point_mass: 1.
    """
    ks = np.atleast_2d(np.asarray(ks, dtype=float))
    if spec.kind == "point_mass":
        return np.ones(len(ks))
    if spec.kind == "uniform_cube":
        return np.prod(_msinc(ks / 2.0), axis=1)
    if spec.kind == "gaussian":
        k2 = (ks**2).sum(axis=1)
        return np.exp(-spec.param**2 * k2 / 2.0)
    if spec.kind == "uniform_ball":
        rho = spec.param
        x = np.sqrt((ks**2).sum(axis=1)) * rho
        half_d = dim / 2.0
        out = np.ones_like(x)
        nz = x > 1e-12
        out[nz] = _gamma_fn(half_d + 1.0) * (2.0 / x[nz]) ** half_d * jv(half_d, x[nz])
        return out
    raise ValueError(f"no analytic Fourier transform for kernel kind {spec.kind!r}")


@dataclass(frozen=True)
class TheoryModel:
    """Spectral model: poisson | cloaked_lattice | perturbed_lattice | smoothed."""

    kind: str
    q: DisplacementKernelSpec | None = None
    base: "TheoryModel | None" = None

    def __post_init__(self):
        if self.kind not in ("poisson", "cloaked_lattice", "perturbed_lattice", "smoothed"):
            raise ValueError(f"unknown theory model {self.kind!r}")
        if self.kind == "perturbed_lattice" and self.q is None:
            raise ValueError("perturbed_lattice requires a displacement kernel q")
        if self.kind == "smoothed" and (self.q is None or self.base is None):
            raise ValueError("smoothed requires a kernel q and a base model")


@dataclass(frozen=True)
class SpectralPrediction:
    """Continuous spectral density values plus Bragg atom weights at each k.

    ``bragg`` is nonzero only on reciprocal-lattice vectors (all
    components integer multiples of 2*pi); empirically a Bragg atom of
    weight w shows up as a scattering intensity of about w * N on top of
    the continuous part.
    """

    ks: np.ndarray
    continuous: np.ndarray
    bragg: np.ndarray

    @property
    def total_at_bragg(self) -> np.ndarray:
        return self.continuous + self.bragg


def _is_bragg(ks: np.ndarray) -> np.ndarray:
    m = ks / (2.0 * np.pi)
    on_lattice = np.all(np.abs(m - np.rint(m)) < 1e-9, axis=1)
    nonzero = np.any(np.abs(ks) > 1e-12, axis=1)
    return on_lattice & nonzero


def s_theory(model: TheoryModel, ks: np.ndarray, dim: int) -> SpectralPrediction:
    """Closed-form structure factor of the model at wavevectors ``ks``.

    poisson: S == 1.  Independently displaced unit lattice with kernel Q:
    continuous part 1 - |q_hat|^2 and Bragg weight |q_hat|^2 on the
    reciprocal lattice; the cloaked lattice is the uniform-cube special
    case (all Bragg weights vanish).  smoothed(Q, base): both parts of
    the base multiplied by |q_hat|^2.
    """
    ks = np.atleast_2d(np.asarray(ks, dtype=float))
    if model.kind == "poisson":
        return SpectralPrediction(ks, np.ones(len(ks)), np.zeros(len(ks)))
    if model.kind == "cloaked_lattice":
        model = TheoryModel("perturbed_lattice", q=DisplacementKernelSpec("uniform_cube"))
    if model.kind == "perturbed_lattice":
        q2 = kernel_fourier(model.q, ks, dim) ** 2
        bragg = np.where(_is_bragg(ks), q2, 0.0)
        return SpectralPrediction(ks, 1.0 - q2, bragg)
    # smoothed: spectral measure multiplied by |q_hat|^2
    base = s_theory(model.base, ks, dim)
    q2 = kernel_fourier(model.q, ks, dim) ** 2
    return SpectralPrediction(ks, q2 * base.continuous, q2 * base.bragg)


def s_hyperuniformerer_mc(celltable, kgrid: KGrid, n_cells_sampled: int,
                          rng: np.random.Generator) -> SpectrumEstimate:
    """Monte-Carlo structure factor of the fair-partition resampler.

    Averages |cell indicator Fourier transform|^2 over sampled cells and
    returns 1 minus the average, with cell volumes rescaled to 1 (the
    indicator transform is divided by the common cell volume).  Requires
    a fair allocation: every matched point owns exactly ``capacity``
    sites.
    """
    alloc = celltable.allocation
    if not celltable.is_fair:
        raise ValueError("allocation is not fair: unequal cell volumes")
    box = alloc.box
    if box != kgrid.box:
        raise ValueError("kgrid box does not match the allocation box")
    n_cells = celltable.n_points
    if n_cells_sampled >= n_cells:
        chosen = np.arange(n_cells)
    else:
        chosen = np.sort(rng.choice(n_cells, size=n_cells_sampled, replace=False))
    a = alloc.voxel_side
    vol = alloc.capacity * a**box.dim
    centers = alloc.site_centers()
    # per-k voxel form factor: exact transform of a voxel around its center
    voxel_ft = a**box.dim * np.prod(_msinc(kgrid.ks * a / 2.0), axis=1)

    sites = np.concatenate([celltable.sites_of(c) for c in chosen])
    bounds = np.cumsum([0] + [len(celltable.sites_of(c)) for c in chosen])
    coords = centers[sites]
    rows = np.empty((len(chosen), len(kgrid)))
    chunk = max(1, int(2e6) // max(len(sites), 1))
    for start in range(0, len(kgrid), chunk):
        ksl = kgrid.ks[start:start + chunk]
        amp = np.exp(-1j * coords @ ksl.T)
        cell_amp = np.add.reduceat(amp, bounds[:-1], axis=0)
        rows[:, start:start + chunk] = np.abs(cell_amp * (voxel_ft[start:start + chunk] / vol)) ** 2
    return _spectrum_from_rows(kgrid, 1.0 - rows)


@dataclass(frozen=True)
class HyperuniformityIndex:
    """Extrapolated S(0) with a confidence interval and a classification."""

    estimate: float
    ci_low: float
    ci_high: float
    n_bins: int
    classification: str


def hyperuniformity_index(spec: SpectrumEstimate, k_max: float | None = None,
                          fit: str = "linear") -> HyperuniformityIndex:
    """Extrapolate the radial structure factor to k = 0.

    Weighted least-squares fit (linear in k by default, quadratic as an
    option) over the radial bins with k <= k_max (default: the lowest 8
    bins).  The classification compares the 95% CI against 0 and 1:
    entirely above 1 is anti-hyperuniform, containing 1 is poisson-like,
    and reaching 0 (or staying well below 1) is hyperuniform-consistent.
    """
    if k_max is None:
        n_use = min(8, len(spec.radial_k))
        mask = np.arange(len(spec.radial_k)) < n_use
    else:
        mask = spec.radial_k <= k_max
    k = spec.radial_k[mask]
    y = spec.radial_mean[mask]
    se = spec.radial_stderr[mask]
    if len(k) < 3:
        raise ValueError(f"need >= 3 radial bins below k_max, got {len(k)}")
    if np.any(~np.isfinite(se)) or np.any(se <= 0):
        w = np.ones(len(k))
    else:
        w = 1.0 / se**2
    cols = [np.ones(len(k)), k] + ([k**2] if fit == "quadratic" else [])
    x = np.column_stack(cols)
    xtw = x.T * w
    cov = np.linalg.inv(xtw @ x)
    beta = cov @ (xtw @ y)
    est = float(beta[0])
    half = 1.96 * float(np.sqrt(cov[0, 0]))
    lo, hi = est - half, est + half
    if lo > 1.0:
        cls = "anti-hyperuniform"
    elif lo <= 1.0 <= hi:
        cls = "poisson-like"
    elif lo <= 0.0 or hi < 0.5:
        cls = "hyperuniform-consistent"
    else:
        cls = "poisson-like" if est >= 0.5 else "hyperuniform-consistent"
    return HyperuniformityIndex(estimate=est, ci_low=lo, ci_high=hi,
                                n_bins=int(len(k)), classification=cls)


def pixel_spectrum(pixels, kgrid: KGrid) -> SpectrumEstimate:
    """Scattering intensity of a pixel indicator set.

    The indicator is treated as a weighted sample with one atom of weight
    ``voxel volume`` per covered pixel, normalized by the covered mass.
    Uses the FFT of the pixel grid, so ``kgrid.max_index`` must stay
    below half the grid resolution.
    """
    if isinstance(pixels, (str, Path)):
        pixels = read_pgm(pixels)
    ind = np.asarray(pixels)
    if ind.dtype != bool:
        ind = ind > 0
    box = kgrid.box
    if ind.ndim != box.dim:
        raise ValueError(f"indicator has {ind.ndim} axes, expected {box.dim}")
    res = ind.shape[0]
    if any(s != res for s in ind.shape):
        raise ValueError("pixel grid must be square")
    n_cov = int(ind.sum())
    if n_cov == 0:
        raise ValueError("all-zero indicator")
    if kgrid.max_index >= res // 2:
        raise ValueError(f"max_index {kgrid.max_index} too large for resolution {res}")
    a = box.side / res
    f = np.fft.fftn(ind.astype(float))
    idx = tuple(np.mod(kgrid.ms, res).T)
    # weights a^d per pixel, normalized by covered mass a^d * n_cov
    values = (a**box.dim) * np.abs(f[idx]) ** 2 / n_cov
    return _spectrum_from_rows(kgrid, values[None, :])


def combine_spectra(estimates: list[SpectrumEstimate]) -> SpectrumEstimate:
    """Pool independent estimates on the same grid (per-sample rows concatenated)."""
    if not estimates:
        raise ValueError("nothing to combine")
    kg = estimates[0].kgrid
    for e in estimates:
        if e.kgrid.box != kg.box or e.kgrid.max_index != kg.max_index:
            raise ValueError("estimates use different wavevector grids")
        if e.sample_bin_means is None:
            raise ValueError("estimate lacks per-sample bin means; cannot pool")
    rows = np.concatenate([e.sample_bin_means for e in estimates], axis=0)
    n_s = rows.shape[0]
    weights = np.array([e.n_samples for e in estimates], dtype=float)
    values = np.average(np.stack([e.values for e in estimates]), axis=0, weights=weights)
    mean = rows.mean(axis=0)
    stderr = rows.std(axis=0, ddof=1) / np.sqrt(n_s) if n_s >= 2 else np.zeros(rows.shape[1])
    return SpectrumEstimate(
        kgrid=kg, values=values, radial_k=estimates[0].radial_k,
        radial_mean=mean, radial_stderr=stderr, radial_n=estimates[0].radial_n,
        n_samples=n_s, sample_bin_means=rows,
    )


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

_AXES = ("kx", "ky", "kz")


def write_spectrum_csv(est: SpectrumEstimate, path) -> Path:
    """Per-vector CSV: ``kx[,ky[,kz]],S``."""
    path = Path(path)
    d = est.kgrid.box.dim
    lines = [",".join(_AXES[:d]) + ",S"]
    for k, v in zip(est.kgrid.ks, est.values):
        lines.append(",".join(repr(float(c)) for c in k) + f",{float(v)!r}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_radial_csv(est: SpectrumEstimate, path) -> Path:
    """Radial CSV: ``k,S_mean,S_stderr,n``."""
    path = Path(path)
    lines = ["k,S_mean,S_stderr,n"]
    for k, m, se, n in zip(est.radial_k, est.radial_mean, est.radial_stderr, est.radial_n):
        lines.append(f"{float(k)!r},{float(m)!r},{float(se)!r},{int(n)}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_variance_csv(curve: VarianceCurve, path) -> Path:
    """Variance CSV: ``r,var_norm,stderr``."""
    path = Path(path)
    lines = ["r,var_norm,stderr"]
    for r, v, se in zip(curve.radii, curve.normalized_variance, curve.stderr):
        lines.append(f"{float(r)!r},{float(v)!r},{float(se)!r}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_theory_csv(model: TheoryModel, kgrid: KGrid, path) -> Path:
    """Radially averaged continuous theory curve: ``k,S_theory``."""
    path = Path(path)
    pred = s_theory(model, kgrid.ks, kgrid.box.dim)
    uniq, bin_means, _ = _radial_reduce(kgrid, pred.continuous[None, :])
    k_mid = (2.0 * np.pi / kgrid.box.side) * uniq.astype(float)
    lines = ["k,S_theory"]
    for k, v in zip(k_mid, bin_means[0]):
        lines.append(f"{float(k)!r},{float(v)!r}")
    path.write_text("\n".join(lines) + "\n")
    return path


def write_pgm(indicator: np.ndarray, path) -> Path:
    """Write a 2D boolean indicator as a binary PGM (P5), 255 = covered."""
    path = Path(path)
    ind = np.asarray(indicator)
    if ind.ndim != 2:
        raise ValueError("PGM export requires a 2D indicator")
    data = np.where(ind > 0, 255, 0).astype(np.uint8)
    header = f"P5\n{ind.shape[1]} {ind.shape[0]}\n255\n".encode()
    path.write_bytes(header + data.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM (P5) into a boolean indicator."""
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise ValueError(f"{path}: not a binary PGM (P5) file")
    # header: magic, width, height, maxval, single whitespace, then raster
    parts = []
    i = 2
    while len(parts) < 3:
        while i < len(raw) and raw[i:i + 1].isspace():
            i += 1
        if raw[i:i + 1] == b"#":
            while i < len(raw) and raw[i:i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(raw) and not raw[j:j + 1].isspace():
            j += 1
        parts.append(int(raw[i:j]))
        i = j
    i += 1
    width, height, _maxval = parts
    data = np.frombuffer(raw[i:i + width * height], dtype=np.uint8)
    return (data.reshape(height, width) > 0)
