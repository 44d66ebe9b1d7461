"""Model-aware design of combine / quantize / recover pipelines for linear tasks.

Given the observation covariance and the linear MMSE task map, the designer
water-fills combiner gain over the task spectrum, rotates the combined
channels to equal variance so a shared scalar ADC suits every channel, sizes
the support for rare overload, and recovers the task with the Wiener-optimal
digital matrix. The predicted excess MSE has a closed form that the generic
trace formula must reproduce.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .quant import (UniformQuantizerSpec, dithered_quantize,
                    overload_safe_support, uniform_quantize)

__all__ = [
    "LinearTaskModel",
    "QuantizerDesign",
    "optimal_digital",
    "excess_mse",
    "mse_with_digital",
    "waterfill",
    "equalizing_rotation",
    "design",
    "recommend_quantizers",
    "estimate",
]

_SYM_TOL = 1e-10
_COND_LIMIT = 1e14


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class LinearTaskModel:
    """Statistical model for a linear estimation task.

    obs_cov is the covariance of the observed vector and task_matrix the
    linear map producing the MMSE estimate of the task from the observation.
    mmse_floor is the estimation error that remains with unquantized
    observations; total error = mmse_floor + excess of the pipeline.
    """

    obs_cov: np.ndarray
    task_matrix: np.ndarray
    mmse_floor: float = 0.0

    def __post_init__(self):
        cov = np.asarray(self.obs_cov, dtype=float)
        gamma = np.atleast_2d(np.asarray(self.task_matrix, dtype=float))
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ValueError(f"obs_cov must be square, got shape {cov.shape}")
        scale = np.abs(cov).max()
        if scale == 0 or np.abs(cov - cov.T).max() > _SYM_TOL * scale:
            raise ValueError("obs_cov must be symmetric")
        if np.linalg.eigvalsh(cov).min() <= 0:
            raise ValueError("obs_cov must be positive definite")
        if gamma.shape[1] != cov.shape[0]:
            raise ValueError(
                f"task_matrix has {gamma.shape[1]} columns, expected {cov.shape[0]}")
        if gamma.shape[0] > gamma.shape[1]:
            raise ValueError("task dimension must not exceed observation dimension")
        if self.mmse_floor < 0:
            raise ValueError("mmse_floor must be nonnegative")
        object.__setattr__(self, "obs_cov", _frozen(0.5 * (cov + cov.T)))
        object.__setattr__(self, "task_matrix", _frozen(gamma))

    @property
    def n(self) -> int:
        return self.obs_cov.shape[0]

    @property
    def k(self) -> int:
        return self.task_matrix.shape[0]

    def estimate_covariance(self) -> np.ndarray:
        """Covariance of the task estimate produced from unquantized input."""
        g = self.task_matrix
        return g @ self.obs_cov @ g.T

    def sqrt_pair(self, floor_ratio: float = 1e-12):
        """Symmetric square root and inverse square root of obs_cov.

        Eigenvalues below floor_ratio times the largest are floored so the
        inverse root stays bounded.
        """
        w, q = np.linalg.eigh(self.obs_cov)
        w = np.maximum(w, floor_ratio * w.max())
        root = (q * np.sqrt(w)) @ q.T
        inv_root = (q / np.sqrt(w)) @ q.T
        return root, inv_root


@dataclass(frozen=True, eq=False)
class QuantizerDesign:
    """A complete pipeline: analog combiner, shared scalar ADC, digital recovery."""

    analog: np.ndarray
    quantizer: UniformQuantizerSpec
    digital: np.ndarray
    predicted_excess_mse: float
    singular_values: np.ndarray
    waterline: float

    def __post_init__(self):
        object.__setattr__(self, "analog", _frozen(self.analog))
        object.__setattr__(self, "digital", _frozen(self.digital))
        object.__setattr__(self, "singular_values", _frozen(self.singular_values))
        if self.predicted_excess_mse < 0:
            raise ValueError("predicted_excess_mse must be nonnegative")

    @property
    def channels(self) -> int:
        return self.analog.shape[0]


def _quantization_noise(support: float, levels: int) -> float:
    return 2.0 * support ** 2 / (3.0 * levels ** 2)


def _regularized_gram(analog, model, support, levels):
    a = np.atleast_2d(np.asarray(analog, dtype=float))
    sigma2 = _quantization_noise(support, levels)
    gram = a @ model.obs_cov @ a.T + sigma2 * np.eye(a.shape[0])
    cond = np.linalg.cond(gram)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise NumericalError("regularized Gram matrix is ill-conditioned",
                             condition_number=cond)
    return a, gram


def optimal_digital(analog, model: LinearTaskModel, support: float,
                    levels: int) -> np.ndarray:
    """MSE-optimal digital matrix for a given combiner and quantizer.

    This is the Wiener gain for estimating the task from the combined
    observation plus white quantization noise of variance
    2 support^2 / (3 levels^2) per channel.
    """
    a, gram = _regularized_gram(analog, model, support, levels)
    cross = a @ model.obs_cov @ model.task_matrix.T  # p x k
    try:
        return np.linalg.solve(gram, cross).T
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"digital matrix solve failed: {exc}",
                             condition_number=np.linalg.cond(gram)) from exc


def excess_mse(analog, model: LinearTaskModel, support: float,
               levels: int) -> float:
    """Excess MSE of the pipeline with the optimal digital matrix."""
    a, gram = _regularized_gram(analog, model, support, levels)
    cross = a @ model.obs_cov @ model.task_matrix.T  # p x k
    try:
        solved = np.linalg.solve(gram, cross)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"excess MSE solve failed: {exc}",
                             condition_number=np.linalg.cond(gram)) from exc
    total = np.trace(model.estimate_covariance())
    return float(total - np.einsum("ij,ij->", cross, solved))


def mse_with_digital(analog, digital, model: LinearTaskModel, support: float,
                     levels: int) -> float:
    """Excess MSE of the pipeline with an arbitrary (not re-optimized) digital matrix."""
    a = np.atleast_2d(np.asarray(analog, dtype=float))
    b = np.atleast_2d(np.asarray(digital, dtype=float))
    sigma2 = _quantization_noise(support, levels)
    gram = a @ model.obs_cov @ a.T + sigma2 * np.eye(a.shape[0])
    cross = model.task_matrix @ model.obs_cov @ a.T  # k x p
    total = np.trace(model.estimate_covariance())
    return float(total - 2.0 * np.einsum("ij,ij->", b, cross)
                 + np.einsum("ij,jk,ik->", b, gram, b))


def waterfill(singvals, margin: float, levels: int, channels: int):
    """Combiner gains over the task spectrum under a unit total-power budget.

    Solves for the waterline `z` such that

        coef * sum_{i<=channels} max(z * s_i - 1, 0) = 1,
        coef = 2 margin / (3 levels^2 channels),

    exactly on the sorted piecewise-linear structure, and returns the
    nonnegative per-mode gains sqrt(coef * max(z * s_i - 1, 0)) together with
    the waterline. Modes below the line get zero gain.
    """
    s = np.asarray(singvals, dtype=float)
    if s.ndim != 1:
        raise ValueError("singular values must be a vector")
    if s.size and np.any(np.diff(s) > 1e-12 * max(s.max(), 1.0)):
        raise ValueError("singular values must be sorted descending")
    s = np.clip(s, 0.0, None)
    padded = np.zeros(channels)
    padded[:min(channels, s.size)] = s[:channels]
    positive = padded[padded > 0]
    if positive.size == 0:
        raise ValueError("degenerate task: all singular values are zero")

    coef = 2.0 * margin / (3.0 * levels ** 2 * channels)
    target = 1.0 / coef
    csum = np.cumsum(positive)
    waterline = None
    for m in range(1, positive.size + 1):
        cand = (target + m) / csum[m - 1]
        above = cand * positive[m - 1] >= 1.0 - 1e-12
        below = m == positive.size or cand * positive[m] <= 1.0 + 1e-12
        if above and below:
            waterline = cand
            break
    if waterline is None:
        # ties or rounding defeated the exact scan; fall back to bisection
        def filled(z):
            return np.maximum(z * positive - 1.0, 0.0).sum()

        lo, hi = 0.0, (target + positive.size) / csum[-1]
        while filled(hi) < target:
            hi *= 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if filled(mid) < target:
                lo = mid
            else:
                hi = mid
        waterline = 0.5 * (lo + hi)

    gains = np.sqrt(coef * np.maximum(waterline * padded - 1.0, 0.0))
    return gains, float(waterline)


def equalizing_rotation(diag_values) -> np.ndarray:
    """Orthogonal U such that U diag(d) U^T has a constant diagonal.

    Built from at most p-1 Givens rotations: each rotation pairs the current
    largest and smallest diagonal entries and sets one of them exactly to the
    mean, which then never moves again.
    """
    d = np.asarray(diag_values, dtype=float)
    if d.ndim == 2:
        off = d - np.diag(np.diag(d))
        if np.abs(off).max() > 1e-12 * max(np.abs(d).max(), 1.0):
            raise ValueError("input matrix must be diagonal")
        d = np.diag(d).copy()
    if np.any(d < -1e-12 * max(np.abs(d).max(), 1.0)):
        raise ValueError("diagonal entries must be nonnegative")
    p = d.size
    u = np.eye(p)
    if p == 1:
        return u
    s = np.diag(np.clip(d, 0.0, None)).astype(float)
    t = np.trace(s) / p
    scale = max(abs(t), np.abs(d).max(), 1.0)
    active = list(range(p))
    for _ in range(p - 1):
        vals = np.array([s[i, i] for i in active])
        if vals.max() - vals.min() < 1e-9 * scale:
            break
        i = active[int(np.argmax(vals))]
        j = active[int(np.argmin(vals))]
        # pick tan(theta) so that entry i lands exactly on the mean
        qa, qb, qc = s[j, j] - t, 2.0 * s[i, j], s[i, i] - t
        if abs(qa) < 1e-300:
            tan = -qc / qb
        else:
            disc = np.sqrt(max(qb * qb - 4.0 * qa * qc, 0.0))
            r1 = (-qb + disc) / (2.0 * qa)
            r2 = (-qb - disc) / (2.0 * qa)
            tan = r1 if abs(r1) <= abs(r2) else r2
        c = 1.0 / np.sqrt(1.0 + tan * tan)
        w = tan * c
        gi = np.array([[c, w], [-w, c]])
        rows = np.vstack([s[i, :], s[j, :]])
        s[[i, j], :] = gi @ rows
        cols = np.hstack([s[:, [i]], s[:, [j]]])
        s[:, [i, j]] = cols @ gi.T
        u[[i, j], :] = gi @ np.vstack([u[i, :], u[j, :]])
        active.remove(i)
    return u


def _fix_svd_signs(u, vt):
    """Make the first nonzero entry of each right-singular vector nonnegative."""
    for i in range(vt.shape[0]):
        row = vt[i]
        nz = np.flatnonzero(np.abs(row) > 1e-12 * max(np.abs(row).max(), 1e-300))
        if nz.size and row[nz[0]] < 0:
            vt[i] = -row
            if i < u.shape[1]:
                u[:, i] = -u[:, i]
    return u, vt


def design(model: LinearTaskModel, channels: int, levels: int,
           support_scale: float = 4.0) -> QuantizerDesign:
    """Jointly optimal combiner, shared ADC, and digital matrix.

    The combiner water-fills gain over the singular values of the whitened
    task map, then an equalizing rotation gives every ADC channel the same
    input variance so one support fits all. support_scale is the number of
    per-channel standard deviations the support must cover.
    """
    if channels < 1:
        raise ValueError(f"channels must be >= 1, got {channels}")
    support, margin = overload_safe_support(support_scale, levels, channels)
    root, inv_root = model.sqrt_pair()
    whitened = model.task_matrix @ root
    u_task, sing, vt = np.linalg.svd(whitened, full_matrices=True)
    u_task, vt = _fix_svd_signs(u_task, vt)

    gains, waterline = waterfill(sing, margin, levels, channels)
    m = min(channels, model.n)
    core = np.zeros((channels, model.n))
    core[:m] = gains[:m, None] * vt[:m]
    rotation = equalizing_rotation(gains ** 2)
    analog = rotation @ core @ inv_root

    sigma2 = _quantization_noise(support, levels)
    # Wiener gain in the rotated water-filled coordinates: diagonal, cheap
    wiener = np.zeros(channels)
    wiener[:m] = gains[:m] / (gains[:m] ** 2 + sigma2)
    projected = np.zeros((model.k, channels))
    projected[:, :m] = whitened @ vt[:m].T
    digital = (projected * wiener) @ rotation.T

    served = np.maximum(waterline * sing - 1.0, 0.0)
    terms = sing ** 2 / (served + 1.0)
    k = model.k
    if channels >= k:
        predicted = float(terms[:k].sum())
    else:
        predicted = float(terms[:channels].sum() + (sing[channels:k] ** 2).sum())

    channel_var = np.einsum("ij,jk,ik->i", analog, model.obs_cov, analog)
    spread = channel_var.max() - channel_var.min()
    if spread > 1e-8 * max(channel_var.max(), 1e-300):
        raise NumericalError(
            f"combiner channels are not equalized (relative spread {spread:.2e})")

    spec = UniformQuantizerSpec(levels=levels, support=support, dithered=True)
    return QuantizerDesign(analog=analog, quantizer=spec, digital=digital,
                           predicted_excess_mse=predicted,
                           singular_values=sing, waterline=waterline)


def recommend_quantizers(model: LinearTaskModel) -> int:
    """Largest useful ADC count: the rank of the whitened task map.

    More quantizers than this only dilute the per-channel bit budget.
    """
    root, _ = model.sqrt_pair()
    sing = np.linalg.svd(model.task_matrix @ root, compute_uv=False)
    if sing.size == 0 or sing[0] == 0:
        return 0
    return int(np.count_nonzero(sing > 1e-10 * sing[0]))


def estimate(design_: QuantizerDesign, x, rng: np.random.Generator | None = None,
             dither: bool | None = None) -> np.ndarray:
    """Run the pipeline on observations: combine, quantize, recover.

    x may be a single observation (n,) or a batch (..., n). dither defaults
    to the quantizer's own flag; enabling it requires an rng.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != design_.analog.shape[1]:
        raise ValueError(
            f"observation dimension {x.shape[-1]} does not match combiner "
            f"width {design_.analog.shape[1]}")
    if dither is None:
        dither = design_.quantizer.dithered
    combined = x @ design_.analog.T
    if dither:
        if rng is None:
            raise ValueError("dithered estimation requires an rng")
        quantized = dithered_quantize(combined, design_.quantizer, rng)
    else:
        quantized = uniform_quantize(combined, design_.quantizer)
    return np.asarray(quantized) @ design_.digital.T
