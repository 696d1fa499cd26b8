"""Minimal Gaussian-process regression.

Matern-5/2 kernel with per-dimension lengthscales, targets standardized,
hyperparameters fit by maximizing the marginal likelihood with random
restarts plus coordinate descent in log-space.  Used by the GP-UCB policy
and by the function-prediction comparison in the evaluation suite.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.special import log_ndtr, ndtr

logger = logging.getLogger(__name__)

_SQRT5 = math.sqrt(5.0)
_LOG2PI = math.log(2.0 * math.pi)

#: Returned by truncated_loglik when the truncation interval carries no mass.
ZERO_MASS_SENTINEL = -1e10


@dataclass(frozen=True)
class GpHyperparams:
    amplitude: float
    lengthscales: tuple[float, ...]
    noise: float  # observation-noise variance

    def __post_init__(self) -> None:
        if self.amplitude <= 0 or self.noise <= 0 or any(l <= 0 for l in self.lengthscales):
            raise ValueError("hyperparameters must be strictly positive")


@dataclass(frozen=True)
class GpPosterior:
    inputs: np.ndarray  # (n, d), unit cube
    alpha: np.ndarray  # (K + noise I)^{-1} y_std
    chol: np.ndarray  # lower Cholesky factor of K + noise I
    hyperparams: GpHyperparams
    y_mean: float
    y_std: float
    loglik: float  # marginal log-likelihood of the standardized targets


def matern52(r, hp: GpHyperparams):
    """Matern-5/2 covariance at scaled distance r (elementwise on arrays)."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("distances must be nonnegative")
    a = _SQRT5 * r
    return hp.amplitude**2 * (1.0 + a + a * a / 3.0) * np.exp(-a)


def _scaled_dists(x1: np.ndarray, x2: np.ndarray, lengthscales: np.ndarray) -> np.ndarray:
    d = (x1[:, None, :] - x2[None, :, :]) / lengthscales[None, None, :]
    return np.sqrt(np.maximum((d * d).sum(axis=-1), 0.0))


def _kernel_matrix(x1: np.ndarray, x2: np.ndarray, hp: GpHyperparams) -> np.ndarray:
    return matern52(_scaled_dists(x1, x2, np.asarray(hp.lengthscales)), hp)


def _chol_with_jitter(k: np.ndarray, max_jitter: float = 1e-6) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of k, escalating jitter from 1e-10 to max_jitter."""
    jitter = 0.0
    while True:
        try:
            return cholesky(k + jitter * np.eye(k.shape[0]), lower=True), jitter
        except np.linalg.LinAlgError:
            jitter = 1e-10 if jitter == 0.0 else jitter * 10.0
            if jitter > max_jitter:
                raise


def marginal_loglik(inputs: np.ndarray, targets: np.ndarray, hp: GpHyperparams) -> float:
    """Gaussian marginal log-likelihood of targets under the kernel."""
    n = len(targets)
    k = _kernel_matrix(inputs, inputs, hp) + hp.noise * np.eye(n)
    try:
        low, _ = _chol_with_jitter(k)
    except np.linalg.LinAlgError:
        return -np.inf
    alpha = cho_solve((low, True), targets)
    return float(-0.5 * targets @ alpha - np.log(np.diag(low)).sum() - 0.5 * n * _LOG2PI)


def _unpack_log_hp(theta: np.ndarray, d: int) -> GpHyperparams:
    return GpHyperparams(
        amplitude=float(np.exp(theta[0])),
        lengthscales=tuple(np.exp(theta[1 : 1 + d])),
        noise=float(np.exp(theta[1 + d])),
    )


def fit(
    inputs: Sequence[Sequence[float]],
    targets: Sequence[float],
    restarts: int = 16,
    rng: np.random.Generator | None = None,
    *,
    noise_bounds: tuple[float, float] = (1e-6, 1.0),
    max_evals: int = 2000,
) -> GpPosterior:
    """Fit hyperparameters by multi-start coordinate descent in log-space.

    The returned hyperparameters score at least as well as every restart's
    initialization.  Deterministic for a fixed rng seed.
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    y_raw = np.asarray(targets, dtype=float)
    if y_raw.size < 1:
        raise ValueError("need at least one observation")
    if not np.all(np.isfinite(y_raw)):
        raise ValueError("targets must be finite")
    if x.shape[0] != y_raw.size:
        raise ValueError("inputs/targets length mismatch")
    n, d = x.shape
    rng = rng or np.random.default_rng(0)

    y_mean = float(y_raw.mean())
    y_std = float(y_raw.std())
    if y_std == 0.0:
        y_std = 1.0
    y = (y_raw - y_mean) / y_std

    log_noise_lo, log_noise_hi = math.log(noise_bounds[0]), math.log(noise_bounds[1])
    bounds_lo = np.array([math.log(1e-2)] + [math.log(5e-3)] * d + [log_noise_lo])
    bounds_hi = np.array([math.log(10.0)] + [math.log(10.0)] * d + [log_noise_hi])

    def objective(theta: np.ndarray) -> float:
        return marginal_loglik(x, y, _unpack_log_hp(theta, d))

    inits = [np.array([0.0] + [math.log(0.5)] * d + [math.log(0.1)])]
    for _ in range(max(restarts - 1, 0)):
        inits.append(bounds_lo + (bounds_hi - bounds_lo) * rng.uniform(size=d + 2))

    best_theta, best_ll = None, -np.inf
    budget = max_evals // max(len(inits), 1)
    for theta0 in inits:
        theta = np.clip(theta0, bounds_lo, bounds_hi)
        ll = objective(theta)
        evals = 1
        step = 0.5
        while step >= 1e-3 and evals < budget:
            improved = False
            for i in range(len(theta)):
                for delta in (step, -step):
                    cand = theta.copy()
                    cand[i] = float(np.clip(cand[i] + delta, bounds_lo[i], bounds_hi[i]))
                    if cand[i] == theta[i]:
                        continue
                    cll = objective(cand)
                    evals += 1
                    if cll > ll:
                        theta, ll = cand, cll
                        improved = True
                        break
                if evals >= budget:
                    break
            if not improved:
                step *= 0.5
        if ll > best_ll:
            best_theta, best_ll = theta, ll
    assert best_theta is not None

    hp = _unpack_log_hp(best_theta, d)
    k = _kernel_matrix(x, x, hp) + hp.noise * np.eye(n)
    low, _ = _chol_with_jitter(k)
    alpha = cho_solve((low, True), y)
    return GpPosterior(
        inputs=x, alpha=alpha, chol=low, hyperparams=hp, y_mean=y_mean, y_std=y_std, loglik=best_ll
    )


def make_posterior(
    inputs: Sequence[Sequence[float]],
    targets: Sequence[float],
    hp: GpHyperparams,
    *,
    standardize: bool = True,
) -> GpPosterior:
    """Posterior at fixed hyperparameters (no fitting)."""
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    y_raw = np.asarray(targets, dtype=float)
    if standardize:
        y_mean = float(y_raw.mean())
        y_std = float(y_raw.std()) or 1.0
    else:
        y_mean, y_std = 0.0, 1.0
    y = (y_raw - y_mean) / y_std
    k = _kernel_matrix(x, x, hp) + hp.noise * np.eye(len(y))
    low, _ = _chol_with_jitter(k)
    alpha = cho_solve((low, True), y)
    ll = float(-0.5 * y @ alpha - np.log(np.diag(low)).sum() - 0.5 * len(y) * _LOG2PI)
    return GpPosterior(x, alpha, low, hp, y_mean, y_std, ll)


def raw_loglik(post: GpPosterior) -> float:
    """Marginal log-likelihood of the raw (unstandardized) targets."""
    return post.loglik - len(post.alpha) * math.log(post.y_std)


def predict(post: GpPosterior, x) -> tuple[float, float]:
    """Predictive mean and variance (observation scale, includes noise)."""
    xq = np.atleast_2d(np.asarray(x, dtype=float))
    ks = _kernel_matrix(xq, post.inputs, post.hyperparams)[0]
    mean_std = float(ks @ post.alpha)
    v = solve_triangular(post.chol, ks, lower=True)
    var_std = post.hyperparams.amplitude**2 - float(v @ v) + post.hyperparams.noise
    var_std = max(var_std, 1e-12)
    return post.y_mean + post.y_std * mean_std, post.y_std**2 * var_std


def predict_batch(post: GpPosterior, xs) -> tuple[np.ndarray, np.ndarray]:
    """predict() over the rows of xs with one triangular solve."""
    xq = np.atleast_2d(np.asarray(xs, dtype=float))
    ks = _kernel_matrix(xq, post.inputs, post.hyperparams)
    mean_std = ks @ post.alpha
    v = solve_triangular(post.chol, ks.T, lower=True)
    var_std = post.hyperparams.amplitude**2 - np.einsum("ij,ij->j", v, v) + post.hyperparams.noise
    var_std = np.maximum(var_std, 1e-12)
    return post.y_mean + post.y_std * mean_std, post.y_std**2 * var_std


def truncated_loglik(post: GpPosterior, x, y: float, y_range: tuple[float, float]) -> float:
    """Log density of y under the predictive Gaussian renormalized to y_range."""
    lo, hi = y_range
    if not (lo <= y <= hi):
        raise ValueError(f"y={y} outside range [{lo}, {hi}]")
    mean, var = predict(post, x)
    std = math.sqrt(var)
    a, b = (lo - mean) / std, (hi - mean) / std
    log_mass = _log_gaussian_mass(a, b)
    if not math.isfinite(log_mass):
        logger.warning("truncation interval [%g, %g] carries no mass; returning sentinel", lo, hi)
        return ZERO_MASS_SENTINEL
    z = (y - mean) / std
    logpdf = -0.5 * z * z - math.log(std) - 0.5 * _LOG2PI
    return logpdf - log_mass


def _log_gaussian_mass(a: float, b: float) -> float:
    """log(Phi(b) - Phi(a)) computed stably for a < b."""
    if a > b:
        a, b = b, a
    if a > 0:
        # work in the upper tail: Phi(b)-Phi(a) = Phi(-a)-Phi(-b)
        a, b = -b, -a
    log_phi_b = float(log_ndtr(b))
    log_phi_a = float(log_ndtr(a))
    diff = log_phi_a - log_phi_b
    if diff >= 0.0:
        return -np.inf
    return log_phi_b + math.log1p(-math.exp(diff))


@dataclass(frozen=True)
class TruncatedGaussian:
    """Gaussian predictive restricted to a finite support; cdf-capable so the
    calibration metrics can treat it like any other predictive distribution."""

    mean: float
    std: float
    support: tuple[float, float]

    def _mass(self) -> float:
        lo, hi = self.support
        return float(ndtr((hi - self.mean) / self.std) - ndtr((lo - self.mean) / self.std))

    def cdf(self, y: float) -> float:
        lo, hi = self.support
        if y <= lo:
            return 0.0
        if y >= hi:
            return 1.0
        m = self._mass()
        if m <= 0.0:
            return 0.5
        return float((ndtr((y - self.mean) / self.std) - ndtr((lo - self.mean) / self.std)) / m)

    def log_pdf(self, y: float) -> float:
        lo, hi = self.support
        if not (lo <= y <= hi):
            return ZERO_MASS_SENTINEL
        a, b = (lo - self.mean) / self.std, (hi - self.mean) / self.std
        log_mass = _log_gaussian_mass(a, b)
        if not math.isfinite(log_mass):
            return ZERO_MASS_SENTINEL
        z = (y - self.mean) / self.std
        return -0.5 * z * z - math.log(self.std) - 0.5 * _LOG2PI - log_mass

    def pdf(self, y: float) -> float:
        return math.exp(self.log_pdf(y))

    def cdf_batch(self, ys) -> np.ndarray:
        return np.array([self.cdf(float(y)) for y in np.asarray(ys, dtype=float)])


def predictive_dist(post: GpPosterior, x, y_range: tuple[float, float]) -> TruncatedGaussian:
    mean, var = predict(post, x)
    return TruncatedGaussian(mean=mean, std=math.sqrt(var), support=y_range)
