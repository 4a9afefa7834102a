"""Exact Gaussian-process regression, one independent model per output.

Inputs are min-max normalized to the unit cube using declared bounds and
targets are standardized to zero mean, unit variance; both records live on
the fitted model so predictions come back in raw units. Hyperparameters
(ARD lengthscales, signal variance, noise variance, constant mean) maximize
the log marginal likelihood via a seeded multi-start coordinate line search
in log space, which keeps fits bitwise reproducible.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

MATERN52 = "matern52"
SQEXP = "sqexp"

_LS_BOUNDS = (1e-3, 1e3)
_VAR_BOUNDS = (1e-8, 1e3)
_JITTERS = (0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2)

SERIAL_FORMAT = "gp-model"
SERIAL_VERSION = 1


@dataclass(frozen=True)
class Observation:
    """One evaluated trial: raw input vector, raw objective vector, feasibility."""

    x: np.ndarray
    y: np.ndarray
    feasible: bool = True

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "y", np.atleast_1d(np.asarray(self.y, dtype=float)))
        if not (np.isfinite(self.x).all() and np.isfinite(self.y).all()):
            raise ValueError("observation entries must be finite")


@dataclass(frozen=True)
class KernelConfig:
    family: str = MATERN52
    lengthscales: np.ndarray = None
    signal_variance: float = 1.0
    noise_variance: float = 1e-4

    def __post_init__(self):
        if self.family not in (MATERN52, SQEXP):
            raise ValueError(f"unknown kernel family: {self.family!r}")
        object.__setattr__(
            self, "lengthscales", np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        )
        if np.any(self.lengthscales <= 0) or self.signal_variance <= 0:
            raise ValueError("lengthscales and signal variance must be positive")
        if self.noise_variance < 0:
            raise ValueError("noise variance must be >= 0")


@dataclass(frozen=True)
class FitConfig:
    kernel_family: str = MATERN52
    bounds: np.ndarray | None = None  # (D, 2) raw input bounds; data range if None
    n_restarts: int = 8
    max_evals: int = 200  # likelihood evaluations per restart
    seed: int = 0


@dataclass(frozen=True)
class Normalization:
    input_lo: np.ndarray
    input_hi: np.ndarray
    target_mean: float
    target_std: float

    def normalize_x(self, x: np.ndarray) -> np.ndarray:
        return (x - self.input_lo) / (self.input_hi - self.input_lo)

    def denormalize_x(self, u: np.ndarray) -> np.ndarray:
        return self.input_lo + u * (self.input_hi - self.input_lo)


def _kernel_from_sq(cfg: KernelConfig, sq: np.ndarray) -> np.ndarray:
    if cfg.family == SQEXP:
        return cfg.signal_variance * np.exp(-0.5 * sq)
    z = np.sqrt(5.0 * sq)
    return cfg.signal_variance * (1.0 + z + z**2 / 3.0) * np.exp(-z)


def _kernel(cfg: KernelConfig, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    scaled_a = a / cfg.lengthscales
    scaled_b = b / cfg.lengthscales
    sq = (
        np.sum(scaled_a**2, axis=1)[:, None]
        + np.sum(scaled_b**2, axis=1)[None, :]
        - 2.0 * scaled_a @ scaled_b.T
    )
    return _kernel_from_sq(cfg, np.maximum(sq, 0.0))


@dataclass(frozen=True)
class GPModel:
    """Immutable fitted model; all stored arrays are in normalized units."""

    kernel: KernelConfig
    mean_constant: float  # standardized target units
    train_inputs: np.ndarray  # (N, D) in the unit cube
    train_targets: np.ndarray  # (N,) standardized
    norm: Normalization
    chol: np.ndarray = field(repr=False, default=None)
    alpha: np.ndarray = field(repr=False, default=None)  # K^{-1} (y - mean)
    jitter: float = 0.0

    @property
    def dim(self) -> int:
        return self.train_inputs.shape[1]

    @property
    def raw_train_targets(self) -> np.ndarray:
        return self.train_targets * self.norm.target_std + self.norm.target_mean

    @property
    def raw_train_inputs(self) -> np.ndarray:
        return self.norm.denormalize_x(self.train_inputs)


def _chol_with_jitter(K: np.ndarray, noise: float):
    """Cholesky of K + noise*I, escalating jitter geometrically up to 1e-2."""
    n = len(K)
    for jitter in _JITTERS:
        try:
            L = cholesky(K + (noise + jitter) * np.eye(n), lower=True)
            return L, jitter
        except np.linalg.LinAlgError:
            continue
    raise ValueError("ill-conditioned kernel")


def _profiled_lml(cfg: KernelConfig, X: np.ndarray, y: np.ndarray):
    """Log marginal likelihood with the constant mean solved in closed form.

    Returns (lml, mean, L, alpha, jitter); raises ValueError when no jitter
    level yields a positive-definite covariance.
    """
    K = _kernel(cfg, X, X)
    L, jitter = _chol_with_jitter(K, cfg.noise_variance)
    n = len(X)
    ones = np.ones(n)
    Kinv_y = cho_solve((L, True), y)
    Kinv_1 = cho_solve((L, True), ones)
    denom = ones @ Kinv_1
    mean = float(ones @ Kinv_y / denom) if denom > 0 else 0.0
    alpha = Kinv_y - mean * Kinv_1
    resid = y - mean
    lml = (
        -0.5 * float(resid @ alpha)
        - float(np.sum(np.log(np.diag(L))))
        - 0.5 * n * math.log(2.0 * math.pi)
    )
    return lml, mean, L, alpha, jitter


def _search_bounds(dim: int) -> np.ndarray:
    lo = np.log(np.array([_LS_BOUNDS[0]] * dim + [_VAR_BOUNDS[0], _VAR_BOUNDS[0]]))
    hi = np.log(np.array([_LS_BOUNDS[1]] * dim + [_VAR_BOUNDS[1], _VAR_BOUNDS[1]]))
    return np.stack([lo, hi], axis=1)


def _theta_to_kernel(theta: np.ndarray, family: str, dim: int) -> KernelConfig:
    return KernelConfig(
        family=family,
        lengthscales=np.exp(theta[:dim]),
        signal_variance=float(np.exp(theta[dim])),
        noise_variance=float(np.exp(theta[dim + 1])),
    )


def _coordinate_search(objective, theta0, bounds, max_evals):
    """Pattern search over one coordinate at a time in log space."""
    theta = theta0.copy()
    best = objective(theta)
    evals = 1
    step = 1.0
    while evals < max_evals and step > 1e-3:
        improved = False
        for c in range(len(theta)):
            for delta in (step, -step):
                if evals >= max_evals:
                    break
                cand = theta.copy()
                cand[c] = np.clip(cand[c] + delta, bounds[c, 0], bounds[c, 1])
                if cand[c] == theta[c]:
                    continue
                val = objective(cand)
                evals += 1
                if val > best + 1e-12:
                    theta, best = cand, val
                    improved = True
                    break
        if not improved:
            step *= 0.5
    return theta, best


def fit_gp(X, y, cfg: FitConfig = FitConfig()) -> GPModel:
    """Fit one GP to raw inputs ``X`` (N, D) and raw targets ``y`` (N,)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if len(X) < 2:
        raise ValueError("at least 2 observations are required to fit")
    if len(X) != len(y):
        raise ValueError("inputs and targets must have equal length")
    # canonical ordering makes the fit exactly permutation-invariant and keeps
    # per-objective models fitted on the same X row-aligned with each other
    order = np.lexsort(X.T[::-1])
    X, y = X[order], y[order]

    if cfg.bounds is not None:
        bounds = np.asarray(cfg.bounds, dtype=float)
        lo, hi = bounds[:, 0].copy(), bounds[:, 1].copy()
    else:
        lo, hi = X.min(axis=0), X.max(axis=0)
    span = hi - lo
    degenerate = span <= 0
    hi = np.where(degenerate, lo + 1.0, hi)

    t_mean = float(y.mean())
    t_std = float(y.std())
    if t_std <= 1e-12:
        t_std = 1.0
    norm = Normalization(lo, hi, t_mean, t_std)
    Xn = norm.normalize_x(X)
    yn = (y - t_mean) / t_std

    dim = X.shape[1]
    sbounds = _search_bounds(dim)

    def objective(theta):
        try:
            return _profiled_lml(_theta_to_kernel(theta, cfg.kernel_family, dim), Xn, yn)[0]
        except ValueError:
            return -np.inf

    rng = np.random.default_rng(cfg.seed)
    default_theta = np.log(np.concatenate([np.full(dim, 0.5), [1.0, 1e-4]]))
    starts = [default_theta]
    for _ in range(max(0, cfg.n_restarts - 1)):
        ls = rng.uniform(np.log(0.05), np.log(2.0), size=dim)
        sv = rng.uniform(np.log(0.1), np.log(10.0))
        nv = rng.uniform(np.log(1e-6), np.log(1e-1))
        starts.append(np.concatenate([ls, [sv, nv]]))

    best_theta, best_val = None, -np.inf
    for theta0 in starts:
        theta, val = _coordinate_search(objective, theta0, sbounds, cfg.max_evals)
        if val > best_val:
            best_theta, best_val = theta, val
    if best_theta is None or not np.isfinite(best_val):
        raise ValueError("ill-conditioned kernel")

    kernel = _theta_to_kernel(best_theta, cfg.kernel_family, dim)
    _, mean, L, alpha, jitter = _profiled_lml(kernel, Xn, yn)
    return GPModel(
        kernel=kernel,
        mean_constant=mean,
        train_inputs=Xn,
        train_targets=yn,
        norm=norm,
        chol=L,
        alpha=alpha,
        jitter=jitter,
    )


def fit(observations, objective_index: int, cfg: FitConfig = FitConfig()) -> GPModel:
    """Fit a GP to one objective column of a list of :class:`Observation`."""
    if len(observations) < 2:
        raise ValueError("at least 2 observations are required to fit")
    X = np.vstack([np.asarray(o.x, dtype=float) for o in observations])
    y = np.array([float(np.atleast_1d(o.y)[objective_index]) for o in observations])
    return fit_gp(X, y, cfg)


def _check_extrapolation(model: GPModel, Xn: np.ndarray) -> None:
    if np.any(Xn < -1e-9) or np.any(Xn > 1 + 1e-9):
        warnings.warn("input outside normalization bounds; extrapolating", stacklevel=3)


def posterior_batch(model: GPModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance in raw units at raw inputs ``X`` (B, D)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Xn = model.norm.normalize_x(X)
    _check_extrapolation(model, Xn)
    Ks = _kernel(model.kernel, model.train_inputs, Xn)  # (N, B)
    mean_std = model.mean_constant + Ks.T @ model.alpha
    V = solve_triangular(model.chol, Ks, lower=True)
    var_std = model.kernel.signal_variance - np.sum(V**2, axis=0)
    var_std = np.maximum(var_std, 0.0)
    mean = mean_std * model.norm.target_std + model.norm.target_mean
    var = var_std * model.norm.target_std**2
    return mean, var


def posterior(model: GPModel, x) -> tuple[float, float]:
    """Posterior mean and variance in raw units at a single raw input."""
    mean, var = posterior_batch(model, np.atleast_2d(np.asarray(x, dtype=float)))
    return float(mean[0]), float(var[0])


def joint_posterior(model: GPModel, xs) -> tuple[np.ndarray, np.ndarray]:
    """Joint posterior mean (q,) and covariance (q, q), standardized units."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    Xn = model.norm.normalize_x(xs)
    _check_extrapolation(model, Xn)
    Ks = _kernel(model.kernel, model.train_inputs, Xn)
    Kss = _kernel(model.kernel, Xn, Xn)
    mean = model.mean_constant + Ks.T @ model.alpha
    V = solve_triangular(model.chol, Ks, lower=True)
    cov = Kss - V.T @ V
    return mean, cov


def joint_posterior_blocks(model: GPModel, batches) -> tuple[np.ndarray, np.ndarray]:
    """Joint posteriors of many q-point batches at once, standardized units.

    ``batches`` is (B, q, D) in raw units; returns means (B, q) and
    covariances (B, q, q). Hot path for acquisition optimization, so no
    extrapolation checks here; callers keep the points inside the bounds.
    """
    batches = np.asarray(batches, dtype=float)
    n_batches, q, _ = batches.shape
    Xn = model.norm.normalize_x(batches.reshape(n_batches * q, -1))
    Ks = _kernel(model.kernel, model.train_inputs, Xn)
    mean = model.mean_constant + Ks.T @ model.alpha
    V = solve_triangular(model.chol, Ks, lower=True)
    Vb = V.reshape(len(V), n_batches, q)
    vtv = np.einsum("nbq,nbr->bqr", Vb, Vb)
    scaled = (Xn / model.kernel.lengthscales).reshape(n_batches, q, -1)
    sq = np.sum((scaled[:, :, None, :] - scaled[:, None, :, :]) ** 2, axis=3)
    cov = _kernel_from_sq(model.kernel, np.maximum(sq, 0.0)) - vtv
    return mean.reshape(n_batches, q), cov


def posterior_factor(model: GPModel, xs) -> tuple[np.ndarray, np.ndarray]:
    """Joint posterior mean and a square root of the covariance.

    Uses a symmetric eigendecomposition with negative eigenvalues clamped to
    zero, so exactly singular joints (duplicated query points) factor cleanly
    instead of needing jitter. Used wherever frozen base samples must be
    mapped through the posterior deterministically.
    """
    mean, cov = joint_posterior(model, xs)
    cov = 0.5 * (cov + cov.T)
    eigvals, eigvecs = np.linalg.eigh(cov)
    factor = eigvecs * np.sqrt(np.maximum(eigvals, 0.0))
    return mean, factor


def sample_posterior(model: GPModel, xs, n_samples: int, seed: int) -> np.ndarray:
    """Seeded joint draws, de-standardized to raw units; (n_samples, q)."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    mean, L = posterior_factor(model, xs)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_samples, len(mean)))
    samples = mean + z @ L.T
    return samples * model.norm.target_std + model.norm.target_mean


def log_marginal_likelihood(model: GPModel) -> float:
    """Exact Gaussian log marginal likelihood of the standardized targets."""
    resid = model.train_targets - model.mean_constant
    n = len(resid)
    return (
        -0.5 * float(resid @ model.alpha)
        - float(np.sum(np.log(np.diag(model.chol))))
        - 0.5 * n * math.log(2.0 * math.pi)
    )


def model_to_json(model: GPModel, path=None) -> str:
    doc = {
        "format": SERIAL_FORMAT,
        "version": SERIAL_VERSION,
        "kernel": {
            "family": model.kernel.family,
            "lengthscales": model.kernel.lengthscales.tolist(),
            "signal_variance": model.kernel.signal_variance,
            "noise_variance": model.kernel.noise_variance,
        },
        "mean_constant": model.mean_constant,
        "normalization": {
            "input_lo": model.norm.input_lo.tolist(),
            "input_hi": model.norm.input_hi.tolist(),
            "target_mean": model.norm.target_mean,
            "target_std": model.norm.target_std,
        },
        "train_inputs": model.train_inputs.tolist(),
        "train_targets": model.train_targets.tolist(),
    }
    text = json.dumps(doc)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text


def model_from_json(source) -> GPModel:
    if isinstance(source, (str, Path)) and Path(str(source)).exists():
        doc = json.loads(Path(source).read_text())
    else:
        doc = json.loads(source) if isinstance(source, str) else source
    if doc.get("format") != SERIAL_FORMAT:
        raise ValueError(f"not a {SERIAL_FORMAT} document")
    if doc.get("version") != SERIAL_VERSION:
        raise ValueError(f"unsupported {SERIAL_FORMAT} version: {doc.get('version')}")
    kernel = KernelConfig(
        family=doc["kernel"]["family"],
        lengthscales=np.asarray(doc["kernel"]["lengthscales"]),
        signal_variance=doc["kernel"]["signal_variance"],
        noise_variance=doc["kernel"]["noise_variance"],
    )
    norm = Normalization(
        input_lo=np.asarray(doc["normalization"]["input_lo"]),
        input_hi=np.asarray(doc["normalization"]["input_hi"]),
        target_mean=doc["normalization"]["target_mean"],
        target_std=doc["normalization"]["target_std"],
    )
    Xn = np.asarray(doc["train_inputs"], dtype=float)
    yn = np.asarray(doc["train_targets"], dtype=float)
    _, mean, L, alpha, jitter = _profiled_lml(kernel, Xn, yn)
    return GPModel(
        kernel=kernel,
        mean_constant=mean,
        train_inputs=Xn,
        train_targets=yn,
        norm=norm,
        chol=L,
        alpha=alpha,
        jitter=jitter,
    )
