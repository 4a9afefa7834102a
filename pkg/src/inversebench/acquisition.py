"""Batch hypervolume-improvement acquisition and the sequential baseline.

The batch acquisition scores candidate sets by the expected growth of the
dominated hypervolume over the current front, estimated with a base-sample
block that is frozen for one optimization call so the acquisition surface is
deterministic. The baseline scalarizes the problem as distance between the
posterior mean and a property target and maximizes expected improvement of
that score. Both share a seeded multi-start projected gradient-ascent
maximizer with finite-difference gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri
from scipy.stats import qmc

from .gp_surrogate import GPModel, joint_posterior_blocks, posterior_batch
from .pareto_metrics import hv_sweep_2d_batch, hypervolume
from .problem_suite import ConstraintSpec

DEFAULT_N_MC = 2048
DEFAULT_N_STARTS = 20
DEFAULT_MAX_STEPS = 200
STEP_TOL = 1e-6
FD_H = 1e-4


@dataclass(frozen=True)
class AcquisitionContext:
    """Everything one acquisition-optimization call needs, immutable.

    Objective models and the current front are in minimization convention;
    callers with maximize-sense objectives negate before fitting.
    """

    objective_models: tuple[GPModel, ...]
    bounds: np.ndarray  # (D, 2) raw input bounds
    ref_point: np.ndarray  # (M,)
    front: np.ndarray  # (n, M) current non-dominated objective vectors
    constraints: ConstraintSpec | None = None  # cheap analytic constraints
    constraint_models: tuple[GPModel, ...] = ()
    n_mc: int = DEFAULT_N_MC
    base_sampler: str = "normal"  # "normal" (iid) or "sobol" (scrambled QMC)

    def __post_init__(self):
        object.__setattr__(self, "objective_models", tuple(self.objective_models))
        object.__setattr__(self, "constraint_models", tuple(self.constraint_models))
        object.__setattr__(self, "bounds", np.asarray(self.bounds, dtype=float))
        object.__setattr__(self, "ref_point", np.asarray(self.ref_point, dtype=float))
        object.__setattr__(self, "front", np.atleast_2d(np.asarray(self.front, float)))
        if self.base_sampler not in ("normal", "sobol"):
            raise ValueError(f"unknown base sampler: {self.base_sampler!r}")

    @property
    def dim(self) -> int:
        return len(self.bounds)

    @property
    def n_objectives(self) -> int:
        return len(self.objective_models)


@dataclass(frozen=True)
class CandidateBatch:
    points: np.ndarray  # (q, D) raw inputs
    q: int
    acquisition_value: float

    def __post_init__(self):
        object.__setattr__(self, "points", np.atleast_2d(np.asarray(self.points, float)))


def base_sample_block(ctx: AcquisitionContext, q: int, seed: int) -> np.ndarray:
    """The frozen standard-normal block, shape (n_mc, q, M + C).

    Deterministic in (n_mc, q, M + C, seed, sampler); one block per
    optimization call keeps repeated evaluations bitwise identical.
    """
    width = q * (ctx.n_objectives + len(ctx.constraint_models))
    if ctx.base_sampler == "sobol":
        sampler = qmc.Sobol(d=width, scramble=True, seed=seed)
        u = sampler.random(ctx.n_mc)
        # keep strictly inside (0, 1) before the normal inverse CDF
        u = np.clip(u, 1e-12, 1 - 1e-12)
        z = ndtri(u)
    else:
        z = np.random.default_rng(seed).standard_normal((ctx.n_mc, width))
    return z.reshape(ctx.n_mc, q, -1)


def _cheap_feasible_rows(ctx: AcquisitionContext, batch: np.ndarray) -> np.ndarray:
    if ctx.constraints is None:
        return np.ones(len(batch), dtype=bool)
    return ctx.constraints.feasible_mask(batch, tol=1e-6)


def _r_dominating(front: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Front members that weakly dominate the reference point.

    Members beyond the reference point enclose zero volume, so dropping them
    leaves every hypervolume in the improvement exact.
    """
    if front.size == 0:
        return np.empty((0, len(ref)))
    return front[np.all(front <= ref, axis=1)]


def _psd_factors(cov: np.ndarray) -> np.ndarray:
    """Batched symmetric square roots, negative eigenvalues clamped to 0."""
    sym = 0.5 * (cov + cov.transpose(0, 2, 1))
    eigvals, eigvecs = np.linalg.eigh(sym)
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))[:, None, :]


def _sample_channel(model, batches, z):
    """Joint posterior draws for one output channel, raw units.

    ``batches`` is (B, q, D), ``z`` is the (n_mc, q) base-sample slice;
    returns (B, n_mc, q).
    """
    mean, cov = joint_posterior_blocks(model, batches)
    factors = _psd_factors(cov)
    draws = mean[:, None, :] + np.einsum("nq,brq->bnr", z, factors)
    return draws * model.norm.target_std + model.norm.target_mean


# keep peak memory of the batched hypervolume step bounded
_HV_ROW_BUDGET = 1 << 17


def _qehvi_many(
    ctx: AcquisitionContext,
    batches: np.ndarray,
    base: np.ndarray,
    _cached_front: tuple[np.ndarray, float] | None = None,
) -> np.ndarray:
    """Acquisition values for many batches against one frozen base block."""
    batches = np.asarray(batches, dtype=float)
    n_batches, q, _ = batches.shape
    ref = ctx.ref_point
    if _cached_front is None:
        front = _r_dominating(ctx.front, ref)
        hv_front = hypervolume(front, ref) if len(front) else 0.0
    else:
        front, hv_front = _cached_front
    chunk = max(1, _HV_ROW_BUDGET // ctx.n_mc)
    if n_batches > chunk:
        return np.concatenate(
            [
                _qehvi_many(ctx, batches[i : i + chunk], base, (front, hv_front))
                for i in range(0, n_batches, chunk)
            ]
        )

    n_obj = ctx.n_objectives

    samples = np.empty((n_batches, ctx.n_mc, q, n_obj))
    for m, model in enumerate(ctx.objective_models):
        samples[..., m] = _sample_channel(model, batches, base[:, :, m])

    if ctx.constraint_models:
        infeasible = np.zeros((n_batches, ctx.n_mc, q), dtype=bool)
        for c, model in enumerate(ctx.constraint_models):
            g = _sample_channel(model, batches, base[:, :, n_obj + c])
            infeasible |= g > 0.0
        samples = np.where(infeasible[..., None], ref, samples)

    if ctx.constraints is not None:
        ok = ctx.constraints.feasible_mask(
            batches.reshape(n_batches * q, -1), tol=1e-6
        ).reshape(n_batches, q)
        if not ok.all():
            samples = np.where(ok[:, None, :, None], samples, ref)

    if n_obj == 2:
        flat = samples.reshape(n_batches * ctx.n_mc, q, 2)
        tiled = np.broadcast_to(front, (len(flat), *front.shape))
        hv_union = hv_sweep_2d_batch(np.concatenate([tiled, flat], axis=1), ref)
        hv_union = hv_union.reshape(n_batches, ctx.n_mc)
    else:
        hv_union = np.empty((n_batches, ctx.n_mc))
        for b in range(n_batches):
            for s in range(ctx.n_mc):
                pts = np.vstack([front, np.minimum(samples[b, s], ref)])
                hv_union[b, s] = hypervolume(pts, ref)

    return np.mean(np.maximum(hv_union - hv_front, 0.0), axis=1)


def qehvi_value(ctx: AcquisitionContext, batch, seed: int = 0) -> float:
    """MC estimate of the expected hypervolume gain of evaluating ``batch``.

    Sampled points that violate modeled constraints, cheap constraints, or
    fail to dominate the reference point contribute zero improvement.
    """
    batch = np.atleast_2d(np.asarray(batch, dtype=float))
    base = base_sample_block(ctx, len(batch), seed)
    return float(_qehvi_many(ctx, batch[None], base)[0])


def _feasibility_probabilities(constraint_models, points: np.ndarray) -> np.ndarray:
    """Per-point product of P(g_j(x) <= 0); exact step when variance is 0."""
    prob = np.ones(len(points))
    for model in constraint_models:
        mean, var = posterior_batch(model, points)
        sd = np.sqrt(np.maximum(var, 0.0))
        term = np.where(mean <= 0, 1.0, 0.0)
        live = sd > 0
        term[live] = ndtr(-mean[live] / sd[live])
        prob *= term
    return prob


def probability_of_feasibility(constraint_models, x) -> float:
    """Product over models of P(g_j(x) <= 0) at a single input."""
    return float(
        _feasibility_probabilities(constraint_models, np.atleast_2d(np.asarray(x, float)))[0]
    )


# ---------------------------------------------------------------------------
# multi-start projected gradient ascent
# ---------------------------------------------------------------------------

def _screened_starts(
    ctx: AcquisitionContext, objective_many, q: int, n_starts: int, seed: int
) -> np.ndarray:
    """Top-scoring batches from a quasi-random feasible pool.

    Acquisition surfaces flatten to zero away from narrow peaks once the
    model is converged, so raw starts alone routinely miss the basin; a
    coarse screen of a larger pool keeps the local searches anchored where
    the surface is alive. Ties keep the lowest pool index.
    """
    constraints = ctx.constraints or ConstraintSpec(box=ctx.bounds)
    pool_size = max(16 * n_starts, 256)
    points = constraints.sample_feasible(pool_size * q, seed=seed)
    pool = points.reshape(pool_size, q, ctx.dim)
    values = objective_many(pool)
    ranked = np.argsort(-values, kind="stable")[:n_starts]
    return pool[ranked]


def _ascend(f_many, z0, project, max_steps, step_tol):
    """Gradient ascent with backtracking on normalized coordinates.

    ``f_many`` evaluates a stack of flattened normalized batches in one call;
    each iteration costs two such calls: the finite-difference probes of the
    gradient, then a ladder of four trial step lengths.
    """
    z = project(z0)
    fz = float(f_many(z[None])[0])
    step = 0.1
    for _ in range(max_steps):
        if step < step_tol:
            break
        grad = _fd_gradient(f_many, z)
        gnorm = float(np.linalg.norm(grad))
        if gnorm < 1e-12:
            break
        direction = grad / gnorm
        trial = np.array([step, step / 2, step / 4, step / 8])
        cands = np.vstack(
            [project(np.clip(z + s * direction, 0.0, 1.0)) for s in trial]
        )
        vals = f_many(cands)
        improving = vals > fz + 1e-14
        if improving.any():
            i = int(np.argmax(vals))  # first (largest step) wins ties
            z, fz = cands[i], float(vals[i])
            step = min(max(trial[i] * 1.5, step_tol), 0.25)
        else:
            step /= 16.0
    return z, fz


def _fd_gradient(f_many, z, h: float = FD_H):
    k = len(z)
    probes = np.repeat(z[None], 2 * k, axis=0)
    denoms = np.empty(k)
    for i in range(k):
        up = min(z[i] + h, 1.0)
        dn = max(z[i] - h, 0.0)
        probes[2 * i, i] = up
        probes[2 * i + 1, i] = dn
        denoms[i] = up - dn
    values = f_many(probes)
    grad = np.zeros(k)
    nonzero = denoms > 0
    grad[nonzero] = (values[0::2][nonzero] - values[1::2][nonzero]) / denoms[nonzero]
    return grad


def _multistart_maximize(
    ctx: AcquisitionContext,
    objective_many,  # callable on raw batches (B, q, D) -> values (B,)
    q: int,
    seed: int,
    n_starts: int,
    max_steps: int,
):
    lo, hi = ctx.bounds[:, 0], ctx.bounds[:, 1]
    span = hi - lo
    constraints = ctx.constraints or ConstraintSpec(box=ctx.bounds)

    def to_raw(Z):
        return lo + Z.reshape(len(Z), q, ctx.dim) * span

    def project(z):
        raw = constraints.project((lo + z.reshape(q, ctx.dim) * span))
        return ((raw - lo) / span).ravel()

    def f_many(Z):
        return objective_many(to_raw(np.atleast_2d(Z)))

    starts = _screened_starts(ctx, objective_many, q, n_starts, seed)
    best_z, best_val = None, -np.inf
    for start in starts:
        z0 = ((start - lo) / span).ravel()
        z, val = _ascend(f_many, z0, project, max_steps, STEP_TOL)
        if val > best_val:  # strict: ties keep the lowest start index
            best_z, best_val = z, val
    if best_z is None:
        raise ValueError("infeasible search region")
    return to_raw(best_z[None])[0], float(best_val)


def optimize_qehvi(
    ctx: AcquisitionContext,
    q: int,
    seed: int,
    n_starts: int = DEFAULT_N_STARTS,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> CandidateBatch:
    """Maximize the batch acquisition over feasible q-point batches.

    Multi-start local search: quasi-random feasible starts refined by
    finite-difference gradient ascent with backtracking; cheap constraints
    are enforced by projection after every step. The base-sample block is
    frozen for the whole call, so ``qehvi_value`` with the same seed
    reproduces the returned acquisition value exactly.
    """
    if q < 1:
        raise ValueError("q must be >= 1")
    base = base_sample_block(ctx, q, seed)
    front = _r_dominating(ctx.front, ctx.ref_point)
    hv_front = hypervolume(front, ctx.ref_point) if len(front) else 0.0

    def objective_many(batches):
        return _qehvi_many(ctx, batches, base, (front, hv_front))

    points, value = _multistart_maximize(ctx, objective_many, q, seed, n_starts, max_steps)
    return CandidateBatch(points=points, q=q, acquisition_value=value)


# ---------------------------------------------------------------------------
# sequential target-matching baseline
# ---------------------------------------------------------------------------

def _target_score_stats(ctx: AcquisitionContext, points: np.ndarray, target: np.ndarray):
    """Mean and sd of s(x) = -||posterior_mean(x) - target||, batched.

    The variance comes from the delta method: per-objective posterior
    variances weighted by the squared direction cosines of the residual.
    ``points`` is (B, D); returns (means (B,), sds (B,)).
    """
    n = len(points)
    mus = np.empty((n, ctx.n_objectives))
    sigmas2 = np.empty((n, ctx.n_objectives))
    for m, model in enumerate(ctx.objective_models):
        mean, var = posterior_batch(model, points)
        mus[:, m] = mean
        sigmas2[:, m] = var
    resid = mus - target
    dist = np.linalg.norm(resid, axis=1)
    safe = np.maximum(dist, 1e-12)[:, None]
    weights = np.where(
        dist[:, None] > 1e-12, (resid / safe) ** 2, 1.0 / ctx.n_objectives
    )
    return -dist, np.sqrt(np.sum(weights * sigmas2, axis=1))


def _expected_improvement(means: np.ndarray, sds: np.ndarray, incumbent: float) -> np.ndarray:
    gap = means - incumbent
    out = np.maximum(gap, 0.0)
    live = sds > 1e-16
    z = gap[live] / sds[live]
    phi = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    out[live] = gap[live] * ndtr(z) + sds[live] * phi
    return out


def baseline_suggest(
    ctx: AcquisitionContext,
    target,
    seed: int,
    n_starts: int = DEFAULT_N_STARTS,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> CandidateBatch:
    """One suggestion from the sequential property-target-matching baseline.

    Scalarizes observations and candidates as the negative distance between
    objective values and the requested target, then maximizes expected
    improvement of that score; q is always 1.
    """
    target = np.asarray(target, dtype=float)
    if target.shape != (ctx.n_objectives,):
        raise ValueError("target length must match the number of objectives")

    # observed scores; per-objective models share row-aligned training data
    ys = np.column_stack([m.raw_train_targets for m in ctx.objective_models])
    scores = -np.linalg.norm(ys - target, axis=1)
    # improvement margin: keeps the maximizer on the matching input when the
    # incumbent already attains the score ceiling (s = 0 at an exact match),
    # where plain EI would drift to whatever region is most uncertain
    margin = 0.01 * max(float(scores.max() - scores.min()), 1e-6)
    incumbent = float(scores.max()) - margin

    def objective_many(batches):
        points = np.asarray(batches, dtype=float)[:, 0, :]
        mean_s, sd_s = _target_score_stats(ctx, points, target)
        values = _expected_improvement(mean_s, sd_s, incumbent)
        if ctx.constraint_models:
            values = values * _feasibility_probabilities(ctx.constraint_models, points)
        return values

    points, value = _multistart_maximize(ctx, objective_many, 1, seed, n_starts, max_steps)
    return CandidateBatch(points=points, q=1, acquisition_value=value)
