"""Pareto dominance filtering and front quality metrics.

All comparisons use the minimization convention internally: objectives tagged
"maximize" are negated on ingestion (``to_minimization``) and never converted
back. The five metrics scored here are generational distance (GD), inverted
generational distance (IGD), hypervolume (HV), Schott spacing (SP), and
maximum spread (MS).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import qmc

MINIMIZE = "minimize"
MAXIMIZE = "maximize"

# Objective vectors closer than this (absolute, componentwise) are duplicates.
DUPLICATE_TOL = 1e-12

# HV dispatch: exact sweep for 2, recursive slicing for 3..4, quasi-MC above.
_HV_EXACT_MAX_DIM = 4
_HV_QMC_SAMPLES = 2**16
_HV_QMC_REPLICATES = 16


def to_minimization(values: np.ndarray, senses) -> np.ndarray:
    """Negate maximize-sense columns so all objectives are minimized.

    ``values`` is (M,) or (n, M); ``senses`` is a length-M sequence of
    "minimize"/"maximize" tags.
    """
    values = np.asarray(values, dtype=float)
    senses = list(senses)
    if values.shape[-1] != len(senses):
        raise ValueError(
            f"dimension mismatch: {values.shape[-1]} objectives vs {len(senses)} senses"
        )
    for tag in senses:
        if tag not in (MINIMIZE, MAXIMIZE):
            raise ValueError(f"unknown sense tag: {tag!r}")
    flip = np.array([-1.0 if s == MAXIMIZE else 1.0 for s in senses])
    return values * flip


@dataclass(frozen=True)
class ParetoFront:
    """Mutually non-dominated objective vectors with their generating inputs.

    ``objectives`` is (n, M) in minimization convention; ``inputs`` is (n, D)
    or None when the generating inputs are unknown (reference fronts).
    """

    objectives: np.ndarray
    inputs: np.ndarray | None = None

    def __post_init__(self):
        objs = np.atleast_2d(np.asarray(self.objectives, dtype=float))
        object.__setattr__(self, "objectives", objs)
        if self.inputs is not None:
            ins = np.atleast_2d(np.asarray(self.inputs, dtype=float))
            if len(ins) != len(objs):
                raise ValueError("inputs and objectives must have equal length")
            object.__setattr__(self, "inputs", ins)
        if objs.size and not np.isfinite(objs).all():
            raise ValueError("objective values must be finite")

    def __len__(self) -> int:
        return 0 if self.objectives.size == 0 else self.objectives.shape[0]

    @property
    def n_objectives(self) -> int:
        return self.objectives.shape[1] if self.objectives.size else 0


def dominates(a, b) -> bool:
    """True iff ``a`` weakly improves on ``b`` everywhere and strictly somewhere.

    Both vectors must be in minimization convention and of equal length.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return bool(np.all(a <= b) and np.any(a < b))


def _non_dominated_mask(objs: np.ndarray) -> np.ndarray:
    """Boolean mask of points not dominated by any other point.

    Within-tolerance duplicates keep only the first occurrence. Large sets
    take a lex-sorted scan (a dominator always sorts before its victim);
    small sets use the direct pairwise comparison, which also resolves
    duplicate ties strictly by input order.
    """
    n = len(objs)
    if n > 1024:
        return _non_dominated_mask_sorted(objs)
    keep = np.ones(n, dtype=bool)
    for i in range(n):
        le = np.all(objs <= objs[i], axis=1)
        lt = np.any(objs < objs[i], axis=1)
        dominators = le & lt
        dominators[i] = False
        if dominators.any():
            keep[i] = False
            continue
        # collapse duplicates onto the earliest occurrence
        if i > 0:
            dup = np.all(np.abs(objs[:i] - objs[i]) <= DUPLICATE_TOL, axis=1)
            if np.any(dup & keep[:i]):
                keep[i] = False
    return keep


def _non_dominated_mask_sorted(objs: np.ndarray) -> np.ndarray:
    if objs.shape[1] == 2:
        return _mask_sorted_2d(objs)
    if objs.shape[1] == 3:
        return _mask_sorted_3d(objs)
    return _mask_sorted_chunked(objs)


def _mask_sorted_2d(objs: np.ndarray) -> np.ndarray:
    # in lex order a point survives iff its f2 strictly undercuts the
    # running minimum (ties are dominated or exact duplicates)
    order = np.lexsort(objs.T[::-1])
    f2 = objs[order, 1]
    cummin = np.minimum.accumulate(f2)
    keep_sorted = np.empty(len(f2), dtype=bool)
    keep_sorted[0] = True
    keep_sorted[1:] = f2[1:] < cummin[:-1]
    mask = np.zeros(len(objs), dtype=bool)
    mask[order[keep_sorted]] = True
    return mask


def _mask_sorted_3d(objs: np.ndarray) -> np.ndarray:
    # sweep in lex order; a Fenwick tree over compressed f2 ranks holds the
    # minimum f3 seen so far, so each dominance query is O(log n)
    n = len(objs)
    order = np.lexsort(objs.T[::-1])
    s = objs[order]
    uniq = np.unique(s[:, 1])
    ranks = np.searchsorted(uniq, s[:, 1]) + 1
    f3 = s[:, 2]
    size = len(uniq)
    tree = [math.inf] * (size + 1)
    keep_sorted = np.zeros(n, dtype=bool)
    for i in range(n):
        j = int(ranks[i])
        best = math.inf
        while j > 0:
            if tree[j] < best:
                best = tree[j]
            j -= j & (-j)
        if best <= f3[i]:
            continue  # some earlier point is at least as good everywhere
        keep_sorted[i] = True
        j = int(ranks[i])
        v = float(f3[i])
        while j <= size:
            if v < tree[j]:
                tree[j] = v
            j += j & (-j)
    mask = np.zeros(n, dtype=bool)
    mask[order[keep_sorted]] = True
    return mask


def _mask_sorted_chunked(objs: np.ndarray) -> np.ndarray:
    n, m = objs.shape
    order = np.lexsort(objs.T[::-1])
    sorted_objs = objs[order]
    front = np.empty((0, m))
    kept_positions: list[np.ndarray] = []
    chunk, slab = 512, 8192
    for start in range(0, n, chunk):
        block = sorted_objs[start : start + chunk]
        alive = np.ones(len(block), dtype=bool)
        # a dominator always lex-sorts before its victim, so earlier chunks
        # (consolidated in `front`) are the only external threats
        for fs in range(0, len(front), slab):
            sub = block[alive]
            if not len(sub):
                break
            ref = front[fs : fs + slab]
            le = np.all(ref[None, :, :] <= sub[:, None, :], axis=2)
            lt = np.any(ref[None, :, :] < sub[:, None, :], axis=2)
            dup = np.all(np.abs(ref[None, :, :] - sub[:, None, :]) <= DUPLICATE_TOL, axis=2)
            beaten = np.any((le & lt) | dup, axis=1)
            alive[np.nonzero(alive)[0][beaten]] = False
        if alive.any():
            sub = block[alive]
            le = np.all(sub[:, None, :] <= sub[None, :, :], axis=2)
            lt = np.any(sub[:, None, :] < sub[None, :, :], axis=2)
            beaten = np.any(le & lt, axis=0)
            dup = np.all(np.abs(sub[:, None, :] - sub[None, :, :]) <= DUPLICATE_TOL, axis=2)
            earlier_dup = np.tril(dup, k=-1)  # duplicates keep the lex-first member
            beaten |= np.any(earlier_dup & ~beaten[None, :], axis=1)
            local = np.nonzero(alive)[0][~beaten]
            kept_positions.append(start + local)
            front = np.vstack([front, block[local]])
    mask = np.zeros(n, dtype=bool)
    if kept_positions:
        mask[order[np.concatenate(kept_positions)]] = True
    return mask


def pareto_filter(objectives, inputs=None, senses=None) -> ParetoFront:
    """Extract the non-dominated subset of a point set.

    ``objectives`` is (n, M); ``inputs`` optionally (n, D). If ``senses`` is
    given the objectives are converted to minimization convention first.
    Empty input yields an empty front.
    """
    objs = np.asarray(objectives, dtype=float)
    if objs.size == 0:
        return ParetoFront(np.empty((0, 0)), None)
    objs = np.atleast_2d(objs)
    if senses is not None:
        objs = to_minimization(objs, senses)
    mask = _non_dominated_mask(objs)
    kept_inputs = None
    if inputs is not None:
        kept_inputs = np.atleast_2d(np.asarray(inputs, dtype=float))[mask]
    return ParetoFront(objs[mask], kept_inputs)


def _front_objs(front) -> np.ndarray:
    if isinstance(front, ParetoFront):
        return front.objectives
    return np.atleast_2d(np.asarray(front, dtype=float))


def _nearest_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from each row of ``a`` to its nearest row of ``b``, chunked."""
    if len(a) * len(b) <= 4_000_000:
        return np.min(cdist(a, b), axis=1)
    out = np.empty(len(a))
    step = max(1, 4_000_000 // len(b))
    for i in range(0, len(a), step):
        out[i : i + step] = np.min(cdist(a[i : i + step], b), axis=1)
    return out


def gd(front, reference) -> float:
    """Mean distance from each front member to its nearest reference member."""
    objs = _front_objs(front)
    ref = _front_objs(reference)
    if objs.size == 0:
        raise ValueError("gd: undefined metric: empty front")
    if ref.size == 0:
        raise ValueError("gd: undefined metric: empty reference front")
    if objs.shape[1] != ref.shape[1]:
        raise ValueError("gd: dimension mismatch between front and reference")
    return float(np.mean(_nearest_distances(objs, ref)))


def igd(front, reference) -> float:
    """Mean distance from each reference member to its nearest front member."""
    objs = _front_objs(front)
    ref = _front_objs(reference)
    if objs.size == 0:
        raise ValueError("igd: undefined metric: empty front")
    if ref.size == 0:
        raise ValueError("igd: undefined metric: empty reference front")
    if objs.shape[1] != ref.shape[1]:
        raise ValueError("igd: dimension mismatch between front and reference")
    return float(np.mean(_nearest_distances(ref, objs)))


def _hv_sweep_2d(points: np.ndarray, ref: np.ndarray) -> float:
    """Exact 2-D dominated area by a left-to-right sweep.

    Points may contain dominated members and duplicates; every point must be
    componentwise <= ref.
    """
    order = np.argsort(points[:, 0], kind="stable")
    xs = points[order, 0]
    ymin = np.minimum.accumulate(points[order, 1])
    widths = np.diff(np.append(xs, ref[0]))
    return float(np.sum(widths * (ref[1] - ymin)))


def hv_sweep_2d_batch(point_sets: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Vectorized 2-D dominated area for a batch of point sets.

    ``point_sets`` is (S, n, 2). Points are clipped to the reference point, so
    members beyond it simply contribute nothing.
    """
    pts = np.minimum(point_sets, ref)
    order = np.argsort(pts[:, :, 0], axis=1, kind="stable")
    xs = np.take_along_axis(pts[:, :, 0], order, axis=1)
    ys = np.take_along_axis(pts[:, :, 1], order, axis=1)
    ymin = np.minimum.accumulate(ys, axis=1)
    upper = np.concatenate([xs[:, 1:], np.full((len(pts), 1), ref[0])], axis=1)
    return np.sum((upper - xs) * (ref[1] - ymin), axis=1)


def _hv_wfg(points: np.ndarray, ref: np.ndarray) -> float:
    """Exact hypervolume by recursive exclusive-contribution slicing."""
    pts = points[_non_dominated_mask(points)]
    # sorting by the first objective keeps the limited sets small
    pts = pts[np.argsort(pts[:, 0], kind="stable")[::-1]]

    def inclusive(p):
        return float(np.prod(ref - p))

    def recurse(pl):
        if len(pl) == 0:
            return 0.0
        if len(pl) == 1:
            return inclusive(pl[0])
        if pl.shape[1] == 2:
            return _hv_sweep_2d(pl, ref)
        total = 0.0
        for i in range(len(pl)):
            limited = np.maximum(pl[i + 1 :], pl[i])
            if len(limited):
                limited = limited[_non_dominated_mask(limited)]
            total += inclusive(pl[i]) - recurse(limited)
        return total

    return recurse(pts)


def qmc_hypervolume(
    front,
    ref_point,
    n_samples: int = _HV_QMC_SAMPLES,
    seed: int = 0,
) -> tuple[float, float]:
    """Quasi-MC hypervolume estimate with a standard error.

    Uses independently scrambled low-discrepancy replicates over the bounding
    box [componentwise min of front, ref]; the spread across replicates gives
    the reported standard error.
    """
    objs = _front_objs(front)
    ref = np.asarray(ref_point, dtype=float)
    lo = objs.min(axis=0)
    box = float(np.prod(ref - lo))
    if box == 0.0:
        return 0.0, 0.0
    per_rep = max(1, n_samples // _HV_QMC_REPLICATES)
    estimates = []
    for i in range(_HV_QMC_REPLICATES):
        sampler = qmc.Sobol(d=objs.shape[1], scramble=True, seed=seed + i)
        u = sampler.random(per_rep)
        pts = lo + u * (ref - lo)
        dominated = np.zeros(per_rep, dtype=bool)
        for p in objs:
            dominated |= np.all(p <= pts, axis=1)
        estimates.append(box * dominated.mean())
    estimates = np.asarray(estimates)
    se = float(estimates.std(ddof=1) / math.sqrt(len(estimates)))
    return float(estimates.mean()), se


def hypervolume(front, ref_point, seed: int = 0) -> float:
    """Lebesgue measure of the region dominated by the front up to ``ref_point``.

    Exact for M <= 4 (2-D sweep, recursive slicing for 3..4); quasi-MC with
    2^16 samples for M >= 5 (see ``qmc_hypervolume`` for the standard error).
    Every front member must weakly dominate the reference point; if no member
    does, the volume is 0.0; a mixed configuration is rejected.
    """
    objs = _front_objs(front)
    ref = np.asarray(ref_point, dtype=float)
    if objs.size == 0:
        raise ValueError("hypervolume: undefined metric: empty front")
    if objs.shape[1] != ref.shape[0]:
        raise ValueError("hypervolume: dimension mismatch with reference point")
    valid = np.all(objs <= ref, axis=1)
    if not valid.any():
        return 0.0
    if not valid.all():
        raise ValueError("invalid reference point")
    m = objs.shape[1]
    if m == 1:
        return float(ref[0] - objs[:, 0].min())
    if m == 2:
        return _hv_sweep_2d(objs, ref)
    if m <= _HV_EXACT_MAX_DIM:
        return _hv_wfg(objs, ref)
    return qmc_hypervolume(objs, ref, seed=seed)[0]


def spacing(front) -> float | None:
    """Schott spacing: spread of nearest-neighbour distances within the front.

    Returns None for fronts smaller than 2 members (serialized as null,
    rendered "N/A" in tables); exactly 0.0 for two members.
    """
    objs = _front_objs(front)
    n = 0 if objs.size == 0 else len(objs)
    if n < 2:
        return None
    dist = cdist(objs, objs)
    np.fill_diagonal(dist, np.inf)
    d = dist.min(axis=1)
    return float(np.sqrt(np.sum((d - d.mean()) ** 2) / (n - 1)))


def max_spread(front) -> float:
    """Diagonal extent of the front's bounding box in objective space."""
    objs = _front_objs(front)
    if objs.size == 0:
        raise ValueError("max_spread: undefined metric: empty front")
    ranges = objs.max(axis=0) - objs.min(axis=0)
    return float(np.sqrt(np.sum(ranges**2)))


def default_reference_point(front, reference) -> np.ndarray:
    """Componentwise nadir of (front u reference) plus 10% of each range.

    The offset has an absolute floor of 1e-6 so degenerate ranges still yield
    a strictly dominated reference point.
    """
    allpts = np.vstack([_front_objs(front), _front_objs(reference)])
    nadir = allpts.max(axis=0)
    offset = np.maximum(0.1 * (nadir - allpts.min(axis=0)), 1e-6)
    return nadir + offset


@dataclass
class MetricsReport:
    """The five front metrics plus the front size and the r used for HV."""

    gd: float | None
    igd: float | None
    hv: float | None
    spacing: float | None
    max_spread: float | None
    pareto_size: int
    reference_point: list[float] | None = None
    hv_standard_error: float | None = None
    warning: str | None = None

    def to_wire(self) -> dict:
        """Service/report JSON shape; key names are part of the contract."""
        doc = {
            "metrics": {
                "generational_distance_gd": self.gd,
                "hypervolume_hv": self.hv,
                "inverted_generational_distance_igd": self.igd,
                "maximum_spread_ms": self.max_spread,
                "spacing_sp": self.spacing,
            },
            "pareto_size": self.pareto_size,
            "status": "success",
        }
        if self.warning is not None:
            doc["warning"] = self.warning
        return doc

    @classmethod
    def from_wire(cls, doc: dict) -> "MetricsReport":
        m = doc.get("metrics") or {}
        return cls(
            gd=m.get("generational_distance_gd"),
            igd=m.get("inverted_generational_distance_igd"),
            hv=m.get("hypervolume_hv"),
            spacing=m.get("spacing_sp"),
            max_spread=m.get("maximum_spread_ms"),
            pareto_size=int(doc.get("pareto_size", 0)),
            warning=doc.get("warning"),
        )


def metrics_report(front, reference, ref_point=None, clip_hv: bool = False) -> MetricsReport:
    """Assemble GD, IGD, HV, SP, and MS against a reference front.

    When ``ref_point`` is omitted it defaults to ``default_reference_point``
    and is recorded in the report. With ``clip_hv`` the hypervolume counts
    only members that weakly dominate the reference point (scoring mode for
    arbitrary run fronts); without it an invalid reference point is an
    error. Metric failures are re-raised with the metric name attached.
    """
    objs = _front_objs(front)
    ref = _front_objs(reference)
    if ref_point is None:
        ref_point = default_reference_point(objs, ref)
    ref_point = np.asarray(ref_point, dtype=float)

    def run(name, fn, *args):
        try:
            return fn(*args)
        except ValueError as exc:
            msg = str(exc)
            if msg.startswith(f"{name}:"):
                raise
            raise ValueError(f"{name}: {msg}") from exc

    hv_err = None
    m = objs.shape[1] if objs.size else 0
    hv_objs = objs
    if clip_hv and objs.size:
        inside = objs[np.all(objs <= ref_point, axis=1)]
        hv_objs = inside if len(inside) else None
    hv_value = 0.0 if hv_objs is None else run("hypervolume", hypervolume, hv_objs, ref_point)
    if m > _HV_EXACT_MAX_DIM and hv_objs is not None and hv_objs.size:
        hv_value, hv_err = qmc_hypervolume(hv_objs, ref_point)
    return MetricsReport(
        gd=run("gd", gd, objs, ref),
        igd=run("igd", igd, objs, ref),
        hv=hv_value,
        spacing=run("spacing", spacing, objs),
        max_spread=run("max_spread", max_spread, objs),
        pareto_size=len(objs),
        reference_point=[float(v) for v in ref_point],
        hv_standard_error=hv_err,
    )


def save_front_csv(front: ParetoFront, path) -> None:
    """Write one row per member with columns f1..fM and optional x1..xD."""
    objs = front.objectives
    m = objs.shape[1] if objs.size else 0
    header = [f"f{i + 1}" for i in range(m)]
    if front.inputs is not None:
        header += [f"x{i + 1}" for i in range(front.inputs.shape[1])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(len(front)):
            row = [repr(float(v)) for v in objs[i]]
            if front.inputs is not None:
                row += [repr(float(v)) for v in front.inputs[i]]
            writer.writerow(row)


def load_front_csv(path) -> ParetoFront:
    """Read a front written by ``save_front_csv``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        f_cols = [i for i, name in enumerate(header) if name.startswith("f")]
        x_cols = [i for i, name in enumerate(header) if name.startswith("x")]
        objs, ins = [], []
        for row in reader:
            if not row:
                continue
            objs.append([float(row[i]) for i in f_cols])
            if x_cols:
                ins.append([float(row[i]) for i in x_cols])
    return ParetoFront(np.asarray(objs), np.asarray(ins) if ins else None)


def report_to_json(report: MetricsReport, path=None) -> str:
    """Serialize a report to the wire JSON document (null SP stays null)."""
    text = json.dumps(report.to_wire())
    if path is not None:
        Path(path).write_text(text + "\n")
    return text
