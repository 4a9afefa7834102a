"""Fixed-budget, fixed-seed campaign runner and strategy comparison.

Every strategy draws the identical seeded initialization, is charged one
budget unit per ground-truth evaluation (audited by a call counter), and is
scored with the same metrics against the problem's stored reference front.
Runs persist as an append-only JSON-lines trial file plus a summary JSON;
the semantic payload (trials, fronts, metrics; not wall-clock timings) is
covered by a content digest so replays can be checked bitwise.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .acquisition import (
    DEFAULT_N_MC,
    AcquisitionContext,
    baseline_suggest,
    optimize_qehvi,
)
from .gp_surrogate import FitConfig, fit_gp
from .inverse_regressor import RegressorModel, predict
from .pareto_metrics import (
    MetricsReport,
    ParetoFront,
    hypervolume,
    metrics_report,
    pareto_filter,
    to_minimization,
)
from .problem_suite import TARGET_MATCH, ProblemSpec, get_problem, target_match_problem

STRATEGIES = ("qehvi", "baseline", "random", "inverse-regressor")

SUMMARY_FORMAT = "run-summary"
SUMMARY_VERSION = 1


@dataclass(frozen=True)
class RunConfig:
    problem: str
    strategy: str
    budget: int = 60
    init_size: int = 10
    q: int = 2
    seed: int = 0
    n_mc: int = DEFAULT_N_MC
    kernel: str = "matern52"
    n_starts: int = 20
    max_steps: int = 200
    fit_restarts: int = 8
    fit_max_evals: int = 200
    target: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy: {self.strategy!r}; choose from {STRATEGIES}")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")
        if self.strategy != "inverse-regressor":
            if not (1 <= self.init_size <= self.budget):
                raise ValueError("init_size must satisfy 1 <= init_size <= budget")
        if self.q < 1:
            raise ValueError("q must be >= 1")
        if self.target is not None:
            object.__setattr__(self, "target", tuple(float(v) for v in self.target))


@dataclass(frozen=True)
class TrialRecord:
    iteration: int
    x: np.ndarray
    y: np.ndarray  # raw evaluator outputs
    feasible: bool
    wall_time_ms: float

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "y", np.atleast_1d(np.asarray(self.y, dtype=float)))


@dataclass
class RunLog:
    config: RunConfig
    trials: list[TrialRecord]
    cumulative_hv: list[float]
    final_front: ParetoFront
    timings: dict
    metrics: MetricsReport | None = None
    evaluator_calls: int = 0


class _CountingEvaluator:
    """Wraps a problem evaluator so every ground-truth call is audited."""

    def __init__(self, evaluate):
        self._evaluate = evaluate
        self.calls = 0

    def __call__(self, x):
        self.calls += 1
        return self._evaluate(x)


def _resolve_problem(cfg: RunConfig) -> ProblemSpec:
    problem = get_problem(cfg.problem, seed=cfg.seed)
    if cfg.target is not None and problem.mode == TARGET_MATCH:
        problem = target_match_problem(problem, np.asarray(cfg.target), seed=cfg.seed)
    return problem


def dominated_hypervolume(points_min: np.ndarray, ref_point: np.ndarray) -> float:
    """HV of the subset weakly dominating the reference point; 0 if none."""
    points_min = np.atleast_2d(np.asarray(points_min, dtype=float))
    if points_min.size == 0:
        return 0.0
    inside = points_min[np.all(points_min <= ref_point, axis=1)]
    if len(inside) == 0:
        return 0.0
    return hypervolume(inside, ref_point)


def _iteration_seeds(seed: int, n: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(n)
    return [int(c.generate_state(1)[0]) for c in children]


def _random_feasible(constraints, q: int, rng: np.random.Generator) -> np.ndarray:
    lo, hi = constraints.box[:, 0], constraints.box[:, 1]
    picked = []
    for _ in range(1000):
        x = rng.uniform(lo, hi)
        if constraints.is_feasible(x, tol=1e-6):
            picked.append(x)
            if len(picked) == q:
                return np.vstack(picked)
    while len(picked) < q:
        proj = constraints.project(rng.uniform(lo, hi))
        if not constraints.is_feasible(proj, tol=1e-6):
            raise ValueError("infeasible search region")
        picked.append(proj)
    return np.vstack(picked)


def run_bo(cfg: RunConfig, problem: ProblemSpec | None = None) -> RunLog:
    """One seeded, budgeted campaign of an iterative strategy.

    Initialization: ``init_size`` quasi-random feasible points (identical for
    every strategy at a fixed seed). Each iteration refits one GP per
    objective on all observations, selects the next batch, evaluates it with
    the ground-truth evaluator, and appends to the log.
    """
    if cfg.strategy == "inverse-regressor":
        raise ValueError("run_bo handles iterative strategies; use run_generative")
    problem = problem if problem is not None else _resolve_problem(cfg)
    evaluator = _CountingEvaluator(problem.evaluate)
    constraints = problem.constraints
    trials: list[TrialRecord] = []
    cumulative = []
    timings = {"fit_ms": 0.0, "acquisition_ms": 0.0, "evaluation_ms": 0.0}

    def record(iteration, x):
        t0 = time.perf_counter()
        y, feasible = evaluator(x)
        dt = (time.perf_counter() - t0) * 1000.0
        timings["evaluation_ms"] += dt
        trials.append(TrialRecord(iteration, x, y, feasible, dt))

    def feasible_min_objectives():
        ys = [problem.to_min(t.y) for t in trials if t.feasible]
        return np.vstack(ys) if ys else np.empty((0, problem.n_objectives))

    init = constraints.sample_feasible(min(cfg.init_size, cfg.budget), seed=cfg.seed)
    for x in init:
        record(0, x)
    cumulative.append(dominated_hypervolume(feasible_min_objectives(), problem.reference_point))

    per_iter = 1 if cfg.strategy == "baseline" else cfg.q
    max_iters = max(0, (cfg.budget - len(trials)) // per_iter)
    seeds = _iteration_seeds(cfg.seed, max_iters + 1)
    target = None
    if cfg.strategy == "baseline":
        target = (
            np.asarray(cfg.target, dtype=float)
            if cfg.target is not None and problem.mode != TARGET_MATCH
            else problem.reference_front.min(axis=0)  # ideal point
        )

    for it in range(1, max_iters + 1):
        iseed = seeds[it - 1]
        if cfg.strategy == "random":
            rng = np.random.default_rng(iseed)
            batch = _random_feasible(constraints, cfg.q, rng)
        else:
            X = np.vstack([t.x for t in trials])
            Ymin = np.vstack([problem.to_min(t.y) for t in trials])
            t0 = time.perf_counter()
            models = tuple(
                fit_gp(
                    X,
                    Ymin[:, m],
                    FitConfig(
                        kernel_family=cfg.kernel,
                        bounds=constraints.box,
                        n_restarts=cfg.fit_restarts,
                        max_evals=cfg.fit_max_evals,
                        seed=iseed + m,
                    ),
                )
                for m in range(problem.n_objectives)
            )
            timings["fit_ms"] += (time.perf_counter() - t0) * 1000.0
            front = pareto_filter(feasible_min_objectives()).objectives
            ctx = AcquisitionContext(
                objective_models=models,
                bounds=constraints.box,
                ref_point=problem.reference_point,
                front=front,
                constraints=constraints,
                n_mc=cfg.n_mc,
            )
            t0 = time.perf_counter()
            if cfg.strategy == "qehvi":
                batch = optimize_qehvi(
                    ctx, cfg.q, seed=iseed, n_starts=cfg.n_starts, max_steps=cfg.max_steps
                ).points
            else:
                batch = baseline_suggest(
                    ctx, target, seed=iseed, n_starts=cfg.n_starts, max_steps=cfg.max_steps
                ).points
            timings["acquisition_ms"] += (time.perf_counter() - t0) * 1000.0
        for x in batch:
            record(it, x)
        cumulative.append(
            dominated_hypervolume(feasible_min_objectives(), problem.reference_point)
        )

    log = _finalize_log(cfg, problem, trials, cumulative, timings, evaluator.calls)
    return log


def reference_targets(problem: ProblemSpec, k: int, seed: int = 0) -> np.ndarray:
    """Desired-property profiles sampled along the reference front (raw units)."""
    front = problem.reference_front
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(front), size=k, replace=k > len(front))
    # minimization-convention rows back to raw senses (negation is involutive)
    return to_minimization(front[idx], problem.senses)


def run_generative(problem: ProblemSpec, model: RegressorModel, targets) -> RunLog:
    """Zero-shot path: one forward pass and one evaluation per target."""
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    evaluator = _CountingEvaluator(problem.evaluate)
    trials: list[TrialRecord] = []
    cumulative = []
    timings = {"fit_ms": 0.0, "acquisition_ms": 0.0, "evaluation_ms": 0.0, "inference_ms": 0.0}
    cfg = RunConfig(
        problem=problem.problem_id,
        strategy="inverse-regressor",
        budget=len(targets),
        init_size=0,
        q=1,
    )
    for i, target in enumerate(targets):
        t0 = time.perf_counter()
        x = predict(model, target)
        infer_ms = (time.perf_counter() - t0) * 1000.0
        timings["inference_ms"] += infer_ms
        t1 = time.perf_counter()
        y, feasible = evaluator(x)
        timings["evaluation_ms"] += (time.perf_counter() - t1) * 1000.0
        trials.append(TrialRecord(i, x, y, feasible, infer_ms))
        ys = [problem.to_min(t.y) for t in trials if t.feasible]
        pts = np.vstack(ys) if ys else np.empty((0, problem.n_objectives))
        cumulative.append(dominated_hypervolume(pts, problem.reference_point))
    return _finalize_log(cfg, problem, trials, cumulative, timings, evaluator.calls)


def _finalize_log(cfg, problem, trials, cumulative, timings, calls) -> RunLog:
    feasible = [t for t in trials if t.feasible]
    if feasible:
        front = pareto_filter(
            np.vstack([problem.to_min(t.y) for t in feasible]),
            inputs=np.vstack([t.x for t in feasible]),
        )
    else:
        front = ParetoFront(np.empty((0, problem.n_objectives)))
    log = RunLog(
        config=cfg,
        trials=trials,
        cumulative_hv=cumulative,
        final_front=front,
        timings=timings,
        evaluator_calls=calls,
    )
    log.metrics = evaluate_run(log, problem)
    return log


def evaluate_run(log: RunLog, problem: ProblemSpec) -> MetricsReport:
    """Score a run: filter its feasible trials, report against the reference.

    Zero feasible trials yield a null report with a warning instead of an
    error, so failed campaigns still serialize.
    """
    if not log.trials:
        raise ValueError("empty run log")
    feasible = [t for t in log.trials if t.feasible]
    if not feasible:
        return MetricsReport(
            gd=None,
            igd=None,
            hv=None,
            spacing=None,
            max_spread=None,
            pareto_size=0,
            warning="no feasible trials",
        )
    front = pareto_filter(np.vstack([problem.to_min(t.y) for t in feasible]))
    return metrics_report(
        front.objectives, problem.reference_front, problem.reference_point, clip_hv=True
    )


# ---------------------------------------------------------------------------
# comparison tables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ComparisonRow:
    rank: int
    strategy: str
    gd: float | None
    igd: float | None
    sp: float | None
    ms: float | None
    hv: float | None
    pareto_size: int
    problem: str


@dataclass(frozen=True)
class ComparisonTable:
    rows: tuple[ComparisonRow, ...]

    def to_text(self) -> str:
        header = ["rank", "strategy", "gd", "igd", "sp", "ms", "hv", "pareto_size", "problem"]
        body = [
            [
                str(r.rank),
                r.strategy,
                _cell(r.gd),
                _cell(r.igd),
                _cell(r.sp),
                _cell(r.ms),
                _cell(r.hv),
                str(r.pareto_size),
                r.problem,
            ]
            for r in self.rows
        ]
        widths = [max(len(h), *(len(row[i]) for row in body)) if body else len(h) for i, h in enumerate(header)]
        lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
        for row in body:
            lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
        return "\n".join(lines)

    def to_csv(self, path) -> None:
        import csv as _csv

        with open(path, "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(
                ["rank", "strategy", "gd", "igd", "sp", "ms", "hv", "pareto_size", "problem"]
            )
            for r in self.rows:
                writer.writerow(
                    [r.rank, r.strategy, _cell(r.gd), _cell(r.igd), _cell(r.sp),
                     _cell(r.ms), _cell(r.hv), r.pareto_size, r.problem]
                )

    def to_json(self, path=None) -> str:
        doc = [asdict(r) for r in self.rows]
        text = json.dumps(doc)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def _cell(value) -> str:
    return "N/A" if value is None else repr(float(value))


def compare(reports: list[tuple[str, MetricsReport]], problem_id: str = "") -> ComparisonTable:
    """Rank strategies ascending by GD (ties: IGD, then strategy name)."""
    if not reports:
        raise ValueError("at least one report is required")

    def key(item):
        _, rep = item
        gd = rep.gd if rep.gd is not None else np.inf
        igd = rep.igd if rep.igd is not None else np.inf
        return (gd, igd, item[0])

    ordered = sorted(reports, key=key)
    rows = tuple(
        ComparisonRow(
            rank=i + 1,
            strategy=name,
            gd=rep.gd,
            igd=rep.igd,
            sp=rep.spacing,
            ms=rep.max_spread,
            hv=rep.hv,
            pareto_size=rep.pareto_size,
            problem=problem_id,
        )
        for i, (name, rep) in enumerate(ordered)
    )
    return ComparisonTable(rows=rows)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def run_basename(cfg: RunConfig) -> str:
    return f"{cfg.problem}__{cfg.strategy}__seed{cfg.seed}"


def canonical_digest(log: RunLog) -> str:
    """Content hash of the semantic payload; wall-clock timings excluded."""
    payload = {
        "config": asdict(log.config),
        "trials": [
            {
                "iteration": t.iteration,
                "x": [repr(float(v)) for v in t.x],
                "y": [repr(float(v)) for v in t.y],
                "feasible": t.feasible,
            }
            for t in log.trials
        ],
        "cumulative_hv": [repr(float(v)) for v in log.cumulative_hv],
        "final_front": [[repr(float(v)) for v in row] for row in log.final_front.objectives],
        "evaluator_calls": log.evaluator_calls,
        "metrics": log.metrics.to_wire() if log.metrics else None,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def save_runlog(log: RunLog, out_dir) -> tuple[Path, Path]:
    """One JSON-lines trial file plus a summary JSON; returns both paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    base = run_basename(log.config)
    trials_path = out_dir / f"{base}.jsonl"
    with open(trials_path, "w") as fh:
        for t in log.trials:
            fh.write(
                json.dumps(
                    {
                        "iteration": t.iteration,
                        "x": t.x.tolist(),
                        "y": t.y.tolist(),
                        "feasible": t.feasible,
                        "wall_time_ms": t.wall_time_ms,
                    }
                )
                + "\n"
            )
    summary_path = out_dir / f"{base}.summary.json"
    summary = {
        "format": SUMMARY_FORMAT,
        "version": SUMMARY_VERSION,
        "config": asdict(log.config),
        "cumulative_hv": log.cumulative_hv,
        "final_front": {
            "objectives": log.final_front.objectives.tolist(),
            "inputs": None
            if log.final_front.inputs is None
            else log.final_front.inputs.tolist(),
        },
        "timings": log.timings,
        "evaluator_calls": log.evaluator_calls,
        "metrics": log.metrics.to_wire() if log.metrics else None,
        "digest": canonical_digest(log),
    }
    summary_path.write_text(json.dumps(summary) + "\n")
    return trials_path, summary_path


def load_runlog(summary_path) -> RunLog:
    summary_path = Path(summary_path)
    doc = json.loads(summary_path.read_text())
    if doc.get("format") != SUMMARY_FORMAT:
        raise ValueError(f"not a {SUMMARY_FORMAT} document")
    cfg_doc = dict(doc["config"])
    if cfg_doc.get("target") is not None:
        cfg_doc["target"] = tuple(cfg_doc["target"])
    cfg = RunConfig(**cfg_doc)
    trials_path = summary_path.with_name(f"{run_basename(cfg)}.jsonl")
    trials = []
    with open(trials_path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            trials.append(
                TrialRecord(
                    iteration=rec["iteration"],
                    x=np.asarray(rec["x"], dtype=float),
                    y=np.asarray(rec["y"], dtype=float),
                    feasible=rec["feasible"],
                    wall_time_ms=rec["wall_time_ms"],
                )
            )
    front_doc = doc["final_front"]
    front = ParetoFront(
        np.asarray(front_doc["objectives"], dtype=float),
        None if front_doc["inputs"] is None else np.asarray(front_doc["inputs"], dtype=float),
    )
    metrics = MetricsReport.from_wire(doc["metrics"]) if doc.get("metrics") else None
    return RunLog(
        config=cfg,
        trials=trials,
        cumulative_hv=list(doc["cumulative_hv"]),
        final_front=front,
        timings=dict(doc["timings"]),
        metrics=metrics,
        evaluator_calls=int(doc["evaluator_calls"]),
    )
