"""Benchmark problems: synthetic constrained MOO suites and dataset-backed ones.

Synthetic problems carry analytic or brute-forced reference fronts so every
strategy is scored against the same ground truth. Dataset problems freeze a
GP-mean simulator fitted once on the full dataset, making the evaluator
deterministic for all strategies. Reference fronts are always stored in
minimization convention.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .gp_surrogate import FitConfig, fit_gp, posterior_batch
from .pareto_metrics import (
    MAXIMIZE,
    MINIMIZE,
    default_reference_point,
    pareto_filter,
    to_minimization,
)

OPTIMIZE = "optimize"
TARGET_MATCH = "target-match"

_REJECTION_BUDGET = 1000


@dataclass(frozen=True)
class LinearConstraint:
    """coeffs . x (<=|==) bound, with a tolerance for equalities."""

    coeffs: np.ndarray
    bound: float
    relation: str = "<="
    tol: float = 1e-6

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float))
        if self.relation not in ("<=", "=="):
            raise ValueError(f"unknown relation: {self.relation!r}")

    def violation(self, x: np.ndarray) -> float:
        """Positive when violated; 0 inside the feasible set."""
        v = float(self.coeffs @ np.asarray(x, dtype=float) - self.bound)
        if self.relation == "==":
            return max(abs(v) - self.tol, 0.0)
        return max(v, 0.0)


@dataclass(frozen=True)
class ConstraintSpec:
    """Box bounds plus linear constraints over named components."""

    box: np.ndarray  # (D, 2)
    linear: tuple[LinearConstraint, ...] = ()
    names: tuple[str, ...] = ()

    def __post_init__(self):
        box = np.asarray(self.box, dtype=float)
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "linear", tuple(self.linear))
        if np.any(box[:, 0] >= box[:, 1]):
            raise ValueError("every lower bound must be strictly below its upper bound")
        if not self.names:
            object.__setattr__(
                self, "names", tuple(f"x{i + 1}" for i in range(len(box)))
            )
        if len(self.names) != len(box):
            raise ValueError("one name per dimension required")

    @property
    def dim(self) -> int:
        return len(self.box)

    def feasible_mask(self, X, tol: float = 1e-9) -> np.ndarray:
        """Vectorized feasibility over rows of ``X`` (n, D)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        ok = np.all(X >= self.box[:, 0] - tol, axis=1) & np.all(
            X <= self.box[:, 1] + tol, axis=1
        )
        for c in self.linear:
            resid = X @ c.coeffs - c.bound
            if c.relation == "==":
                ok &= np.abs(resid) <= c.tol + tol
            else:
                ok &= resid <= tol
        return ok

    def is_feasible(self, x, tol: float = 1e-9) -> bool:
        return bool(self.feasible_mask(np.atleast_2d(x), tol=tol)[0])

    def project(self, x, max_iter: int = 200) -> np.ndarray:
        """Alternating projection onto box and linear constraints.

        Accepts a single point (D,) or a batch (n, D); idempotent on feasible
        points, converges for any consistent set of convex constraints.
        """
        single = np.asarray(x, dtype=float).ndim == 1
        X = np.atleast_2d(np.asarray(x, dtype=float)).copy()
        lo, hi = self.box[:, 0], self.box[:, 1]
        for _ in range(max_iter):
            X = np.clip(X, lo, hi)
            if not self.linear:
                break
            done = True
            for c in self.linear:
                resid = X @ c.coeffs - c.bound
                if c.relation == "<=":
                    resid = np.maximum(resid, 0.0)
                if np.any(np.abs(resid) > 1e-12):
                    done = False
                X = X - np.outer(resid / float(c.coeffs @ c.coeffs), c.coeffs)
            if done:
                break
        X = np.clip(X, lo, hi)
        return X[0] if single else X

    def sample_feasible(self, n: int, seed: int = 0) -> np.ndarray:
        """Seeded quasi-random feasible points: rejection first, then projection."""
        sampler = qmc.Sobol(d=self.dim, scramble=True, seed=seed)
        lo, hi = self.box[:, 0], self.box[:, 1]
        batch_size = 2 ** int(np.ceil(np.log2(max(n, 64))))
        accepted: list[np.ndarray] = []
        rejected: list[np.ndarray] = []
        n_accepted = 0
        drawn = 0
        while n_accepted < n and drawn < max(_REJECTION_BUDGET, 4 * n):
            batch = lo + sampler.random(batch_size) * (hi - lo)
            drawn += len(batch)
            mask = self.feasible_mask(batch)
            accepted.append(batch[mask])
            rejected.append(batch[~mask])
            n_accepted += int(mask.sum())
            if n_accepted == 0 and drawn >= _REJECTION_BUDGET:
                break  # rejection hopeless (e.g. equality constraints)
        if n_accepted < n and rejected:
            projected = self.project(np.vstack(rejected))
            ok = self.feasible_mask(projected, tol=1e-6)
            accepted.append(projected[ok][: n - n_accepted])
            n_accepted += int(ok.sum())
        rows = [a for a in accepted if len(a)]
        if not rows or n_accepted < n:
            raise ValueError("infeasible search region")
        return np.vstack(rows)[:n]

    def normalized(self) -> "ConstraintSpec":
        """The same constraints expressed over the unit cube."""
        lo, span = self.box[:, 0], self.box[:, 1] - self.box[:, 0]
        linear = tuple(
            LinearConstraint(
                coeffs=c.coeffs * span,
                bound=c.bound - float(c.coeffs @ lo),
                relation=c.relation,
                tol=c.tol,
            )
            for c in self.linear
        )
        return ConstraintSpec(
            box=np.column_stack([np.zeros(self.dim), np.ones(self.dim)]),
            linear=linear,
            names=self.names,
        )


@dataclass(frozen=True)
class ProblemSpec:
    """A fully specified benchmark problem with a deterministic evaluator."""

    problem_id: str
    constraints: ConstraintSpec
    senses: tuple[str, ...]
    evaluate: Callable[[np.ndarray], tuple[np.ndarray, bool]] = field(repr=False)
    reference_front: np.ndarray  # (n, M), minimization convention
    reference_point: np.ndarray  # (M,)
    feasible_witness: np.ndarray
    mode: str = OPTIMIZE
    objective_names: tuple[str, ...] = ()
    analytic_front: Callable[[int], np.ndarray] | None = field(repr=False, default=None)
    dataset_hash: str | None = None

    def __post_init__(self):
        object.__setattr__(
            self, "reference_front", np.atleast_2d(np.asarray(self.reference_front, float))
        )
        object.__setattr__(
            self, "reference_point", np.asarray(self.reference_point, dtype=float)
        )
        if not self.objective_names:
            object.__setattr__(
                self,
                "objective_names",
                tuple(f"f{i + 1}" for i in range(len(self.senses))),
            )

    @property
    def dim(self) -> int:
        return self.constraints.dim

    @property
    def n_objectives(self) -> int:
        return len(self.senses)

    def to_min(self, y) -> np.ndarray:
        """Convert raw objective values to minimization convention."""
        return to_minimization(y, self.senses)


def _attach_reference(problem: ProblemSpec, resolution: int, seed: int) -> ProblemSpec:
    front = true_front(problem, resolution, seed=seed)
    ref_point = default_reference_point(front, front)
    return replace(problem, reference_front=front, reference_point=ref_point)


def _quadratic_biobj(x: np.ndarray) -> np.ndarray:
    return np.array([x[0] ** 2 + x[1] ** 2, (x[0] - 1.0) ** 2 + x[1] ** 2])


def _biobj_quadratic_front(resolution: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, resolution)
    return np.column_stack([t**2, (1.0 - t) ** 2])


def _constrained_biobj_front(resolution: int) -> np.ndarray:
    # Pareto set: the constraint boundary x = (t, 0.25 - t) for t in
    # [0.125, 0.25], then the segment x = (t, 0) for t in [0.25, 1].
    n_bnd = max(2, round(resolution * 0.125 / 0.875))
    n_seg = max(2, resolution - n_bnd)
    tb = np.linspace(0.125, 0.25, n_bnd)
    boundary = np.column_stack(
        [tb**2 + (0.25 - tb) ** 2, (tb - 1.0) ** 2 + (0.25 - tb) ** 2]
    )
    ts = np.linspace(0.25, 1.0, n_seg)[1:]
    segment = np.column_stack([ts**2, (1.0 - ts) ** 2])
    return np.vstack([boundary, segment])


_MIXTURE_ANCHORS = np.eye(4)[:3]

SYNTHETIC_IDS = ("biobj-quadratic", "constrained-biobj", "mixture-triobj")

RESIN_COMPONENTS = (
    "Vinyl ",
    "Polyols ",
    "Epichlorohydrin ",
    "Bisphenol ",
    "Polyesters ",
    "TEPA ",
    "Amine ",
    "Isocyanates ",
)
RESIN_PROPERTIES = ("Potlife", "Viscosity", "Adhesion", "Hardness")
_RESIN_BOX = np.array(
    [[0.0, 5.0], [0.0, 2.0], [0.0, 60.0], [0.0, 70.0], [0.0, 30.0], [0.0, 4.0], [0.0, 50.0], [0.0, 8.0]]
)


def _resin_properties(x: np.ndarray) -> np.ndarray:
    lo, hi = _RESIN_BOX[:, 0], _RESIN_BOX[:, 1]
    u = (np.asarray(x, dtype=float) - lo) / (hi - lo)
    vinyl, polyols, epi, bisphenol, polyesters, tepa, amine, iso = u
    potlife = 2.0 + 28.0 * (1.0 - amine) * (1.0 - 0.5 * tepa) + 3.0 * polyols
    viscosity = 3.0 + 20.0 * bisphenol * (0.5 + 0.5 * epi) + 5.0 * polyesters**2 - 2.0 * vinyl
    adhesion = 0.05 + 1.2 * epi * (1.0 - epi) + 0.3 * amine * iso
    hardness = 30.0 + 45.0 * bisphenol + 15.0 * iso * amine - 10.0 * polyols * vinyl
    return np.array([potlife, viscosity, adhesion, hardness])


def make_synthetic(problem_id: str, seed: int = 0) -> ProblemSpec:
    """Construct one of the registered synthetic problems."""
    if problem_id == "biobj-quadratic":
        constraints = ConstraintSpec(box=np.array([[-1.0, 2.0], [-1.0, 2.0]]))

        def evaluate(x, _c=constraints):
            x = np.asarray(x, dtype=float)
            return _quadratic_biobj(x), _c.is_feasible(x)

        front = _biobj_quadratic_front(4096)
        return ProblemSpec(
            problem_id=problem_id,
            constraints=constraints,
            senses=(MINIMIZE, MINIMIZE),
            evaluate=evaluate,
            reference_front=front,
            reference_point=default_reference_point(front, front),
            feasible_witness=np.array([0.5, 0.0]),
            analytic_front=_biobj_quadratic_front,
        )

    if problem_id == "constrained-biobj":
        constraints = ConstraintSpec(
            box=np.array([[-1.0, 2.0], [-1.0, 2.0]]),
            linear=(LinearConstraint(coeffs=[-1.0, -1.0], bound=-0.25),),
        )

        def evaluate(x, _c=constraints):
            x = np.asarray(x, dtype=float)
            return _quadratic_biobj(x), _c.is_feasible(x)

        front = _constrained_biobj_front(4096)
        return ProblemSpec(
            problem_id=problem_id,
            constraints=constraints,
            senses=(MINIMIZE, MINIMIZE),
            evaluate=evaluate,
            reference_front=front,
            reference_point=default_reference_point(front, front),
            feasible_witness=np.array([0.5, 0.0]),
            analytic_front=_constrained_biobj_front,
        )

    if problem_id == "mixture-triobj":
        constraints = ConstraintSpec(
            box=np.array([[0.0, 1.0]] * 4),
            linear=(LinearConstraint(coeffs=[1.0] * 4, bound=1.0, relation="==", tol=1e-6),),
        )

        def evaluate(x, _c=constraints):
            x = np.asarray(x, dtype=float)
            y = np.array([float(np.sum((x - a) ** 2)) for a in _MIXTURE_ANCHORS])
            return y, _c.is_feasible(x, tol=1e-6)

        problem = ProblemSpec(
            problem_id=problem_id,
            constraints=constraints,
            senses=(MINIMIZE,) * 3,
            evaluate=evaluate,
            reference_front=np.zeros((1, 3)),  # replaced below
            reference_point=np.ones(3),
            feasible_witness=np.full(4, 0.25),
        )
        return _attach_reference(problem, resolution=4096, seed=seed)

    raise ValueError(
        f"unknown problem id: {problem_id!r}; registered synthetic ids: {list(SYNTHETIC_IDS)}"
    )


def make_resin_demo(seed: int = 0) -> ProblemSpec:
    """Formulation-style demo: 8 named components mapped to 4 properties.

    Component names keep the legacy trailing spaces found in ingested
    schemas; the suggestion service must emit them verbatim.
    """
    constraints = ConstraintSpec(box=_RESIN_BOX, names=RESIN_COMPONENTS)
    senses = (MAXIMIZE, MINIMIZE, MAXIMIZE, MAXIMIZE)

    def evaluate(x, _c=constraints):
        x = np.asarray(x, dtype=float)
        return _resin_properties(x), _c.is_feasible(x)

    problem = ProblemSpec(
        problem_id="resin-demo",
        constraints=constraints,
        senses=senses,
        evaluate=evaluate,
        reference_front=np.zeros((1, 4)),  # replaced below
        reference_point=np.ones(4),
        feasible_witness=_RESIN_BOX.mean(axis=1),
        mode=TARGET_MATCH,
        objective_names=RESIN_PROPERTIES,
    )
    return _attach_reference(problem, resolution=2048, seed=seed)


PROBLEM_IDS = SYNTHETIC_IDS + ("resin-demo",)


def get_problem(problem_id: str, seed: int = 0) -> ProblemSpec:
    """Registry lookup used by the CLI and the service."""
    if problem_id == "resin-demo":
        return make_resin_demo(seed)
    if problem_id in SYNTHETIC_IDS:
        return make_synthetic(problem_id, seed)
    raise ValueError(
        f"unknown problem id: {problem_id!r}; registered ids: {list(PROBLEM_IDS)}"
    )


def true_front(problem: ProblemSpec, resolution: int, seed: int = 0) -> np.ndarray:
    """Reference front at the requested resolution, minimization convention.

    Problems with an analytic front sample its parameterization; everything
    else evaluates a quasi-random set of feasible points and filters.
    """
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    if problem.analytic_front is not None:
        return problem.analytic_front(resolution)
    xs = problem.constraints.sample_feasible(resolution, seed=seed)
    images, feasible = [], []
    for x in xs:
        y, ok = problem.evaluate(x)
        images.append(y)
        feasible.append(ok)
    images = np.vstack(images)[np.asarray(feasible, dtype=bool)]
    return pareto_filter(to_minimization(images, problem.senses)).objectives


def target_match_problem(
    problem: ProblemSpec, target, resolution: int = 2048, seed: int = 0
) -> ProblemSpec:
    """Rewrite objectives as per-property absolute deviations from a target.

    The rewritten problem keeps M and the input space; all senses minimize.
    Its reference front is brute-forced in deviation space.
    """
    target = np.asarray(target, dtype=float)
    if target.shape != (problem.n_objectives,):
        raise ValueError("target length must match the number of objectives")
    base_eval = problem.evaluate

    def evaluate(x):
        y, feasible = base_eval(x)
        return np.abs(np.asarray(y, dtype=float) - target), feasible

    rewritten = ProblemSpec(
        problem_id=f"{problem.problem_id}@target",
        constraints=problem.constraints,
        senses=(MINIMIZE,) * problem.n_objectives,
        evaluate=evaluate,
        reference_front=np.zeros((1, problem.n_objectives)),
        reference_point=np.ones(problem.n_objectives),
        feasible_witness=problem.feasible_witness,
        mode=TARGET_MATCH,
        objective_names=problem.objective_names,
        dataset_hash=problem.dataset_hash,
    )
    return _attach_reference(rewritten, resolution=resolution, seed=seed)


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetSchema:
    inputs: tuple[str, ...]
    outputs: tuple[str, ...]
    senses: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))
        senses = tuple(self.senses) or (MINIMIZE,) * len(self.outputs)
        if len(senses) != len(self.outputs):
            raise ValueError("one sense per output required")
        object.__setattr__(self, "senses", senses)


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray  # (n, D)
    Y: np.ndarray  # (n, M)
    schema: DatasetSchema
    dropped_rows: int = 0
    content_hash: str | None = None

    def __len__(self) -> int:
        return len(self.X)


def load_dataset(path, schema: DatasetSchema) -> Dataset:
    """Ingest a CSV with headers; malformed rows are dropped and counted."""
    path = Path(path)
    raw = path.read_bytes()
    content_hash = hashlib.sha256(raw).hexdigest()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in (*schema.inputs, *schema.outputs):
            if col not in header:
                raise ValueError(f"missing column: {col!r}")
        xs, ys, dropped = [], [], 0
        for row in reader:
            try:
                x = [float(row[c]) for c in schema.inputs]
                y = [float(row[c]) for c in schema.outputs]
            except (TypeError, ValueError):
                dropped += 1
                continue
            if not (np.isfinite(x).all() and np.isfinite(y).all()):
                dropped += 1
                continue
            xs.append(x)
            ys.append(y)
    if not xs:
        raise ValueError("zero valid rows after ingestion filtering")
    return Dataset(
        X=np.asarray(xs, dtype=float),
        Y=np.asarray(ys, dtype=float),
        schema=schema,
        dropped_rows=dropped,
        content_hash=content_hash,
    )


def fit_ground_truth(
    dataset: Dataset,
    seed: int = 0,
    resolution: int = 2048,
    fit_cfg: FitConfig | None = None,
) -> ProblemSpec:
    """Freeze a GP-mean simulator on the full dataset as the problem oracle.

    Posterior means of the per-output fits become the deterministic
    evaluator; the reference front is then brute-forced against it, so every
    strategy faces the identical function.
    """
    lo = dataset.X.min(axis=0)
    hi = dataset.X.max(axis=0)
    span = np.where(hi - lo <= 0, 1.0, hi - lo)
    box = np.column_stack([lo, lo + span])
    base_cfg = fit_cfg or FitConfig(seed=seed)
    models = [
        fit_gp(dataset.X, dataset.Y[:, m], replace(base_cfg, bounds=box, seed=seed + m))
        for m in range(dataset.Y.shape[1])
    ]
    constraints = ConstraintSpec(box=box, names=dataset.schema.inputs)

    def evaluate(x, _models=tuple(models), _c=constraints):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = np.array([posterior_batch(m, x)[0][0] for m in _models])
        return y, _c.is_feasible(x[0])

    problem = ProblemSpec(
        problem_id="dataset",
        constraints=constraints,
        senses=dataset.schema.senses,
        evaluate=evaluate,
        reference_front=np.zeros((1, dataset.Y.shape[1])),
        reference_point=np.ones(dataset.Y.shape[1]),
        feasible_witness=dataset.X[0],
        objective_names=dataset.schema.outputs,
        dataset_hash=dataset.content_hash,
    )
    return _attach_reference(problem, resolution=resolution, seed=seed)


def problem_to_json(problem: ProblemSpec, path=None) -> str:
    """Serialize everything but the evaluator closure."""
    doc = {
        "format": "problem-spec",
        "version": 1,
        "problem_id": problem.problem_id,
        "dim": problem.dim,
        "n_objectives": problem.n_objectives,
        "senses": list(problem.senses),
        "mode": problem.mode,
        "objective_names": list(problem.objective_names),
        "component_names": list(problem.constraints.names),
        "box": problem.constraints.box.tolist(),
        "linear_constraints": [
            {
                "coeffs": c.coeffs.tolist(),
                "bound": c.bound,
                "relation": c.relation,
                "tol": c.tol,
            }
            for c in problem.constraints.linear
        ],
        "reference_front": problem.reference_front.tolist(),
        "reference_point": problem.reference_point.tolist(),
        "dataset_hash": problem.dataset_hash,
    }
    text = json.dumps(doc)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text
