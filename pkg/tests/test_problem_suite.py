"""Problem suite tests: constraints, synthetic fronts, datasets, simulators."""

import numpy as np
import pytest

from inversebench.pareto_metrics import igd, pareto_filter
from inversebench.problem_suite import (
    ConstraintSpec,
    Dataset,
    DatasetSchema,
    LinearConstraint,
    PROBLEM_IDS,
    RESIN_COMPONENTS,
    RESIN_PROPERTIES,
    fit_ground_truth,
    get_problem,
    load_dataset,
    make_resin_demo,
    make_synthetic,
    problem_to_json,
    target_match_problem,
    true_front,
)

# ---------------------------------------------------------------------------
# constraints
# ---------------------------------------------------------------------------


def simplex_spec(d=4):
    return ConstraintSpec(
        box=np.array([[0.0, 1.0]] * d),
        linear=(LinearConstraint(coeffs=[1.0] * d, bound=1.0, relation="==", tol=1e-6),),
    )


def test_constraint_spec_validates_box():
    with pytest.raises(ValueError, match="lower bound"):
        ConstraintSpec(box=np.array([[1.0, 1.0]]))


def test_feasibility_and_violation():
    spec = ConstraintSpec(
        box=np.array([[-1.0, 2.0], [-1.0, 2.0]]),
        linear=(LinearConstraint(coeffs=[-1.0, -1.0], bound=-0.25),),
    )
    assert spec.is_feasible([0.5, 0.0])
    assert not spec.is_feasible([0.0, 0.0])  # 0 + 0 < 0.25
    assert not spec.is_feasible([3.0, 0.0])  # box
    assert spec.linear[0].violation([0.0, 0.0]) == pytest.approx(0.25)


def test_projection_is_idempotent_on_feasible_points():
    spec = simplex_spec()
    x = np.array([0.25, 0.25, 0.25, 0.25])
    assert np.allclose(spec.project(x), x, atol=1e-12)
    y = spec.project(np.array([0.9, 0.9, 0.9, 0.9]))
    assert spec.is_feasible(y, tol=1e-6)
    assert np.allclose(spec.project(y), y, atol=1e-9)


def test_sample_feasible_handles_equalities_and_inequalities():
    eq = simplex_spec()
    pts = eq.sample_feasible(32, seed=1)
    assert pts.shape == (32, 4)
    assert all(eq.is_feasible(p, tol=1e-6) for p in pts)

    ineq = ConstraintSpec(
        box=np.array([[-1.0, 2.0], [-1.0, 2.0]]),
        linear=(LinearConstraint(coeffs=[-1.0, -1.0], bound=-0.25),),
    )
    pts = ineq.sample_feasible(64, seed=2)
    assert all(ineq.is_feasible(p) for p in pts)
    # determinism
    assert np.array_equal(pts, ineq.sample_feasible(64, seed=2))


def test_sample_feasible_infeasible_region_errors():
    spec = ConstraintSpec(
        box=np.array([[0.0, 1.0]]),
        linear=(LinearConstraint(coeffs=[1.0], bound=-1.0),),  # x <= -1, impossible
    )
    with pytest.raises(ValueError, match="infeasible search region"):
        spec.sample_feasible(4, seed=0)


def test_normalized_constraints_match_raw_feasibility():
    spec = ConstraintSpec(
        box=np.array([[-1.0, 2.0], [0.0, 4.0]]),
        linear=(LinearConstraint(coeffs=[1.0, 0.5], bound=2.0),),
    )
    norm = spec.normalized()
    rng = np.random.default_rng(0)
    for _ in range(50):
        u = rng.uniform(0, 1, size=2)
        x = spec.box[:, 0] + u * (spec.box[:, 1] - spec.box[:, 0])
        assert spec.is_feasible(x, tol=1e-9) == norm.is_feasible(u, tol=1e-9)


# ---------------------------------------------------------------------------
# synthetic problems
# ---------------------------------------------------------------------------


def test_biobj_quadratic_examples():
    p = make_synthetic("biobj-quadratic")
    y, feasible = p.evaluate([0.0, 0.0])
    assert np.allclose(y, [0.0, 1.0])
    assert feasible
    y2, _ = p.evaluate([0.5, 0.0])
    assert np.allclose(y2, [0.25, 0.25])


def test_constrained_biobj_feasibility():
    p = make_synthetic("constrained-biobj")
    _, feasible = p.evaluate([0.0, 0.0])
    assert not feasible
    _, ok = p.evaluate([0.5, 0.0])
    assert ok


def test_unknown_problem_id_lists_registered():
    with pytest.raises(ValueError, match="biobj-quadratic"):
        make_synthetic("nope")
    with pytest.raises(ValueError, match="resin-demo"):
        get_problem("nope")


def test_true_front_analytic_parameterization():
    p = make_synthetic("biobj-quadratic")
    front = true_front(p, 100)
    assert front.shape == (100, 2)
    t = np.sqrt(front[:, 0])
    assert np.max(np.abs(front[:, 1] - (1.0 - t) ** 2)) < 1e-9


def test_true_front_resolution_validation():
    p = make_synthetic("biobj-quadratic")
    with pytest.raises(ValueError, match="resolution"):
        true_front(p, 1)


def test_reference_fronts_are_nondominated():
    for pid in PROBLEM_IDS:
        p = get_problem(pid, seed=0)
        filtered = pareto_filter(p.reference_front).objectives
        assert len(filtered) == len(p.reference_front), pid
        # front of the front is the identical set
        assert {tuple(r) for r in filtered} == {tuple(r) for r in p.reference_front}


def test_constrained_front_matches_brute_force():
    p = make_synthetic("constrained-biobj")
    xs = p.constraints.sample_feasible(4096, seed=3)
    images = np.array([p.evaluate(x)[0] for x in xs])
    brute = pareto_filter(images).objectives
    # brute-forced approximation should sit close to the analytic front
    assert igd(brute, p.reference_front) < 0.02


def test_mixture_front_refinement_monotonicity():
    p = make_synthetic("mixture-triobj", seed=0)
    f_coarse = true_front(p, 1000, seed=10)
    f_mid = true_front(p, 10_000, seed=11)
    f_fine = true_front(p, 100_000, seed=12)
    assert igd(f_fine, f_mid) <= igd(f_coarse, f_mid)


def test_feasible_witness_passes_own_constraints():
    for pid in PROBLEM_IDS:
        p = get_problem(pid, seed=0)
        assert p.constraints.is_feasible(p.feasible_witness, tol=1e-6), pid


def test_evaluators_are_pure():
    for pid in PROBLEM_IDS:
        p = get_problem(pid, seed=0)
        x = p.feasible_witness
        y1, f1 = p.evaluate(x)
        y2, f2 = p.evaluate(x)
        assert np.array_equal(y1, y2) and f1 == f2, pid


def test_target_match_mode_rewrites_objectives():
    p = make_synthetic("biobj-quadratic")
    tm = target_match_problem(p, [0.25, 0.25], resolution=256)
    assert tm.n_objectives == p.n_objectives
    assert tm.mode == "target-match"
    y, feasible = tm.evaluate([0.5, 0.0])  # image exactly on target
    assert feasible
    assert np.allclose(y, [0.0, 0.0], atol=1e-12)
    y2, _ = tm.evaluate([0.0, 0.0])
    assert np.allclose(y2, [0.25, 0.75])


def test_resin_demo_shape():
    p = make_resin_demo()
    assert p.dim == 8
    assert p.n_objectives == 4
    assert p.constraints.names == RESIN_COMPONENTS
    assert p.objective_names == RESIN_PROPERTIES
    assert any(name.endswith(" ") for name in p.constraints.names)
    y, feasible = p.evaluate(p.feasible_witness)
    assert feasible and np.isfinite(y).all()


def test_problem_json_has_provenance_fields():
    import json

    p = make_synthetic("constrained-biobj")
    doc = json.loads(problem_to_json(p))
    assert doc["problem_id"] == "constrained-biobj"
    assert doc["dim"] == 2
    assert len(doc["linear_constraints"]) == 1
    assert doc["dataset_hash"] is None


# ---------------------------------------------------------------------------
# datasets and ground-truth simulators
# ---------------------------------------------------------------------------


def write_csv(path, rows, header):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def test_load_dataset_counts_dropped_rows(tmp_path):
    path = tmp_path / "data.csv"
    write_csv(
        path,
        [[0.1, 0.2, 1.0], [0.3, "oops", 2.0], [0.5, 0.6, 3.0]],
        header=["a", "b", "out"],
    )
    ds = load_dataset(path, DatasetSchema(inputs=("a", "b"), outputs=("out",)))
    assert len(ds) == 2
    assert ds.dropped_rows == 1
    assert ds.content_hash is not None


def test_load_dataset_missing_column(tmp_path):
    path = tmp_path / "data.csv"
    write_csv(path, [[1, 2]], header=["a", "b"])
    with pytest.raises(ValueError, match="missing column: 'out'"):
        load_dataset(path, DatasetSchema(inputs=("a", "b"), outputs=("out",)))


def test_load_dataset_zero_valid_rows(tmp_path):
    path = tmp_path / "data.csv"
    write_csv(path, [["x", "y", "z"]], header=["a", "b", "out"])
    with pytest.raises(ValueError, match="zero valid rows"):
        load_dataset(path, DatasetSchema(inputs=("a", "b"), outputs=("out",)))


def test_fit_ground_truth_interpolates_and_is_deterministic(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.uniform(0, 1, size=(40, 2))
    Y = np.column_stack([X[:, 0] + X[:, 1] ** 2, np.sin(3 * X[:, 0])])
    path = tmp_path / "sim.csv"
    write_csv(path, np.column_stack([X, Y]).tolist(), header=["a", "b", "o1", "o2"])
    ds = load_dataset(path, DatasetSchema(inputs=("a", "b"), outputs=("o1", "o2")))

    p1 = fit_ground_truth(ds, seed=7, resolution=128)
    p2 = fit_ground_truth(ds, seed=7, resolution=128)
    assert p1.dataset_hash == ds.content_hash

    # interpolation: simulator close to the data it froze
    preds = np.array([p1.evaluate(x)[0] for x in X[:10]])
    assert np.max(np.abs(preds - Y[:10])) < 0.05

    probe = rng.uniform(0, 1, size=(5, 2))
    a = np.array([p1.evaluate(x)[0] for x in probe])
    b = np.array([p2.evaluate(x)[0] for x in probe])
    assert np.array_equal(a, b)
    # referential transparency
    assert np.array_equal(p1.evaluate(probe[0])[0], p1.evaluate(probe[0])[0])
