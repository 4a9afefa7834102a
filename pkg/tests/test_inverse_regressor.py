"""Inverse regressor tests: recovery, penalties, feasibility, gradients."""

import numpy as np
import pytest

from inversebench.inverse_regressor import (
    CaftLossReport,
    TrainConfig,
    caft_loss,
    predict,
    regressor_from_json,
    regressor_to_json,
    save_training_curve,
    train,
)
from inversebench.problem_suite import ConstraintSpec, LinearConstraint

UNIT2 = ConstraintSpec(box=np.array([[0.0, 1.0], [0.0, 1.0]]))


def linear_pairs(n=400, seed=5):
    rng = np.random.default_rng(seed)
    A = np.array([[0.5, 0.2], [0.1, 0.6]])
    Y = rng.uniform(0, 1, size=(n, 2))
    return list(zip(Y @ A.T, Y)), A


def test_train_recovers_linear_map():
    pairs, A = linear_pairs()
    model = train(pairs, UNIT2, TrainConfig(caft_lambda=0.0), seed=0)
    rng = np.random.default_rng(9)
    Yv = rng.uniform(0, 1, size=(200, 2))
    rmse = np.sqrt(np.mean((model.forward(Yv) - Yv @ A.T) ** 2))
    assert rmse <= 0.05


def test_train_requires_ten_pairs():
    pairs, _ = linear_pairs(n=9)
    with pytest.raises(ValueError, match="at least 10"):
        train(pairs, UNIT2, TrainConfig(epochs=1), seed=0)


def test_train_is_deterministic():
    pairs, _ = linear_pairs(n=60)
    cfg = TrainConfig(epochs=40)
    a = train(pairs, UNIT2, cfg, seed=3)
    b = train(pairs, UNIT2, cfg, seed=3)
    assert all(np.array_equal(w1, w2) for w1, w2 in zip(a.weights, b.weights))
    assert all(np.array_equal(b1, b2) for b1, b2 in zip(a.biases, b.biases))


def test_nan_loss_raises_divergence_error():
    # the bounds-squashed output makes loss blow-ups hard to reach from
    # finite data, so drive the guard with a poisoned target instead
    pairs, _ = linear_pairs(n=60)
    pairs[3] = (pairs[3][0], np.array([np.nan, 0.5]))
    with pytest.raises(ValueError, match="diverged; reduce learning rate"):
        train(pairs, UNIT2, TrainConfig(epochs=5), seed=0)


def test_penalty_reduces_constraint_violations():
    # targets sometimes violate x1 + x2 <= 0.8; the penalty should pull the
    # regressor's predictions toward feasibility at identical seeds
    rng = np.random.default_rng(2)
    spec = ConstraintSpec(
        box=np.array([[0.0, 1.0], [0.0, 1.0]]),
        linear=(LinearConstraint(coeffs=[1.0, 1.0], bound=0.8),),
    )
    X = rng.uniform(0.2, 1.0, size=(300, 2))
    Y = np.column_stack([X.sum(axis=1), X[:, 0] - X[:, 1]])
    pairs = list(zip(X, Y))
    cfg_free = TrainConfig(epochs=150, caft_lambda=0.0)
    cfg_pen = TrainConfig(epochs=150, caft_lambda=10.0)
    free = train(pairs, spec, cfg_free, seed=7)
    pen = train(pairs, spec, cfg_pen, seed=7)
    Yv = np.column_stack([rng.uniform(0.4, 2.0, 150), rng.uniform(-0.8, 0.8, 150)])
    c = spec.linear[0]

    def mean_violation(model):
        pred = model.forward(Yv)
        return np.maximum(pred @ c.coeffs - c.bound, 0.0).mean()

    assert mean_violation(pen) <= mean_violation(free)


def test_empty_hidden_layers_degenerate_to_bounded_linear():
    pairs, _ = linear_pairs(n=80)
    model = train(pairs, UNIT2, TrainConfig(hidden=(), epochs=60), seed=1)
    assert model.layer_widths == [2, 2]
    out = predict(model, np.array([0.4, 0.6]))
    assert out.shape == (2,)


def test_predict_pure_and_deterministic():
    pairs, _ = linear_pairs(n=60)
    model = train(pairs, UNIT2, TrainConfig(epochs=30), seed=0)
    t = np.array([0.3, 0.7])
    assert np.array_equal(predict(model, t), predict(model, t))


def test_predict_memorizes_training_pair():
    pairs, _ = linear_pairs(n=200)
    model = train(pairs, UNIT2, TrainConfig(caft_lambda=0.0), seed=0)
    x_true, y_seen = pairs[17]
    pred = predict(model, y_seen)
    assert np.linalg.norm(pred - x_true) <= 0.1


def test_predict_always_inside_box():
    pairs, _ = linear_pairs(n=60)
    model = train(pairs, UNIT2, TrainConfig(epochs=30), seed=0)
    rng = np.random.default_rng(0)
    targets = rng.uniform(-1e6, 1e6, size=(100_000, 2))
    out = model.forward(targets)
    assert np.isfinite(out).all()
    assert np.all(out >= model.box[:, 0]) and np.all(out <= model.box[:, 1])


def test_caft_loss_examples():
    spec = ConstraintSpec(
        box=np.array([[0.0, 5.0], [0.0, 5.0]]),
        linear=(LinearConstraint(coeffs=[1.0, 0.0], bound=1.0),),  # x1 <= 1
    )
    x = np.array([0.5, 0.5])
    identical = caft_loss(x, x, spec, caft_lambda=3.0)
    assert identical.total == 0.0

    feasible = caft_loss(np.array([0.9, 2.0]), np.array([0.4, 2.0]), spec, 7.0)
    assert feasible.penalty_term == 0.0
    assert feasible.total == feasible.mse_term

    violating = caft_loss(np.array([2.0, 0.5]), np.array([2.0, 0.5]), spec, 3.0)
    assert violating.mse_term == 0.0
    assert violating.penalty_term == pytest.approx(1.0)
    assert violating.total == pytest.approx(3.0)


def test_caft_loss_zero_gradient_inside_feasible_region():
    spec = ConstraintSpec(
        box=np.array([[0.0, 1.0]]), linear=(LinearConstraint(coeffs=[1.0], bound=0.9),)
    )
    x0 = np.array([0.5])
    base = caft_loss(x0, x0, spec, 5.0).total
    for h in (1e-6, -1e-6):
        assert caft_loss(x0 + h, x0, spec, 5.0).total == pytest.approx(base, abs=1e-10)


def test_backprop_matches_finite_differences():
    from inversebench.inverse_regressor import _init_params, _loss_and_grads

    rng = np.random.default_rng(4)
    spec = ConstraintSpec(
        box=np.array([[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]]),
        linear=(LinearConstraint(coeffs=[1.0, 1.0, 1.0], bound=1.2),),
    ).normalized()
    widths = [2, 5, 3]
    weights, biases = _init_params(widths, seed=0)
    Zy = rng.standard_normal((6, 2))
    Ux = rng.uniform(0, 1, size=(6, 3))

    def loss():
        return _loss_and_grads(weights, biases, "tanh", Zy, Ux, spec, 2.0)[0]

    _, _, _, gw, gb = _loss_and_grads(weights, biases, "tanh", Zy, Ux, spec, 2.0)
    h = 1e-6
    for layer in range(len(weights)):
        for (i, j) in [(0, 0), (0, 1), (1, 2 % widths[layer + 1])]:
            weights[layer][i, j] += h
            up = loss()
            weights[layer][i, j] -= 2 * h
            dn = loss()
            weights[layer][i, j] += h
            fd = (up - dn) / (2 * h)
            assert gw[layer][i, j] == pytest.approx(fd, rel=1e-4, abs=1e-8)
        biases[layer][0] += h
        up = loss()
        biases[layer][0] -= 2 * h
        dn = loss()
        biases[layer][0] += h
        fd = (up - dn) / (2 * h)
        assert gb[layer][0] == pytest.approx(fd, rel=1e-4, abs=1e-8)


def test_relu_activation_trains():
    pairs, _ = linear_pairs(n=80)
    model = train(pairs, UNIT2, TrainConfig(activation="relu", epochs=40), seed=0)
    assert model.activation == "relu"
    assert np.isfinite(predict(model, np.array([0.5, 0.5]))).all()


def test_serialization_round_trip(tmp_path):
    pairs, _ = linear_pairs(n=60)
    model = train(pairs, UNIT2, TrainConfig(epochs=30), seed=0)
    path = tmp_path / "model.json"
    regressor_to_json(model, path)
    loaded = regressor_from_json(path)
    probe = np.random.default_rng(1).uniform(0, 1, size=(20, 2))
    assert np.allclose(model.forward(probe), loaded.forward(probe), atol=1e-15)
    with pytest.raises(ValueError, match="version"):
        regressor_from_json('{"format": "inverse-regressor", "version": 42}')


def test_training_curve_csv(tmp_path):
    pairs, _ = linear_pairs(n=60)
    model = train(pairs, UNIT2, TrainConfig(epochs=12), seed=0)
    path = tmp_path / "curve.csv"
    save_training_curve(model, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,violation_rate"
    assert len(lines) == 13


def test_caft_report_invariant():
    rep = CaftLossReport(mse_term=0.5, penalty_term=0.25, caft_lambda=4.0)
    assert rep.total == 0.5 + 4.0 * 0.25
