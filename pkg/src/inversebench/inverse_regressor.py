"""Direct property-to-formulation regression with a constraint-aware loss.

A small MLP maps a target property vector straight to an input vector in one
forward pass. The output layer is squashed onto the box bounds, so box
feasibility is structural; cross-dimensional linear constraints are handled
by a squared-hinge penalty added to the regression loss, weighted by
``caft_lambda``. Training is seeded mini-batch gradient descent with
momentum, an 80/20 validation split, and halving of the learning rate on
validation plateaus; the returned parameters are the best-validation ones.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .problem_suite import ConstraintSpec

SERIAL_FORMAT = "inverse-regressor"
SERIAL_VERSION = 1

TANH = "tanh"
RELU = "relu"


@dataclass(frozen=True)
class TrainConfig:
    hidden: tuple[int, ...] = (64, 64)
    activation: str = TANH
    epochs: int = 500
    learning_rate: float = 1e-3
    batch_size: int = 32
    caft_lambda: float = 1.0
    momentum: float = 0.9
    val_fraction: float = 0.2
    plateau_patience: int = 25
    min_learning_rate: float = 1e-6


@dataclass(frozen=True)
class CaftLossReport:
    mse_term: float
    penalty_term: float
    caft_lambda: float

    @property
    def total(self) -> float:
        return self.mse_term + self.caft_lambda * self.penalty_term


def _hinged_violations(constraints: ConstraintSpec, U: np.ndarray):
    """Per-constraint hinge residuals and gradients w.r.t. the inputs.

    ``U`` is (B, D). Returns a list of (residual (B,), grad_direction (B, D))
    with residual already hinged at zero; box bounds are excluded because the
    squashing map enforces them structurally.
    """
    out = []
    for c in constraints.linear:
        raw = U @ c.coeffs - c.bound
        if c.relation == "==":
            hinged = np.maximum(np.abs(raw) - c.tol, 0.0)
            direction = np.sign(raw)[:, None] * c.coeffs[None, :]
        else:
            hinged = np.maximum(raw, 0.0)
            direction = np.broadcast_to(c.coeffs, U.shape)
        out.append((hinged, direction))
    return out


def caft_loss(x_pred, x_true, constraints: ConstraintSpec, caft_lambda: float) -> CaftLossReport:
    """Regression error plus weighted squared-hinge constraint penalty.

    Operates in the units of its arguments; the penalty sums max(0, g_j)^2
    over the declared linear constraints g_j(x) <= 0 (equalities hinged at
    their tolerance).
    """
    x_pred = np.asarray(x_pred, dtype=float)
    x_true = np.asarray(x_true, dtype=float)
    if x_pred.shape != x_true.shape:
        raise ValueError("prediction and truth must have the same shape")
    mse = float(np.mean((x_pred - x_true) ** 2))
    penalty = 0.0
    for hinged, _ in _hinged_violations(constraints, np.atleast_2d(x_pred)):
        penalty += float(np.sum(hinged**2))
    return CaftLossReport(mse_term=mse, penalty_term=penalty, caft_lambda=float(caft_lambda))


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _activate(z, kind):
    return np.tanh(z) if kind == TANH else np.maximum(z, 0.0)


def _activate_grad(a, z, kind):
    return 1.0 - a**2 if kind == TANH else (z > 0).astype(float)


@dataclass
class RegressorModel:
    """Immutable trained regressor; forward passes land inside the box."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str
    box: np.ndarray  # (D, 2) raw output bounds
    y_mean: np.ndarray
    y_std: np.ndarray
    caft_lambda: float
    training_history: tuple = field(default=(), repr=False)

    @property
    def layer_widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def forward(self, Y: np.ndarray) -> np.ndarray:
        """Batched prediction: raw targets (B, M) -> raw inputs (B, D)."""
        h = (np.atleast_2d(np.asarray(Y, dtype=float)) - self.y_mean) / self.y_std
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = _activate(h @ W + b, self.activation)
        z = h @ self.weights[-1] + self.biases[-1]
        u = _sigmoid(z)
        return self.box[:, 0] + u * (self.box[:, 1] - self.box[:, 0])


def predict(model: RegressorModel, y_target) -> np.ndarray:
    """One forward pass; output is inside the box bounds by construction."""
    y = np.asarray(y_target, dtype=float)
    return model.forward(y[None, :])[0]


def _init_params(widths, seed):
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        scale = np.sqrt(2.0 / (fan_in + fan_out))
        weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def _forward_cached(weights, biases, activation, Z):
    acts = [Z]
    pre = []
    h = Z
    for W, b in zip(weights[:-1], biases[:-1]):
        z = h @ W + b
        pre.append(z)
        h = _activate(z, activation)
        acts.append(h)
    z_out = h @ weights[-1] + biases[-1]
    pre.append(z_out)
    u = _sigmoid(z_out)
    return u, acts, pre


def _loss_and_grads(weights, biases, activation, Zy, Ux, norm_constraints, lam):
    """Mean loss over the batch and parameter gradients by backpropagation.

    All quantities live in normalized coordinates: targets standardized,
    outputs in the unit cube.
    """
    B, D = Ux.shape
    u, acts, pre = _forward_cached(weights, biases, activation, Zy)
    diff = u - Ux
    mse = float(np.mean(diff**2))
    d_u = 2.0 * diff / (B * D)
    penalty = 0.0
    if lam > 0:
        for hinged, direction in _hinged_violations(norm_constraints, u):
            penalty += float(np.mean(hinged**2))
            d_u = d_u + lam * (2.0 * hinged[:, None] * direction) / B
    total = mse + lam * penalty
    # back through the squashing layer
    delta = d_u * u * (1.0 - u)
    grads_w = [None] * len(weights)
    grads_b = [None] * len(weights)
    for layer in range(len(weights) - 1, -1, -1):
        grads_w[layer] = acts[layer].T @ delta
        grads_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ weights[layer].T) * _activate_grad(
                acts[layer], pre[layer - 1], activation
            )
    return total, mse, penalty, grads_w, grads_b


def _as_arrays(dataset):
    if hasattr(dataset, "X") and hasattr(dataset, "Y"):
        return np.asarray(dataset.X, float), np.asarray(dataset.Y, float)
    xs = np.vstack([np.asarray(x, float) for x, _ in dataset])
    ys = np.vstack([np.atleast_1d(np.asarray(y, float)) for _, y in dataset])
    return xs, ys


def train(
    dataset,
    constraints: ConstraintSpec,
    cfg: TrainConfig = TrainConfig(),
    seed: int = 0,
) -> RegressorModel:
    """Fit the inverse regressor on (x, y) pairs; deterministic given seed.

    ``dataset`` is a list of (x, y) pairs or anything with X/Y arrays. The
    model learns y -> x; validation loss (on a fixed 80/20 split) selects
    the returned parameters.
    """
    X, Y = _as_arrays(dataset)
    if len(X) < 10:
        raise ValueError("at least 10 training pairs are required")
    if X.shape[1] != constraints.dim:
        raise ValueError("constraint dimension must match x")

    box = constraints.box
    span = box[:, 1] - box[:, 0]
    Ux = (X - box[:, 0]) / span
    y_mean = Y.mean(axis=0)
    y_std = np.where(Y.std(axis=0) <= 1e-12, 1.0, Y.std(axis=0))
    Zy = (Y - y_mean) / y_std
    norm_constraints = constraints.normalized()

    rng = np.random.default_rng(seed)
    n_val = max(1, int(round(cfg.val_fraction * len(X))))
    perm = rng.permutation(len(X))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    Zy_tr, Ux_tr = Zy[train_idx], Ux[train_idx]
    Zy_val, Ux_val = Zy[val_idx], Ux[val_idx]

    widths = [Y.shape[1], *cfg.hidden, X.shape[1]]
    weights, biases = _init_params(widths, seed)
    vel_w = [np.zeros_like(w) for w in weights]
    vel_b = [np.zeros_like(b) for b in biases]

    def evaluate(Zy_s, Ux_s):
        total, mse, penalty, _, _ = _loss_and_grads(
            weights, biases, cfg.activation, Zy_s, Ux_s, norm_constraints, cfg.caft_lambda
        )
        return total, mse, penalty

    def violation_rate(Zy_s):
        u, _, _ = _forward_cached(weights, biases, cfg.activation, Zy_s)
        violated = np.zeros(len(u), dtype=bool)
        for hinged, _ in _hinged_violations(norm_constraints, u):
            violated |= hinged > 1e-9
        return float(violated.mean())

    lr = cfg.learning_rate
    best_val = np.inf
    best_params = ([w.copy() for w in weights], [b.copy() for b in biases])
    since_improvement = 0
    history = []
    n_train = len(train_idx)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_train)
        for start in range(0, n_train, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            total, _, _, gw, gb = _loss_and_grads(
                weights, biases, cfg.activation, Zy_tr[idx], Ux_tr[idx],
                norm_constraints, cfg.caft_lambda,
            )
            if not np.isfinite(total):
                raise ValueError("diverged; reduce learning rate")
            for k in range(len(weights)):
                vel_w[k] = cfg.momentum * vel_w[k] - lr * gw[k]
                vel_b[k] = cfg.momentum * vel_b[k] - lr * gb[k]
                weights[k] += vel_w[k]
                biases[k] += vel_b[k]
        train_total = evaluate(Zy_tr, Ux_tr)[0]
        val_total = evaluate(Zy_val, Ux_val)[0]
        finite_params = all(np.isfinite(w).all() for w in weights)
        if not (np.isfinite(train_total) and np.isfinite(val_total) and finite_params):
            raise ValueError("diverged; reduce learning rate")
        history.append((epoch, train_total, val_total, violation_rate(Zy_val)))
        if val_total < best_val - 1e-12:
            best_val = val_total
            best_params = ([w.copy() for w in weights], [b.copy() for b in biases])
            since_improvement = 0
        else:
            since_improvement += 1
            if since_improvement >= cfg.plateau_patience:
                lr = max(lr * 0.5, cfg.min_learning_rate)
                since_improvement = 0

    return RegressorModel(
        weights=best_params[0],
        biases=best_params[1],
        activation=cfg.activation,
        box=box.copy(),
        y_mean=y_mean,
        y_std=y_std,
        caft_lambda=cfg.caft_lambda,
        training_history=tuple(history),
    )


def save_training_curve(model: RegressorModel, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "violation_rate"])
        for row in model.training_history:
            writer.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3])])


def regressor_to_json(model: RegressorModel, path=None) -> str:
    doc = {
        "format": SERIAL_FORMAT,
        "version": SERIAL_VERSION,
        "activation": model.activation,
        "layer_widths": model.layer_widths,
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "box": model.box.tolist(),
        "y_mean": model.y_mean.tolist(),
        "y_std": model.y_std.tolist(),
        "caft_lambda": model.caft_lambda,
    }
    text = json.dumps(doc)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text


def regressor_from_json(source) -> RegressorModel:
    if isinstance(source, (str, Path)) and Path(str(source)).exists():
        doc = json.loads(Path(source).read_text())
    else:
        doc = json.loads(source) if isinstance(source, str) else source
    if doc.get("format") != SERIAL_FORMAT:
        raise ValueError(f"not a {SERIAL_FORMAT} document")
    if doc.get("version") != SERIAL_VERSION:
        raise ValueError(f"unsupported {SERIAL_FORMAT} version: {doc.get('version')}")
    return RegressorModel(
        weights=[np.asarray(w, float) for w in doc["weights"]],
        biases=[np.asarray(b, float) for b in doc["biases"]],
        activation=doc["activation"],
        box=np.asarray(doc["box"], float),
        y_mean=np.asarray(doc["y_mean"], float),
        y_std=np.asarray(doc["y_std"], float),
        caft_lambda=doc["caft_lambda"],
    )
