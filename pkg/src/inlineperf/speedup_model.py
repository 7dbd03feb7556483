"""Function-speedup regression: a small fully connected net over the
7-dim preprocessed features.

Layers 7-128-256-32-1 with Leaky ReLU between them and a bare linear head,
trained with mini-batch SGD on mean squared error. Everything is plain
numpy so gradients stay auditable against finite differences.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .dataset import TrainingSample
from .features import extract_function_features
from .ir import Module, ProgramError, SchemaError, dumps
from .preprocess import PreprocessState, fit_preprocess, transform

PERFMODEL_SCHEMA = "perfmodel/1"
LAYER_DIMS = (7, 128, 256, 32, 1)
LEAKY_SLOPE = 0.01
CLAMP_BOUNDS = (0.1, 10.0)


class ModelError(ProgramError):
    """Insufficient data, bad dimensions, or malformed model files."""


@dataclass
class RegressionModel:
    weights: list[np.ndarray]  # per layer, shape (out, in)
    biases: list[np.ndarray]  # per layer, shape (out,)
    slope: float = LEAKY_SLOPE
    clamp: tuple[float, float] = CLAMP_BOUNDS
    # The preprocessing the model was fitted with; predictions are only
    # meaningful through it.
    preprocess: PreprocessState | None = None

    def dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    def copy_params(self) -> "RegressionModel":
        return RegressionModel(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            slope=self.slope,
            clamp=self.clamp,
            preprocess=self.preprocess,
        )


def init_model(
    seed: int,
    dims: tuple[int, ...] = LAYER_DIMS,
    preprocess: PreprocessState | None = None,
) -> RegressionModel:
    """Seeded He-style initialization; biases start at zero."""
    if len(dims) < 2:
        raise ModelError(f"need at least one layer, got dims {dims}")
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims, dims[1:]):
        scale = np.sqrt(2.0 / fan_in)
        weights.append(rng.normal(0.0, scale, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return RegressionModel(weights=weights, biases=biases, preprocess=preprocess)


def _forward_cached(model: RegressionModel, X: np.ndarray):
    acts = [X]
    pre = []
    h = X
    last = len(model.weights) - 1
    for k, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ W.T + b
        pre.append(z)
        h = z if k == last else np.where(z > 0, z, model.slope * z)
        acts.append(h)
    return acts, pre


def forward(model: RegressionModel, x: np.ndarray) -> float:
    """Network output for one 7-vector (regression head, no activation)."""
    acts, _ = _forward_cached(model, np.asarray(x, dtype=np.float64)[None, :])
    return float(acts[-1][0, 0])


def forward_batch(model: RegressionModel, X: np.ndarray) -> np.ndarray:
    acts, _ = _forward_cached(model, np.asarray(X, dtype=np.float64))
    return acts[-1][:, 0]


def backward(model: RegressionModel, X: np.ndarray, y: np.ndarray):
    """MSE loss over the batch and its exact parameter gradients.

    The Leaky ReLU derivative at exactly 0 is the slope.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if len(X) == 0:
        raise ModelError("empty batch")
    acts, pre = _forward_cached(model, X)
    resid = acts[-1][:, 0] - y
    loss = float(np.mean(resid**2))

    n_layers = len(model.weights)
    grads_w: list[np.ndarray] = [np.empty(0)] * n_layers
    grads_b: list[np.ndarray] = [np.empty(0)] * n_layers
    delta = (2.0 * resid / len(X))[:, None]
    for k in reversed(range(n_layers)):
        grads_w[k] = delta.T @ acts[k]
        grads_b[k] = delta.sum(axis=0)
        if k > 0:
            upstream = delta @ model.weights[k]
            gate = np.where(pre[k - 1] > 0, 1.0, model.slope)
            delta = upstream * gate
    return grads_w, grads_b, loss


def loss_on(model: RegressionModel, X: np.ndarray, y: np.ndarray) -> float:
    pred = forward_batch(model, X)
    return float(np.mean((pred - np.asarray(y, dtype=np.float64)) ** 2))


@dataclass(frozen=True)
class TrainSpec:
    learning_rate: float = 0.01
    batch_size: int = 8
    epochs: int = 40
    seed: int = 0
    # Fraction held out for per-epoch validation loss; 0 trains on everything.
    val_fraction: float = 0.0

    def validate(self) -> None:
        if self.learning_rate < 0:
            raise ModelError("learning rate must be non-negative")
        if self.batch_size < 1:
            raise ModelError("batch size must be at least 1")
        if self.epochs < 1:
            raise ModelError("need at least one epoch")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ModelError("val fraction must be in [0, 1)")


@dataclass
class TrainResult:
    model: RegressionModel
    # (epoch, batch index, training loss before the step)
    history: list[tuple[int, int, float]]
    val_losses: list[float] = field(default_factory=list)


def _sample_matrix(samples: list[TrainingSample], ps: PreprocessState):
    X20 = np.array([s.features for s in samples], dtype=np.float64)
    y = np.array([s.label for s in samples], dtype=np.float64)
    return transform(ps, X20), y


def train(
    samples: list[TrainingSample],
    ps: PreprocessState,
    spec: TrainSpec = TrainSpec(),
    dims: tuple[int, ...] = LAYER_DIMS,
) -> TrainResult:
    """Mini-batch SGD with per-epoch reshuffling; deterministic per seed."""
    spec.validate()
    if len(samples) < 2 * spec.batch_size:
        raise ModelError(
            f"need at least {2 * spec.batch_size} samples, got {len(samples)}"
        )
    X, y = _sample_matrix(samples, ps)
    rng = np.random.default_rng(spec.seed)
    model = init_model(spec.seed, dims=dims, preprocess=ps)

    n_val = int(round(len(X) * spec.val_fraction))
    split = rng.permutation(len(X))
    train_idx, val_idx = split[: len(X) - n_val], split[len(X) - n_val :]
    if len(train_idx) < spec.batch_size:
        raise ModelError("validation split leaves too little training data")

    history: list[tuple[int, int, float]] = []
    val_losses: list[float] = []
    for epoch in range(spec.epochs):
        order = train_idx[rng.permutation(len(train_idx))]
        for bi, start in enumerate(range(0, len(order), spec.batch_size)):
            idx = order[start : start + spec.batch_size]
            gw, gb, loss = backward(model, X[idx], y[idx])
            history.append((epoch, bi, loss))
            for k in range(len(model.weights)):
                model.weights[k] -= spec.learning_rate * gw[k]
                model.biases[k] -= spec.learning_rate * gb[k]
        if len(val_idx):
            val_losses.append(loss_on(model, X[val_idx], y[val_idx]))
    return TrainResult(model=model, history=history, val_losses=val_losses)


def loss_history_csv(history: list[tuple[int, int, float]]) -> str:
    lines = ["epoch,batch,loss"]
    for epoch, batch, loss in history:
        lines.append(f"{epoch},{batch},{repr(float(loss))}")
    return "\n".join(lines) + "\n"


def predict_speedup(model: RegressionModel, m: Module, fname: str) -> float:
    """Feature extraction, preprocessing, forward pass, stability clamp."""
    if model.preprocess is None:
        raise ModelError("model has no preprocessing state attached")
    feats = extract_function_features(m, fname).to_array()
    raw = forward(model, transform(model.preprocess, feats))
    lo, hi = model.clamp
    return min(max(raw, lo), hi)


# ---------------------------------------------------------------------------
# Leave-one-out cross-validation over programs.


@dataclass
class FoldReport:
    program_id: str
    n_train: int
    n_test: int
    mse: float
    baseline_mse: float  # constant mean predictor fitted on the training fold
    train_hash: str
    test_hash: str


@dataclass
class CrossValResult:
    folds: list[FoldReport]
    geomean_mse: float


def _split_hash(samples: list[TrainingSample]) -> str:
    h = hashlib.sha256()
    for s in sorted(samples, key=lambda s: (s.program_id, s.config_id, s.function)):
        h.update(repr((s.program_id, s.config_id, s.function, s.features, s.label)).encode())
    return h.hexdigest()[:16]


def cross_validate(
    samples: list[TrainingSample],
    spec: TrainSpec = TrainSpec(),
    dims: tuple[int, ...] = LAYER_DIMS,
    program_ids: list[str] | None = None,
) -> CrossValResult:
    """Hold out one program at a time; fit preprocessing and model on the
    rest only, then score MSE on the held-out program's samples.

    A listed program whose samples were all filtered out upstream gets no
    fold; it is simply absent from the table.
    """
    with_samples = sorted({s.program_id for s in samples})
    if len(with_samples) < 3:
        raise ModelError(
            f"cross-validation needs at least 3 programs with samples, got {len(with_samples)}"
        )
    programs = sorted(program_ids) if program_ids is not None else with_samples
    folds = []
    for pid in programs:
        test = [s for s in samples if s.program_id == pid]
        rest = [s for s in samples if s.program_id != pid]
        if not test:
            continue
        ps = fit_preprocess(rest)
        result = train(rest, ps, spec, dims=dims)
        X_test, y_test = _sample_matrix(test, ps)
        mse = loss_on(result.model, X_test, y_test)
        train_mean = float(np.mean([s.label for s in rest]))
        baseline = float(np.mean((y_test - train_mean) ** 2))
        folds.append(
            FoldReport(
                program_id=pid,
                n_train=len(rest),
                n_test=len(test),
                mse=mse,
                baseline_mse=baseline,
                train_hash=_split_hash(rest),
                test_hash=_split_hash(test),
            )
        )
    errors = [f.mse for f in folds]
    geomean = 0.0
    if errors:
        if min(errors) <= 0.0:
            geomean = 0.0
        else:
            geomean = float(np.exp(np.mean(np.log(errors))))
    return CrossValResult(folds=folds, geomean_mse=geomean)


# ---------------------------------------------------------------------------
# Serialization.


def model_to_obj(model: RegressionModel) -> dict:
    return {
        "schema": PERFMODEL_SCHEMA,
        "dims": list(model.dims()),
        "slope": model.slope,
        "clamp": [model.clamp[0], model.clamp[1]],
        "weights": [[[float(v) for v in row] for row in W] for W in model.weights],
        "biases": [[float(v) for v in b] for b in model.biases],
        "preprocess": model.preprocess.to_obj() if model.preprocess else None,
    }


def model_from_obj(obj: dict) -> RegressionModel:
    if not isinstance(obj, dict) or obj.get("schema") != PERFMODEL_SCHEMA:
        raise SchemaError(f"expected schema {PERFMODEL_SCHEMA!r}, got {obj.get('schema')!r}")
    try:
        weights = [np.array(W, dtype=np.float64) for W in obj["weights"]]
        biases = [np.array(b, dtype=np.float64) for b in obj["biases"]]
        model = RegressionModel(
            weights=weights,
            biases=biases,
            slope=float(obj["slope"]),
            clamp=(float(obj["clamp"][0]), float(obj["clamp"][1])),
            preprocess=PreprocessState.from_obj(obj["preprocess"])
            if obj.get("preprocess")
            else None,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"malformed model record: {exc}") from exc
    if list(model.dims()) != list(obj["dims"]):
        raise SchemaError("stored dims do not match weight shapes")
    for W, b in zip(model.weights, model.biases):
        if W.shape[0] != b.shape[0]:
            raise SchemaError("bias length does not match weight rows")
    return model


def model_to_json(model: RegressionModel) -> str:
    return dumps(model_to_obj(model))
