"""Three-headed MLP estimating joint features from pen-coordinate windows."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .replay import ESTIMATED, GROUPS, JointFeatureSeries
from .signature_io import GENUINE, ConfigError, parse_key

HALF_WINDOW = 5
N_INPUT = 2 * (2 * HALF_WINDOW + 1)
N_HIDDEN = 12
HEAD_SIZE = 6
N_OUTPUT = HEAD_SIZE * len(GROUPS)
# spans below this fraction of the magnitude are numerical noise, not signal
CONSTANT_RTOL = 1e-6
MODEL_FORMAT = "sigkin-mlp"
MODEL_VERSION = 1
PARAM_NAMES = ("W_h", "b_h", "W_theta", "b_theta", "W_omega", "b_omega", "W_tau", "b_tau")


class TrainingError(RuntimeError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class ModelFormatError(ValueError):
    pass


# ------------------------------------------------------------------------ inputs

def pen_coordinates(signature):
    """Pen (x, y) centred on the bounding box and divided by its longer side.

    This is the same normalisation the replay applies before placing the
    signature in the writing square, so inputs and joint targets share a frame.
    """
    x, y = signature.x, signature.y
    extent = max(np.ptp(x), np.ptp(y))
    if not extent > 0:
        extent = 1.0
    cx = 0.5 * (x.max() + x.min())
    cy = 0.5 * (y.max() + y.min())
    return np.column_stack(((x - cx) / extent, (y - cy) / extent))


def raw_windows(signature):
    """Unscaled ``(M, 22)`` windows, points i-5..i+5 as interleaved (x, y)."""
    xy = pen_coordinates(signature)
    m = xy.shape[0]
    idx = np.clip(np.arange(m)[:, None] + np.arange(-HALF_WINDOW, HALF_WINDOW + 1)[None, :],
                  0, m - 1)
    return xy[idx].reshape(m, N_INPUT)


def build_windows(signature, scalers):
    return scalers.transform_inputs(raw_windows(signature))


# ----------------------------------------------------------------------- scalers

def _is_constant(lo, hi):
    scale = np.maximum(1.0, np.maximum(np.abs(lo), np.abs(hi)))
    return (hi - lo) <= CONSTANT_RTOL * scale


def _minmax_scale(values, lo, hi, constant):
    span = np.where(constant, 1.0, hi - lo)
    out = (values - lo) / span
    return np.where(constant, 0.5, out)


@dataclass(eq=False)
class ScalerSet:
    in_min: np.ndarray
    in_max: np.ndarray
    out_min: np.ndarray
    out_max: np.ndarray

    def __post_init__(self):
        for name in ("in_min", "in_max", "out_min", "out_max"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.in_min.shape != (N_INPUT,) or self.out_min.shape != (N_OUTPUT,):
            raise ModelFormatError("scaler dimensions do not match the network")
        if np.any(self.in_max < self.in_min) or np.any(self.out_max < self.out_min):
            raise ModelFormatError("scaler max below min")

    @property
    def constant_inputs(self):
        return _is_constant(self.in_min, self.in_max)

    @property
    def constant_targets(self):
        return _is_constant(self.out_min, self.out_max)

    def transform_inputs(self, x):
        # inputs outside the training range are clamped
        return np.clip(_minmax_scale(x, self.in_min, self.in_max, self.constant_inputs), 0.0, 1.0)

    def transform_targets(self, y):
        return _minmax_scale(y, self.out_min, self.out_max, self.constant_targets)

    def inverse_targets(self, y):
        span = self.out_max - self.out_min
        return np.where(self.constant_targets, self.out_min, self.out_min + y * span)

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("in_min", "in_max", "out_min", "out_max")}


def target_matrix(series):
    return series.matrix


def fit_scalers(signatures, features):
    """Global per-dimension min/max over the training signatures only."""
    if not signatures:
        raise ConfigError("cannot fit scalers on an empty training set")
    x = np.vstack([raw_windows(s) for s in signatures])
    y = np.vstack([target_matrix(f) for f in features])
    return ScalerSet(x.min(0), x.max(0), y.min(0), y.max(0))


# ------------------------------------------------------------------------- model

@dataclass(eq=False)
class MLPModel:
    W_h: np.ndarray
    b_h: np.ndarray
    W_theta: np.ndarray
    b_theta: np.ndarray
    W_omega: np.ndarray
    b_omega: np.ndarray
    W_tau: np.ndarray
    b_tau: np.ndarray
    scalers: ScalerSet
    dropout_rate: float = 0.3
    version: int = MODEL_VERSION
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = param_shapes(self.W_h.shape[0])
        for name in PARAM_NAMES:
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shapes[name]:
                raise ModelFormatError(f"tensor {name} has shape {arr.shape}, "
                                       f"expected {shapes[name]}")
            if not np.all(np.isfinite(arr)):
                raise ModelFormatError(f"tensor {name} has non-finite values")
            setattr(self, name, arr)
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ModelFormatError("dropout_rate must lie in [0, 1)")

    @property
    def params(self):
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def with_params(self, params):
        return MLPModel(**params, scalers=self.scalers, dropout_rate=self.dropout_rate,
                        version=self.version, metadata=dict(self.metadata))


def param_shapes(n_hidden=N_HIDDEN):
    shapes = {"W_h": (n_hidden, N_INPUT), "b_h": (n_hidden,)}
    for g in GROUPS:
        shapes[f"W_{g}"] = (HEAD_SIZE, n_hidden)
        shapes[f"b_{g}"] = (HEAD_SIZE,)
    return shapes


def init_params(rng, n_hidden=N_HIDDEN):
    """He-uniform hidden layer, Glorot-uniform heads, zero biases."""
    lim_h = np.sqrt(6.0 / N_INPUT)
    lim_o = np.sqrt(6.0 / (n_hidden + HEAD_SIZE))
    params = {"W_h": rng.uniform(-lim_h, lim_h, (n_hidden, N_INPUT)), "b_h": np.zeros(n_hidden)}
    for g in GROUPS:
        params[f"W_{g}"] = rng.uniform(-lim_o, lim_o, (HEAD_SIZE, n_hidden))
        params[f"b_{g}"] = np.zeros(HEAD_SIZE)
    return params


def zero_model(scalers=None, n_hidden=N_HIDDEN):
    scalers = scalers or ScalerSet(np.zeros(N_INPUT), np.ones(N_INPUT), np.zeros(N_OUTPUT),
                                   np.ones(N_OUTPUT))
    return MLPModel(**{k: np.zeros(s) for k, s in param_shapes(n_hidden).items()}, scalers=scalers)


def _sigmoid(z):
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward(params, x, mask, keep):
    z = x @ params["W_h"].T + params["b_h"]
    h = np.maximum(z, 0.0)
    hd = h * mask / keep if mask is not None else h
    W_out = np.vstack([params[f"W_{g}"] for g in GROUPS])
    b_out = np.concatenate([params[f"b_{g}"] for g in GROUPS])
    y = _sigmoid(hd @ W_out.T + b_out)
    return y, (z, hd, W_out)


def _dropout_mask(rng, shape, rate):
    return (rng.random(shape) >= rate).astype(float)


def mlp_forward(model, x, training=False, rng=None):
    """Network output for a window or a batch of windows, values in (0, 1).

    With ``training`` set, inverted dropout is applied to the hidden layer.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    mask = None
    if training and model.dropout_rate > 0:
        if rng is None:
            raise ValueError("training-mode forward needs an rng")
        mask = _dropout_mask(rng, (xb.shape[0], model.W_h.shape[0]), model.dropout_rate)
    y, _ = _forward(model.params, xb, mask, 1.0 - model.dropout_rate)
    return y[0] if single else y


def composite_loss(pred, target):
    """``(L_total, L_theta, L_omega, L_tau)``; each head loss is a mean squared error."""
    err2 = (np.asarray(pred, float) - np.asarray(target, float)) ** 2
    err2 = np.atleast_2d(err2)
    parts = [float(err2[:, k * HEAD_SIZE:(k + 1) * HEAD_SIZE].mean()) for k in range(len(GROUPS))]
    return (sum(parts), *parts)


def loss_and_grads(params, x, target, mask=None, keep=1.0):
    """Composite loss and its analytic gradient for every parameter."""
    y, (z, hd, W_out) = _forward(params, x, mask, keep)
    n = x.shape[0]
    loss = composite_loss(y, target)
    dy = 2.0 * (y - target) / (n * HEAD_SIZE)
    dz_out = dy * y * (1.0 - y)
    grads = {}
    dW_out = dz_out.T @ hd
    db_out = dz_out.sum(0)
    for k, g in enumerate(GROUPS):
        sl = slice(k * HEAD_SIZE, (k + 1) * HEAD_SIZE)
        grads[f"W_{g}"] = dW_out[sl]
        grads[f"b_{g}"] = db_out[sl]
    dh = dz_out @ W_out
    if mask is not None:
        dh = dh * mask / keep
    dz = dh * (z > 0)
    grads["W_h"] = dz.T @ x
    grads["b_h"] = dz.sum(0)
    return loss, grads


# ---------------------------------------------------------------------- training

@dataclass
class TrainingConfig:
    learning_rate: float = 0.01
    val_fraction: float = 0.2
    patience: int = 1
    max_epochs: int = 50
    batch_size: int = 256
    seed: int = 0
    dropout_rate: float = 0.3
    hidden_units: int = N_HIDDEN
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.max_epochs < 1 or self.batch_size < 1:
            raise ConfigError("max_epochs and batch_size must be >= 1")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown training option(s): {sorted(unknown)}")
        return cls(**d)


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] = params[k] - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _stack(signatures, features, scalers):
    x = np.vstack([build_windows(s, scalers) for s in signatures])
    y = np.vstack([scalers.transform_targets(target_matrix(f)) for f in features])
    return x, y


def _split_validation(n, fraction, rng):
    """Indices of (training, validation) signatures; at least one of each."""
    order = rng.permutation(n)
    n_val = min(max(1, int(round(fraction * n))), n - 1)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def train(signatures, features, config=None, validation=None):
    """Fit the MLP with Adam on the composite loss, early stopping on validation.

    Parameters
    ----------
    signatures, features : sequences
        Paired pen trajectories and simulated joint features.
    config : TrainingConfig
    validation : tuple of sequences, optional
        Explicit ``(signatures, features)`` for early stopping. By default a
        seeded ``val_fraction`` of the given signatures is held out.

    Returns
    -------
    MLPModel
        The snapshot with the lowest validation loss; ``metadata['history']``
        lists per-epoch training and validation losses.
    """
    config = config or TrainingConfig()
    signatures, features = list(signatures), list(features)
    if len(signatures) != len(features):
        raise ConfigError("signatures and features differ in length")
    rng_split, rng_init, rng_shuffle, rng_drop = (
        np.random.default_rng(s) for s in np.random.SeedSequence(config.seed).spawn(4))
    if validation is None:
        if len(signatures) < 2:
            raise ConfigError("need at least two signatures to hold out a validation set")
        tr, va = _split_validation(len(signatures), config.val_fraction, rng_split)
        val_sigs = [signatures[i] for i in va]
        val_feats = [features[i] for i in va]
        signatures = [signatures[i] for i in tr]
        features = [features[i] for i in tr]
    else:
        val_sigs, val_feats = list(validation[0]), list(validation[1])
    scalers = fit_scalers(signatures, features)
    x, y = _stack(signatures, features, scalers)
    xv, yv = _stack(val_sigs, val_feats, scalers)

    params = init_params(rng_init, config.hidden_units)
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.eps)
    keep = 1.0 - config.dropout_rate

    def val_loss(p):
        return loss_and_grads(p, xv, yv)[0][0]

    best = {k: v.copy() for k, v in params.items()}
    best_val = val_loss(params)
    history = [{"epoch": 0, "train": float(loss_and_grads(params, x, y)[0][0]), "val": best_val}]
    best_epoch = 0
    stale = 0
    n = x.shape[0]
    for epoch in range(1, config.max_epochs + 1):
        order = rng_shuffle.permutation(n)
        running = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            mask = None
            if config.dropout_rate > 0:
                mask = _dropout_mask(rng_drop, (idx.size, config.hidden_units), config.dropout_rate)
            loss, grads = loss_and_grads(params, x[idx], y[idx], mask, keep)
            if not np.isfinite(loss[0]):
                raise TrainingError(f"non-finite loss at epoch {epoch}", epoch)
            running += loss[0] * idx.size
            opt.step(params, grads)
        v = val_loss(params)
        if not np.isfinite(v):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}", epoch)
        history.append({"epoch": epoch, "train": running / n, "val": v})
        if v < best_val:
            best_val, best_epoch, stale = v, epoch, 0
            best = {k: val.copy() for k, val in params.items()}
        else:
            stale += 1
            if stale >= config.patience:
                break
    meta = {"history": history, "best_epoch": best_epoch, "seed": config.seed,
            "n_train_samples": int(n), "n_val_samples": int(xv.shape[0])}
    return MLPModel(**best, scalers=scalers, dropout_rate=config.dropout_rate, metadata=meta)


# -------------------------------------------------------------------- estimation

def predict_scaled(model, signature):
    return mlp_forward(model, build_windows(signature, model.scalers))


def estimate_features(model, signature):
    """Joint features in physical units predicted for every pen sample."""
    y = model.scalers.inverse_targets(predict_scaled(model, signature))
    return JointFeatureSeries(signature.t.copy(), y[:, :6], y[:, 6:12], y[:, 12:],
                              source=ESTIMATED, user_id=signature.user_id,
                              label=signature.label, session=signature.session)


@dataclass
class EstimationMetrics:
    mae: dict
    mse: dict
    n: int

    def to_dict(self):
        return {"mae": dict(self.mae), "mse": dict(self.mse), "n": self.n}

    @classmethod
    def mean(cls, items):
        items = list(items)
        return cls({g: float(np.mean([m.mae[g] for m in items])) for g in GROUPS},
                   {g: float(np.mean([m.mse[g] for m in items])) for g in GROUPS},
                   int(sum(m.n for m in items)))


def evaluate_model(model, signatures, features):
    """Per-group MAE and MSE in the model's scaled target units."""
    pred = np.vstack([predict_scaled(model, s) for s in signatures])
    true = np.vstack([model.scalers.transform_targets(target_matrix(f)) for f in features])
    err = pred - true
    mae, mse = {}, {}
    for k, g in enumerate(GROUPS):
        e = err[:, k * HEAD_SIZE:(k + 1) * HEAD_SIZE]
        mae[g] = float(np.abs(e).mean())
        mse[g] = float((e ** 2).mean())
    return EstimationMetrics(mae, mse, int(err.shape[0]))


@dataclass
class CrossValidationResult:
    fold_metrics: list
    metrics: EstimationMetrics
    estimates: dict
    folds: list


def user_folds(users, k, seed):
    users = sorted(set(users))
    if len(users) < k:
        raise ConfigError(f"{len(users)} users cannot fill {k} folds")
    order = np.random.default_rng(seed).permutation(len(users))
    return [sorted(users[i] for i in part) for part in np.array_split(order, k)]


def cross_validate(signatures, features, config=None, k=4, train_labels=(GENUINE,)):
    """k-fold estimation with folds made of whole users.

    Parameters
    ----------
    signatures, features : dict
        Keyed by signature key; ``features`` must cover the keys used for
        training (labels in ``train_labels``) and metrics.

    Every signature of a test-fold user, forgeries included, gets its
    estimate from the one model that never saw that user.
    """
    config = config or TrainingConfig()
    users = {parse_key(key)[0] for key in signatures}
    folds = user_folds(users, k, config.seed)
    fold_metrics, estimates = [], {}
    for f, test_users in enumerate(folds):
        test_set = set(test_users)
        train_keys = [key for key in sorted(features)
                      if parse_key(key)[0] not in test_set
                      and signatures[key].label in train_labels]
        cfg = TrainingConfig(**{**config.__dict__, "seed": config.seed + 1000 * (f + 1)})
        model = train([signatures[key] for key in train_keys],
                      [features[key] for key in train_keys], cfg)
        test_keys = [key for key in sorted(signatures) if parse_key(key)[0] in test_set]
        scored = [key for key in test_keys if key in features
                  and signatures[key].label in train_labels]
        fold_metrics.append(evaluate_model(model, [signatures[key] for key in scored],
                                           [features[key] for key in scored]))
        for key in test_keys:
            estimates[key] = estimate_features(model, signatures[key])
    return CrossValidationResult(fold_metrics, EstimationMetrics.mean(fold_metrics), estimates,
                                 folds)


# ------------------------------------------------------------------ serialisation

def _payload(model):
    return {
        "format": MODEL_FORMAT,
        "version": model.version,
        "hidden_units": int(model.W_h.shape[0]),
        "dropout_rate": model.dropout_rate,
        "tensors": {name: {"shape": list(getattr(model, name).shape),
                           "data": getattr(model, name).ravel().tolist()}
                    for name in PARAM_NAMES},
        "scalers": model.scalers.to_dict(),
        "metadata": model.metadata,
    }


def save_model(model):
    """Serialise to UTF-8 JSON with a SHA-256 checksum over the payload."""
    body = json.dumps(_payload(model), sort_keys=True, separators=(",", ":"))
    digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
    return json.dumps({"sha256": digest, "payload": json.loads(body)}, sort_keys=True,
                      separators=(",", ":")).encode("utf-8")


def load_model(data):
    try:
        outer = json.loads(data.decode("utf-8"))
        payload = outer["payload"]
        digest = outer["sha256"]
    except (UnicodeDecodeError, ValueError, KeyError, TypeError) as exc:
        raise ModelFormatError(f"unreadable model file: {exc}") from exc
    body = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    if hashlib.sha256(body.encode("utf-8")).hexdigest() != digest:
        raise ModelFormatError("model checksum mismatch")
    if payload.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"not a {MODEL_FORMAT} file")
    if payload.get("version") != MODEL_VERSION:
        raise ModelFormatError(f"model version {payload.get('version')} is not supported "
                               f"(expected {MODEL_VERSION})")
    shapes = param_shapes(int(payload["hidden_units"]))
    tensors = {}
    for name in PARAM_NAMES:
        entry = payload["tensors"].get(name)
        if entry is None:
            raise ModelFormatError(f"missing tensor {name}")
        shape = tuple(entry["shape"])
        if shape != shapes[name]:
            raise ModelFormatError(f"tensor {name} has shape {shape}, expected {shapes[name]}")
        arr = np.array(entry["data"], dtype=float)
        if arr.size != int(np.prod(shape)):
            raise ModelFormatError(f"tensor {name} holds {arr.size} values for shape {shape}")
        tensors[name] = arr.reshape(shape)
    return MLPModel(**tensors, scalers=ScalerSet(**payload["scalers"]),
                    dropout_rate=float(payload["dropout_rate"]), version=payload["version"],
                    metadata=payload.get("metadata", {}))
