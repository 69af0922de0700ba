"""Warm-start predictor: a feedforward rectifier network trained end to end.

The network maps a problem parameter to an initial iterate for the
splitting engine.  Hidden layers apply ``max(W y + b, 0)``; the output
layer is affine.  Training minimizes the mean fixed-point-residual loss
after ``k`` unrolled iterations with Adam, chaining the engine adjoint
(``unroll.backward_batch``) through standard reverse-mode layer gradients.
Inputs are standardized with training-set statistics stored on the model,
so inference reproduces the exact training-time transform.

Everything is deterministic given (config, seed): weight init is the only
randomness, batches are consumed in fixed sample order, and gradients are
reduced with fixed-order BLAS contractions, so identical runs produce
bitwise-identical models.
"""

from __future__ import annotations

import base64
import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import linalg, unroll
from .errors import (
    BadParameterDimensionError,
    CorruptModelFileError,
    DivergenceError,
)
from .qp import ParametricFamily

MODEL_MAGIC = "drws-predictor"
MODEL_VERSION = 1
STD_FLOOR = 1e-8


@dataclass
class PredictorModel:
    """Layer weights/biases plus input-normalization statistics."""

    weights: list[np.ndarray]  # each (fan_out, fan_in)
    biases: list[np.ndarray]  # each (fan_out,)
    input_mean: np.ndarray
    input_std: np.ndarray
    normalize: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    def copy(self) -> "PredictorModel":
        return PredictorModel(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            input_mean=self.input_mean.copy(),
            input_std=self.input_std.copy(),
            normalize=self.normalize,
            meta=dict(self.meta),
        )


def init_model(
    d: int,
    out_dim: int,
    hidden: tuple[int, ...] = (100, 100),
    seed: int = 0,
    normalize: bool = True,
    input_mean: np.ndarray | None = None,
    input_std: np.ndarray | None = None,
    meta: dict | None = None,
) -> PredictorModel:
    """Seeded init: weights uniform in +-sqrt(6 / fan_in), biases zero."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 2)))
    sizes = [d, *hidden, out_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-bound, bound, (fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return PredictorModel(
        weights=weights,
        biases=biases,
        input_mean=np.zeros(d) if input_mean is None else np.asarray(input_mean, float),
        input_std=np.ones(d) if input_std is None else np.asarray(input_std, float),
        normalize=normalize,
        meta=dict(meta or {}),
    )


def normalization_stats(thetas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate mean and std of the training set, std floored."""
    thetas = np.asarray(thetas, dtype=np.float64)
    return thetas.mean(axis=0), np.maximum(thetas.std(axis=0), STD_FLOOR)


def _normalize_batch(model: PredictorModel, thetas_t: np.ndarray) -> np.ndarray:
    if not model.normalize:
        return thetas_t
    return (thetas_t - model.input_mean[:, None]) / model.input_std[:, None]


def forward_batch(
    model: PredictorModel, thetas_t: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    """Forward pass on a (d, N) input block; returns (activations, output).

    ``activations[l]`` is the input seen by layer ``l`` (normalized input
    for l = 0), which is exactly what the layer gradients need.
    """
    h = _normalize_batch(model, thetas_t)
    acts = [h]
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        h = w @ h + b[:, None]
        if l < last:
            h = np.maximum(h, 0.0)
            acts.append(h)
    return acts, h


def predict(model: PredictorModel, theta) -> np.ndarray:
    """Map one parameter vector to a warm start."""
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    if theta.shape != (model.d,):
        raise BadParameterDimensionError(
            f"theta has shape {theta.shape}, model expects ({model.d},)"
        )
    _, out = forward_batch(model, theta[:, None])
    return out[:, 0]


def predict_batch(model: PredictorModel, thetas: np.ndarray) -> np.ndarray:
    """Warm starts for an (N, d) parameter block, returned as (n+m, N)."""
    thetas = np.asarray(thetas, dtype=np.float64)
    if thetas.ndim != 2 or thetas.shape[1] != model.d:
        raise BadParameterDimensionError(
            f"thetas have shape {thetas.shape}, model expects (N, {model.d})"
        )
    _, out = forward_batch(model, thetas.T.copy())
    return out


def nn_backward_batch(
    model: PredictorModel, acts: list[np.ndarray], upstream: np.ndarray
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Summed layer gradients for a block of upstream output gradients.

    Rectifier subderivative at zero is zero (the stored activation is zero
    exactly there, so masking on positivity realizes that convention).
    """
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(model.weights)
    delta = upstream
    for l in range(len(model.weights) - 1, -1, -1):
        grads[l] = (delta @ acts[l].T, delta.sum(axis=1))
        if l > 0:
            delta = (model.weights[l].T @ delta) * (acts[l] > 0.0)
    return grads


def nn_backward(
    model: PredictorModel, theta, upstream
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Exact chain-rule gradients of all (W_l, b_l) for one sample."""
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    upstream = linalg.as_vector(upstream, model.out_dim)
    acts, _ = forward_batch(model, theta[:, None])
    return nn_backward_batch(model, acts, upstream[:, None])


@dataclass
class TrainConfig:
    """Training controls; defaults are the desk-scale configuration."""

    k: int = 15
    epochs: int = 100
    batch_size: int = 0  # 0 = full batch
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    hidden: tuple[int, ...] = (100, 100)
    normalize: bool = True
    pretrain: bool = False
    pretrain_epochs: int = 50

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class TrainHistory:
    """Per-epoch train loss, held-out loss, and wall-clock seconds."""

    train_loss: list[float] = field(default_factory=list)
    holdout_loss: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)


class _Adam:
    def __init__(self, shapes, lr, beta1, beta2, eps):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _flatten_params(model: PredictorModel) -> list[np.ndarray]:
    out = []
    for w, b in zip(model.weights, model.biases):
        out.extend((w, b))
    return out


def composite_gradient(
    fact: linalg.LUFactorization,
    n: int,
    Q: np.ndarray,
    model: PredictorModel,
    thetas: np.ndarray,
    k: int,
) -> tuple[float, list[np.ndarray], int]:
    """Mean loss and mean parameter gradients through k unrolled steps.

    Samples whose loss is at numerical zero are skipped for the step (zero
    gradient contribution) but still count as zero in the mean loss.
    """
    count = thetas.shape[0]
    acts, z_hat = forward_batch(model, np.asarray(thetas, float).T.copy())
    tape = unroll.forward_tape_batch(fact, n, Q, z_hat, k)
    G, skipped = unroll.backward_batch(fact, n, tape)
    losses = np.where(skipped, 0.0, tape.losses)
    grads = nn_backward_batch(model, acts, G / count)
    flat = []
    for dw, db in grads:
        flat.extend((dw, db))
    return float(losses.mean()), flat, int(skipped.sum())


def empirical_risk(
    fact: linalg.LUFactorization,
    n: int,
    Q: np.ndarray,
    model: PredictorModel,
    thetas: np.ndarray,
    k: int,
) -> float:
    """Mean fixed-point-residual loss of the model after k steps."""
    z_hat = predict_batch(model, thetas)
    tape = unroll.forward_tape_batch(fact, n, Q, z_hat, k)
    return float(tape.losses.mean())


def _batches(count: int, batch_size: int):
    if batch_size <= 0 or batch_size >= count:
        yield slice(0, count)
        return
    for start in range(0, count, batch_size):
        yield slice(start, min(start + batch_size, count))


def train(
    family: ParametricFamily,
    thetas: np.ndarray,
    cfg: TrainConfig,
    holdout_thetas: np.ndarray | None = None,
    initial: PredictorModel | None = None,
) -> tuple[PredictorModel, TrainHistory]:
    """Fit the predictor on a family's parameter samples.

    A forward pass that produces non-finite iterates aborts with the
    offending sample identified.  ``initial`` (e.g. a pretrained model)
    overrides the seeded initialization but keeps the Adam state fresh.
    """
    thetas = np.asarray(thetas, dtype=np.float64)
    if thetas.ndim != 2 or thetas.shape[0] == 0:
        raise ValueError("training set must be a nonempty (N, d) array")
    mean, std = normalization_stats(thetas)
    if initial is not None:
        model = initial.copy()
    else:
        model = init_model(
            d=family.d,
            out_dim=family.dim,
            hidden=tuple(cfg.hidden),
            seed=cfg.seed,
            normalize=cfg.normalize,
            input_mean=mean,
            input_std=std,
            meta={
                "family_id": family.family_id,
                "k": cfg.k,
                "seed": cfg.seed,
                "d": family.d,
                "out_dim": family.dim,
            },
        )
    fact = family.shared_fact()
    Q = family.q_batch(thetas)
    Q_hold = family.q_batch(holdout_thetas) if holdout_thetas is not None else None
    opt = _Adam(
        [p.shape for p in _flatten_params(model)],
        cfg.learning_rate,
        cfg.beta1,
        cfg.beta2,
        cfg.eps,
    )
    history = TrainHistory()
    count = thetas.shape[0]
    for _ in range(cfg.epochs):
        t0 = time.perf_counter()
        loss_sum = 0.0
        for sl in _batches(count, cfg.batch_size):
            try:
                loss, grads, _ = composite_gradient(
                    fact, family.n, Q[:, sl], model, thetas[sl], cfg.k
                )
            except Exception as exc:
                raise DivergenceError(
                    f"forward pass failed on batch {sl.start}:{sl.stop} "
                    f"(first theta: {thetas[sl][0]!r}): {exc}"
                ) from exc
            opt.step(_flatten_params(model), grads)
            loss_sum += loss * (sl.stop - sl.start)
        history.train_loss.append(loss_sum / count)
        if Q_hold is not None:
            history.holdout_loss.append(
                empirical_risk(fact, family.n, Q_hold, model, holdout_thetas, cfg.k)
            )
        else:
            history.holdout_loss.append(float("nan"))
        history.seconds.append(time.perf_counter() - t0)
    return model, history


def pretrain(
    model: PredictorModel,
    thetas: np.ndarray,
    targets: np.ndarray,
    epochs: int,
    learning_rate: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> PredictorModel:
    """Regression warm-up: minimize mean ||h(theta_i) - target_i||^2 with Adam.

    Targets are high-accuracy fixed points supplied by the caller; the
    returned model is typically passed to :func:`train` as ``initial``.
    """
    thetas = np.asarray(thetas, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    model = model.copy()
    count = thetas.shape[0]
    opt = _Adam(
        [p.shape for p in _flatten_params(model)], learning_rate, beta1, beta2, eps
    )
    thetas_t = thetas.T.copy()
    targets_t = targets.T.copy()
    for _ in range(epochs):
        acts, out = forward_batch(model, thetas_t)
        upstream = 2.0 * (out - targets_t) / count
        grads = nn_backward_batch(model, acts, upstream)
        flat = []
        for dw, db in grads:
            flat.extend((dw, db))
        opt.step(_flatten_params(model), flat)
    return model


def _encode(a: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode()


def _decode(text: str, shape) -> np.ndarray:
    raw = base64.b64decode(text.encode())
    a = np.frombuffer(raw, dtype="<f8").reshape(shape)
    return a.astype(np.float64, copy=True)


def _payload(model: PredictorModel) -> dict:
    return {
        "magic": MODEL_MAGIC,
        "version": MODEL_VERSION,
        "meta": model.meta,
        "normalize": model.normalize,
        "d": model.d,
        "out_dim": model.out_dim,
        "input_mean": _encode(model.input_mean),
        "input_std": _encode(model.input_std),
        "layers": [
            {"shape": list(w.shape), "w": _encode(w), "b": _encode(b)}
            for w, b in zip(model.weights, model.biases)
        ],
    }


def _digest(payload: dict) -> str:
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()


def save_model(model: PredictorModel, path) -> None:
    """Write the documented JSON container (see docs/formats.md)."""
    payload = _payload(model)
    payload["digest"] = _digest({k: v for k, v in payload.items() if k != "digest"})
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_model(path) -> PredictorModel:
    """Read a model container, verifying magic, version, and digest."""
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptModelFileError(f"unreadable model file {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("magic") != MODEL_MAGIC:
        raise CorruptModelFileError(f"{path}: missing or wrong magic string")
    if payload.get("version") != MODEL_VERSION:
        raise CorruptModelFileError(
            f"{path}: version {payload.get('version')!r} unsupported "
            f"(expected {MODEL_VERSION})"
        )
    stored = payload.get("digest")
    if stored != _digest({k: v for k, v in payload.items() if k != "digest"}):
        raise CorruptModelFileError(f"{path}: integrity digest mismatch")
    try:
        weights = [_decode(l["w"], tuple(l["shape"])) for l in payload["layers"]]
        biases = [_decode(l["b"], (l["shape"][0],)) for l in payload["layers"]]
        model = PredictorModel(
            weights=weights,
            biases=biases,
            input_mean=_decode(payload["input_mean"], (payload["d"],)),
            input_std=_decode(payload["input_std"], (payload["d"],)),
            normalize=bool(payload["normalize"]),
            meta=dict(payload.get("meta", {})),
        )
    except (KeyError, ValueError) as exc:
        raise CorruptModelFileError(f"{path}: malformed payload: {exc}") from exc
    return model
