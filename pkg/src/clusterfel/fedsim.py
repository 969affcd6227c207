"""FedAvg with local mini-batch SGD on small numpy models.

Each round every client starts from the broadcast model, runs ``E`` epochs of
SGD and uploads; the server averages with weights ``n_k / n``.  Client RNG
streams are keyed by ``(seed, round, client)`` so results do not depend on the
order (or process) in which clients are trained.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import log_softmax, softmax

from .datagen import ClientDataset
from .errors import DimensionError, DivergenceError, ValidationError

log = logging.getLogger(__name__)


class SoftmaxRegression:
    """Multinomial logistic regression; weights are ``[W.ravel(), b]`` with W of shape (Y, d)."""

    convex = True

    def __init__(self, dim: int, num_classes: int):
        self.dim, self.num_classes = dim, num_classes
        self.size = num_classes * dim + num_classes

    def init(self, rng: np.random.Generator | None = None, scale: float = 0.0) -> np.ndarray:
        if scale == 0.0 or rng is None:
            return np.zeros(self.size)
        return scale * rng.standard_normal(self.size)

    def _split(self, w):
        Y, d = self.num_classes, self.dim
        return w[: Y * d].reshape(Y, d), w[Y * d:]

    def logits(self, w, X):
        W, b = self._split(w)
        return X @ W.T + b

    def loss(self, w, X, y) -> float:
        lp = log_softmax(self.logits(w, X), axis=1)
        return float(-lp[np.arange(len(y)), y].mean())

    def grad(self, w, X, y) -> np.ndarray:
        """Gradient of the mean cross-entropy over the batch."""
        P = softmax(self.logits(w, X), axis=1)
        P[np.arange(len(y)), y] -= 1.0
        P /= len(y)
        return np.concatenate([(P.T @ X).ravel(), P.sum(axis=0)])

    def sample_grads(self, w, X, y) -> np.ndarray:
        """Per-sample gradients, shape (n, size)."""
        P = softmax(self.logits(w, X), axis=1)
        P[np.arange(len(y)), y] -= 1.0
        gW = P[:, :, None] * X[:, None, :]
        return np.concatenate([gW.reshape(len(y), -1), P], axis=1)

    def predict(self, w, X) -> np.ndarray:
        return np.argmax(self.logits(w, X), axis=1)


class MLP:
    """One hidden tanh layer.  Non-convex, so theory checks refuse it."""

    convex = False

    def __init__(self, dim: int, num_classes: int, hidden: int = 32):
        self.dim, self.num_classes, self.hidden = dim, num_classes, hidden
        self.size = hidden * dim + hidden + num_classes * hidden + num_classes

    def init(self, rng: np.random.Generator | None = None, scale: float = 0.0) -> np.ndarray:
        rng = rng or np.random.default_rng(0)
        w = np.zeros(self.size)
        h, d = self.hidden, self.dim
        w[: h * d] = rng.standard_normal(h * d) / math.sqrt(d)
        o = h * d + h
        w[o: o + self.num_classes * h] = rng.standard_normal(self.num_classes * h) / math.sqrt(h)
        return w

    def _split(self, w):
        h, d, Y = self.hidden, self.dim, self.num_classes
        o = 0
        W1 = w[o: o + h * d].reshape(h, d); o += h * d
        b1 = w[o: o + h]; o += h
        W2 = w[o: o + Y * h].reshape(Y, h); o += Y * h
        return W1, b1, W2, w[o:]

    def _forward(self, w, X):
        W1, b1, W2, b2 = self._split(w)
        H = np.tanh(X @ W1.T + b1)
        return H, H @ W2.T + b2

    def logits(self, w, X):
        return self._forward(w, X)[1]

    def loss(self, w, X, y) -> float:
        lp = log_softmax(self.logits(w, X), axis=1)
        return float(-lp[np.arange(len(y)), y].mean())

    def grad(self, w, X, y) -> np.ndarray:
        W1, b1, W2, b2 = self._split(w)
        H, Z = self._forward(w, X)
        P = softmax(Z, axis=1)
        P[np.arange(len(y)), y] -= 1.0
        P /= len(y)
        gW2 = P.T @ H
        dH = (P @ W2) * (1 - H**2)
        gW1 = dH.T @ X
        return np.concatenate([gW1.ravel(), dH.sum(0), gW2.ravel(), P.sum(0)])

    def predict(self, w, X) -> np.ndarray:
        return np.argmax(self.logits(w, X), axis=1)


def make_model(kind: str, dim: int, num_classes: int, hidden: int = 32):
    if kind in ("logistic", "softmax"):
        return SoftmaxRegression(dim, num_classes)
    if kind == "mlp":
        return MLP(dim, num_classes, hidden)
    raise ValidationError(f"unknown model kind {kind!r}")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    local_epochs: int = 5
    batch_size: int = 10
    max_rounds: int = 100
    target_accuracy: float = 0.9
    rng_seed: int = 0
    model: str = "logistic"
    hidden: int = 32
    init_scale: float = 1.0
    stop_at_target: bool = True

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValidationError("learning_rate must be >= 0")
        if self.local_epochs < 1:
            raise ValidationError("local_epochs must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.max_rounds < 1:
            raise ValidationError("max_rounds must be >= 1")
        if not 0 <= self.target_accuracy <= 1:
            raise ValidationError("target_accuracy must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        return cls(**dict(d))


@dataclass
class TrainingTrace:
    loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)
    rounds_to_target: int | None = None
    weights: np.ndarray | None = None

    @property
    def final_accuracy(self) -> float:
        return self.accuracy[-1] if self.accuracy else float("nan")

    @property
    def reached(self) -> bool:
        return self.rounds_to_target is not None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "loss", "accuracy"])
        for t, (l, a) in enumerate(zip(self.loss, self.accuracy), start=1):
            w.writerow([t, repr(l), repr(a)])
        return buf.getvalue()


def local_sgd(model, w, ds: ClientDataset, cfg: TrainConfig, rng: np.random.Generator,
              record: list | None = None) -> np.ndarray:
    """``E`` epochs of shuffled mini-batch SGD from ``w``.

    When ``record`` is a list, the iterate after every step is appended.
    """
    if ds.n == 0:
        raise ValidationError("local_sgd needs a non-empty dataset")
    w = np.array(w, dtype=float, copy=True)
    bs = min(cfg.batch_size, ds.n)
    for _ in range(cfg.local_epochs):
        order = rng.permutation(ds.n)
        for start in range(0, ds.n, bs):
            idx = order[start: start + bs]
            with np.errstate(over="ignore", invalid="ignore"):
                w -= cfg.learning_rate * model.grad(w, ds.features[idx], ds.labels[idx])
            if not np.all(np.isfinite(w)):
                raise DivergenceError(
                    f"non-finite weights after an SGD step; learning rate {cfg.learning_rate} too large?"
                )
            if record is not None:
                record.append(w.copy())
    return w


def aggregate(models: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """Weighted average ``sum_k (n_k / n) w_k`` in fixed client order."""
    models = [np.asarray(m, dtype=float) for m in models]
    if not models:
        raise ValidationError("nothing to aggregate")
    if len({m.shape for m in models}) != 1:
        raise DimensionError("models have different shapes")
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(models),) or np.any(weights < 0) or weights.sum() <= 0:
        raise ValidationError("aggregation weights must be non-negative with a positive sum")
    weights = weights / weights.sum()
    out = np.zeros_like(models[0])
    for m, a in zip(models, weights):
        out += a * m
    return out


def global_loss(model, w, datasets: Sequence[ClientDataset]) -> float:
    """Unweighted mean over clients of each client's mean loss."""
    return float(np.mean([model.loss(w, d.features, d.labels) for d in datasets]))


def accuracy(model, w, ds: ClientDataset) -> float:
    return float(np.mean(model.predict(w, ds.features) == ds.labels))


def client_rng(seed: int, round_idx: int, client: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(round_idx), int(client)])


def _client_step(args):
    model, w, ds, cfg, t, k = args
    return local_sgd(model, w, ds, cfg, client_rng(cfg.rng_seed, t, k))


def run_federated(datasets: Sequence[ClientDataset], test: ClientDataset, cfg: TrainConfig,
                  workers: int = 1, recorder=None) -> TrainingTrace:
    """Synchronous FedAvg; stops at the first round whose test accuracy reaches the target.

    ``recorder(t, k, iterates)`` if given receives each client's per-step
    iterates (round ``t`` is 0-based); it forces sequential execution.
    """
    if not datasets:
        raise ValidationError("need at least one client")
    model = make_model(cfg.model, datasets[0].dim, datasets[0].num_classes, cfg.hidden)
    w = model.init(np.random.default_rng([int(cfg.rng_seed), 2**31 - 1]), cfg.init_scale)
    counts = [d.n for d in datasets]
    trace = TrainingTrace()
    pool = ProcessPoolExecutor(workers) if workers > 1 and recorder is None else None
    try:
        for t in range(cfg.max_rounds):
            if recorder is not None:
                locals_ = []
                for k, d in enumerate(datasets):
                    rec: list = []
                    locals_.append(local_sgd(model, w, d, cfg, client_rng(cfg.rng_seed, t, k), rec))
                    recorder(t, k, rec)
            elif pool is not None:
                jobs = [(model, w, d, cfg, t, k) for k, d in enumerate(datasets)]
                locals_ = list(pool.map(_client_step, jobs))
            else:
                locals_ = [_client_step((model, w, d, cfg, t, k)) for k, d in enumerate(datasets)]
            w = aggregate(locals_, counts)
            trace.loss.append(global_loss(model, w, datasets))
            acc = accuracy(model, w, test)
            trace.accuracy.append(acc)
            if trace.rounds_to_target is None and acc >= cfg.target_accuracy:
                trace.rounds_to_target = t + 1
                if cfg.stop_at_target:
                    break
    finally:
        if pool is not None:
            pool.shutdown()
    trace.weights = w
    return trace


@dataclass
class RoundsPoint:
    emd: float
    rounds: float | None
    per_seed: list[int | None]

    @property
    def censored(self) -> bool:
        return self.rounds is None


def measure_rounds_curve(levels, cfg: TrainConfig, workers: int = 1) -> list[RoundsPoint]:
    """Seed-averaged rounds-to-target for each heterogeneity level.

    ``levels`` is a sequence of ``(emd, runs)`` where ``runs`` is a list of
    ``(datasets, test, seed)`` triples, one per seed.  A level where any seed
    misses the target is censored (``rounds=None``) and logged.
    """
    levels = list(levels)
    if len(levels) < 3:
        raise ValidationError("a rounds curve needs at least 3 heterogeneity levels")
    out = []
    for emd_value, runs in levels:
        per_seed = []
        for datasets, test, seed in runs:
            tr = run_federated(datasets, test, _with_seed(cfg, seed), workers=workers)
            per_seed.append(tr.rounds_to_target)
        if any(r is None for r in per_seed):
            log.warning("level D=%.4f did not reach %.2f within %d rounds; censored",
                        emd_value, cfg.target_accuracy, cfg.max_rounds)
            out.append(RoundsPoint(float(emd_value), None, per_seed))
        else:
            out.append(RoundsPoint(float(emd_value), float(np.mean(per_seed)), per_seed))
    return out


def _with_seed(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, rng_seed=int(seed))
