"""Latency predictor used to veto actions that would likely miss their SLO.

A small MLP maps platform availability, the proposed (b, m_c) and the model
identity to the mean request latency observed when such an action ran. It is
fitted online on a rolling window of executed slots. Labels are standardized
with running statistics so one learning rate suits every catalog.
"""

from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from edgesched.env import BATCH_SIZES, CONCURRENCY, feature_vector
from edgesched.nn import Mlp
from edgesched.simcore import Dispatch, SimClock, execute_slot, memory_footprint
from edgesched.workload import Request

MIN_PREDICTION_MS = 0.01
WINDOW = 2000
HOLDOUT_EVERY = 5  # every fifth sample is held out: an 80/20 split
WARMUP_SAMPLES = 500
VETO_FRACTION = 0.9
HIDDEN = (32, 16)


@dataclass(frozen=True)
class PredictorSample:
    features: np.ndarray
    label: float  # observed mean latency, ms

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        if not math.isfinite(self.label):
            raise ValueError("non-finite label")
        if not self.label > 0:
            raise ValueError(f"label must be positive, got {self.label}")
        if not np.all((f >= 0.0) & (f <= 1.0)):
            raise ValueError("features must lie in [0, 1]")
        object.__setattr__(self, "features", f)


class RunningStats:
    """Welford mean/variance of the labels seen so far."""

    def __init__(self, n: int = 0, mean: float = 0.0, m2: float = 0.0):
        self.n, self.mean, self.m2 = int(n), float(mean), float(m2)

    def push(self, x: float) -> None:
        self.n += 1
        d = x - self.mean
        self.mean += d / self.n
        self.m2 += d * (x - self.mean)

    @property
    def std(self) -> float:
        if self.n < 2:
            return 1.0
        return max(math.sqrt(self.m2 / (self.n - 1)), 1e-6)


def predict_latency(net: Mlp, features, stats: RunningStats | None = None) -> float:
    """Predicted mean latency in ms, floored at 0.01 ms."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 1 or f.shape[0] != net.n_in:
        raise ValueError(f"feature vector of length {f.shape[-1]}, predictor expects {net.n_in}")
    out = float(net(f)[0])
    if stats is not None:
        out = out * stats.std + stats.mean
    return max(out, MIN_PREDICTION_MS)


def predictor_loss(net: Mlp, x, y_std):
    """Half mean squared error on standardized labels and its parameter gradient."""
    out, acts = net.forward_cache(x)
    err = out[:, 0] - np.asarray(y_std, dtype=np.float64)
    loss = 0.5 * float(np.mean(err ** 2))
    return loss, net.backward(acts, (err / len(err))[:, None])


class LatencyPredictor:
    def __init__(self, n_features: int, seed: int = 0, lr: float = 1e-3, batch_size: int = 64,
                 window: int = WINDOW, warmup: int = WARMUP_SAMPLES,
                 veto_fraction: float = VETO_FRACTION, steps_per_sample: int = 2):
        self.net = Mlp([int(n_features), *HIDDEN, 1], seed=seed)
        self.stats = RunningStats()
        self.lr = float(lr)
        self.batch_size = int(batch_size)
        self.warmup = int(warmup)
        self.veto_fraction = float(veto_fraction)
        self.steps_per_sample = int(steps_per_sample)
        self.train_x: deque = deque(maxlen=window - window // HOLDOUT_EVERY)
        self.train_y: deque = deque(maxlen=window - window // HOLDOUT_EVERY)
        self.hold_x: deque = deque(maxlen=window // HOLDOUT_EVERY)
        self.hold_y: deque = deque(maxlen=window // HOLDOUT_EVERY)
        self.seen = 0
        self.trained_samples = 0
        self.rng = np.random.default_rng(seed)

    @property
    def n_features(self) -> int:
        return self.net.n_in

    def add(self, sample: PredictorSample) -> None:
        if sample.features.shape != (self.n_features,):
            raise ValueError(f"sample has {sample.features.shape[0]} features, "
                             f"predictor expects {self.n_features}")
        self.seen += 1
        if self.seen % HOLDOUT_EVERY == 0:
            self.hold_x.append(sample.features)
            self.hold_y.append(sample.label)
        else:
            self.train_x.append(sample.features)
            self.train_y.append(sample.label)
            self.stats.push(sample.label)
            self.trained_samples += 1

    def train_steps(self, steps: int) -> float | None:
        """Minibatch squared-error steps on the training window; returns the last loss."""
        if not self.train_y:
            return None
        x = np.array(self.train_x)
        y = (np.array(self.train_y) - self.stats.mean) / self.stats.std
        loss = None
        for _ in range(steps):
            idx = self.rng.integers(0, len(y), size=min(self.batch_size, len(y)))
            loss, grad = predictor_loss(self.net, x[idx], y[idx])
            self.net.apply_gradient(grad, self.lr)
        return loss

    def fit_online(self, samples: Iterable[PredictorSample]) -> "LatencyPredictor":
        n = 0
        for s in samples:
            self.add(s)
            n += 1
        if n == 0:
            raise ValueError("fit_online needs at least one sample")
        self.train_steps(self.steps_per_sample * n)
        return self

    def predict(self, features) -> float:
        return predict_latency(self.net, features, self.stats)

    def predict_many(self, x) -> np.ndarray:
        out = self.net(np.atleast_2d(x))[:, 0] * self.stats.std + self.stats.mean
        return np.maximum(out, MIN_PREDICTION_MS)

    def holdout_error(self) -> float:
        """Mean relative error on the held-out part of the window."""
        if not self.hold_y:
            raise ValueError("holdout set is empty")
        y = np.array(self.hold_y)
        return float(np.mean(np.abs(self.predict_many(np.array(self.hold_x)) - y) / y))

    def admit(self, env, model: str, b: int, m_c: int) -> bool:
        """Scheduler hook: True to run (b, m_c) for ``model`` as proposed."""
        head = env.queues[model].head()
        slo = head.slo if head is not None else env.by_name[model].slo
        features = env.predictor_features(model, b, m_c)
        return admission_check(self, [slo], (b, m_c), features) == "admit"

    def observe_results(self, env, results) -> None:
        """Profiler hook: learn from the slot's executed dispatches."""
        batch = []
        for res in results:
            if res.outcome.overflowed or res.features is None:
                continue
            batch.append(PredictorSample(res.features, res.outcome.mean_latency_ms()))
        if batch:
            self.fit_online(batch)

    # -- persistence ---------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "net": self.net.to_dict(),
            "stats": {"n": self.stats.n, "mean": self.stats.mean, "m2": self.stats.m2},
            "seen": self.seen,
            "trained_samples": self.trained_samples,
            "lr": self.lr, "batch_size": self.batch_size, "warmup": self.warmup,
            "veto_fraction": self.veto_fraction, "steps_per_sample": self.steps_per_sample,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LatencyPredictor":
        p = cls(d["net"]["layer_dims"][0], seed=d["net"]["seed"], lr=d["lr"],
                batch_size=d["batch_size"], warmup=d["warmup"],
                veto_fraction=d["veto_fraction"], steps_per_sample=d["steps_per_sample"])
        p.net = Mlp.from_dict(d["net"])
        p.stats = RunningStats(**d["stats"])
        p.seen = int(d["seen"])
        p.trained_samples = int(d["trained_samples"])
        return p

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, text: str) -> "LatencyPredictor":
        return cls.from_dict(json.loads(text))


def admission_check(predictor: LatencyPredictor, batch_slos: Sequence[float], action,
                    platform_features) -> str:
    """``"veto"`` when a warmed-up predictor expects the batch to miss its
    tightest SLO by the safety margin, else ``"admit"``.

    ``batch_slos`` may be requests (anything with ``.slo``) or plain numbers.
    """
    if predictor.trained_samples < predictor.warmup:
        return "admit"
    slos = [getattr(r, "slo", r) for r in batch_slos]
    if not slos:
        return "admit"
    predicted = predictor.predict(platform_features)
    return "veto" if predicted > predictor.veto_fraction * min(slos) else "admit"


@dataclass
class PredictorReport:
    train_size: int
    holdout_size: int
    nn_error: float
    linear_error: float

    def to_json(self) -> str:
        return json.dumps({"split": [self.train_size, self.holdout_size],
                           "nn_error": self.nn_error, "linear_error": self.linear_error})


def affine_fit(x, y) -> np.ndarray:
    """Least-squares affine map; returns weights with the intercept last."""
    a = np.hstack([np.asarray(x), np.ones((len(x), 1))])
    coef, *_ = np.linalg.lstsq(a, np.asarray(y), rcond=None)
    return coef


def affine_predict(coef, x) -> np.ndarray:
    return np.hstack([np.asarray(x), np.ones((len(x), 1))]) @ coef


def relative_error(pred, y) -> float:
    y = np.asarray(y, dtype=np.float64)
    return float(np.mean(np.abs(np.asarray(pred) - y) / y))


def evaluate_split(samples: Sequence[PredictorSample], n_train: int, seed: int = 0,
                   epochs: int = 300) -> PredictorReport:
    """Fit the network and an affine baseline on the first ``n_train`` samples
    and score both on the rest."""
    if not 0 < n_train < len(samples):
        raise ValueError("need a non-empty train and holdout split")
    x = np.array([s.features for s in samples])
    y = np.array([s.label for s in samples])
    pred = LatencyPredictor(x.shape[1], seed=seed, window=len(samples) * 2)
    for s in samples[:n_train]:
        pred.train_x.append(s.features)
        pred.train_y.append(s.label)
        pred.stats.push(s.label)
    pred.trained_samples = n_train
    pred.train_steps(epochs * max(1, n_train // pred.batch_size))
    nn_err = relative_error(pred.predict_many(x[n_train:]), y[n_train:])
    coef = affine_fit(x[:n_train], y[:n_train])
    lin_err = relative_error(affine_predict(coef, x[n_train:]), y[n_train:])
    return PredictorReport(n_train, len(samples) - n_train, nn_err, lin_err)


def simulate_samples(catalog, spec, n: int, seed: int = 0, max_b: int = 32,
                     max_mc: int = 4, max_corunners: int = 3) -> list[PredictorSample]:
    """Labelled samples drawn straight from the executor.

    Each sample places a random (b, m_c) for one model next to up to
    ``max_corunners`` other random dispatches, all arriving at slot start.
    Features describe the whole slot's usage; the label is the target
    model's mean latency. Draws that overflow memory are redrawn.
    """
    rng = np.random.default_rng(seed)
    catalog = list(catalog)
    b_grid = [b for b in BATCH_SIZES if b <= max_b]
    mc_grid = [c for c in CONCURRENCY if c <= max_mc]
    max_instances = len(catalog) * CONCURRENCY[-1]
    out: list[PredictorSample] = []
    rid = 0
    while len(out) < n:
        k = int(rng.integers(0, min(max_corunners, len(catalog) - 1) + 1))
        chosen = [catalog[i] for i in rng.permutation(len(catalog))[:k + 1]]
        plans = [(p, int(rng.choice(b_grid)), int(rng.choice(mc_grid))) for p in chosen]
        mem = sum(memory_footprint(p, b, c) for p, b, c in plans)
        if mem > spec.mem_capacity:
            continue
        dispatches = []
        for p, b, c in plans:
            for _ in range(c):
                batch = [Request(rid + j, p.name, p.input_type, (p.input_dim,), p.slo, 0)
                         for j in range(b)]
                rid += b
                dispatches.append(Dispatch(p, batch, c, b=b))
        outcomes = execute_slot(SimClock(), dispatches, spec)
        target, b, c = plans[0]
        lat = [v for o in outcomes if o.model == target.name
               for v in o.per_request_latency.values()]
        label = float(np.mean(lat)) / 1000.0
        inst = sum(c for _, _, c in plans)
        f = feature_vector(catalog, target.name, mem / spec.mem_capacity,
                           inst / max_instances, b, c)
        out.append(PredictorSample(f, label))
    return out
