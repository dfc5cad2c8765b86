"""Optimizers, step-size schedules, the training loop and the three-phase protocol.

The protocol trains the plain network, then the same network with spectral
layers and nothing switched off, then once more after reinitializing and
switching off a fraction ``p`` of the coefficients. Each phase starts from
scratch under the identical regime and seeds.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor_core as tc
from .data_io import Dataset, compute_stats, normalize
from .model_builder import Model, ModelConfig, build_model

PHASES = ("baseline", "spectral_p0", "spectral_p")
CSV_HEADER = ["phase", "epoch", "lr", "train_loss", "test_metric", "seconds"]
STREAMS = {"init": 0, "shuffle": 1, "dropout": 2, "mask": 3}


class DivergenceError(RuntimeError):
    """Raised when a loss or gradient stops being finite."""


def stream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named purpose of a run."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), STREAMS[name]]))


def stream_seed(seed: int, name: str) -> int:
    return int(np.random.SeedSequence([int(seed), STREAMS[name]]).generate_state(1, np.uint64)[0])


# -- optimizers ----------------------------------------------------------------

@dataclass
class OptimizerState:
    kind: str = "momentum"
    momentum: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    step_count: int = 0
    slots: dict = field(default_factory=dict)

    def slot(self, param, key):
        k = (param.name, key)
        if k not in self.slots:
            self.slots[k] = np.zeros_like(param.value)
        return self.slots[k]


def _check_finite(params):
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise DivergenceError(f"non-finite gradient in {p.name}")


def step_momentum(params, state: OptimizerState, lr: float):
    """Classic momentum: ``v <- mu v - lr g``; ``w <- w + v``."""
    _check_finite(params)
    for p in params:
        v = state.slot(p, "velocity")
        v *= state.momentum
        v -= lr * p.grad
        p.value += v
        p.enforce_mask()
    state.step_count += 1


def step_nag(params, state: OptimizerState, lr: float):
    """Nesterov momentum in the form that uses the gradient at the current weights.

    ``v <- mu v - lr g``; ``w <- w + mu v - lr g``.
    """
    _check_finite(params)
    mu = state.momentum
    for p in params:
        v = state.slot(p, "velocity")
        v *= mu
        v -= lr * p.grad
        p.value += mu * v - lr * p.grad
        p.enforce_mask()
    state.step_count += 1


def step_adam(params, state: OptimizerState, lr: float):
    _check_finite(params)
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.momentum, state.beta2
    for p in params:
        m = state.slot(p, "m")
        v = state.slot(p, "v")
        m *= b1
        m += (1 - b1) * p.grad
        v *= b2
        v += (1 - b2) * p.grad**2
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        p.value -= lr * mhat / (np.sqrt(vhat) + state.eps)
        p.enforce_mask()


STEPS = {"momentum": step_momentum, "nag": step_nag, "adam": step_adam, "sgd": None}


class Optimizer:
    def __init__(self, kind="momentum", momentum=0.9, beta2=0.999, eps=1e-7):
        if kind not in STEPS:
            raise ValueError(f"unknown optimizer {kind!r}; expected one of {sorted(STEPS)}")
        if kind == "sgd":
            kind, momentum = "momentum", 0.0
        self.state = OptimizerState(kind, momentum, beta2, eps)

    def step(self, params, lr):
        STEPS[self.state.kind](params, self.state, lr)


# -- schedules -------------------------------------------------------------------

@dataclass
class ScheduleSpec:
    """Step size as a function of the 1-based epoch number.

    ``piecewise``: ``values[i]`` up to and including epoch ``boundaries[i]``;
    the last value continues afterwards. ``halving``: ``beta0 * 0.5 **
    floor(t / period)`` with ``t = epoch - 1``. ``constant``: ``value``.
    """

    kind: str = "constant"
    value: float = 0.01
    boundaries: list = field(default_factory=list)
    values: list = field(default_factory=list)
    beta0: float = 0.1
    period: int = 20

    @classmethod
    def from_dict(cls, d, default_lr=0.01):
        d = dict(d)
        if d.get("kind", "constant") == "constant":
            d.setdefault("value", default_lr)
        return cls(**d)


def lr_schedule(spec, epoch: int) -> float:
    if isinstance(spec, dict):
        spec = ScheduleSpec.from_dict(spec)
    if epoch < 1:
        raise ValueError(f"epochs are 1-based, got {epoch}")
    if spec.kind == "constant":
        return float(spec.value)
    if spec.kind == "halving":
        return spec.beta0 * 0.5 ** ((epoch - 1) // spec.period)
    if spec.kind == "piecewise":
        for end, value in zip(spec.boundaries, spec.values):
            if epoch <= end:
                return float(value)
        return float(spec.values[-1])
    raise ValueError(f"unknown schedule kind {spec.kind!r}")


# -- losses and regularization -------------------------------------------------

def l2_regularize(params, coefficient: float) -> float:
    """Add ``coefficient * sum(w**2)`` over weight tensors; gradients are updated in place.

    Biases and batch-norm parameters are exempt. For spectral layers the
    penalty falls on the trained coefficients.
    """
    if coefficient == 0.0:
        return 0.0
    term = 0.0
    for p in params:
        if p.kind == "weight":
            term += float(np.sum(p.value**2))
            p.grad += 2.0 * coefficient * p.value
    return coefficient * term


def mse_loss(out, target):
    if out.shape != target.shape:
        raise tc.DimensionError(f"mse_loss: output {out.shape} vs target {target.shape}")
    diff = out - target
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


LOSSES = {"cce": tc.categorical_cross_entropy, "bce": tc.binary_cross_entropy, "mse": mse_loss}


# -- data preparation ------------------------------------------------------------

@dataclass
class TrainData:
    """Network inputs and targets for both splits.

    Inputs are normalized per channel with training-split statistics;
    autoencoder targets stay raw pixels in [0, 1].
    """

    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    task: str = "classification"

    @classmethod
    def from_datasets(cls, train: Dataset, test: Dataset, task="classification"):
        stats = compute_stats(train)
        xtr, xte = normalize(train, stats).images, normalize(test, stats).images
        if task == "autoencoder":
            return cls(xtr, train.images, xte, test.images, task)
        return cls(xtr, train.labels, xte, test.labels, task)


def evaluate(model: Model, x, y, task, batch_size=256) -> float:
    """Accuracy for classification, pixel MSE for autoencoders."""
    if len(x) == 0:
        return float("nan")
    out = model.predict(x, batch_size)
    if task == "classification":
        return float(np.mean(out.argmax(axis=1) == y))
    return tc.mse_metric(out, y)


# -- training loop ---------------------------------------------------------------

@dataclass
class MetricsRecord:
    phase: str
    epoch: int
    lr: float
    train_loss: float
    test_metric: float
    seconds: float
    diverged: bool = False

    def row(self):
        return [self.phase, self.epoch, repr(self.lr), repr(self.train_loss), repr(self.test_metric),
                f"{self.seconds:.3f}"]


class TelemetryWriter:
    """Append-only CSV, flushed after every epoch."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("w", newline="")
        self._csv = csv.writer(self._fh)
        self._csv.writerow(CSV_HEADER)
        self._fh.flush()

    def write(self, rec: MetricsRecord):
        self._csv.writerow(rec.row())
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_telemetry(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [MetricsRecord(r["phase"], int(r["epoch"]), float(r["lr"]), float(r["train_loss"]),
                          float(r["test_metric"]), float(r["seconds"])) for r in rows]


def train(model: Model, data: TrainData, regime, epochs=None, batch_size=None, seed=0,
          phase="baseline", writer: TelemetryWriter | None = None, log=None, stop_below=None):
    """Train ``model`` in place and return one :class:`MetricsRecord` per epoch.

    Shuffling and dropout draw from streams of ``seed``; two calls with equal
    inputs produce identical records apart from ``seconds``. A non-finite loss
    or gradient ends the phase with a record flagged ``diverged``. With
    ``stop_below`` set, training ends after the first epoch whose test metric
    falls below it (useful for "reaches X within N epochs" checks on MSE).
    """
    epochs = regime.epochs if epochs is None else epochs
    batch_size = regime.batch_size if batch_size is None else batch_size
    schedule = ScheduleSpec.from_dict(regime.schedule, regime.lr)
    loss_fn = LOSSES[regime.loss]
    opt = Optimizer(regime.optimizer, regime.momentum, regime.beta2)
    shuffle_rng = stream(seed, "shuffle")
    model.set_dropout_rng(stream(seed, "dropout"))
    params = model.params()
    n = len(data.x_train)
    records = []
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        lr = lr_schedule(schedule, epoch)
        order = shuffle_rng.permutation(n)
        total, seen, diverged = 0.0, 0, False
        try:
            for start in range(0, n, batch_size):
                idx = order[start : start + batch_size]
                model.zero_grad()
                out = model.forward(data.x_train[idx], train=True)
                loss, grad = loss_fn(out, data.y_train[idx])
                model.backward(grad)
                loss += l2_regularize(params, regime.l2)
                if not math.isfinite(loss):
                    raise DivergenceError(f"loss became {loss} in epoch {epoch}")
                opt.step(params, lr)
                total += loss * len(idx)
                seen += len(idx)
        except DivergenceError as e:
            diverged = True
            if log:
                log(f"[{phase}] diverged: {e}")
        if diverged:
            metric, train_loss = float("nan"), float("nan")
        else:
            train_loss = total / max(seen, 1)
            metric = evaluate(model, data.x_test, data.y_test, data.task)
        rec = MetricsRecord(phase, epoch, lr, train_loss, metric, time.perf_counter() - t0, diverged)
        records.append(rec)
        if writer is not None:
            writer.write(rec)
        if log:
            log(f"[{phase}] epoch {epoch}/{epochs} lr={lr:g} loss={train_loss:.5f} metric={metric:.5f} "
                f"({rec.seconds:.1f}s)")
        if diverged or (stop_below is not None and metric < stop_below):
            break
    return records


@dataclass
class PhaseResult:
    phase: str
    model: Model
    records: list

    @property
    def final_metric(self):
        return self.records[-1].test_metric if self.records else float("nan")

    @property
    def diverged(self):
        return any(r.diverged for r in self.records)


def phase_config(config: ModelConfig, phase, p, mask_seed, selection="all", mode="orthonormal"):
    if phase == "baseline":
        return config.with_spectral("none", 0.0, mask_seed, mode)
    if phase == "spectral_p0":
        return config.with_spectral(selection, 0.0, mask_seed, mode)
    if phase == "spectral_p":
        return config.with_spectral(selection, p, mask_seed, mode)
    raise ValueError(f"unknown phase {phase!r}")


def run_phase(config, data, regime, phase, p=0.0, seed=0, mask_seed=None, selection="all",
              mode="orthonormal", epochs=None, batch_size=None, out_dir=None, log=None,
              stop_below=None) -> PhaseResult:
    """Build the model for ``phase`` from scratch and train it."""
    mask_seed = stream_seed(seed, "mask") if mask_seed is None else mask_seed
    cfg = phase_config(config, phase, p, mask_seed, selection, mode)
    model = build_model(cfg, rng=stream(seed, "init"))
    writer = TelemetryWriter(Path(out_dir) / f"{phase}.csv") if out_dir is not None else None
    try:
        records = train(model, data, regime, epochs, batch_size, seed, phase, writer, log, stop_below)
    finally:
        if writer is not None:
            writer.close()
    return PhaseResult(phase, model, records)


def run_three_phase(config, data, regime, p, seed=0, mask_seed=None, selection="all",
                    mode="orthonormal", epochs=None, batch_size=None, out_dir=None, phases=PHASES,
                    log=None, on_phase_end=None):
    """Run the plain / spectral p=0 / spectral p protocol; returns ``{phase: PhaseResult}``.

    All phases share the init, shuffle and dropout seeds, so with ``p=0`` the
    last two phases coincide. Stops early if a phase diverges.
    """
    results = {}
    for phase in phases:
        res = run_phase(config, data, regime, phase, p, seed, mask_seed, selection, mode,
                        epochs, batch_size, out_dir, log)
        results[phase] = res
        if on_phase_end is not None:
            on_phase_end(res)
        if res.diverged:
            break
    return results
