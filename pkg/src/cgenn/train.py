"""Training loop for the desk-scale tasks."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import autodiff as ad
from .algebra import MetricSignature
from .layers import Network, embed, save_params
from .tasks import gen_o5_regression_dataset, gen_signed_volume_dataset

log = logging.getLogger(__name__)


class DivergedLoss(RuntimeError):
    pass


@dataclass(frozen=True)
class TaskSpec:
    signature: MetricSignature
    generate: Callable[[int, np.random.Generator], tuple[np.ndarray, np.ndarray]]
    channels: int
    head: str


TASKS = {
    "signed-volume": TaskSpec(MetricSignature(3), gen_signed_volume_dataset, 4, "pseudoscalar"),
    "o5-regression": TaskSpec(MetricSignature(5), gen_o5_regression_dataset, 2, "scalar"),
}


def default_architecture(task: str, head: str | None = None) -> dict:
    spec = TASKS[task]
    c = spec.channels
    if task == "signed-volume":
        layers = [
            {"type": "linear", "in": c, "out": 8},
            {"type": "product_elementwise", "channels": 8, "normalize": False},
            {"type": "product_full", "in": 8, "out": 8, "normalize": False},
            {"type": "linear", "in": 8, "out": 1},
        ]
    else:
        layers = [
            {"type": "linear", "in": c, "out": 8},
            {"type": "product_elementwise", "channels": 8},
            {"type": "gate"},
            {"type": "product_full", "in": 8, "out": 8},
            {"type": "gate"},
            {"type": "linear", "in": 8, "out": 16},
            {"type": "gate"},
            {"type": "linear", "in": 16, "out": 16},
            {"type": "gate"},
            {"type": "linear", "in": 16, "out": 1},
        ]
    return {"signature": str(spec.signature), "layers": layers}


@dataclass
class TrainConfig:
    task: str
    n_train: int = 1024
    n_val: int = 256
    n_test: int = 256
    batch_size: int = 128
    lr: float = 1e-3
    optimizer: str = "adam"
    epochs: int = 100
    seed: int = 0
    architecture: dict | None = None
    head: str | None = None
    normalize_targets: bool = True

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; choose from {sorted(TASKS)}")
        for name in ("n_train", "n_val", "n_test", "batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.head is None:
            self.head = TASKS[self.task].head
        if self.head not in ("scalar", "pseudoscalar"):
            raise ValueError(f"unknown head {self.head!r}")
        if self.architecture is None:
            self.architecture = default_architecture(self.task, self.head)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            m = self.m.get(k, 0.0) * b1 + (1 - b1) * g
            v = self.v.get(k, 0.0) * b2 + (1 - b2) * g * g
            self.m[k], self.v[k] = m, v
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            params[k] = params[k] - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params, grads):
        for k, g in grads.items():
            params[k] = params[k] - self.lr * g


def task_inputs(task: str, raw: np.ndarray) -> np.ndarray:
    """Embed raw task inputs as vector channels: (B, channels, 2**n)."""
    sig = TASKS[task].signature
    return embed(sig, np.zeros(raw.shape[:1] + (0,)), raw).coeffs


def head_blade(head: str, sig: MetricSignature) -> int:
    return 0 if head == "scalar" else sig.dim - 1


@dataclass
class TrainResult:
    config: TrainConfig
    net: Network
    params: dict[str, np.ndarray]
    history: list[tuple[int, float, float]]
    test_mse: float
    target_shift: float
    target_scale: float
    data: dict[str, tuple[np.ndarray, np.ndarray]] = field(repr=False, default_factory=dict)

    def predict(self, inputs: np.ndarray) -> np.ndarray:
        """Predictions in label units for embedded inputs (B, channels, 2**n)."""
        blade = head_blade(self.config.head, self.net.sig)
        out = self.net.apply(self.params, inputs)
        return out[:, 0, blade] * self.target_scale + self.target_shift


def _mse(net, params, x, y, blade):
    pred = net.apply(params, x)[:, 0, blade]
    return float(np.mean((pred - y) ** 2))


def train(config: TrainConfig, out_dir: str | Path | None = None) -> TrainResult:
    spec = TASKS[config.task]
    net = Network.from_spec(config.architecture)
    if net.sig != spec.signature:
        raise ValueError(f"architecture signature {net.sig} does not match task {spec.signature}")
    data_seq, init_seq, shuffle_seq = np.random.SeedSequence(config.seed).spawn(3)
    data_rng = np.random.default_rng(data_seq)
    data = {}
    for split, count in (("train", config.n_train), ("val", config.n_val), ("test", config.n_test)):
        raw, y = spec.generate(count, data_rng)
        data[split] = (task_inputs(config.task, raw), y)
    params = net.init_params(np.random.default_rng(init_seq))
    shuffle_rng = np.random.default_rng(shuffle_seq)

    y_train = data["train"][1]
    shift, scale = 0.0, 1.0
    if config.normalize_targets:
        # a pseudoscalar head cannot carry an invariant offset
        if config.head == "scalar":
            shift = float(y_train.mean())
        scale = float(np.sqrt(np.mean((y_train - shift) ** 2))) or 1.0
    blade = head_blade(config.head, net.sig)

    def scaled(split):
        x, y = data[split]
        return x, (y - shift) / scale

    def evaluate(split):
        x, y = scaled(split)
        return _mse(net, params, x, y, blade) * scale**2

    opt = Adam(config.lr) if config.optimizer == "adam" else SGD(config.lr)
    history = [(0, evaluate("train"), evaluate("val"))]
    x_train, t_train = scaled("train")
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(config.n_train)
        for start in range(0, config.n_train, config.batch_size):
            idx = order[start:start + config.batch_size]
            tape = ad.Tape()
            pvars = {k: tape.param(k, v) for k, v in params.items()}
            pred = net.apply(pvars, x_train[idx])[:, 0, blade]
            loss = ad.mse(pred, t_train[idx])
            if not np.isfinite(loss.value):
                raise DivergedLoss(f"non-finite loss at epoch {epoch}")
            grads = ad.backward(tape, loss)
            opt.step(params, grads)
        row = (epoch, evaluate("train"), evaluate("val"))
        if not all(np.isfinite(row[1:])):
            raise DivergedLoss(f"non-finite metrics at epoch {epoch}: {row}")
        history.append(row)
        log.info("epoch %d train_mse %.6g val_mse %.6g", *row)
    result = TrainResult(config, net, params, history, evaluate("test"), shift, scale, data)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(out / "metrics.csv", history, result.test_mse)
        save_params(
            out / "params.bin",
            net,
            params,
            seed=config.seed,
            extra={"task": config.task, "head": config.head, "target_shift": shift, "target_scale": scale},
        )
    return result


def write_metrics_csv(path: str | Path, history, test_mse: float) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_mse", "val_mse"])
        for epoch, tr, va in history:
            writer.writerow([epoch, repr(float(tr)), repr(float(va))])
        writer.writerow(["test", repr(float(test_mse))])
