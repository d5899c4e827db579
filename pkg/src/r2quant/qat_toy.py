"""Desk-scale quantization-aware training with knowledge distillation.

A small tanh MLP student is distilled from a fixed full-precision teacher on
teacher-labelled random inputs.  Quantized layers run fake-quantized
forward passes (``W_hat = dequantize(quantize(W))``, recomputed every call)
and the straight-through estimator hands ``dL/dW_hat`` to the full
precision shadow weights unchanged.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .analysis import fake_quantize, sample_weights
from .errors import DivergenceDetected, MissingForwardCache, ShapeMismatch
from .tensor import GroupScheme, as_scheme, load_matrix, save_matrix

QUANTIZERS = ("none", "r2q", "rtn")
ACTIVATIONS = ("none", "tanh")


@dataclass
class Layer:
    weight: np.ndarray  # (out, in) full-precision shadow weight
    bias: np.ndarray  # (out,)
    activation: str = "tanh"
    quantizer: str = "none"
    scheme: GroupScheme = field(default_factory=GroupScheme)

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.quantizer not in QUANTIZERS:
            raise ValueError(f"unknown quantizer {self.quantizer!r}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeMismatch("bias length must equal the weight's output dim")

    def effective_weight(self) -> np.ndarray:
        if self.quantizer == "none":
            return self.weight
        return fake_quantize(self.quantizer, self.weight, self.scheme)


@dataclass
class LayerCache:
    x: np.ndarray
    weight_hat: np.ndarray
    out: np.ndarray  # post-activation


@dataclass
class Gradients:
    weight_hat: list[np.ndarray]  # dL/dW_hat from the matmul backward
    weight: list[np.ndarray]  # dL/dW after the straight-through estimator
    bias: list[np.ndarray]

    def norm(self) -> float:
        """Global l2 norm over every shadow-weight gradient."""
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.weight)))


class ToyModel:
    def __init__(self, layers: list[Layer]):
        for a, b in zip(layers, layers[1:]):
            if a.weight.shape[0] != b.weight.shape[1]:
                raise ShapeMismatch("layer shapes do not chain")
        self.layers = layers
        self.cache: list[LayerCache] | None = None

    @classmethod
    def init(cls, sizes, *, rng, dist: str = "gaussian", quantizer: str = "none", scheme=GroupScheme(),
             gain: float = 1.0) -> "ToyModel":
        """Random MLP with tanh hidden layers and a linear output layer."""
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
            w = sample_weights(dist, (fan_out, fan_in), rng=rng)
            w *= gain / (np.std(w) * np.sqrt(fan_in))
            act = "none" if i == len(sizes) - 2 else "tanh"
            layers.append(Layer(w, np.zeros(fan_out), act, quantizer, as_scheme(scheme)))
        return cls(layers)

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].weight.shape[1]] + [lay.weight.shape[0] for lay in self.layers]

    def copy(self, *, quantizer: str | None = None, scheme=None) -> "ToyModel":
        layers = [
            replace(
                lay,
                weight=lay.weight.copy(),
                bias=lay.bias.copy(),
                quantizer=lay.quantizer if quantizer is None else quantizer,
                scheme=lay.scheme if scheme is None else as_scheme(scheme),
            )
            for lay in self.layers
        ]
        return ToyModel(layers)

    def weight_digest(self) -> str:
        h = hashlib.sha256()
        for lay in self.layers:
            h.update(lay.weight.tobytes())
            h.update(lay.bias.tobytes())
        return h.hexdigest()


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    return np.tanh(z) if activation == "tanh" else z


def forward_with_weights(model: ToyModel, x, weights) -> tuple[np.ndarray, list[LayerCache]]:
    """Forward pass using the given effective weights instead of the layers' own."""
    h = np.asarray(x, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] != model.sizes[0]:
        raise ShapeMismatch(f"input of shape {h.shape} does not match input dim {model.sizes[0]}")
    cache = []
    for lay, w in zip(model.layers, weights):
        out = _activate(h @ w.T + lay.bias, lay.activation)
        cache.append(LayerCache(h, w, out))
        h = out
    return h, cache


def forward_quantized(model: ToyModel, x) -> np.ndarray:
    """Fake-quantized forward; stores the cache that :func:`backward_ste` needs."""
    weights = [lay.effective_weight() for lay in model.layers]
    out, model.cache = forward_with_weights(model, x, weights)
    return out


def backward_with_cache(model: ToyModel, cache: list[LayerCache], grad_out) -> Gradients:
    g = np.asarray(grad_out, dtype=np.float64)
    d_hat, d_b = [], []
    for lay, c in zip(reversed(model.layers), reversed(cache)):
        if lay.activation == "tanh":
            g = g * (1.0 - c.out * c.out)
        d_hat.append(g.T @ c.x)
        d_b.append(g.sum(axis=0))
        g = g @ c.weight_hat
    d_hat.reverse()
    d_b.reverse()
    return Gradients(d_hat, [ste(d) for d in d_hat], d_b)


def ste(grad_weight_hat: np.ndarray) -> np.ndarray:
    """Straight-through estimator: the quantizer's Jacobian is taken as identity."""
    return grad_weight_hat


def backward_ste(model: ToyModel, grad_out) -> Gradients:
    """Gradients of the loss w.r.t. the shadow weights, given dL/d(output)."""
    if model.cache is None:
        raise MissingForwardCache("call forward_quantized before backward_ste")
    grads = backward_with_cache(model, model.cache, grad_out)
    model.cache = None
    return grads


# -- losses ----------------------------------------------------------------


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=1, keepdims=True))


def kd_loss(student, teacher, temperature: float = 1.0) -> tuple[float, np.ndarray]:
    """Batch-mean ``KL(softmax(teacher/T) || softmax(student/T))`` and its
    gradient with respect to the student logits."""
    student = np.asarray(student, dtype=np.float64)
    teacher = np.asarray(teacher, dtype=np.float64)
    if student.shape != teacher.shape or student.ndim != 2:
        raise ShapeMismatch(f"logit shapes {student.shape} vs {teacher.shape}")
    log_p = log_softmax(teacher / temperature)
    log_q = log_softmax(student / temperature)
    p = np.exp(log_p)
    n = student.shape[0]
    loss = float(np.sum(p * (log_p - log_q)) / n)
    grad = (np.exp(log_q) - p) / (temperature * n)
    return loss, grad


def mse_loss(student, teacher) -> tuple[float, np.ndarray]:
    student = np.asarray(student, dtype=np.float64)
    teacher = np.asarray(teacher, dtype=np.float64)
    if student.shape != teacher.shape:
        raise ShapeMismatch(f"output shapes {student.shape} vs {teacher.shape}")
    diff = student - teacher
    n = student.shape[0]
    return float(np.sum(diff * diff) / (2 * n)), diff / n


LOSSES = {"kl": kd_loss, "mse": mse_loss}


# -- data ------------------------------------------------------------------


def make_teacher(seed: int, sizes, *, dist: str = "laplace", gain: float = 2.0) -> ToyModel:
    return ToyModel.init(sizes, rng=np.random.default_rng([seed, 0]), dist=dist, gain=gain)


def sample_inputs(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    return rng.standard_normal((n, dim))


def generate_toy_data(seed: int, n: int, dim: int, *, hidden=(64, 64), classes: int = 10,
                      dist: str = "laplace", gain: float = 2.0):
    """Random inputs labelled by a fixed random teacher.

    Returns ``(inputs, teacher_logits, teacher)``; fully determined by ``seed``.
    """
    if min(n, dim) < 1:
        raise ValueError("n and dim must be positive")
    teacher = make_teacher(seed, [dim, *hidden, classes], dist=dist, gain=gain)
    x = sample_inputs(np.random.default_rng([seed, 1]), n, dim)
    out, _ = forward_with_weights(teacher, x, [lay.weight for lay in teacher.layers])
    return x, out, teacher


# -- training --------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    batch_size: int = 256  # size of the fixed training set unless resample=True
    lr: float = 0.5
    seed: int = 0
    quantizer: str = "r2q"
    group_size: int = -1
    loss: str = "kl"
    data: str = "teacher"  # teacher-labelled gaussian inputs; the only generator
    resample: bool = False  # draw a fresh batch every step instead of full-batch GD
    in_dim: int = 32
    hidden: tuple[int, ...] = (64, 64)
    classes: int = 10
    weight_dist: str = "laplace"
    teacher_gain: float = 2.0
    init_noise: float = 0.25  # relative perturbation of the student's teacher copy
    eval_size: int = 1024

    def __post_init__(self):
        if min(self.steps, self.batch_size, self.in_dim, self.classes, self.eval_size) < 1:
            raise ValueError("counts must be positive")
        if self.lr < 0:
            raise ValueError("learning rate must be non-negative")
        if self.quantizer not in QUANTIZERS:
            raise ValueError(f"unknown quantizer {self.quantizer!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.data != "teacher":
            raise ValueError(f"unknown data generator {self.data!r}")


@dataclass
class MetricsTrace:
    loss: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    final_loss: float = float("nan")  # on a fixed held-out batch after training
    initial_loss: float = float("nan")

    def __len__(self) -> int:
        return len(self.loss)

    def grad_norm_std(self, start: int = 100) -> float:
        return float(np.std(self.grad_norm[start:]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("step", "loss", "grad_norm"))
            for i, (loss, gn) in enumerate(zip(self.loss, self.grad_norm)):
                writer.writerow((i, repr(loss), repr(gn)))


def init_student(teacher: ToyModel, cfg: TrainConfig, rng: np.random.Generator) -> ToyModel:
    student = teacher.copy(quantizer=cfg.quantizer, scheme=cfg.group_size)
    for lay in student.layers:
        lay.weight += cfg.init_noise * np.std(lay.weight) * rng.standard_normal(lay.weight.shape)
    return student


def evaluate(model: ToyModel, teacher: ToyModel, x, loss: str = "kl") -> float:
    target, _ = forward_with_weights(teacher, x, [lay.weight for lay in teacher.layers])
    out, _ = forward_with_weights(model, x, [lay.effective_weight() for lay in model.layers])
    return LOSSES[loss](out, target)[0]


def train(cfg: TrainConfig, *, return_model: bool = False):
    """Distil a quantized student from the teacher with plain gradient descent."""
    train_x, train_target, teacher = generate_toy_data(
        cfg.seed, cfg.batch_size, cfg.in_dim, hidden=cfg.hidden, classes=cfg.classes,
        dist=cfg.weight_dist, gain=cfg.teacher_gain,
    )
    student = init_student(teacher, cfg, np.random.default_rng([cfg.seed, 2]))
    data_rng = np.random.default_rng([cfg.seed, 3])
    eval_x = sample_inputs(np.random.default_rng([cfg.seed, 4]), cfg.eval_size, cfg.in_dim)
    teacher_w = [lay.weight for lay in teacher.layers]
    loss_fn = LOSSES[cfg.loss]

    trace = MetricsTrace(initial_loss=evaluate(student, teacher, eval_x, cfg.loss))
    for step in range(cfg.steps):
        if cfg.resample:
            x = sample_inputs(data_rng, cfg.batch_size, cfg.in_dim)
            target, _ = forward_with_weights(teacher, x, teacher_w)
        else:
            x, target = train_x, train_target
        out = forward_quantized(student, x)
        loss, grad_out = loss_fn(out, target)
        if not np.isfinite(loss):
            raise DivergenceDetected(step, loss)
        grads = backward_ste(student, grad_out)
        for lay, gw, gb in zip(student.layers, grads.weight, grads.bias):
            lay.weight -= cfg.lr * gw
            lay.bias -= cfg.lr * gb
        trace.loss.append(loss)
        trace.grad_norm.append(grads.norm())
    trace.final_loss = evaluate(student, teacher, eval_x, cfg.loss)
    if not np.isfinite(trace.final_loss):
        raise DivergenceDetected(cfg.steps, trace.final_loss)
    return (trace, student) if return_model else trace


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(model: ToyModel, directory) -> None:
    """Per-layer weight and bias in the R2QM matrix format plus a key=value manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lines = [f"num_layers={len(model.layers)}", "sizes=" + ",".join(map(str, model.sizes))]
    for i, lay in enumerate(model.layers):
        save_matrix(d / f"layer{i}.weight.r2qm", lay.weight)
        save_matrix(d / f"layer{i}.bias.r2qm", lay.bias[None, :])
        lines += [
            f"layer{i}.activation={lay.activation}",
            f"layer{i}.quantizer={lay.quantizer}",
            f"layer{i}.group_size={lay.scheme.group_size}",
        ]
    (d / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_checkpoint(directory) -> ToyModel:
    d = Path(directory)
    meta = dict(
        line.split("=", 1) for line in (d / "manifest.txt").read_text().splitlines() if "=" in line
    )
    layers = []
    for i in range(int(meta["num_layers"])):
        layers.append(Layer(
            load_matrix(d / f"layer{i}.weight.r2qm"),
            load_matrix(d / f"layer{i}.bias.r2qm")[0],
            meta[f"layer{i}.activation"],
            meta[f"layer{i}.quantizer"],
            GroupScheme(int(meta[f"layer{i}.group_size"])),
        ))
    return ToyModel(layers)
