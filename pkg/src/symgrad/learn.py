"""Perception model, losses, optimizers, and the training loop.

Training minimizes the summed loss of program outputs against labels:
every step runs perception forward, builds input distributions, executes
the symbolic program, extracts probabilities, and backpropagates through
the whole pipeline to the perception parameters.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .distribution import ProgramContext
from .provenance import provenance_from_name
from .tensor import GradientTape, Tensor

__all__ = [
    "Mlp",
    "TrainConfig",
    "loss_nll",
    "loss_bce",
    "sgd_step",
    "adam_step",
    "Sgd",
    "Adam",
    "make_optimizer",
    "train",
    "evaluate",
]


class Mlp:
    """Two-layer perceptron: rectifier hidden layer, softmax output.

    Parameters are plain arrays owned by the model; each training step
    binds them as fresh leaves on that step's tape, so tensors stay
    immutable and tapes stay confined to one execution.
    """

    def __init__(self, in_dim=784, hidden=128, out_dim=10, seed=0):
        rng = np.random.default_rng(seed)
        self.in_dim, self.hidden, self.out_dim = in_dim, hidden, out_dim
        self.params = {
            "w1": rng.normal(0.0, 1.0 / np.sqrt(in_dim), (in_dim, hidden)),
            "b1": np.zeros(hidden),
            "w2": rng.normal(0.0, 1.0 / np.sqrt(hidden), (hidden, out_dim)),
            "b2": np.zeros(out_dim),
        }
        self._tape = None
        self._leaves = {}

    def bind(self, tape: GradientTape):
        self._tape = tape
        self._leaves = {k: tape.leaf(v) for k, v in self.params.items()}

    def forward(self, tape: GradientTape, x) -> Tensor:
        """Class probabilities for a (batch, in_dim) input."""
        if self._tape is not tape:
            self.bind(tape)
        p = self._leaves
        h = T.relu(T.affine(T.Tensor(x) if not isinstance(x, Tensor) else x,
                            p["w1"], p["b1"]))
        return T.softmax(T.affine(h, p["w2"], p["b2"]), axis=1)

    def grad_arrays(self, grad_map) -> dict:
        return {k: grad_map[leaf].data for k, leaf in self._leaves.items()}


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 3
    provenance: str = "damp"
    k: int = 1
    seed: int = 0
    sample_size: int = 0  # 0 disables symbol sampling
    optimizer: str = "adam"

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or self.k < 1:
            raise ValueError(f"invalid training configuration: {self}")

    def make_provenance(self):
        return provenance_from_name(self.provenance, self.k)


def loss_nll(probs: Tensor, targets) -> Tensor:
    """Mean negative log likelihood over normalized program outputs.

    Rows are normalized by their (guarded) sum because clamped
    disjunctions can leave them short of or past 1; normalization never
    moves the argmax.  The picked probability is floored at 1e-12.  A
    ``None`` target marks a sample whose true symbol got no probability
    mass at all (possible under symbol sampling); it contributes the
    floor's log penalty.
    """
    b, n = probs.shape
    targets = list(targets)
    if len(targets) != b:
        raise ValueError(f"{len(targets)} targets for batch of {b}")
    onehot = np.zeros((b, n))
    for i, t in enumerate(targets):
        if t is None:
            continue
        if not 0 <= t < n:
            raise IndexError(f"target index {t} out of range for {n} symbols")
        onehot[i, t] = 1.0
    rowsum = T.reshape(T.reduce_sum(probs, axis=1), (b, 1))
    norm = T.div(probs, T.add(rowsum, Tensor(np.full((b, 1), 1e-8))))
    floored = T.clamp(norm, 1e-12, np.inf)
    picked = T.reduce_sum(T.mul(floored, Tensor(onehot)), axis=1)
    # A second floor guards the all-zero one-hot rows of None targets.
    total = T.reduce_sum(T.log(T.clamp(picked, 1e-12, np.inf)), axis=0)
    return T.mul(total, Tensor(-1.0 / b))


def loss_bce(probs: Tensor, labels) -> Tensor:
    """Mean binary cross entropy with 1e-12 flooring on both log terms."""
    p = T.reshape(probs, (probs.size,))
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if y.shape[0] != p.size:
        raise ValueError(f"{y.shape[0]} labels for {p.size} probabilities")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("binary labels must be 0 or 1")
    log_p = T.log(T.clamp(p, 1e-12, 1.0))
    log_q = T.log(T.clamp(T.sub(Tensor(np.ones_like(y)), p), 1e-12, 1.0))
    terms = T.add(T.mul(log_p, Tensor(y)), T.mul(log_q, Tensor(1.0 - y)))
    return T.mul(T.reduce_sum(terms, axis=0), Tensor(-1.0 / y.shape[0]))


def _check_shapes(params, grads):
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match parameter "
                f"{key!r} of shape {p.shape}"
            )


def sgd_step(params: dict, grads: dict, lr: float) -> dict:
    """p' = p - lr * g, elementwise."""
    _check_shapes(params, grads)
    return {k: p - lr * grads[k] for k, p in params.items()}


def adam_step(params, grads, lr, m, v, t, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update; returns (params, m, v) for step count ``t`` >= 1."""
    _check_shapes(params, grads)
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        new_m[k] = beta1 * m[k] + (1.0 - beta1) * g
        new_v[k] = beta2 * v[k] + (1.0 - beta2) * g * g
        m_hat = new_m[k] / (1.0 - beta1**t)
        v_hat = new_v[k] / (1.0 - beta2**t)
        new_p[k] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_p, new_m, new_v


class Sgd:
    def __init__(self, lr):
        self.lr = lr

    def step(self, params, grads):
        return sgd_step(params, grads, self.lr)


class Adam:
    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params, grads):
        if self.m is None:
            self.m = {k: np.zeros_like(p) for k, p in params.items()}
            self.v = {k: np.zeros_like(p) for k, p in params.items()}
        self.t += 1
        params, self.m, self.v = adam_step(
            params, grads, self.lr, self.m, self.v, self.t,
            self.beta1, self.beta2, self.eps,
        )
        return params


def make_optimizer(kind: str, lr: float):
    if kind == "sgd":
        return Sgd(lr)
    if kind == "adam":
        return Adam(lr)
    raise ValueError(f"unknown optimizer {kind!r} (expected sgd or adam)")


def train(task, config: TrainConfig, dataset):
    """Train a task's perception model; returns per-epoch metric rows.

    ``dataset`` is (train samples, eval samples).  Each epoch shuffles
    deterministically from the seed, runs batched forward/backward steps,
    then evaluates.  Wall time is recorded per epoch; everything else in
    the series is reproducible for a fixed seed.
    """
    train_set, eval_set = dataset
    model = task.build_model(config)
    optimizer = make_optimizer(config.optimizer, config.lr)
    rng = np.random.default_rng(config.seed)
    records = []
    for epoch in range(config.epochs):
        start = time.perf_counter()
        order = rng.permutation(len(train_set))
        shuffled = [train_set[i] for i in order]
        losses = []
        for batch in task.batches(shuffled, config.batch_size):
            ctx = ProgramContext(config.make_provenance())
            loss, _, _ = task.run_batch(ctx, model, batch, config)
            grads = model.grad_arrays(ctx.tape.backward(loss))
            model.params = optimizer.step(model.params, grads)
            losses.append(loss.item())
        accuracy = evaluate(task, model, eval_set, config)
        records.append(
            {
                "epoch": epoch,
                "loss": float(np.mean(losses)) if losses else 0.0,
                "accuracy": accuracy,
                "epoch_seconds": time.perf_counter() - start,
                "provenance": config.provenance,
                "k": config.k if config.provenance == "dtkp" else 0,
                "seed": config.seed,
            }
        )
    return records


def evaluate(task, model, samples, config: TrainConfig) -> float:
    """Exact-match accuracy of argmax predictions; side-effect free."""
    correct = 0
    total = 0
    for batch in task.batches(samples, config.batch_size):
        ctx = ProgramContext(config.make_provenance())
        _, ncorrect, n = task.run_batch(ctx, model, batch, config)
        correct += ncorrect
        total += n
    return correct / total if total else 0.0
