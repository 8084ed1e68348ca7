"""ReLU multi-layer perceptrons with a two-headed Gaussian output and manual backprop."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .numerics import DTYPE, RngStream, as_matrix


@dataclass
class Layer:
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]


@dataclass
class MlpParams:
    """Hidden ReLU layers followed by affine mean and log-variance heads.

    With ``shared_log_var`` the log-variance head is a bias vector only, so
    every row of a batch gets the same per-output log-variance.
    """

    hidden: list[Layer]
    head_mean: Layer
    head_log_var: Layer
    shared_log_var: bool = False

    def __post_init__(self):
        n = self.n_in
        for k, layer in enumerate(self.hidden):
            if layer.n_in != n:
                raise ValueError(f"hidden layer {k} expects {layer.n_in} inputs, previous layer gives {n}")
            n = layer.n_out
        if self.head_mean.n_in != n:
            raise ValueError(f"mean head expects {self.head_mean.n_in} inputs, got {n}")
        if not self.shared_log_var and self.head_log_var.n_in != n:
            raise ValueError(f"log-variance head expects {self.head_log_var.n_in} inputs, got {n}")
        if self.head_log_var.n_out != self.head_mean.n_out:
            raise ValueError("mean and log-variance heads differ in output size")

    @property
    def n_in(self) -> int:
        return self.hidden[0].n_in if self.hidden else self.head_mean.n_in

    @property
    def n_out(self) -> int:
        return self.head_mean.n_out

    def arrays(self) -> dict[str, np.ndarray]:
        """Named references to every trainable array, in a fixed order."""
        out = {}
        for k, layer in enumerate(self.hidden):
            out[f"hidden{k}.W"] = layer.W
            out[f"hidden{k}.b"] = layer.b
        out["mean.W"] = self.head_mean.W
        out["mean.b"] = self.head_mean.b
        if not self.shared_log_var:
            out["log_var.W"] = self.head_log_var.W
        out["log_var.b"] = self.head_log_var.b
        return out

    def copy(self) -> "MlpParams":
        cp = lambda l: Layer(l.W.copy(), l.b.copy())  # noqa: E731
        return MlpParams([cp(l) for l in self.hidden], cp(self.head_mean), cp(self.head_log_var), self.shared_log_var)


@dataclass
class ForwardTape:
    inputs: np.ndarray
    pre: list[np.ndarray] = field(default_factory=list)
    post: list[np.ndarray] = field(default_factory=list)


def init_params(sizes: Sequence, rng: RngStream, shared_log_var: bool = False) -> MlpParams:
    """Build an MLP from ``[n_in, h1, ..., n_out]``.

    The last entry may be an ``(n_mean, n_log_var)`` pair; both must agree.
    Weights are drawn from N(0, 1/fan_in), biases start at 0 and the
    log-variance head starts at exactly 0 so the initial output variance is 1.
    """
    if len(sizes) < 2:
        raise ValueError(f"need at least input and output sizes, got {list(sizes)}")
    last = sizes[-1]
    if isinstance(last, (tuple, list)):
        if len(last) != 2 or last[0] != last[1]:
            raise ValueError(f"head sizes must be an equal pair, got {last}")
        last = last[0]
    dims = [int(s) for s in sizes[:-1]] + [int(last)]
    if any(d < 1 for d in dims):
        raise ValueError(f"layer sizes must be positive, got {dims}")

    def dense(n_in, n_out, stream):
        W = stream.standard_normal((n_out, n_in)) / np.sqrt(n_in)
        return Layer(W, np.zeros(n_out))

    hidden = [dense(dims[k], dims[k + 1], rng.split(f"hidden{k}")) for k in range(len(dims) - 2)]
    head_in = dims[-2]
    head_mean = dense(head_in, dims[-1], rng.split("mean"))
    head_log_var = Layer(np.zeros((dims[-1], 0 if shared_log_var else head_in)), np.zeros(dims[-1]))
    return MlpParams(hidden, head_mean, head_log_var, shared_log_var)


def mlp_forward(params: MlpParams, x) -> tuple[np.ndarray, np.ndarray, ForwardTape]:
    """Return ``(mean, log_var, tape)`` for a batch of rows."""
    x = as_matrix(x)
    if x.shape[1] != params.n_in:
        raise ValueError(f"input has {x.shape[1]} columns, network expects {params.n_in}")
    tape = ForwardTape(inputs=x)
    h = x
    for layer in params.hidden:
        a = h @ layer.W.T + layer.b
        h = np.maximum(a, 0.0)
        tape.pre.append(a)
        tape.post.append(h)
    mean = h @ params.head_mean.W.T + params.head_mean.b
    if params.shared_log_var:
        log_var = np.broadcast_to(params.head_log_var.b, mean.shape).copy()
    else:
        log_var = h @ params.head_log_var.W.T + params.head_log_var.b
    return mean, log_var, tape


def mlp_backward(params: MlpParams, tape: ForwardTape, grad_mean, grad_log_var) -> tuple[dict[str, np.ndarray], np.ndarray]:
    """Backpropagate head-output gradients.

    Returns parameter gradients keyed like ``params.arrays()`` and the
    gradient with respect to the network input.
    """
    grad_mean = np.asarray(grad_mean, dtype=DTYPE)
    grad_log_var = np.asarray(grad_log_var, dtype=DTYPE)
    if len(tape.pre) != len(params.hidden):
        raise ValueError(f"tape has {len(tape.pre)} layers, network has {len(params.hidden)}")
    h = tape.post[-1] if tape.post else tape.inputs
    expected = (h.shape[0], params.n_out)
    if grad_mean.shape != expected or grad_log_var.shape != expected:
        raise ValueError(f"head gradients {grad_mean.shape}/{grad_log_var.shape} do not match outputs {expected}")

    grads: dict[str, np.ndarray] = {}
    grads["mean.W"] = grad_mean.T @ h
    grads["mean.b"] = grad_mean.sum(axis=0)
    dh = grad_mean @ params.head_mean.W
    if params.shared_log_var:
        grads["log_var.b"] = grad_log_var.sum(axis=0)
    else:
        grads["log_var.W"] = grad_log_var.T @ h
        grads["log_var.b"] = grad_log_var.sum(axis=0)
        dh = dh + grad_log_var @ params.head_log_var.W

    for k in range(len(params.hidden) - 1, -1, -1):
        layer = params.hidden[k]
        da = dh * (tape.pre[k] > 0.0)
        h_prev = tape.post[k - 1] if k > 0 else tape.inputs
        grads[f"hidden{k}.W"] = da.T @ h_prev
        grads[f"hidden{k}.b"] = da.sum(axis=0)
        dh = da @ layer.W

    ordered = {name: grads[name] for name in params.arrays()}
    return ordered, dh
