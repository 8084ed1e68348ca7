"""rmsProp with momentum and the minibatch training loop."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import analysis
from .config import TrainConfig
from .data import Dataset, epoch_order
from .models import (BoundBreakdown, ModelState, NonFiniteBoundError, build_model, compute_bound,
                     lambda_closed_form_update, trailing_mean)
from .numerics import RngStream, deterministic_mode

log = logging.getLogger(__name__)


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name: str):
        super().__init__(f"non-finite gradient in parameter block {name!r}")
        self.block = name


@dataclass
class RmsPropState:
    """Graves-style rmsProp: a squared-gradient average preconditions a momentum step.

    ``ms <- rho*ms + (1-rho)*g**2``; ``mom <- momentum*mom + lr*g/sqrt(ms+eps)``;
    ``p <- p + mom`` (ascent).
    """

    learning_rate: float
    rho: float = 0.9
    momentum: float = 0.9
    epsilon: float = 1e-6
    ms: dict = field(default_factory=dict)
    mom: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict, **hyper) -> "RmsPropState":
        st = cls(**hyper)
        st.ms = {k: np.zeros_like(v) for k, v in params.items()}
        st.mom = {k: np.zeros_like(v) for k, v in params.items()}
        return st


def _check_grads(params: dict, grads: dict) -> None:
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name)


def rmsprop_step(opt: RmsPropState, params: dict, grads: dict) -> bool:
    """Update ``params`` in place. Returns False (and changes nothing) if the step would go non-finite."""
    _check_grads(params, grads)
    new = {}
    for name, p in params.items():
        g = grads[name]
        with np.errstate(over="ignore", invalid="ignore"):
            ms = opt.rho * opt.ms[name] + (1.0 - opt.rho) * g * g
            denom = np.sqrt(ms + opt.epsilon)
            step = np.divide(g, denom, out=np.zeros_like(g), where=denom > 0)
            mom = opt.momentum * opt.mom[name] + opt.learning_rate * step
            upd = p + mom
        if not (np.all(np.isfinite(upd)) and np.all(np.isfinite(mom)) and np.all(np.isfinite(ms))):
            return False
        new[name] = (ms, mom, upd)
    for name, (ms, mom, upd) in new.items():
        opt.ms[name][...] = ms
        opt.mom[name][...] = mom
        params[name][...] = upd
    return True


def sgd_step(learning_rate: float, params: dict, grads: dict) -> bool:
    """Plain gradient ascent, kept for debugging."""
    _check_grads(params, grads)
    new = {name: p + learning_rate * grads[name] for name, p in params.items()}
    if not all(np.all(np.isfinite(v)) for v in new.values()):
        return False
    for name, v in new.items():
        params[name][...] = v
    return True


def grad_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


@dataclass
class TrainLoopState:
    iteration: int = 0
    rejected_steps: int = 0
    test_scores: list = field(default_factory=list)

    def epoch(self, batches_per_epoch: int) -> int:
        return self.iteration // batches_per_epoch


@dataclass
class TrainResult:
    state: ModelState
    opt: RmsPropState
    loop: TrainLoopState
    metrics: list
    final_train: BoundBreakdown | None = None
    final_test: float | None = None


def kl_w_scale_for(config: TrainConfig, n_train: int) -> float:
    return 1.0 / n_train if config.kl_w_mode == "per_epoch" else 1.0


class Trainer:
    """Drives minibatch coordinate ascent on a bound.

    All randomness is derived from ``rng`` by label: the row order of epoch
    ``e`` from ``shuffle/epoch{e}``, the noise of iteration ``t`` from
    ``noise/t``, test evaluations from ``eval/t``. Restoring the model,
    optimizer and loop counter therefore resumes a run exactly.
    """

    def __init__(self, config: TrainConfig, train_data: Dataset, rng: RngStream, test_data: Dataset | None = None,
                 state: ModelState | None = None, opt: RmsPropState | None = None,
                 loop: TrainLoopState | None = None):
        config.validate()
        self.config = config
        self.train_data = train_data
        self.test_data = test_data
        self.rng = rng
        if test_data is not None and test_data.dim != train_data.dim:
            raise ValueError(f"test data has {test_data.dim} columns, training data has {train_data.dim}")
        self.state = state or build_model(config.variant, train_data.dim, config.latent_dim, config.hidden_sizes,
                                          rng.split("init"), likelihood=config.likelihood,
                                          shared_log_var=config.shared_log_var)
        if self.state.data_dim != train_data.dim:
            raise ValueError(f"model expects {self.state.data_dim} columns, data has {train_data.dim}")
        self.opt = opt or RmsPropState.for_params(self._trainable(), learning_rate=config.learning_rate,
                                                  rho=config.rho, momentum=config.momentum,
                                                  epsilon=config.epsilon)
        self.loop = loop or TrainLoopState()
        self.kl_w_scale = kl_w_scale_for(config, train_data.n)
        self.batches_per_epoch = -(-train_data.n // config.batch_size)
        self.total_iterations = config.total_iterations(train_data.n)
        self._order_epoch = -1
        self._order = None

    def _trainable(self) -> dict:
        arrays = self.state.arrays()
        if self.config.lambda_update == "closed_form":
            arrays.pop("ard.log_lambda", None)
        return arrays

    def _batch(self, t: int) -> np.ndarray:
        epoch, j = divmod(t, self.batches_per_epoch)
        if epoch != self._order_epoch:
            self._order = epoch_order(self.train_data.n, self.rng.split("shuffle"), epoch)
            self._order_epoch = epoch
        bs = self.config.batch_size
        return self.train_data.X[self._order[j * bs:(j + 1) * bs]]

    def _bound(self, x, rng, want_grad=True):
        c = self.config
        return compute_bound(self.state, x, rng, n_w=c.n_w, n_z=c.n_z, kl_w_scale=self.kl_w_scale,
                             want_grad=want_grad)

    def step(self) -> analysis.RunMetrics:
        c = self.config
        t = self.loop.iteration
        x = self._batch(t)
        try:
            bd, grads = self._bound(x, self.rng.split("noise").split(t))
        except (NonFiniteBoundError, FloatingPointError) as exc:
            log.warning("iteration %d: %s; step skipped", t, exc)
            bd, grads = BoundBreakdown(float("nan"), float("nan"), float("nan"), float("nan")), None

        params = self._trainable()
        gnorm = float("nan")
        if grads is not None:
            grads = {k: grads[k] for k in params}
            gnorm = grad_norm(grads)
            if c.clip_norm > 0 and gnorm > c.clip_norm:
                log.info("iteration %d: gradient norm %.4g clipped to %.4g", t, gnorm, c.clip_norm)
                grads = {k: g * (c.clip_norm / gnorm) for k, g in grads.items()}
            if c.optimizer == "rmsprop":
                ok = rmsprop_step(self.opt, params, grads)
            else:
                ok = sgd_step(c.learning_rate, params, grads)
            if ok and c.lambda_update == "closed_form" and self.state.ard is not None:
                self.state.ard.log_lambda[...] = np.log(lambda_closed_form_update(self.state.ard))
        else:
            ok = False
        if not ok:
            self.loop.rejected_steps += 1

        test_total = None
        if self.test_data is not None and c.eval_every and (t + 1) % c.eval_every == 0:
            try:
                test_total = self._bound(self.test_data.X, self.rng.split("eval").split(t), want_grad=False)[0].total
                self.loop.test_scores.append(test_total)
            except FloatingPointError as exc:
                log.warning("iteration %d: test evaluation failed: %s", t, exc)

        self.loop.iteration = t + 1
        return analysis.RunMetrics(
            iteration=t + 1,
            epoch=t // self.batches_per_epoch,
            total=bd.total, recon=bd.recon, kl_z=bd.kl_z, kl_w=bd.kl_w,
            total_per_pixel=bd.total / self.train_data.dim,
            test_total=test_total,
            retained_count=analysis.retained_count(self.state, c.retention_rule, c.retention_threshold),
            grad_norm=gnorm,
            rejected_steps=self.loop.rejected_steps,
            wall_clock=0.0,
        )

    def run(self, until: int | None = None, on_metrics: Callable | None = None,
            on_checkpoint: Callable | None = None) -> list:
        until = self.total_iterations if until is None else min(until, self.total_iterations)
        metrics = []
        start = time.perf_counter()
        with deterministic_mode(self.config.deterministic):
            while self.loop.iteration < until:
                row = self.step()
                row.wall_clock = time.perf_counter() - start
                metrics.append(row)
                if on_metrics is not None:
                    on_metrics(row)
                every = self.config.checkpoint_every
                if on_checkpoint is not None and every and self.loop.iteration % every == 0:
                    on_checkpoint(self)
        return metrics

    def evaluate(self, data: Dataset, label: str = "final") -> BoundBreakdown:
        return self._bound(data.X, self.rng.split(label), want_grad=False)[0]


def train(config: TrainConfig, data: Dataset, rng: RngStream | None = None, test_data: Dataset | None = None,
          on_metrics: Callable | None = None, on_checkpoint: Callable | None = None) -> TrainResult:
    """Train a fresh model; returns the final state and the metric stream."""
    if data.n < 1:
        raise ValueError("empty training set")
    rng = rng or RngStream(config.seed)
    trainer = Trainer(config, data, rng, test_data)
    metrics = trainer.run(on_metrics=on_metrics, on_checkpoint=on_checkpoint)
    return _result(trainer, metrics)


def _result(trainer: Trainer, metrics: list) -> TrainResult:
    final_test = None
    if trainer.loop.test_scores:
        final_test = trailing_mean(trainer.loop.test_scores, trainer.config.eval_window)
    final_train = trainer.evaluate(trainer.train_data, "final-train")
    return TrainResult(trainer.state, trainer.opt, trainer.loop, metrics, final_train, final_test)
