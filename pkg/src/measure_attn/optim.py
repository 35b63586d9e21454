"""Adam with per-epoch exponential learning-rate decay, and the training loop.

The loop trains on squared loss with fresh Gaussian noise added to each
target presentation; evaluation is always against clean targets.  Datasets
are any sequence of objects exposing context_tokens, query_token and target.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import StudentModel


@dataclass
class AdamState:
    """First/second moment accumulators plus the schedule knobs.

    The effective step size is lr0 * decay**epoch; the epoch field is set by
    the training loop (or by any caller driving adam_step directly).
    """

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr0: float = 1e-2
    decay: float = 0.9
    epoch: int = 0

    @classmethod
    def for_params(cls, params: np.ndarray, lr0: float = 1e-2,
                   decay: float = 0.9, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        if not 0 < decay <= 1:
            raise ValueError(f"decay must be in (0, 1], got {decay}")
        return cls(m=np.zeros_like(params), v=np.zeros_like(params),
                   beta1=beta1, beta2=beta2, eps=eps, lr0=lr0, decay=decay)


@dataclass(frozen=True)
class TrainConfig:
    """Loop hyperparameters.  batch_size None means min(32, len(dataset))."""

    epochs: int = 20
    batch_size: int | None = None
    lr0: float = 1e-2
    decay_per_epoch: float = 0.9
    noise_std: float = 0.01
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray
              ) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update, applied to params in place.

    Rejects non-finite gradients before touching any state, so a failed
    step leaves params and moments untouched.
    """
    if params.shape != state.m.shape or grads.shape != state.m.shape:
        raise ValueError("params/grads shape does not match optimizer state")
    if not np.all(np.isfinite(grads)):
        raise ValueError("non-finite gradient; step rejected")
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads ** 2
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    lr_t = state.lr0 * state.decay ** state.epoch
    params -= lr_t * m_hat / (np.sqrt(v_hat) + state.eps)
    return params, state


def train(model: StudentModel, dataset, cfg: TrainConfig
          ) -> tuple[StudentModel, list[float]]:
    """Seeded minibatch training; returns the model and per-epoch mean loss.

    Each epoch reshuffles the dataset, each presentation jitters the target
    with fresh N(0, noise_std^2) noise, and each minibatch takes one Adam
    step on the mean squared loss.  The recorded loss is the mean over the
    epoch's (noisy) presentations.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.for_params(model.params, lr0=cfg.lr0,
                                 decay=cfg.decay_per_epoch, beta1=cfg.beta1,
                                 beta2=cfg.beta2, eps=cfg.eps)
    batch = cfg.batch_size if cfg.batch_size is not None else min(32, n)
    losses: list[float] = []
    grad_sum = np.zeros_like(model.params)
    for epoch in range(cfg.epochs):
        state.epoch = epoch
        order = rng.permutation(n)
        epoch_sq = 0.0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            grad_sum[:] = 0.0
            for i in idx:
                ex = dataset[int(i)]
                target = ex.target
                if cfg.noise_std > 0:
                    target = target + cfg.noise_std * rng.standard_normal()
                pred, cache = model.forward(ex.context_tokens, ex.query_token)
                resid = pred - target
                epoch_sq += resid * resid
                model.backward(cache, 2.0 * resid / idx.size)
                grad_sum += model.grads
            adam_step(state, model.params, grad_sum)
        losses.append(epoch_sq / n)
    return model, losses


def evaluate(model: StudentModel, dataset) -> float:
    """Mean squared error against clean targets; no noise at evaluation."""
    n = len(dataset)
    if n == 0:
        raise ValueError("dataset is empty")
    total = 0.0
    for ex in dataset:
        pred, _ = model.forward(ex.context_tokens, ex.query_token)
        total += (pred - ex.target) ** 2
    return total / n


def losses_to_csv(losses: list[float]) -> str:
    """Per-epoch loss trace in the epoch,train_loss CSV layout."""
    lines = ["epoch,train_loss"]
    lines += [f"{e},{loss:.17g}" for e, loss in enumerate(losses)]
    return "\n".join(lines) + "\n"
