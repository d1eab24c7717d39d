"""Perturbation-bounded training followed by score-based pruning.

Training keeps every weight within ``eps`` of its initial value: the
optimizer state is the offset ``dW = W - W0``, each SGD step is applied to
the offset, the offset is clamped entrywise to ``[-eps, eps]`` and the
weights are rebuilt as ``W0 + dW``. Pruning then freezes the weights and
learns per-weight scores (edge-popup); the forward pass keeps the
top-scoring fraction of each layer.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .data import Dataset, Split

INIT_RANGE = 0.5


# network --------------------------------------------------------------------


class DenseNet:
    """Bias-free ReLU MLP with an immutable snapshot of its initial weights."""

    def __init__(self, weights: Sequence[np.ndarray]):
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        for a, b in zip(self.weights, self.weights[1:]):
            if b.shape[1] != a.shape[0]:
                raise ValueError(f"layer shapes do not chain: {a.shape} then {b.shape}")
        init = [w.copy() for w in self.weights]
        for w in init:
            w.flags.writeable = False
        self._init = tuple(init)

    @classmethod
    def random(cls, dims: Sequence[int], seed=0) -> "DenseNet":
        rng = np.random.default_rng(seed)
        return cls(
            [rng.uniform(-INIT_RANGE, INIT_RANGE, size=(o, i)) for i, o in zip(dims[:-1], dims[1:])]
        )

    @property
    def init_weights(self) -> tuple[np.ndarray, ...]:
        return self._init

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def copy(self) -> "DenseNet":
        out = DenseNet(self._init)
        out.weights = [w.copy() for w in self.weights]
        return out

    def max_offset(self) -> float:
        return max(float(np.max(np.abs(w - w0))) for w, w0 in zip(self.weights, self._init))


def forward(weights: Sequence[np.ndarray], x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Logits plus the list of layer inputs needed for backprop."""
    acts = [x]
    h = x
    for idx, w in enumerate(weights):
        h = h @ w.T
        if idx < len(weights) - 1:
            h = np.maximum(h, 0.0)
            acts.append(h)
    return h, acts


def softmax_xent(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(y)
    loss = -float(logp[np.arange(n), y].mean())
    g = np.exp(logp)
    g[np.arange(n), y] -= 1.0
    return loss, g / n


def loss_and_grads(weights: Sequence[np.ndarray], x: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
    logits, acts = forward(weights, x)
    loss, g = softmax_xent(logits, y)
    grads = [None] * len(weights)
    for idx in range(len(weights) - 1, -1, -1):
        grads[idx] = g.T @ acts[idx]
        if idx:
            g = (g @ weights[idx]) * (acts[idx] > 0)
    return loss, grads


def accuracy(weights: Sequence[np.ndarray], data: Dataset) -> float:
    logits, _ = forward(weights, data.x)
    return float(np.mean(np.argmax(logits, axis=1) == data.y))


def cosine_lr(lr0: float, t: int, total: int) -> float:
    return lr0 * (1.0 + math.cos(math.pi * t / total)) / 2.0 if total > 0 else lr0


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


# PGD ------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    eps: float = 0.1
    lr: float = 0.03
    epochs: int = 5
    batch_size: int = 64  # 0 means full batch
    seed: int = 0

    def __post_init__(self):
        if not (self.eps >= 0):
            raise ValueError(f"eps must be >= 0, got {self.eps}")
        if not (self.lr > 0):
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 0:
            raise ValueError(f"batch_size must be >= 0, got {self.batch_size}")


class NonFiniteLoss(FloatingPointError):
    pass


def clamp_offset(w0: np.ndarray, offset: np.ndarray, eps: float) -> np.ndarray:
    """``W0 + sign(offset) * min(|offset|, eps)`` with ``|W - W0| <= eps``
    holding exactly in floating point."""
    d = np.sign(offset) * np.minimum(np.abs(offset), eps)
    w = w0 + d
    if math.isfinite(eps):
        # rounding of w0 + d can overshoot by an ulp; step back toward w0
        bad = np.abs(w - w0) > eps
        while np.any(bad):
            w[bad] = np.nextafter(w[bad], w0[bad])
            bad = np.abs(w - w0) > eps
    return w


def pgd_train(
    net: DenseNet,
    data: Dataset,
    cfg: TrainConfig,
    on_step: Callable[[int, DenseNet], None] | None = None,
) -> DenseNet:
    """Projected SGD in the offset variable; returns a new trained net."""
    out = net.copy()
    w0 = out.init_weights
    offsets = [w - a for w, a in zip(out.weights, w0)]
    rng = np.random.default_rng(cfg.seed)
    bs = cfg.batch_size or len(data)
    step = 0
    for epoch in range(cfg.epochs):
        for idx in _batches(len(data), bs, rng):
            loss, grads = loss_and_grads(out.weights, data.x[idx], data.y[idx])
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"loss became {loss} at epoch {epoch}, step {step}")
            for l, g in enumerate(grads):
                w_hat = offsets[l] - cfg.lr * g
                out.weights[l] = clamp_offset(w0[l], w_hat, cfg.eps)
                offsets[l] = out.weights[l] - w0[l]
            step += 1
            if on_step is not None:
                on_step(step, out)
    return out


# edge-popup -----------------------------------------------------------------


@dataclass(frozen=True)
class PruneConfig:
    sparsity_levels: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    lr: float = 0.1
    epochs: int = 10
    batch_size: int = 64
    momentum: float = 0.9
    cosine_annealing: bool = True
    per_layer: bool = True
    seed: int = 0

    def __post_init__(self):
        levels = tuple(float(s) for s in self.sparsity_levels)
        object.__setattr__(self, "sparsity_levels", levels)
        if not levels:
            raise ValueError("sparsity_levels must be nonempty")
        if any(not (0 <= s < 1) for s in levels):
            raise ValueError(f"sparsity levels must lie in [0, 1), got {levels}")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ValueError(f"sparsity levels must be strictly increasing, got {levels}")
        if not (self.lr > 0) or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("need lr > 0, epochs >= 1, batch_size >= 1")


def kept_count(size: int, sparsity: float) -> int:
    return int(round((1.0 - sparsity) * size))


def topk_masks(scores: Sequence[np.ndarray], sparsity: float, per_layer: bool = True) -> list[np.ndarray]:
    """Binary masks keeping the largest ``|score|`` entries.

    Ties are broken by flat index (stable sort), so the mask is a
    deterministic function of the scores.
    """
    if per_layer:
        out = []
        for s in scores:
            k = kept_count(s.size, sparsity)
            m = np.zeros(s.size)
            m[np.argsort(-np.abs(s).ravel(), kind="stable")[:k]] = 1.0
            out.append(m.reshape(s.shape))
        return out
    flat = np.concatenate([np.abs(s).ravel() for s in scores])
    k = kept_count(flat.size, sparsity)
    m = np.zeros(flat.size)
    m[np.argsort(-flat, kind="stable")[:k]] = 1.0
    out, pos = [], 0
    for s in scores:
        out.append(m[pos:pos + s.size].reshape(s.shape))
        pos += s.size
    return out


@dataclass
class PopupResult:
    masks: list[np.ndarray]
    scores: list[np.ndarray]
    train_accuracy: float
    test_accuracy: float


def edge_popup(net: DenseNet, data: Split, sparsity: float, cfg: PruneConfig) -> PopupResult:
    """Learn a mask of the given sparsity over the frozen weights of ``net``."""
    if not (0 <= sparsity < 1):
        raise ValueError(f"sparsity must lie in [0, 1), got {sparsity}")
    weights = [w.copy() for w in net.weights]
    rng = np.random.default_rng(cfg.seed)
    scores = [rng.uniform(-1.0, 1.0, size=w.shape) / math.sqrt(w.shape[1]) for w in weights]
    velocity = [np.zeros_like(s) for s in scores]
    train = data.train
    steps_per_epoch = math.ceil(len(train) / cfg.batch_size)
    total = cfg.epochs * steps_per_epoch
    t = 0
    for _ in range(cfg.epochs):
        for idx in _batches(len(train), cfg.batch_size, rng):
            masks = topk_masks(scores, sparsity, cfg.per_layer)
            eff = [w * m for w, m in zip(weights, masks)]
            loss, grads = loss_and_grads(eff, train.x[idx], train.y[idx])
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"edge-popup loss became {loss} at step {t}")
            lr = cosine_lr(cfg.lr, t, total) if cfg.cosine_annealing else cfg.lr
            for l, g in enumerate(grads):
                # straight-through on |score|: d loss / d score = d loss / d (w m) * w * sign(score)
                velocity[l] = cfg.momentum * velocity[l] + g * weights[l] * np.sign(scores[l])
                scores[l] = scores[l] - lr * velocity[l]
            t += 1
    masks = topk_masks(scores, sparsity, cfg.per_layer)
    eff = [w * m for w, m in zip(weights, masks)]
    return PopupResult(masks, scores, accuracy(eff, train), accuracy(eff, data.test))


# sweep ----------------------------------------------------------------------


def cell_seed(master: int, *keys: int) -> int:
    """Deterministic 63-bit seed derived from a master seed and cell keys."""
    return int(np.random.SeedSequence([master, *keys]).generate_state(2, np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class SweepRow:
    eps: float
    sparsity: float
    train_accuracy: float
    test_accuracy: float
    epochs: int
    seed: int
    failed: bool = False


@dataclass
class SweepResult:
    rows: list[SweepRow]
    best_accuracy_per_eps: dict[float, float] = field(default_factory=dict)
    optimal_sparsity_per_eps: dict[float, float] = field(default_factory=dict)

    @classmethod
    def from_rows(cls, rows: Sequence[SweepRow]) -> "SweepResult":
        rows = sorted(rows, key=lambda r: (r.seed, r.eps, r.sparsity))
        res = cls(list(rows))
        for eps in sorted({r.eps for r in rows}):
            col = [r for r in rows if r.eps == eps and not r.failed]
            if not col:
                continue
            best = max(r.test_accuracy for r in col)
            res.best_accuracy_per_eps[eps] = best
            res.optimal_sparsity_per_eps[eps] = min(r.sparsity for r in col if r.test_accuracy == best)
        return res


def _train_for_seed(dims, data: Split, eps_grid, train_cfg: TrainConfig, seed: int) -> list[DenseNet | Exception]:
    # same init and batch order for every eps, so columns differ only in eps
    base = DenseNet.random(dims, seed=cell_seed(seed, 0))
    out = []
    for eps in eps_grid:
        cfg = TrainConfig(eps, train_cfg.lr, train_cfg.epochs, train_cfg.batch_size, cell_seed(seed, 1))
        try:
            out.append(pgd_train(base, data.train, cfg))
        except NonFiniteLoss as exc:
            out.append(exc)
    return out


def _popup_cell(args) -> tuple[float, float, float]:
    net, data, s, cfg = args
    res = edge_popup(net, data, s, cfg)
    return s, res.train_accuracy, res.test_accuracy


def sweep(
    eps_grid: Sequence[float],
    sparsity_grid: Sequence[float],
    train_cfg: TrainConfig,
    prune_cfg: PruneConfig,
    data: Split,
    hidden: Sequence[int] = (128, 128),
    seed: int = 0,
    executor=None,
) -> SweepResult:
    """Train once per eps, then prune at every sparsity level.

    ``executor`` may be any ``concurrent.futures`` executor; results are
    assembled by key so the outcome does not depend on completion order.
    """
    if not eps_grid or not sparsity_grid:
        raise ValueError("eps_grid and sparsity_grid must be nonempty")
    levels = PruneConfig(sparsity_levels=tuple(sparsity_grid)).sparsity_levels
    dims = [data.train.dim, *hidden, max(data.train.classes, data.test.classes)]
    nets = _train_for_seed(dims, data, list(eps_grid), train_cfg, seed)

    jobs, keys, rows = [], [], []
    for ei, (eps, net) in enumerate(zip(eps_grid, nets)):
        if isinstance(net, Exception):
            rows += [SweepRow(float(eps), s, math.nan, math.nan, train_cfg.epochs, seed, True) for s in levels]
            continue
        for si, s in enumerate(levels):
            cfg = PruneConfig(
                sparsity_levels=levels,
                lr=prune_cfg.lr,
                epochs=prune_cfg.epochs,
                batch_size=prune_cfg.batch_size,
                momentum=prune_cfg.momentum,
                cosine_annealing=prune_cfg.cosine_annealing,
                per_layer=prune_cfg.per_layer,
                seed=cell_seed(seed, 2, si),
            )
            jobs.append((net, data, s, cfg))
            keys.append(float(eps))
    results = list(executor.map(_popup_cell, jobs)) if executor else [_popup_cell(j) for j in jobs]
    for eps, (s, tr, te) in zip(keys, results):
        rows.append(SweepRow(eps, s, tr, te, train_cfg.epochs, seed))
    return SweepResult.from_rows(rows)


@dataclass(frozen=True)
class SweepSummary:
    eps: tuple[float, ...]
    median_best_accuracy: tuple[float, ...]
    median_optimal_sparsity: tuple[float, ...]

    def accuracy_inversions(self) -> int:
        acc = self.median_best_accuracy
        return sum(b < a for a, b in zip(acc, acc[1:]))


def summarize(results: Sequence[SweepResult]) -> SweepSummary:
    """Medians over seeds of the per-eps best accuracy and optimal sparsity."""
    eps = sorted(set().union(*(r.best_accuracy_per_eps for r in results)))
    acc = tuple(statistics.median(r.best_accuracy_per_eps[e] for r in results if e in r.best_accuracy_per_eps) for e in eps)
    spa = tuple(statistics.median(r.optimal_sparsity_per_eps[e] for r in results if e in r.optimal_sparsity_per_eps) for e in eps)
    return SweepSummary(tuple(eps), acc, spa)
