"""Pruning plus bounded perturbation of a random 2L-layer ReLU network so
that it approximates a given L-layer target network.

Each target layer ``W`` (``d_out x d_in``) is realized by two candidate
layers. The first has fixed ``+1`` rows in its top half and ``-1`` rows in
its bottom half; pruning makes it block diagonal so that every input
coordinate ``j`` feeds its own sub-block of ``n_b`` positive and ``n_b``
negative units. The second layer is uniform in ``[-1, 1]``; for each entry
``W[i, j]`` the outer weights of sub-block ``j`` are pruned and perturbed
by at most ``eps`` to solve two perturbed subset-sum instances, one for
``x_j >= 0`` (target ``W[i, j]``) and one for ``x_j < 0`` (target
``-W[i, j]``).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .subsetsum import MITM_MAX_N, CandidateSet, solve_auto


@dataclass
class Mlp:
    """Bias-free ReLU network; no activation after the last layer."""

    weights: list[np.ndarray]

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        for a, b in zip(self.weights, self.weights[1:]):
            if b.shape[1] != a.shape[0]:
                raise ValueError(f"layer shapes do not chain: {a.shape} then {b.shape}")

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    def to_dict(self) -> dict:
        return {"dims": self.dims, "weights": [w.tolist() for w in self.weights]}

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        net = cls([np.array(w, dtype=np.float64) for w in d["weights"]])
        if "dims" in d and list(d["dims"]) != net.dims:
            raise ValueError(f"dims {d['dims']} do not match weights {net.dims}")
        return net


@dataclass
class CandidateNet:
    """Random 2L-layer network laid out for the block construction."""

    weights: list[np.ndarray]
    # units per sign half of each input sub-block, one entry per target layer
    block_half: list[int]
    # width before rounding to whole sub-blocks (K1 + K2), per target layer
    raw_widths: list[float] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def hidden_widths(self) -> list[int]:
        return [self.weights[2 * l].shape[0] for l in range(len(self.block_half))]

    def to_dict(self) -> dict:
        return {
            "dims": self.dims,
            "block_half": self.block_half,
            "raw_widths": self.raw_widths,
            "weights": [w.tolist() for w in self.weights],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CandidateNet":
        return cls(
            [np.array(w, dtype=np.float64) for w in d["weights"]],
            list(d["block_half"]),
            list(d.get("raw_widths", [])),
        )


@dataclass
class PrunedPerturbedNet:
    base: CandidateNet
    masks: list[np.ndarray]
    perturbations: list[np.ndarray]
    layer_reports: list["LayerReport"] = field(default_factory=list)

    def effective_weights(self) -> list[np.ndarray]:
        return [m * (u + y) for m, u, y in zip(self.masks, self.base.weights, self.perturbations)]

    def is_feasible(self, eps: float) -> bool:
        for idx, (m, y) in enumerate(zip(self.masks, self.perturbations)):
            if m.shape != self.base.weights[idx].shape or y.shape != m.shape:
                return False
            if not np.all((m == 0) | (m == 1)):
                return False
            if np.any(y[m == 0] != 0):
                return False
            if idx % 2 == 0 and np.any(y != 0):
                return False
            if idx % 2 == 1 and np.any(np.abs(y) > eps):
                return False
        return True

    def to_dict(self) -> dict:
        return {
            "base": self.base.to_dict(),
            "masks": [m.astype(np.uint8).tolist() for m in self.masks],
            "perturbations": [y.tolist() for y in self.perturbations],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PrunedPerturbedNet":
        return cls(
            CandidateNet.from_dict(d["base"]),
            [np.array(m, dtype=np.float64) for m in d["masks"]],
            [np.array(y, dtype=np.float64) for y in d["perturbations"]],
        )


def save_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj.to_dict(), fh)


# target validation -------------------------------------------------------


class LayerCheck(NamedTuple):
    spectral: float
    max_abs: float
    ok: bool


def spectral_norm(w: np.ndarray, iters: int = 200, tol: float = 1e-8, seed: int = 0) -> float:
    """Largest singular value by power iteration on ``W^T W``."""
    w = np.asarray(w, dtype=np.float64)
    if not np.any(w):
        return 0.0
    v = np.random.default_rng(seed).standard_normal(w.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(iters):
        u = w.T @ (w @ v)
        nrm = np.linalg.norm(u)
        if nrm == 0.0:
            return 0.0
        v = u / nrm
        new = math.sqrt(nrm)
        if abs(new - sigma) <= tol * max(new, 1.0):
            sigma = new
            break
        sigma = new
    return float(np.linalg.norm(w @ v))


def validate_target(net: Mlp) -> list[LayerCheck]:
    out = []
    for w in net.weights:
        s = spectral_norm(w)
        m = float(np.max(np.abs(w))) if w.size else 0.0
        out.append(LayerCheck(s, m, s <= 1 + 1e-9 and m <= 0.5 + 1e-12))
    return out


def random_target(dims: Sequence[int], seed: int = 0) -> Mlp:
    """Uniform random weights rescaled into the valid target region."""
    rng = np.random.default_rng(seed)
    weights = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        w = rng.uniform(-1.0, 1.0, size=(d_out, d_in))
        scale = min(1.0 / np.linalg.norm(w, 2), 0.5 / np.max(np.abs(w)))
        weights.append(w * scale * (1 - 1e-9))
    return Mlp(weights)


# candidate construction --------------------------------------------------


def layer_width(d_in: int, d_out: int, depth: int, eta: float, eps: float, c1: float = 1.0, c2: float = 1.0) -> tuple[float, int]:
    """Raw width ``K1 + K2`` and units per sign half of each sub-block."""
    log_term = math.log(d_in * d_out * depth / eta)
    k1 = c1 * d_in * log_term / math.log(1.25 + eps / 2)
    k2 = c2 * d_in * log_term / (1.0 + eps)
    raw = k1 + k2
    return raw, max(1, math.ceil(raw / (2 * d_in)))


def init_candidate(
    target_dims: Sequence[int],
    eta: float,
    eps: float,
    c1: float = 1.0,
    c2: float = 1.0,
    seed: int = 0,
    sub_block: int | None = None,
) -> CandidateNet:
    """Random candidate for ``target_dims``.

    Each hidden layer has ``d_in`` sub-blocks of ``2 * n_b`` units with
    ``n_b = ceil((K1 + K2) / (2 d_in))``. ``sub_block`` overrides the
    per-sub-block size for every layer; it must be even and at least 2.
    """
    if sub_block is not None and (sub_block < 2 or sub_block % 2):
        raise ValueError(f"sub_block must be an even integer >= 2, got {sub_block}")
    if not (0 < eta < 1):
        raise ValueError("need 0 < eta < 1")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    dims = [int(d) for d in target_dims]
    if len(dims) < 2 or min(dims) < 1:
        raise ValueError(f"invalid target dims {dims}")
    depth = len(dims) - 1
    rng = np.random.default_rng(seed)
    weights, halves, raws = [], [], []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        raw, n_b = layer_width(d_in, d_out, depth, eta, eps, c1, c2)
        if sub_block is not None:
            n_b = sub_block // 2
        width = 2 * n_b * d_in
        inner = np.ones((width, d_in))
        inner[width // 2:] = -1.0
        outer = rng.uniform(-1.0, 1.0, size=(d_out, width))
        weights += [inner, outer]
        halves.append(n_b)
        raws.append(raw)
    return CandidateNet(weights, halves, raws)


def block_rows(j: int, n_b: int, d_in: int) -> tuple[np.ndarray, np.ndarray]:
    """Hidden-unit rows of sub-block ``j``: positive half, negative half."""
    half = n_b * d_in
    pos = np.arange(j * n_b, (j + 1) * n_b)
    return pos, half + pos


class WeightApprox(NamedTuple):
    mask: np.ndarray
    perturbation: np.ndarray
    # sum of the two subset-sum errors: certified bound on the sup error
    error: float
    errors: tuple[float, float]
    ok: bool


def approximate_weight(w: float, v: Sequence[float], eps: float, eta: float) -> WeightApprox:
    """Mask and perturb ``v`` so that ``(v+y)·σ((u⊙s)x) ≈ w x`` on ``|x| <= 1``.

    ``v`` has ``2n`` entries; the first ``n`` sit behind ``+1`` units and
    see ``x`` when ``x >= 0``, the last ``n`` sit behind ``-1`` units and
    see ``-x`` when ``x < 0``. The first half therefore targets ``w`` and
    the second targets ``-w``. ``ok`` is true when both errors are at most
    ``eta / 2``, which guarantees a sup error below ``eta``.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size % 2:
        raise ValueError("v must have even length")
    if abs(w) > 0.5 + 1e-12:
        raise ValueError(f"|w| must be <= 1/2, got {w}")
    n = v.size // 2
    use = min(n, MITM_MAX_N)
    mask = np.zeros(2 * n)
    y = np.zeros(2 * n)
    errs = []
    for offset, target in ((0, w), (n, -w)):
        sol = solve_auto(CandidateSet(v[offset:offset + use], eps), target)
        mask[offset:offset + use] = sol.mask
        y[offset:offset + use] = sol.perturbations
        errs.append(sol.error)
    total = errs[0] + errs[1]
    return WeightApprox(mask, y, total, (errs[0], errs[1]), max(errs) <= eta / 2)


def weight_sup_error(w: float, v, mask, y, xs=(-1.0, 1.0)) -> float:
    """``max |w x - (v+y)·σ((u⊙s)x)|`` over the given scalar inputs."""
    v = np.asarray(v, dtype=np.float64)
    n = v.size // 2
    u = np.concatenate((np.ones(n), -np.ones(n)))
    xs = np.asarray(xs, dtype=np.float64)
    hidden = np.maximum(0.0, np.outer(xs, u * mask))
    return float(np.max(np.abs(w * xs - hidden @ (v + y))))


@dataclass
class LayerReport:
    max_entry_error: float
    # sum over entries of certified per-entry errors: bounds ||Wx - g(x)||
    total_error: float
    budget_per_entry: float
    failures: int


def approximate_layer(w: np.ndarray, inner: np.ndarray, outer: np.ndarray, n_b: int, eps: float, eta_layer: float):
    """Masks and perturbations for one target layer.

    Returns ``(inner_mask, outer_mask, outer_perturbation, report)``.
    """
    w = np.asarray(w, dtype=np.float64)
    d_out, d_in = w.shape
    width = inner.shape[0]
    if width != 2 * n_b * d_in or inner.shape[1] != d_in or outer.shape != (d_out, width):
        raise ValueError(
            f"candidate block of width {width} does not split into {d_in} sub-blocks of 2x{n_b}"
        )
    budget = eta_layer / (d_in * d_out)
    s_in = np.zeros_like(inner)
    s_out = np.zeros_like(outer)
    y_out = np.zeros_like(outer)
    worst, total, failures = 0.0, 0.0, 0
    for j in range(d_in):
        pos, neg = block_rows(j, n_b, d_in)
        s_in[pos, j] = 1.0
        s_in[neg, j] = 1.0
        rows = np.concatenate((pos, neg))
        for i in range(d_out):
            res = approximate_weight(float(w[i, j]), outer[i, rows], eps, budget)
            s_out[i, rows] = res.mask
            y_out[i, rows] = res.perturbation
            worst = max(worst, res.error)
            total += res.error
            failures += not res.ok
    return s_in, s_out, y_out, LayerReport(worst, total, budget, failures)


def approximate_network(target: Mlp, candidate: CandidateNet, eps: float, eta: float) -> PrunedPerturbedNet:
    """Prune and perturb ``candidate`` layer by layer with budget ``eta/(2L)``."""
    depth = target.depth
    if candidate.depth != 2 * depth:
        raise ValueError("candidate must have twice the target depth")
    masks, perts, reports = [], [], []
    for l, w in enumerate(target.weights):
        inner, outer = candidate.weights[2 * l], candidate.weights[2 * l + 1]
        s_in, s_out, y_out, rep = approximate_layer(
            w, inner, outer, candidate.block_half[l], eps, eta / (2 * depth)
        )
        masks += [s_in, s_out]
        perts += [np.zeros_like(inner), y_out]
        reports.append(rep)
    return PrunedPerturbedNet(candidate, masks, perts, reports)


# evaluation --------------------------------------------------------------


def _relu_chain(weights: Sequence[np.ndarray], x: np.ndarray) -> np.ndarray:
    h = x
    for idx, w in enumerate(weights):
        h = h @ w.T
        if idx < len(weights) - 1:
            h = np.maximum(h, 0.0)
    return h


def forward(net, x) -> np.ndarray:
    """Forward pass for a single input vector or a batch (rows)."""
    x = np.asarray(x, dtype=np.float64)
    if isinstance(net, PrunedPerturbedNet):
        weights = net.effective_weights()
    elif isinstance(net, (Mlp, CandidateNet)):
        weights = net.weights
    else:
        raise TypeError(f"cannot run forward on {type(net).__name__}")
    if x.shape[-1] != weights[0].shape[1]:
        raise ValueError(f"input dim {x.shape[-1]} != {weights[0].shape[1]}")
    return _relu_chain(weights, x)


def sample_linf_ball(d: int, samples: int, rng: np.random.Generator) -> np.ndarray:
    """Half random corners of ``[-1, 1]^d``, half uniform interior points."""
    corners = samples // 2
    x = rng.uniform(-1.0, 1.0, size=(samples, d))
    x[:corners] = rng.choice([-1.0, 1.0], size=(corners, d))
    return x


def measure_sup_error(target, pruned, samples: int = 10_000, seed: int = 0) -> tuple[float, float]:
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    x = sample_linf_ball(target.dims[0], samples, rng)
    err = np.linalg.norm(forward(target, x) - forward(pruned, x), axis=1)
    return float(err.max()), float(err.mean())
