"""Contrastive training of the residual fusion block.

The trainable path is ``fuse_self``: clip -> LN -> self-attention -> residual
-> LN -> MLP -> residual -> column mean. Two clips are fused with shared
weights, the outputs (L2-normalized by default) feed a margin contrastive
loss, and plain gradient descent updates the sixteen tensors on that path.
Gradients are exact reverse-mode derivatives written out by hand; they are
checked against :func:`numeric_gradient` central differences in the tests.

Loss for a pair with label y (1 = same category):

    L = 0.5 * (y * D^2 + (1 - y) * max(0, margin - D)^2)

with D either the euclidean distance or the cosine distance (1 - cosine).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import erf, softmax

from .errors import DivergedError, ZeroNormError
from .fusion import AttentionParams, FusionWeights, LayerNormParams, MlpParams, fuse_self

DISTANCES = ("euclidean", "cosine")

# Tensors updated by training, in bundle naming.
TRAINABLE_TENSORS = (
    "ln1.gamma", "ln1.beta", "ln2.gamma", "ln2.beta",
    "attn.wq", "attn.wk", "attn.wv", "attn.wo",
    "attn.bq", "attn.bk", "attn.bv", "attn.bo",
    "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2",
)


@dataclass
class TrainPair:
    clip_a: np.ndarray  # (n, d)
    clip_b: np.ndarray
    label: int  # 1 same category, 0 different


@dataclass
class TrainConfig:
    margin: float = 0.5
    distance: str = "euclidean"
    learning_rate: float = 0.05
    steps: int = 500
    batch_size: int = 8
    seed: int = 0
    d: int | None = None  # embedding width, for weight initialization
    heads: int = 1
    normalize_outputs: bool = True  # L2-normalize fused vectors before the loss

    def __post_init__(self):
        if self.distance not in DISTANCES:
            raise ValueError(f"distance must be one of {DISTANCES}, got {self.distance!r}")
        if self.margin < 0 or not np.isfinite(self.margin):
            raise ValueError("margin must be finite and non-negative")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")


def contrastive_loss(f_a: np.ndarray, f_b: np.ndarray, y: int,
                     margin: float = 0.5, distance: str = "euclidean") -> float:
    """Margin contrastive loss between two already-fused vectors."""
    if y not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {y!r}")
    loss, _, _ = _loss_head(np.asarray(f_a, np.float64), np.asarray(f_b, np.float64),
                            y, margin, distance)
    return loss


def _loss_head(fa, fb, y, margin, distance):
    """Loss plus its gradients with respect to the two input vectors."""
    if distance == "euclidean":
        diff = fa - fb
        dist = float(np.linalg.norm(diff))
        ddist_dfa = diff / dist if dist > 0 else np.zeros_like(fa)
    elif distance == "cosine":
        na, nb = np.linalg.norm(fa), np.linalg.norm(fb)
        if na == 0.0 or nb == 0.0:
            raise ZeroNormError("cosine distance undefined for zero-norm vector")
        cos = float(fa @ fb / (na * nb))
        dist = 1.0 - cos
        ddist_dfa = -(fb / (na * nb) - cos * fa / (na * na))
    else:
        raise ValueError(f"distance must be one of {DISTANCES}, got {distance!r}")
    hinge = max(0.0, margin - dist)
    loss = 0.5 * (y * dist * dist + (1 - y) * hinge * hinge)
    dloss_ddist = y * dist - (1 - y) * hinge
    dfa = dloss_ddist * ddist_dfa
    if distance == "euclidean":
        dfb = -dfa
    else:
        ddist_dfb = -(fa / (na * nb) - cos * fb / (nb * nb))
        dfb = dloss_ddist * ddist_dfb
    return loss, dfa, dfb


def _normalize_with_grad(f):
    n = float(np.linalg.norm(f))
    if n == 0.0:
        raise ZeroNormError("cannot normalize zero-norm fusion output")
    unit = f / n

    def backward(dunit):
        return (dunit - (dunit @ unit) * unit) / n

    return unit, backward


def pair_loss(pair: TrainPair, weights: FusionWeights, cfg: TrainConfig) -> float:
    """Forward pass of the training objective through the public fusion op."""
    fa = fuse_self(pair.clip_a, weights, cfg.heads)
    fb = fuse_self(pair.clip_b, weights, cfg.heads)
    if cfg.normalize_outputs:
        fa, _ = _normalize_with_grad(fa)
        fb, _ = _normalize_with_grad(fb)
    return contrastive_loss(fa, fb, pair.label, cfg.margin, cfg.distance)


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def _gelu_grad(x):
    phi = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return 0.5 * (1.0 + erf(x / np.sqrt(2.0))) + x * phi


def _ln_forward(x, p: LayerNormParams):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    istd = 1.0 / np.sqrt(var + p.eps)
    xhat = (x - mu) * istd
    return xhat * p.gamma + p.beta, (xhat, istd, p.gamma)


def _ln_backward(dy, cache):
    xhat, istd, gamma = cache
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = istd * (dxhat - m1 - xhat * m2)
    return dx, dgamma, dbeta


def _attn_forward(x, w: AttentionParams, heads):
    n, d = x.shape
    dh = d // heads
    q = x @ w.wq + w.bq
    k = x @ w.wk + w.bk
    v = x @ w.wv + w.bv
    qh, kh, vh = (a.reshape(n, heads, dh) for a in (q, k, v))
    scale = 1.0 / np.sqrt(dh)
    z = np.einsum("nhk,mhk->hnm", qh, kh) * scale
    a = softmax(z, axis=-1)
    mix = np.einsum("hnm,mhk->nhk", a, vh).reshape(n, d)
    out = mix @ w.wo + w.bo
    return out, (x, qh, kh, vh, a, mix, scale, w)


def _attn_backward(dout, cache):
    x, qh, kh, vh, a, mix, scale, w = cache
    n, d = x.shape
    heads = a.shape[0]
    dh = d // heads
    dwo = mix.T @ dout
    dbo = dout.sum(axis=0)
    dmix = (dout @ w.wo.T).reshape(n, heads, dh)
    da = np.einsum("nhk,mhk->hnm", dmix, vh)
    dvh = np.einsum("hnm,nhk->mhk", a, dmix)
    dz = a * (da - (da * a).sum(axis=-1, keepdims=True))
    dqh = np.einsum("hnm,mhk->nhk", dz, kh) * scale
    dkh = np.einsum("hnm,nhk->mhk", dz, qh) * scale
    dq, dk, dv = (g.reshape(n, d) for g in (dqh, dkh, dvh))
    grads = {
        "wq": x.T @ dq, "bq": dq.sum(axis=0),
        "wk": x.T @ dk, "bk": dk.sum(axis=0),
        "wv": x.T @ dv, "bv": dv.sum(axis=0),
        "wo": dwo, "bo": dbo,
    }
    dx = dq @ w.wq.T + dk @ w.wk.T + dv @ w.wv.T
    return dx, grads


def _mlp_forward(x, w: MlpParams):
    pre = x @ w.w1 + w.b1
    act = _gelu(pre)
    return act @ w.w2 + w.b2, (x, pre, act, w)


def _mlp_backward(dout, cache):
    x, pre, act, w = cache
    dw2 = act.T @ dout
    db2 = dout.sum(axis=0)
    dact = dout @ w.w2.T
    dpre = dact * _gelu_grad(pre)
    grads = {"w1": x.T @ dpre, "b1": dpre.sum(axis=0), "w2": dw2, "b2": db2}
    dx = dpre @ w.w1.T
    return dx, grads


def _fuse_self_forward(x, weights: FusionWeights, heads):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    h1, ln1_cache = _ln_forward(x, weights.ln1)
    s, attn_cache = _attn_forward(h1, weights.attn, heads)
    u = x + s
    h2, ln2_cache = _ln_forward(u, weights.ln2)
    m, mlp_cache = _mlp_forward(h2, weights.mlp)
    v = u + m
    f = v.mean(axis=0)
    return f, (x.shape[0], ln1_cache, attn_cache, ln2_cache, mlp_cache)


def _fuse_self_backward(df, cache, grads):
    n, ln1_cache, attn_cache, ln2_cache, mlp_cache = cache
    dv = np.tile(df / n, (n, 1))
    du = dv.copy()
    dh2, mlp_g = _mlp_backward(dv, mlp_cache)
    du2, dg2, db2 = _ln_backward(dh2, ln2_cache)
    du += du2
    dh1, attn_g = _attn_backward(du, attn_cache)
    _, dg1, db1 = _ln_backward(dh1, ln1_cache)
    grads["ln1.gamma"] += dg1
    grads["ln1.beta"] += db1
    grads["ln2.gamma"] += dg2
    grads["ln2.beta"] += db2
    for key, g in attn_g.items():
        grads[f"attn.{key}"] += g
    for key, g in mlp_g.items():
        grads[f"mlp.{key}"] += g


def analytic_gradients(pair: TrainPair, weights: FusionWeights,
                       cfg: TrainConfig) -> dict[str, np.ndarray]:
    """Exact gradients of the pair loss for every trainable tensor."""
    _, grads = loss_and_gradients(pair, weights, cfg)
    return grads


def loss_and_gradients(pair: TrainPair, weights: FusionWeights,
                       cfg: TrainConfig) -> tuple[float, dict[str, np.ndarray]]:
    fa, cache_a = _fuse_self_forward(pair.clip_a, weights, cfg.heads)
    fb, cache_b = _fuse_self_forward(pair.clip_b, weights, cfg.heads)
    if cfg.normalize_outputs:
        fa_n, back_a = _normalize_with_grad(fa)
        fb_n, back_b = _normalize_with_grad(fb)
    else:
        fa_n, fb_n = fa, fb
        back_a = back_b = lambda g: g
    loss, dfa_n, dfb_n = _loss_head(fa_n, fb_n, pair.label, cfg.margin, cfg.distance)
    tensors = weights.to_dict()
    grads = {name: np.zeros_like(tensors[name]) for name in TRAINABLE_TENSORS}
    _fuse_self_backward(back_a(dfa_n), cache_a, grads)
    _fuse_self_backward(back_b(dfb_n), cache_b, grads)
    return loss, grads


def numeric_gradient(f: Callable[[np.ndarray], float], theta: np.ndarray,
                     eps: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function, in float64."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.zeros_like(theta)
    flat = theta.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(theta)
        flat[i] = orig - eps
        fm = f(theta)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def train_fusion(pairs: Iterable[TrainPair], weights: FusionWeights,
                 cfg: TrainConfig) -> tuple[FusionWeights, list[float]]:
    """Plain gradient descent over the fuse_self path.

    Pairs are shuffled once with the config seed and cycled in fixed order,
    so the run is deterministic. Returns fresh weights (the input object is
    untouched) and the per-step mean batch loss, recorded before each update.
    Raises DivergedError as soon as a batch loss turns non-finite.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("train_fusion needs at least one pair")
    weights = weights.copy()
    tensors = weights.to_dict()  # views into the copy, updated in place
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(pairs))
    curve: list[float] = []
    cursor = 0
    for step in range(cfg.steps):
        batch = [pairs[order[(cursor + j) % len(pairs)]] for j in range(cfg.batch_size)]
        cursor = (cursor + cfg.batch_size) % len(pairs)
        total = 0.0
        acc = {name: np.zeros_like(tensors[name]) for name in TRAINABLE_TENSORS}
        for pair in batch:
            loss, grads = loss_and_gradients(pair, weights, cfg)
            total += loss
            for name in TRAINABLE_TENSORS:
                acc[name] += grads[name]
        mean_loss = total / len(batch)
        if not np.isfinite(mean_loss):
            raise DivergedError(step)
        for name in TRAINABLE_TENSORS:
            tensors[name] -= cfg.learning_rate * acc[name] / len(batch)
        curve.append(mean_loss)
    return weights, curve
