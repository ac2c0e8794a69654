"""Proxy calibration: Beta-weighted mixing of aligned embedding triples and cosine proxy losses."""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .embedding import EmbeddingSet
from .errors import ConfigError, DegenerateInputError, InsufficientPairsError, ShapeError

PAIRINGS = ("random_derangement", "all_pairs")


@dataclass(frozen=True)
class ProxyConfig:
    gamma: float = 2.0
    seed: int = 0
    pairing: str = "random_derangement"

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ConfigError(f"gamma must be > 0, got {self.gamma}")
        if int(self.seed) != self.seed or not (0 <= self.seed < 2**64):
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if self.pairing not in PAIRINGS:
            raise ConfigError(f"pairing must be one of {PAIRINGS}, got {self.pairing!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    def rng(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(int(self.seed)))


@dataclass(frozen=True, eq=False)
class ProxyBatch:
    mixed_query: np.ndarray
    mixed_clip: np.ndarray
    mixed_text: np.ndarray
    alphas: np.ndarray
    pair_indices: np.ndarray  # M x 2, columns (m, n)

    def __len__(self):
        return self.alphas.shape[0]


def sample_alpha(cfg: ProxyConfig, rng: np.random.Generator) -> float:
    """One Beta(gamma, gamma) draw built from two Gamma(gamma) draws."""
    x = rng.standard_gamma(cfg.gamma)
    y = rng.standard_gamma(cfg.gamma)
    s = x + y
    if s == 0.0:
        # Both gammas underflowed (tiny gamma); the symmetric midpoint is the only unbiased choice.
        return 0.5
    return float(x / s)


def sample_alphas(cfg: ProxyConfig, n: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    rng = cfg.rng() if rng is None else rng
    return np.array([sample_alpha(cfg, rng) for _ in range(n)], dtype=np.float64)


def mix_pair(a, b, alpha: float) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if not (0.0 <= alpha <= 1.0):
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 1.0:
        return a.copy()
    if alpha == 0.0:
        return b.copy()
    return alpha * a + (1.0 - alpha) * b


def random_derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random permutation without fixed points (rejection sampling)."""
    if n < 2:
        raise InsufficientPairsError(f"a derangement needs at least 2 elements, got {n}")
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return perm


def _rows(x) -> np.ndarray:
    if isinstance(x, EmbeddingSet):
        return x.rows
    return np.atleast_2d(np.asarray(x, dtype=np.float64))


def build_proxy_batch(f_q, f_c, f_t, cfg: ProxyConfig) -> ProxyBatch:
    """Mix index-aligned query, CLIP and text rows with shared (m, n, alpha) per output row."""
    q, c, t = _rows(f_q), _rows(f_c), _rows(f_t)
    n = q.shape[0]
    if c.shape[0] != n or t.shape[0] != n:
        raise ShapeError(f"row counts differ: F_Q={n}, F_C={c.shape[0]}, F_T={t.shape[0]}")
    if n < 2:
        raise InsufficientPairsError(f"proxy mixing needs N >= 2 aligned rows, got {n}")
    rng = cfg.rng()
    if cfg.pairing == "random_derangement":
        perm = random_derangement(n, rng)
        pairs = np.column_stack([np.arange(n), perm])
    else:
        pairs = np.array(list(itertools.combinations(range(n), 2)), dtype=np.int64)
    alphas = sample_alphas(cfg, pairs.shape[0], rng)

    def mix(src):
        return np.stack([mix_pair(src[m], src[k], a) for (m, k), a in zip(pairs, alphas)])

    return ProxyBatch(mix(q), mix(c), mix(t), alphas, pairs.astype(np.int64))


def _row_norms(x: np.ndarray, name: str) -> np.ndarray:
    n = np.linalg.norm(x, axis=1)
    bad = np.flatnonzero(n == 0.0)
    if bad.size:
        raise DegenerateInputError(f"zero-norm {name} rows: {bad.tolist()}")
    return n


def _cosines(x: np.ndarray, t: np.ndarray, name: str) -> np.ndarray:
    nx = _row_norms(x, name)
    nt = _row_norms(t, "mixed_text")
    return np.clip(np.einsum("ij,ij->i", x, t) / (nx * nt), -1.0, 1.0)


def proxy_loss_rows(batch: ProxyBatch):
    """Per-row ``(1 - cos(Q', T'), 1 - cos(C', T'))``."""
    l_pq = 1.0 - _cosines(batch.mixed_query, batch.mixed_text, "mixed_query")
    l_pc = 1.0 - _cosines(batch.mixed_clip, batch.mixed_text, "mixed_clip")
    return l_pq, l_pc


def proxy_loss(batch: ProxyBatch):
    """Batch-mean proxy losses ``(l_pq, l_pc, total)``."""
    l_pq, l_pc = proxy_loss_rows(batch)
    a = float(l_pq.mean())
    b = float(l_pc.mean())
    return a, b, a + b


def _cosine_grad(x: np.ndarray, t: np.ndarray, name: str):
    """Gradients of ``cos(x_i, t_i)`` with respect to ``x_i`` and ``t_i``, rowwise."""
    nx = _row_norms(x, name)[:, None]
    nt = _row_norms(t, "mixed_text")[:, None]
    cos = np.einsum("ij,ij->i", x, t)[:, None] / (nx * nt)
    gx = t / (nx * nt) - cos * x / nx**2
    gt = x / (nx * nt) - cos * t / nt**2
    return gx, gt


def proxy_loss_grad(batch: ProxyBatch, wrt_text: bool = False) -> dict:
    """Analytic gradients of the total (batch-mean) proxy loss.

    Returns a dict with ``query`` and ``clip`` (M x d); ``text`` is included when
    ``wrt_text`` is set.
    """
    m = len(batch)
    gq, gtq = _cosine_grad(batch.mixed_query, batch.mixed_text, "mixed_query")
    gc, gtc = _cosine_grad(batch.mixed_clip, batch.mixed_text, "mixed_clip")
    out = {"query": -gq / m, "clip": -gc / m}
    if wrt_text:
        out["text"] = -(gtq + gtc) / m
    return out


def finite_difference_check(batch: ProxyBatch, h: float = 1e-5, wrt_text: bool = False, floor: float = 1e-3) -> float:
    """Max rowwise relative error between analytic and central-difference gradients.

    Error per row is ``||num - analytic|| / max(||num||, ||analytic||, floor)`` on the
    total loss. The floor keeps rows whose true gradient vanishes (for example at
    the loss minimum) from turning rounding noise into a relative error near 1.
    """
    analytic = proxy_loss_grad(batch, wrt_text=wrt_text)
    fields = {"query": "mixed_query", "clip": "mixed_clip", "text": "mixed_text"}
    worst = 0.0
    for key, grad in analytic.items():
        base = {k: getattr(batch, v).copy() for k, v in fields.items()}
        num = np.zeros_like(grad)
        for idx in np.ndindex(*grad.shape):
            saved = base[key][idx]
            base[key][idx] = saved + h
            plus = proxy_loss(_with(batch, base))[2]
            base[key][idx] = saved - h
            minus = proxy_loss(_with(batch, base))[2]
            base[key][idx] = saved
            num[idx] = (plus - minus) / (2 * h)
        err = np.linalg.norm(num - grad, axis=1)
        scale = np.maximum(np.maximum(np.linalg.norm(num, axis=1), np.linalg.norm(grad, axis=1)), floor)
        worst = max(worst, float(np.max(err / scale)))
    return worst


def _with(batch: ProxyBatch, arrays: dict) -> ProxyBatch:
    return ProxyBatch(arrays["query"], arrays["clip"], arrays["text"], batch.alphas, batch.pair_indices)
