"""Gradient-free aggregation of query embeddings and pooled CLIP features.

The operator alternates two random-walk half steps::

    F_Q^t = w * Norm(Z)^T F_C^{t-1} + (1 - w) * F_Q^0
    F_C^t = w * Z F_Q^t          + (1 - w) * F_C^0

with ``Z = lam * F_C^0 (F_Q^0)^T``. Eliminating ``F_Q`` gives the linear
recursion ``F_C^t = w^2 A F_C^{t-1} + b`` where ``A = Z Norm(Z)^T`` and
``b = (1 - w)(w Z F_Q^0 + F_C^0)``, whose fixed point is
``(I - w^2 A)^{-1} b`` whenever the spectral radius of ``w^2 A`` is below one.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Union

import numpy as np
import scipy.linalg

from .embedding import EmbeddingSet, l2_normalize_rows
from .errors import (
    ConfigError,
    DegenerateColumnError,
    DivergenceError,
    EmptyInputError,
    NonConvergentConfigError,
    ShapeError,
    SolverError,
)

logger = logging.getLogger(__name__)

NORMALIZE_MODES = ("column_softmax", "column_l1")
REDUCE_MODES = ("mean", "first")

ArrayLike = Union[EmbeddingSet, np.ndarray]


@dataclass(frozen=True)
class FusionConfig:
    lam: float = 0.2
    omega: float = 0.5
    max_iters: int = 1000
    tolerance: float = 1e-10
    normalize_mode: str = "column_softmax"
    # L2-normalize F_C and F_Q rows before fusing.
    normalize_inputs: bool = False
    power_iters: int = 50
    power_tol: float = 1e-6

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ConfigError(f"lambda must be > 0, got {self.lam}")
        if not (0.0 < self.omega < 1.0):
            raise ConfigError(f"omega must lie strictly inside (0, 1), got {self.omega}")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ConfigError(f"max_iters must be an integer >= 1, got {self.max_iters}")
        if not (self.tolerance > 0):
            raise ConfigError(f"tolerance must be > 0, got {self.tolerance}")
        if self.normalize_mode not in NORMALIZE_MODES:
            raise ConfigError(
                f"normalize_mode must be one of {NORMALIZE_MODES}, got {self.normalize_mode!r}"
            )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class FusionResult:
    fused_clip: np.ndarray
    fused_query: np.ndarray
    iterations_used: int
    converged: bool
    spectral_radius_estimate: float


def _matrix(x: ArrayLike) -> np.ndarray:
    if isinstance(x, EmbeddingSet):
        return x.rows
    m = np.asarray(x, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(1, -1)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D row set, got shape {m.shape}")
    return m


def _inputs(f_q0: ArrayLike, f_c0: ArrayLike, cfg: FusionConfig):
    fq = _matrix(f_q0)
    fc = _matrix(f_c0)
    if fq.shape[1] != fc.shape[1]:
        raise ShapeError(f"F_Q has dimension {fq.shape[1]} but F_C has {fc.shape[1]}")
    if fq.shape[0] < 1 or fc.shape[0] < 1:
        raise EmptyInputError("fusion needs at least one query row and one CLIP row")
    if cfg.normalize_inputs:
        fq = l2_normalize_rows(fq)
        fc = l2_normalize_rows(fc)
    return fq, fc


def compute_affinity(f_c: ArrayLike, f_q: ArrayLike, lam: float, strict: bool = True) -> np.ndarray:
    """Scaled dot-product affinity ``lam * F_C F_Q^T`` of shape (n_c, n_q)."""
    fc = _matrix(f_c)
    fq = _matrix(f_q)
    if fc.shape[1] != fq.shape[1]:
        raise ShapeError(f"F_C has dimension {fc.shape[1]} but F_Q has {fq.shape[1]}")
    if lam < 0 or (strict and lam == 0):
        raise ConfigError(f"lambda must be > 0, got {lam}")
    return lam * (fc @ fq.T)


def normalize_affinity(z: np.ndarray, mode: str = "column_softmax") -> np.ndarray:
    """Normalize each column of ``z`` to sum to one."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 1:
        raise ShapeError(f"affinity must be a nonempty 2-D matrix, got shape {z.shape}")
    if mode == "column_softmax":
        e = np.exp(z - z.max(axis=0, keepdims=True))
        return e / e.sum(axis=0, keepdims=True)
    if mode == "column_l1":
        # magnitudes, so signed affinities still give convex column weights
        mag = np.abs(z)
        s = mag.sum(axis=0, keepdims=True)
        zero = np.flatnonzero(s[0] == 0.0)
        if zero.size:
            raise DegenerateColumnError(f"all-zero affinity columns under l1 mode: {zero.tolist()}")
        return mag / s
    raise ConfigError(f"unknown normalize mode {mode!r}")


def spectral_radius(m: np.ndarray, max_iters: int = 50, tol: float = 1e-6) -> float:
    """Estimate the spectral radius of a square matrix by power iteration.

    Power iteration only settles when a single eigenvalue dominates in modulus.
    When the ratio has not stabilized within ``max_iters`` steps the estimate
    falls back to a dense eigenvalue solve.
    """
    m = np.asarray(m, dtype=np.float64)
    n = m.shape[0]
    if n == 0:
        return 0.0
    v = np.random.default_rng(0x5EED).standard_normal(n)
    v /= np.linalg.norm(v)
    est = np.inf
    for _ in range(max_iters):
        w = m @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        if abs(nw - est) <= tol * nw:
            return float(nw)
        est = nw
        v = w / nw
    rho = float(np.max(np.abs(np.linalg.eigvals(m))))
    logger.debug("power iteration unsettled after %d steps; dense estimate %.6g", max_iters, rho)
    return rho


def _operator(fq: np.ndarray, fc: np.ndarray, cfg: FusionConfig):
    z = compute_affinity(fc, fq, cfg.lam)
    nt = normalize_affinity(z, cfg.normalize_mode).T
    a = z @ nt
    return z, nt, a


def gfa_step(fq0: np.ndarray, fc0: np.ndarray, fc_prev: np.ndarray, z: np.ndarray, nt: np.ndarray, omega: float):
    """One alternation: query update from the previous CLIP state, then CLIP update."""
    fq = omega * (nt @ fc_prev) + (1.0 - omega) * fq0
    fc = omega * (z @ fq) + (1.0 - omega) * fc0
    return fq, fc


def gfa_iterate(f_q0: ArrayLike, f_c0: ArrayLike, cfg: FusionConfig, check_convergence: bool = True) -> FusionResult:
    """Run the alternating updates until the CLIP state stops moving.

    Stops once ``||F_C^t - F_C^{t-1}||_F <= cfg.tolerance`` or after
    ``cfg.max_iters`` rounds. With ``check_convergence=False`` exactly
    ``cfg.max_iters`` rounds are run.
    """
    fq0, fc0 = _inputs(f_q0, f_c0, cfg)
    z, nt, a = _operator(fq0, fc0, cfg)
    rho = spectral_radius(cfg.omega**2 * a, cfg.power_iters, cfg.power_tol)

    fc = fc0
    fq = fq0
    converged = False
    t = 0
    for t in range(1, cfg.max_iters + 1):
        fq, fc_new = gfa_step(fq0, fc0, fc, z, nt, cfg.omega)
        if not (np.all(np.isfinite(fc_new)) and np.all(np.isfinite(fq))):
            raise DivergenceError(
                f"non-finite values at iteration {t} (spectral radius estimate {rho:.6g})",
                iteration=t,
                spectral_radius=rho,
            )
        delta = np.linalg.norm(fc_new - fc)
        fc = fc_new
        if check_convergence and delta <= cfg.tolerance:
            converged = True
            break
    if check_convergence and not converged:
        logger.info("gfa_iterate stopped at max_iters=%d without converging", cfg.max_iters)
    return FusionResult(fc, fq, t, converged, rho)


def gfa_unrolled(f_q0: ArrayLike, f_c0: ArrayLike, cfg: FusionConfig, t: int) -> np.ndarray:
    """Evaluate the t-step CLIP state directly from matrix powers of ``w^2 A``."""
    if int(t) != t or t < 1:
        raise ConfigError(f"t must be an integer >= 1, got {t}")
    fq0, fc0 = _inputs(f_q0, f_c0, cfg)
    z, _, a = _operator(fq0, fc0, cfg)
    w = cfg.omega
    m = w**2 * a
    drive = w * (z @ fq0) + fc0
    total = np.zeros_like(fc0)
    power = np.eye(m.shape[0])
    for _ in range(int(t)):
        total += power @ drive
        power = power @ m
    out = power @ fc0 + (1.0 - w) * total
    if not np.all(np.isfinite(out)):
        rho = spectral_radius(m, cfg.power_iters, cfg.power_tol)
        raise DivergenceError(
            f"non-finite values at t={t} (spectral radius estimate {rho:.6g})",
            iteration=int(t),
            spectral_radius=rho,
        )
    return out


def gfa_closed_form(f_q0: ArrayLike, f_c0: ArrayLike, cfg: FusionConfig) -> FusionResult:
    """Neumann-series limit ``(1 - w)(I - w^2 A)^{-1}(w Z F_Q^0 + F_C^0)``.

    Raises :class:`NonConvergentConfigError` when the estimated spectral radius
    of ``w^2 A`` is not below one.
    """
    fq0, fc0 = _inputs(f_q0, f_c0, cfg)
    z, nt, a = _operator(fq0, fc0, cfg)
    w = cfg.omega
    m = w**2 * a
    rho = spectral_radius(m, cfg.power_iters, cfg.power_tol)
    if not rho < 1.0:
        raise NonConvergentConfigError(
            f"spectral radius of omega^2*A is {rho:.6g} >= 1 (lambda={cfg.lam}, omega={w}); "
            "the closed form does not exist",
            lam=cfg.lam,
            omega=w,
            spectral_radius=rho,
        )
    rhs = w * (z @ fq0) + fc0
    lhs = np.eye(m.shape[0]) - m
    try:
        with np.errstate(all="raise"):
            x = scipy.linalg.solve(lhs, rhs, check_finite=True)
    except (np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        raise SolverError(f"linear solve failed: {exc}") from exc
    fc = (1.0 - w) * x
    fq = w * (nt @ fc) + (1.0 - w) * fq0
    return FusionResult(fc, fq, 0, True, rho)


def reduce_fused(result: FusionResult, mode: str = "mean") -> np.ndarray:
    fc = result.fused_clip
    if fc.shape[0] < 1:
        raise EmptyInputError("fused result has no rows")
    if mode == "mean":
        return fc.mean(axis=0)
    if mode == "first":
        return fc[0].copy()
    raise ConfigError(f"reduce mode must be one of {REDUCE_MODES}, got {mode!r}")
