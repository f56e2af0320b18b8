"""Fitting and tracking: least squares, LMS, exponentially weighted RLS, FTRL-proximal.

As in :mod:`fdsic.cancelers`, each per-sample update is a plain-loop
function with a numba-compiled twin.  LMS and RLS run entirely in complex
arithmetic, step size and forgetting factor included.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np

from .cancelers import _mbnn_backward_jit, _mbnn_forward_jit

log = logging.getLogger(__name__)

# Hermitian drift of the RLS inverse correlation tolerated before re-symmetrising
HERMITIAN_TOL = 1e-9


class TuningError(RuntimeError):
    pass


# ---------------------------------------------------------------- least squares


@dataclass
class LsFit:
    weights: np.ndarray
    rank: int
    rank_deficient: bool


def ls_fit(regressor_rows, targets) -> LsFit:
    """argmin_w sum |t - row . w|^2 by SVD; minimum-norm when rank deficient."""
    a = np.asarray(regressor_rows, dtype=np.complex128)
    t = np.asarray(targets, dtype=np.complex128).reshape(-1)
    if a.ndim != 2 or a.shape[0] != t.size:
        raise ValueError(f"regressor rows {a.shape} do not match {t.size} targets")
    if a.shape[0] < a.shape[1]:
        raise ValueError(f"need at least as many rows as columns, got {a.shape}")
    w, _, rank, _ = np.linalg.lstsq(a, t, rcond=None)
    if rank < a.shape[1]:
        log.warning("least-squares regressor is rank deficient (%d < %d)", rank, a.shape[1])
    return LsFit(w, int(rank), bool(rank < a.shape[1]))


# ---------------------------------------------------------------- LMS


@dataclass
class LmsState:
    mu: float

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"LMS step size must be positive, got {self.mu}")


def _lms_update(w, phi, t, mu):
    """One LMS iteration in place; returns the pre-update prediction."""
    n = w.shape[0]
    y = w[0] * phi[0]
    for i in range(1, n):
        y = y + w[i] * phi[i]
    e = t - y
    g = mu * e
    for i in range(n):
        w[i] = w[i] + g * phi[i].conjugate()
    return y


_lms_update_jit = numba.njit(cache=True)(_lms_update)


def lms_step(weights, regressor, target, state: LmsState) -> np.ndarray:
    w = np.array(weights, dtype=np.complex128)
    _lms_update_jit(w, np.asarray(regressor, dtype=np.complex128), complex(target), complex(state.mu))
    return w


@numba.njit(cache=True)
def run_lms(w, rows, targets, mu):
    """Predict-then-update over all rows; ``w`` is updated in place."""
    out = np.empty(rows.shape[0], np.complex128)
    for n in range(rows.shape[0]):
        out[n] = _lms_update_jit(w, rows[n], targets[n], mu)
    return out


# ---------------------------------------------------------------- RLS


@dataclass
class RlsState:
    lam: float
    inv_corr: np.ndarray
    delta: float
    resets: int = 0

    def __post_init__(self):
        if not 0 < self.lam <= 1:
            raise ValueError(f"forgetting factor must lie in (0, 1], got {self.lam}")
        if not self.delta > 0:
            raise ValueError("delta must be positive")

    @classmethod
    def init(cls, n: int, lam: float, delta: float) -> "RlsState":
        return cls(lam, delta * np.eye(n, dtype=np.complex128), delta)


def default_rls_delta(rows) -> float:
    """100 / mean regressor-entry power."""
    rows = np.asarray(rows)
    return 100.0 / float(np.mean(rows.real ** 2 + rows.imag ** 2))


def _rls_update(w, p, phi, t, lam, inv_lam, pi, row):
    """One exponentially weighted RLS iteration in place for prediction phi . w.

    pi = P conj(phi), k = pi / (lam + phi . pi), w += k e,
    P = (P - k (phi^T P)) / lam.  ``pi`` and ``row`` are scratch buffers.
    Returns the pre-update prediction.
    """
    n = w.shape[0]
    y = w[0] * phi[0]
    for i in range(1, n):
        y = y + w[i] * phi[i]
    e = t - y
    for i in range(n):
        acc = p[i, 0] * phi[0].conjugate()
        for j in range(1, n):
            acc = acc + p[i, j] * phi[j].conjugate()
        pi[i] = acc
    d = lam + phi[0] * pi[0]
    for i in range(1, n):
        d = d + phi[i] * pi[i]
    for i in range(n):
        pi[i] = pi[i] / d
    for i in range(n):
        w[i] = w[i] + pi[i] * e
    for j in range(n):
        acc = phi[0] * p[0, j]
        for i in range(1, n):
            acc = acc + phi[i] * p[i, j]
        row[j] = acc
    for i in range(n):
        for j in range(n):
            p[i, j] = (p[i, j] - pi[i] * row[j]) * inv_lam
    return y


_rls_update_jit = numba.njit(cache=True)(_rls_update)


@numba.njit(cache=True)
def _rls_maintain(p, delta, tol):
    """Reset a non-finite P to delta I (returns 1) or re-symmetrise Hermitian drift (returns 0)."""
    n = p.shape[0]
    for i in range(n):
        for j in range(n):
            if not np.isfinite(p[i, j].real) or not np.isfinite(p[i, j].imag):
                p[:, :] = 0.0
                for k in range(n):
                    p[k, k] = delta
                return 1
    drift = 0.0
    for i in range(n):
        for j in range(i, n):
            d = abs(p[i, j] - np.conj(p[j, i]))
            if d > drift:
                drift = d
    if drift > tol:
        for i in range(n):
            for j in range(i, n):
                h = 0.5 * (p[i, j] + np.conj(p[j, i]))
                p[i, j] = h
                p[j, i] = np.conj(h)
    return 0


def rls_step(weights, regressor, target, state: RlsState) -> np.ndarray:
    w = np.array(weights, dtype=np.complex128)
    n = w.size
    _rls_update_jit(
        w,
        state.inv_corr,
        np.asarray(regressor, dtype=np.complex128),
        complex(target),
        complex(state.lam),
        complex(1.0 / state.lam),
        np.empty(n, np.complex128),
        np.empty(n, np.complex128),
    )
    if _rls_maintain(state.inv_corr, state.delta, HERMITIAN_TOL):
        state.resets += 1
        log.warning("RLS inverse correlation became non-finite; reset to delta*I")
    return w


@numba.njit(cache=True)
def _run_rls(w, p, rows, targets, lam, inv_lam, delta, tol):
    n = w.shape[0]
    pi = np.empty(n, np.complex128)
    row = np.empty(n, np.complex128)
    out = np.empty(rows.shape[0], np.complex128)
    resets = 0
    for k in range(rows.shape[0]):
        out[k] = _rls_update_jit(w, p, rows[k], targets[k], lam, inv_lam, pi, row)
        resets += _rls_maintain(p, delta, tol)
    return out, resets


def run_rls(w, state: RlsState, rows, targets) -> np.ndarray:
    """Predict-then-update over all rows; ``w`` and ``state`` are updated in place."""
    out, resets = _run_rls(
        w, state.inv_corr, rows, targets, complex(state.lam), complex(1.0 / state.lam), state.delta, HERMITIAN_TOL
    )
    if resets:
        state.resets += resets
        log.warning("RLS inverse correlation reset %d time(s)", resets)
    return out


# ---------------------------------------------------------------- FTRL-proximal


@dataclass
class FtrlState:
    """Per-coordinate FTRL-proximal accumulators (``sqrt_n`` caches sqrt(n))."""

    z: np.ndarray
    n: np.ndarray
    sqrt_n: np.ndarray
    alpha: float
    beta: float = 1.0
    l1: float = 0.0
    l2: float = 0.0

    @classmethod
    def init(cls, w0, alpha: float, beta: float = 1.0, l1: float = 0.0, l2: float = 0.0) -> "FtrlState":
        """Accumulators whose closed-form solution is ``w0`` before any gradient is seen."""
        if not alpha > 0:
            raise ValueError(f"FTRL learning rate must be positive, got {alpha}")
        w0 = np.asarray(w0, dtype=np.float64)
        if np.any(w0 != 0) and beta + l2 * alpha <= 0:
            raise ValueError("a non-zero starting point needs beta > 0 or l2 > 0")
        z = -w0 * (beta / alpha + l2) - np.sign(w0) * l1
        zeros = np.zeros_like(w0)
        return cls(z, zeros, zeros.copy(), float(alpha), float(beta), float(l1), float(l2))


def _ftrl_update(w, g, zacc, nacc, sqrt_n, alpha, inv_alpha, beta, l1, l2):
    """One FTRL-proximal iteration in place (one square root per coordinate)."""
    for i in range(w.shape[0]):
        gi = g[i]
        n_new = nacc[i] + gi * gi
        sq = np.sqrt(n_new)
        sigma = (sq - sqrt_n[i]) * inv_alpha
        zacc[i] = zacc[i] + gi - sigma * w[i]
        nacc[i] = n_new
        sqrt_n[i] = sq
        if l1 == 0.0 and l2 == 0.0:
            w[i] = -(zacc[i] * alpha) / (beta + sq)
        elif abs(zacc[i]) <= l1:
            w[i] = 0.0
        else:
            zi = zacc[i]
            shrink = zi - l1 if zi > 0 else zi + l1
            w[i] = -shrink / ((beta + sq) * inv_alpha + l2)


_ftrl_update_jit = numba.njit(cache=True)(_ftrl_update)


def ftrl_step(real_params, gradients, state: FtrlState) -> np.ndarray:
    w = np.array(real_params, dtype=np.float64)
    g = np.asarray(gradients, dtype=np.float64)
    if g.shape != w.shape or state.z.shape != w.shape:
        raise ValueError("parameter, gradient and accumulator sizes differ")
    _ftrl_update_jit(w, g, state.z, state.n, state.sqrt_n, state.alpha, 1.0 / state.alpha, state.beta, state.l1, state.l2)
    return w


@numba.njit(cache=True)
def _run_mbnn_ftrl(theta, xh_rows, targets, n_ord, epochs, zacc, nacc, sqrt_n, alpha, inv_alpha, beta, l1, l2):
    n_mem = xh_rows.shape[1]
    z = np.empty(n_mem, np.complex128)
    s = np.empty(n_mem, np.complex128)
    r = np.zeros(n_ord * n_mem, np.complex128)
    f = np.empty(n_ord * n_mem, np.complex128)
    grad = np.empty(theta.shape[0], np.complex128)
    w = theta.view(np.float64)
    g = grad.view(np.float64)
    out = np.empty(xh_rows.shape[0], np.complex128)
    for _ in range(epochs):
        for k in range(xh_rows.shape[0]):
            y = _mbnn_forward_jit(theta, xh_rows[k], n_ord, z, s, r, f)
            out[k] = y
            _mbnn_backward_jit(theta, xh_rows[k], n_ord, z, s, r, f, targets[k] - y, grad)
            _ftrl_update_jit(w, g, zacc, nacc, sqrt_n, alpha, inv_alpha, beta, l1, l2)
    return out


def run_mbnn_ftrl(theta, xh_rows, targets, nonlin_order: int, state: FtrlState, epochs: int = 1) -> np.ndarray:
    """Per-sample predict / backprop / FTRL over ``epochs`` passes; returns the last pass' predictions."""
    from .hwmodel import n_orders

    if theta.dtype != np.complex128 or not theta.flags.c_contiguous:
        raise TypeError("theta must be a contiguous complex128 array (updated in place)")
    return _run_mbnn_ftrl(
        theta,
        np.ascontiguousarray(xh_rows),
        np.ascontiguousarray(targets),
        n_orders(nonlin_order),
        epochs,
        state.z,
        state.n,
        state.sqrt_n,
        state.alpha,
        1.0 / state.alpha,
        state.beta,
        state.l1,
        state.l2,
    )


# ---------------------------------------------------------------- tuning


@dataclass
class SearchResult:
    best: float
    scores: dict = field(default_factory=dict)
    n_runs: int = 0


def hyperparam_search(
    method: str,
    beta: float,
    tuning_seeds: Sequence[int],
    grid: Sequence[float],
    protocol: Callable[[str, int, float, float], float],
    conservative: str = "low",
) -> SearchResult:
    """Pick the grid value with the highest mean dynamic cancellation over the tuning seeds.

    ``protocol(method, seed, beta, value)`` runs one static fit + dynamic
    tracking and returns the dynamic cancellation in dB.  Ties go to the
    smallest value (``conservative="low"``) or the largest (``"high"``).
    """
    if not grid or not tuning_seeds:
        raise ValueError("grid and tuning seeds must be non-empty")
    scores = {}
    runs = 0
    for value in grid:
        vals = []
        for seed in tuning_seeds:
            vals.append(protocol(method, seed, beta, value))
            runs += 1
        scores[value] = float(np.mean(vals)) if np.all(np.isfinite(vals)) else -math.inf
    return SearchResult(pick_best(scores, method, beta, conservative), scores, runs)


def pick_best(scores: dict, method: str, beta: float, conservative: str = "low") -> float:
    finite = {v: s for v, s in scores.items() if math.isfinite(s)}
    if not finite:
        raise TuningError(f"every candidate diverged for method {method!r} at beta={beta}")
    order = sorted(finite, reverse=(conservative == "high"))
    best = order[0]
    for v in order[1:]:
        if finite[v] > finite[best]:
            best = v
    return best
