"""Self-interference cancelers: linear FIR, widely-linear memory polynomial, model-based NN.

The per-sample kernels (``_mbnn_forward`` / ``_mbnn_backward``) are written
once, in plain loops over numpy arrays.  The sweep uses numba-compiled copies;
the operation counter in :mod:`fdsic.metrics` runs the very same Python
source over counting scalars.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb
from pathlib import Path

import numba
import numpy as np

from .hwmodel import HardwareParams, PaTaps, history_matrix, n_orders

KINDS = ("linear", "wlmp", "mbnn")

# |z|^2 below this is treated as a silent input in the nonlinearity derivative
SILENT_POWER = 1e-60


def canceler_real_param_count(kind: str, memory_len: int, nonlin_order: int = 1) -> int:
    if kind == "linear":
        return 2 * memory_len
    if kind == "wlmp":
        n_orders(nonlin_order)
        return memory_len * (nonlin_order + 1) * (nonlin_order + 3) // 2
    if kind == "mbnn":
        n_orders(nonlin_order)
        return (nonlin_order + 1) * memory_len + 4
    raise ValueError(f"unknown canceler kind {kind!r}")


def _check_history(x_history, memory_len):
    x_history = np.asarray(x_history, dtype=np.complex128)
    if x_history.shape != (memory_len,):
        raise ValueError(f"expected {memory_len} history samples, got shape {x_history.shape}")
    return x_history


# ---------------------------------------------------------------- linear


@dataclass
class LinearCanceler:
    taps: np.ndarray

    def __post_init__(self):
        self.taps = np.array(self.taps, dtype=np.complex128).reshape(-1)

    @property
    def memory_len(self) -> int:
        return self.taps.size

    @property
    def weights(self) -> np.ndarray:
        return self.taps

    def regressors(self, x) -> np.ndarray:
        return history_matrix(x, self.memory_len)

    def predict_sequence(self, x) -> np.ndarray:
        return self.regressors(x) @ self.taps


def linear_predict(c: LinearCanceler, x_history) -> complex:
    x_history = _check_history(x_history, c.memory_len)
    return complex(np.sum(c.taps * x_history))


# ---------------------------------------------------------------- WLMP


def wlmp_index(memory_len: int, nonlin_order: int) -> list[tuple[int, int, int]]:
    """Weight order: lexicographic in (p, q, m), p odd."""
    n_orders(nonlin_order)
    return [
        (p, q, m)
        for p in range(1, nonlin_order + 1, 2)
        for q in range(p + 1)
        for m in range(memory_len)
    ]


def wlmp_size(memory_len: int, nonlin_order: int) -> int:
    n_orders(nonlin_order)
    return memory_len * (nonlin_order + 1) * (nonlin_order + 3) // 4


def wlmp_basis(x_history, memory_len: int, nonlin_order: int) -> np.ndarray:
    """Basis terms x[n-m]^q conj(x[n-m])^(p-q) in :func:`wlmp_index` order."""
    n_orders(nonlin_order)
    x_history = _check_history(x_history, memory_len)
    return wlmp_basis_matrix_from_history(x_history[None, :], nonlin_order)[0]


def wlmp_basis_matrix_from_history(xh: np.ndarray, nonlin_order: int) -> np.ndarray:
    xc = np.conj(xh)
    cols = []
    for p in range(1, nonlin_order + 1, 2):
        for q in range(p + 1):
            cols.append(xh ** q * xc ** (p - q))
    return np.concatenate(cols, axis=1)


def wlmp_basis_matrix(x, memory_len: int, nonlin_order: int) -> np.ndarray:
    """Basis rows for every sample of ``x`` (zero history before the start)."""
    n_orders(nonlin_order)
    return wlmp_basis_matrix_from_history(history_matrix(x, memory_len), nonlin_order)


@dataclass
class WlmpCanceler:
    weights: np.ndarray
    memory_len: int
    nonlin_order: int

    def __post_init__(self):
        self.weights = np.array(self.weights, dtype=np.complex128).reshape(-1)
        if self.weights.size != wlmp_size(self.memory_len, self.nonlin_order):
            raise ValueError(
                f"WLMP with M={self.memory_len}, P={self.nonlin_order} needs "
                f"{wlmp_size(self.memory_len, self.nonlin_order)} weights, got {self.weights.size}"
            )

    @classmethod
    def zeros(cls, memory_len: int, nonlin_order: int) -> "WlmpCanceler":
        return cls(np.zeros(wlmp_size(memory_len, nonlin_order)), memory_len, nonlin_order)

    def regressors(self, x) -> np.ndarray:
        return wlmp_basis_matrix(x, self.memory_len, self.nonlin_order)

    def predict_sequence(self, x) -> np.ndarray:
        return self.regressors(x) @ self.weights


def wlmp_predict(c: WlmpCanceler, basis) -> complex:
    basis = np.asarray(basis)
    if basis.shape != c.weights.shape:
        raise ValueError(f"basis length {basis.size} does not match {c.weights.size} weights")
    return complex(np.sum(c.weights * basis))


def _poly_power(a: complex, b: complex, n: int) -> np.ndarray:
    """Coefficients c[q] of (a x + b xbar)^n on the monomials x^q xbar^(n-q)."""
    return np.array([comb(n, q) * a ** q * b ** (n - q) for q in range(n + 1)], dtype=np.complex128)


def wlmp_embed_hardware(params: HardwareParams) -> WlmpCanceler:
    """WLMP weights reproducing the mixer + memory polynomial exactly.

    z |z|^(p-1) = z^((p+1)/2) conj(z)^((p-1)/2) with z = K1 x + K2 conj(x) and
    conj(z) = conj(K2) x + conj(K1) conj(x); the product of the two binomial
    expansions gives the weight of every monomial x^q conj(x)^(p-q).
    """
    memory_len, nonlin_order = params.memory_len, params.nonlin_order
    k1, k2 = params.mixer.k1, params.mixer.k2
    out = WlmpCanceler.zeros(memory_len, nonlin_order)
    pos = 0
    for i in range(n_orders(nonlin_order)):
        p = 2 * i + 1
        coeff = np.convolve(_poly_power(k1, k2, i + 1), _poly_power(np.conj(k2), np.conj(k1), i))
        for q in range(p + 1):
            out.weights[pos:pos + memory_len] = coeff[q] * params.taps.h[i]
            pos += memory_len
    return out


# ---------------------------------------------------------------- model-based NN


def _mbnn_forward(theta, xh, n_ord, z, s, r, f):
    """Unfolded mixer + memory polynomial.

    theta = (K1, K2, h[0,0..M-1], h[1,0..M-1], ...).  Fills the tape: z[m]
    (mixer output per lag), s[m] = |z[m]|^2, r[j] = |z|^(p-1) and f[j] = z |z|^(p-1)
    for branch j = i*M + m, p = 2i+1.
    """
    n_mem = xh.shape[0]
    k1 = theta[0]
    k2 = theta[1]
    for m in range(n_mem):
        xm = xh[m]
        zm = k1 * xm + k2 * xm.conjugate()
        sm = zm * zm.conjugate()
        z[m] = zm
        s[m] = sm
        f[m] = zm
        rm = sm
        for i in range(1, n_ord):
            if i > 1:
                rm = rm * sm
            r[i * n_mem + m] = rm
            f[i * n_mem + m] = zm * rm
    y = theta[2] * f[0]
    for j in range(1, n_ord * n_mem):
        y = y + theta[2 + j] * f[j]
    return y


def _mbnn_backward(theta, xh, n_ord, z, s, r, f, err, grad):
    """Reverse pass for L = |err|^2, err = target - prediction.

    ``grad[k]`` receives dL/dRe(theta[k]) + j dL/dIm(theta[k]).  Each branch
    f = z |z|^(p-1) is differentiated with its Wirtinger pair
    df/dz = (p+1)/2 |z|^(p-1) and df/dconj(z) = (p-1)/2 z^2 |z|^(p-1) / |z|^2,
    so the gradient reaching z from a branch is conj(df/dz) g + df/dconj(z) conj(g).
    """
    n_mem = xh.shape[0]
    gy = err * -2.0
    for m in range(n_mem):
        zm = z[m]
        sm = s[m]
        zz = zm * zm
        silent = sm.real < SILENT_POWER
        for i in range(n_ord):
            j = i * n_mem + m
            grad[2 + j] = gy * f[j].conjugate()
            gf = theta[2 + j].conjugate() * gy
            if i == 0:
                gb = gf
            else:
                dz = r[j] * (i + 1.0)
                if silent:
                    gb = dz * gf
                else:
                    dzc = zz * r[j] * (1.0 * i) / sm
                    gb = dz * gf + dzc * gf.conjugate()
            if i == 0:
                gz = gb
            else:
                gz = gz + gb
        xm = xh[m]
        if m == 0:
            grad[0] = gz * xm.conjugate()
            grad[1] = gz * xm
        else:
            grad[0] = grad[0] + gz * xm.conjugate()
            grad[1] = grad[1] + gz * xm


_mbnn_forward_jit = numba.njit(cache=True)(_mbnn_forward)
_mbnn_backward_jit = numba.njit(cache=True)(_mbnn_backward)


def mbnn_size(memory_len: int, nonlin_order: int) -> int:
    """Complex parameter count N_p = (P+1) M / 2 + 2."""
    return n_orders(nonlin_order) * memory_len + 2


@dataclass
class MbnnCanceler:
    """Complex parameters laid out as (K1, K2, h_1[0..M-1], h_3[0..M-1], ...)."""

    theta: np.ndarray
    memory_len: int
    nonlin_order: int

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=np.complex128).reshape(-1)
        if self.theta.size != mbnn_size(self.memory_len, self.nonlin_order):
            raise ValueError(
                f"MBNN with M={self.memory_len}, P={self.nonlin_order} has "
                f"{mbnn_size(self.memory_len, self.nonlin_order)} complex parameters, got {self.theta.size}"
            )

    @classmethod
    def from_parts(cls, k1, k2, taps) -> "MbnnCanceler":
        taps = taps if isinstance(taps, PaTaps) else PaTaps(taps)
        return cls(np.concatenate([[k1, k2], taps.h.reshape(-1)]), taps.memory_len, taps.nonlin_order)

    @classmethod
    def from_hardware(cls, params: HardwareParams) -> "MbnnCanceler":
        return cls.from_parts(params.mixer.k1, params.mixer.k2, params.taps)

    @classmethod
    def initial(cls, memory_len: int, nonlin_order: int) -> "MbnnCanceler":
        """Ideal mixer, all-zero taps: the gradient is non-zero from the first sample."""
        return cls.from_parts(1.0, 0.0, PaTaps.zeros(memory_len, nonlin_order))

    @property
    def k1(self) -> complex:
        return complex(self.theta[0])

    @property
    def k2(self) -> complex:
        return complex(self.theta[1])

    @property
    def taps(self) -> PaTaps:
        return PaTaps(self.theta[2:].reshape(n_orders(self.nonlin_order), self.memory_len))

    def real_params(self) -> np.ndarray:
        """Interleaved (Re, Im) of every complex parameter."""
        return self.theta.view(np.float64).copy()

    def set_real_params(self, w) -> None:
        w = np.ascontiguousarray(w, dtype=np.float64)
        if w.size != 2 * self.theta.size:
            raise ValueError(f"expected {2 * self.theta.size} real parameters, got {w.size}")
        self.theta = w.view(np.complex128).copy()

    def predict_sequence(self, x) -> np.ndarray:
        return _mbnn_predict_all(self.theta, history_matrix(x, self.memory_len), n_orders(self.nonlin_order))


@numba.njit(cache=True)
def _mbnn_predict_all(theta, xh_rows, n_ord):
    n_mem = xh_rows.shape[1]
    z = np.empty(n_mem, np.complex128)
    s = np.empty(n_mem, np.complex128)
    r = np.empty(n_ord * n_mem, np.complex128)
    f = np.empty(n_ord * n_mem, np.complex128)
    out = np.empty(xh_rows.shape[0], np.complex128)
    for n in range(xh_rows.shape[0]):
        out[n] = _mbnn_forward_jit(theta, xh_rows[n], n_ord, z, s, r, f)
    return out


@dataclass
class MbnnTape:
    """Intermediates of one forward pass: mixer outputs, their powers, branch outputs."""

    x_history: np.ndarray
    z: np.ndarray
    s: np.ndarray
    r: np.ndarray
    f: np.ndarray
    theta: np.ndarray


def mbnn_forward(c: MbnnCanceler, x_history):
    x_history = _check_history(x_history, c.memory_len)
    n_ord = n_orders(c.nonlin_order)
    z = np.empty(c.memory_len, np.complex128)
    s = np.empty(c.memory_len, np.complex128)
    r = np.zeros(n_ord * c.memory_len, np.complex128)
    f = np.empty(n_ord * c.memory_len, np.complex128)
    y = _mbnn_forward_jit(c.theta, x_history, n_ord, z, s, r, f)
    return complex(y), MbnnTape(x_history, z, s, r, f, c.theta.copy())


def mbnn_backward(c: MbnnCanceler, tape: MbnnTape, error: complex) -> np.ndarray:
    """Gradient of |error|^2 w.r.t. the real parameters, in :meth:`MbnnCanceler.real_params` order."""
    if tape.theta.shape != c.theta.shape or not np.array_equal(tape.theta, c.theta):
        raise ValueError("tape was recorded with different parameters; rerun mbnn_forward")
    grad = np.empty_like(c.theta)
    _mbnn_backward_jit(
        c.theta, tape.x_history, n_orders(c.nonlin_order), tape.z, tape.s, tape.r, tape.f, complex(error), grad
    )
    g = grad.view(np.float64).copy()
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite MBNN gradient")
    return g


# ---------------------------------------------------------------- persistence


def save_canceler(c, path) -> None:
    """Text format: ``kind``, ``M``, ``P`` header lines, then one ``re im`` pair per complex weight."""
    if isinstance(c, LinearCanceler):
        kind, m, p, w = "linear", c.memory_len, 1, c.taps
    elif isinstance(c, WlmpCanceler):
        kind, m, p, w = "wlmp", c.memory_len, c.nonlin_order, c.weights
    elif isinstance(c, MbnnCanceler):
        kind, m, p, w = "mbnn", c.memory_len, c.nonlin_order, c.theta
    else:
        raise TypeError(f"cannot save {type(c).__name__}")
    lines = [f"kind {kind}", f"M {m}", f"P {p}", f"n_real {2 * w.size}"]
    lines += [f"{float(v.real)!r} {float(v.imag)!r}" for v in w]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_canceler(path):
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    head = dict(line.split(" ", 1) for line in lines[:4])
    m, p = int(head["M"]), int(head["P"])
    vals = [complex(*map(float, line.split())) for line in lines[4:] if line.strip()]
    if 2 * len(vals) != int(head["n_real"]):
        raise ValueError(f"{path}: parameter count does not match header")
    kind = head["kind"]
    if kind == "linear":
        return LinearCanceler(vals)
    if kind == "wlmp":
        return WlmpCanceler(vals, m, p)
    if kind == "mbnn":
        return MbnnCanceler(vals, m, p)
    raise ValueError(f"{path}: unknown kind {kind!r}")


def is_finite_canceler(c) -> bool:
    w = {LinearCanceler: "taps", WlmpCanceler: "weights", MbnnCanceler: "theta"}[type(c)]
    return bool(np.all(np.isfinite(getattr(c, w))))
