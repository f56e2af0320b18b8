"""Cancellation metrics, arithmetic-complexity accounting and FLOPS projection.

Counting convention (per combined prediction + parameter update):

* complex + complex is one complex addition (2 real additions);
  complex * complex one complex multiplication (3 real mult + 5 real add);
* a complex value times a real one costs 2 real multiplications, and a
  complex plus a real one real addition;
* a division whose denominator is complex-typed is done by multiplying
  numerator and denominator with the conjugate of the denominator:
  2 complex multiplications and 2 real divisions; dividing a complex value
  by a real-typed one is 2 real divisions;
* conjugation, negation, taking real/imag parts and comparisons are free;
* constants such as the 2 in -2e are real multiplications;
* LMS and RLS run in complex arithmetic: step size, 1/lambda and the RLS gain
  denominator are complex-typed values;
* basis-function (feature) computation of the polynomial cancelers is not
  counted; the MBNN mixer and nonlinearity are, being part of its graph.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import adapt, cancelers
from .hwmodel import n_orders

CANCELLATION_CAP_DB = 300.0

METHODS = ("linear-lms", "wlmp-lms", "wlmp-rls", "mbnn-ftrl")

# Table 1 of the reference study, M=3, P=5
PUBLISHED_COUNTS = {
    "linear-lms": (6, 47, 21, 0, 0),
    "wlmp-lms": (72, 509, 219, 0, 0),
    "wlmp-rls": (72, 34668, 16092, 72, 0),
    "mbnn-ftrl": (22, 657, 391, 40, 22),
}


def cancellation_db(targets, estimates) -> float:
    """10 log10( sum|t|^2 / sum|t - y|^2 ), capped at +300 dB; -inf for non-finite estimates."""
    t = np.asarray(targets, dtype=np.complex128).reshape(-1)
    y = np.asarray(estimates, dtype=np.complex128).reshape(-1)
    if t.size == 0 or t.size != y.size:
        raise ValueError(f"targets ({t.size}) and estimates ({y.size}) must have equal non-zero length")
    pt = float(np.sum(t.real ** 2 + t.imag ** 2))
    if pt == 0.0:
        raise ValueError("cancellation is undefined for all-zero targets")
    r = t - y
    with np.errstate(over="ignore", invalid="ignore"):
        pr = float(np.sum(r.real ** 2 + r.imag ** 2))
    if not math.isfinite(pr):
        return -math.inf
    if pr <= 1e-30 * pt:
        return CANCELLATION_CAP_DB
    return 10 * math.log10(pt / pr)


def cancellation_drop(static_db: float, dynamic_db: float) -> float:
    return static_db - dynamic_db


def complex_ops_to_real(cadd: int, cmult: int, cdiv: int = 0, *, real_denominator: bool = False):
    """Real (add, mult, div) for complex operation counts.

    With ``real_denominator`` each division is two componentwise real
    divisions; otherwise it also costs two complex multiplications
    (numerator and denominator times the conjugate denominator).
    """
    if min(cadd, cmult, cdiv) < 0:
        raise ValueError("operation counts must be non-negative")
    div_cmult = 0 if real_denominator else 2 * cdiv
    return 2 * cadd + 5 * (cmult + div_cmult), 3 * (cmult + div_cmult), 2 * cdiv


@dataclass(frozen=True)
class OpCountReport:
    n_params: int
    n_add: int
    n_mult: int
    n_div: int
    n_sqrt: int

    def __post_init__(self):
        if min(self.n_params, self.n_add, self.n_mult, self.n_div, self.n_sqrt) < 0:
            raise ValueError("operation counts must be non-negative")

    @property
    def flops(self) -> int:
        return self.n_add + self.n_mult

    def csv_row(self, method: str) -> list:
        return [method, self.n_params, self.n_add, self.n_mult, self.n_div, self.n_sqrt]


CSV_HEADER = ["method"] + [f.name for f in fields(OpCountReport)]


def reports_to_csv(reports: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for method, rep in reports.items():
        w.writerow(rep.csv_row(method))
    return buf.getvalue()


def flops_projection(report: OpCountReport, oversampling: int) -> float:
    """(additions + multiplications) x oversampling; divisions and square roots are not included."""
    if oversampling < 1:
        raise ValueError(f"oversampling must be >= 1, got {oversampling}")
    return float(report.flops * oversampling)


# ---------------------------------------------------------------- instrumented counting


class Tally:
    __slots__ = ("cadd", "cmult", "cdiv", "radd", "rmult", "rdiv", "sqrt")

    def __init__(self):
        for k in self.__slots__:
            setattr(self, k, 0)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__slots__}

    def real_counts(self):
        a, m, d = complex_ops_to_real(self.cadd, self.cmult, self.cdiv)
        return a + self.radd, m + self.rmult, d + self.rdiv, self.sqrt


class Counted:
    """A scalar that records every arithmetic operation it takes part in.

    The value's Python type decides whether it is complex- or real-typed.
    """

    __slots__ = ("v", "t")

    def __init__(self, value, tally: Tally):
        self.v = value
        self.t = tally

    @property
    def is_complex(self) -> bool:
        return isinstance(self.v, complex)

    def _wrap(self, v):
        return Counted(v, self.t)

    @staticmethod
    def _unwrap(o):
        return o.v if isinstance(o, Counted) else o

    def _add_cost(self, o):
        oc = isinstance(self._unwrap(o), complex)
        if self.is_complex and oc:
            self.t.cadd += 1
        else:
            self.t.radd += 1

    def _mult_cost(self, o):
        oc = isinstance(self._unwrap(o), complex)
        if self.is_complex and oc:
            self.t.cmult += 1
        elif self.is_complex or oc:
            self.t.rmult += 2
        else:
            self.t.rmult += 1

    def __add__(self, o):
        self._add_cost(o)
        return self._wrap(self.v + self._unwrap(o))

    __radd__ = __add__

    def __sub__(self, o):
        self._add_cost(o)
        return self._wrap(self.v - self._unwrap(o))

    def __rsub__(self, o):
        self._add_cost(o)
        return self._wrap(self._unwrap(o) - self.v)

    def __mul__(self, o):
        self._mult_cost(o)
        return self._wrap(self.v * self._unwrap(o))

    __rmul__ = __mul__

    def _div_cost(self, num_complex: bool, den_complex: bool):
        if den_complex:
            self.t.cdiv += 1
        elif num_complex:
            self.t.rdiv += 2
        else:
            self.t.rdiv += 1

    def __truediv__(self, o):
        self._div_cost(self.is_complex, isinstance(self._unwrap(o), complex))
        return self._wrap(self.v / self._unwrap(o))

    def __rtruediv__(self, o):
        self._div_cost(isinstance(self._unwrap(o), complex), self.is_complex)
        return self._wrap(self._unwrap(o) / self.v)

    def __neg__(self):
        return self._wrap(-self.v)

    def conjugate(self):
        return self._wrap(self.v.conjugate())

    @property
    def real(self):
        return self._wrap(float(self.v.real))

    @property
    def imag(self):
        return self._wrap(float(self.v.imag))

    def sqrt(self):
        if self.is_complex:
            raise TypeError("only real square roots are counted")
        self.t.sqrt += 1
        return self._wrap(math.sqrt(self.v))

    def __abs__(self):
        return self._wrap(abs(self.v))

    def __lt__(self, o):
        return self.v < self._unwrap(o)

    def __le__(self, o):
        return self.v <= self._unwrap(o)

    def __gt__(self, o):
        return self.v > self._unwrap(o)

    def __ge__(self, o):
        return self.v >= self._unwrap(o)

    def __eq__(self, o):
        return self.v == self._unwrap(o)

    def __hash__(self):
        return hash(self.v)

    def __complex__(self):
        return complex(self.v)

    def __float__(self):
        return float(self.v)

    def __repr__(self):
        return f"Counted({self.v!r})"


def _wrap_array(values, tally: Tally, kind=complex) -> np.ndarray:
    out = np.empty(len(values), dtype=object)
    for i, v in enumerate(values):
        out[i] = Counted(kind(v), tally)
    return out


def _wrap_matrix(values, tally: Tally) -> np.ndarray:
    values = np.asarray(values)
    out = np.empty(values.shape, dtype=object)
    for idx in np.ndindex(values.shape):
        out[idx] = Counted(complex(values[idx]), tally)
    return out


def _unwrap_array(a) -> np.ndarray:
    return np.array([complex(v.v) if isinstance(v, Counted) else complex(v) for v in a])


def _probe_data(memory_len: int, nonlin_order: int, n_probe: int, seed: int):
    rng = np.random.default_rng(seed)
    x = (rng.standard_normal(n_probe + memory_len) + 1j * rng.standard_normal(n_probe + memory_len)) / math.sqrt(2)
    t = (rng.standard_normal(n_probe) + 1j * rng.standard_normal(n_probe)) / math.sqrt(2)
    return x, t


def _history(x, n, memory_len):
    return x[n + memory_len - 1 - np.arange(memory_len)]


def count_ops_instrumented(method: str, memory_len: int = 3, nonlin_order: int = 5, n_probe_samples: int = 1,
                           seed: int = 0, per_sample: bool = False):
    """Run the real update kernels over counting scalars and average the tallies.

    With ``per_sample`` the list of per-sample reports is returned instead.
    """
    if n_probe_samples < 1:
        raise ValueError("need at least one probe sample")
    x, t = _probe_data(memory_len, nonlin_order, n_probe_samples, seed)
    reports = []
    if method == "linear-lms":
        size = memory_len
        w = np.zeros(size, np.complex128) + 0.1
    elif method in ("wlmp-lms", "wlmp-rls"):
        size = cancelers.wlmp_size(memory_len, nonlin_order)
        w = np.zeros(size, np.complex128) + 0.01
        p = np.eye(size, dtype=np.complex128)
    elif method == "mbnn-ftrl":
        theta = cancelers.MbnnCanceler.initial(memory_len, nonlin_order).theta
        theta[2:] = 0.1
        state = adapt.FtrlState.init(theta.view(np.float64), alpha=0.01)
        n_ord = n_orders(nonlin_order)
    else:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")

    for n in range(n_probe_samples):
        tally = Tally()
        xh = _history(x, n, memory_len)
        if method == "mbnn-ftrl":
            th = _wrap_array(theta, tally)
            xw = _wrap_array(xh, tally)
            z = np.empty(memory_len, dtype=object)
            s = np.empty(memory_len, dtype=object)
            r = np.empty(n_ord * memory_len, dtype=object)
            f = np.empty(n_ord * memory_len, dtype=object)
            y = cancelers._mbnn_forward(th, xw, n_ord, z, s, r, f)
            grad = np.empty(theta.size, dtype=object)
            cancelers._mbnn_backward(th, xw, n_ord, z, s, r, f, Counted(complex(t[n]), tally) - y, grad)
            # complex gradients are reinterpreted as interleaved (re, im) pairs: layout only
            g_real = []
            for gk in grad:
                g_real += [Counted(float(gk.v.real), tally), Counted(float(gk.v.imag), tally)]
            w_real = _wrap_array(theta.view(np.float64), tally, float)
            zacc = _wrap_array(state.z, tally, float)
            nacc = _wrap_array(state.n, tally, float)
            sq = _wrap_array(state.sqrt_n, tally, float)
            adapt._ftrl_update(w_real, np.array(g_real, dtype=object), zacc, nacc, sq, state.alpha,
                               1.0 / state.alpha, state.beta, state.l1, state.l2)
            theta = np.array([float(v) for v in w_real]).view(np.complex128).copy()
            state.z[:] = [float(v) for v in zacc]
            state.n[:] = [float(v) for v in nacc]
            state.sqrt_n[:] = [float(v) for v in sq]
            n_params = 2 * theta.size
        else:
            if method == "linear-lms":
                phi = xh
            else:
                phi = cancelers.wlmp_basis(xh, memory_len, nonlin_order)
            ww = _wrap_array(w, tally)
            # features arrive precomputed: wrapping them is free
            pw = _wrap_array(phi, tally)
            tw = Counted(complex(t[n]), tally)
            if method == "wlmp-rls":
                pm = _wrap_matrix(p, tally)
                lam = 0.999
                adapt._rls_update(ww, pm, pw, tw, Counted(complex(lam), tally), Counted(complex(1 / lam), tally),
                                  np.empty(size, dtype=object), np.empty(size, dtype=object))
                p = np.array([[complex(v) for v in row] for row in pm])
            else:
                adapt._lms_update(ww, pw, tw, Counted(complex(1e-3), tally))
            w = _unwrap_array(ww)
            n_params = 2 * size
        a, m, d, q = tally.real_counts()
        reports.append(OpCountReport(n_params, a, m, d, q))
    if per_sample:
        return reports
    mean = {f.name: np.mean([getattr(r, f.name) for r in reports]) for f in fields(OpCountReport)}
    return OpCountReport(**{k: int(round(v)) for k, v in mean.items()})


def count_ops_analytic(method: str, memory_len: int = 3, nonlin_order: int = 5) -> OpCountReport:
    """Closed-form counts of the update kernels under the module's convention."""
    M = memory_len
    if method in ("linear-lms", "wlmp-lms"):
        n = M if method == "linear-lms" else cancelers.wlmp_size(M, nonlin_order)
        # predict: n cmult, n-1 cadd; error: 1 cadd; mu*e: 1 cmult; update: n cmult, n cadd
        a, m, d = complex_ops_to_real(2 * n, 2 * n + 1)
        return OpCountReport(2 * n, a, m, d, 0)
    if method == "wlmp-rls":
        n = cancelers.wlmp_size(M, nonlin_order)
        # predict n/n-1, error 1, P conj(phi) n^2/n^2-n, denominator n/n, gain n cdiv,
        # weights n/n, phi^T P n^2/n^2-n, P update 2n^2 cmult + n^2 cadd
        cmult = 4 * n * n + 3 * n
        cadd = 3 * n * n + n
        a, m, d = complex_ops_to_real(cadd, cmult, n)
        return OpCountReport(2 * n, a, m, d, 0)
    if method == "mbnn-ftrl":
        k = n_orders(nonlin_order)
        nb = k * M
        npar = 2 * (nb + 2)
        # forward: mixer 2 cmult + 1 cadd per lag, |z|^2 1 cmult per lag,
        # powers (k-2) cmult per lag, branches (k-1) cmult per lag, output nb cmult + nb-1 cadd, error 1 cadd
        f_cmult = M * (2 + 1 + max(k - 2, 0) + (k - 1)) + nb
        f_cadd = M + nb
        # backward: -2e 2 rmult; per branch tap gradient + branch gradient 2 cmult;
        # per lag z^2 1 cmult; per higher branch: dz 2 rmult, dzc 1 cmult + 2 rmult + 1 cdiv,
        # combination 2 cmult + 1 cadd, accumulation 1 cadd; k1/k2 gradients 2 cmult + 2 cadd per lag (first lag no cadd)
        hb = (k - 1) * M
        b_cmult = 2 * nb + M + hb * 3 + 2 * M
        b_cadd = hb * 2 + 2 * (M - 1)
        b_rmult = 2 + hb * 4
        b_cdiv = hb
        a, m, d = complex_ops_to_real(f_cadd + b_cadd, f_cmult + b_cmult, b_cdiv)
        # FTRL per real coordinate: 5 add, 4 mult, 1 div, 1 sqrt
        return OpCountReport(npar, a + 5 * npar, m + b_rmult + 4 * npar, d + npar, npar)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def convention_diff(reports: dict, tolerance: float = 0.2) -> list[str]:
    """Itemised deviations from the published counts (M=3, P=5) beyond ``tolerance`` (relative)."""
    lines = []
    for method, rep in reports.items():
        pub = dict(zip(CSV_HEADER[1:], PUBLISHED_COUNTS[method]))
        for name, value in asdict(rep).items():
            ref = pub[name]
            if ref == 0 and value == 0:
                continue
            rel = (value - ref) / ref if ref else math.inf
            if abs(rel) > tolerance:
                lines.append(f"{method}: {name} = {value} vs published {ref} ({rel:+.0%})")
    return lines
