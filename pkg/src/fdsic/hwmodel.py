"""Time-varying full-duplex transceiver model.

The received self-interference is an IQ-imbalanced transmit signal passed
through a memory polynomial (power amplifier + SI channel).  Every scalar
parameter of that model drifts as a first-order autoregressive process.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from . import rng as rngmod
from .baseband import Frame, OfdmConfig, add_noise, generate_ofdm_frame

IRR_INFINITE = math.inf

BETA_TO_OVERSAMPLING = {0.9: 1, 0.99: 10, 0.999: 100, 0.9999: 1000, 0.99999: 10000}


def oversampling_for_beta(beta: float) -> int:
    """Adaptation rate relative to the physical rate of change, ``0.1 / (1 - beta)`` rounded (beta=0.9 is 1x)."""
    for b, r in BETA_TO_OVERSAMPLING.items():
        if math.isclose(beta, b, rel_tol=0, abs_tol=1e-12):
            return r
    if beta >= 1:
        raise ValueError("beta must be < 1")
    return max(1, int(round(0.1 / (1 - beta))))


@dataclass(frozen=True)
class MixerParams:
    a_iq: float = 1.0
    phi_iq: float = 0.0

    @property
    def k1(self) -> complex:
        return 0.5 * (1 + self.a_iq * np.exp(-1j * self.phi_iq))

    @property
    def k2(self) -> complex:
        return 0.5 * (1 - self.a_iq * np.exp(1j * self.phi_iq))


def mixer_coeffs(a_iq, phi_iq):
    """Vectorised (K1, K2) for arrays of gain/phase imbalance."""
    a_iq = np.asarray(a_iq, dtype=float)
    phi_iq = np.asarray(phi_iq, dtype=float)
    return 0.5 * (1 + a_iq * np.exp(-1j * phi_iq)), 0.5 * (1 - a_iq * np.exp(1j * phi_iq))


def iq_mix(x, mixer: MixerParams | None = None, *, k1=None, k2=None):
    """``K1 x + K2 conj(x)``; pass ``k1``/``k2`` directly to bypass the gain/phase form."""
    if mixer is not None:
        k1, k2 = mixer.k1, mixer.k2
    if k1 is None or k2 is None:
        raise TypeError("iq_mix needs either a MixerParams or explicit k1 and k2")
    return k1 * x + k2 * np.conj(x)


def irr_db(mixer: MixerParams) -> float:
    """Image rejection ratio 10 log10(|K1|^2 / |K2|^2); ``inf`` for an ideal mixer."""
    p2 = abs(mixer.k2) ** 2
    if p2 == 0.0:
        return IRR_INFINITE
    return 10 * math.log10(abs(mixer.k1) ** 2 / p2)


def n_orders(nonlin_order: int) -> int:
    if nonlin_order < 1 or nonlin_order % 2 == 0:
        raise ValueError(f"nonlinearity order must be odd and positive, got {nonlin_order}")
    return (nonlin_order + 1) // 2


@dataclass
class PaTaps:
    """Memory polynomial taps; ``h[i, m]`` is h_p[m] with p = 2i + 1."""

    h: np.ndarray

    def __post_init__(self):
        self.h = np.array(self.h, dtype=np.complex128)
        if self.h.ndim != 2 or self.h.size == 0:
            raise ValueError("taps must be a non-empty (orders, memory) array")

    @property
    def memory_len(self) -> int:
        return self.h.shape[1]

    @property
    def nonlin_order(self) -> int:
        return 2 * self.h.shape[0] - 1

    def __getitem__(self, pm):
        p, m = pm
        if p % 2 == 0 or not 1 <= p <= self.nonlin_order or not 0 <= m < self.memory_len:
            raise KeyError(pm)
        return self.h[(p - 1) // 2, m]

    def items(self):
        for i in range(self.h.shape[0]):
            for m in range(self.h.shape[1]):
                yield (2 * i + 1, m), self.h[i, m]

    @classmethod
    def zeros(cls, memory_len: int, nonlin_order: int) -> "PaTaps":
        return cls(np.zeros((n_orders(nonlin_order), memory_len), dtype=np.complex128))

    @classmethod
    def from_dict(cls, taps: dict, memory_len: int, nonlin_order: int) -> "PaTaps":
        out = cls.zeros(memory_len, nonlin_order)
        for (p, m), v in taps.items():
            out[p, m]  # index validation
            out.h[(p - 1) // 2, m] = v
        return out


@dataclass
class HardwareParams:
    mixer: MixerParams
    taps: PaTaps
    # designed stationary tap means (random LOS phase per realisation); None means zero-mean
    tap_means: np.ndarray | None = None

    @property
    def memory_len(self) -> int:
        return self.taps.memory_len

    @property
    def nonlin_order(self) -> int:
        return self.taps.nonlin_order


def param_ids(memory_len: int, nonlin_order: int) -> list[str]:
    ids = ["a_iq", "phi_iq"]
    for i in range(n_orders(nonlin_order)):
        for m in range(memory_len):
            ids.append(f"h{2 * i + 1}_{m}")
    return ids


def params_to_vector(params: HardwareParams) -> np.ndarray:
    return np.concatenate([[params.mixer.a_iq, params.mixer.phi_iq], params.taps.h.reshape(-1)]).astype(
        np.complex128
    )


def vector_to_params(vec, memory_len: int, nonlin_order: int) -> HardwareParams:
    vec = np.asarray(vec)
    mixer = MixerParams(float(vec[0].real), float(vec[1].real))
    return HardwareParams(mixer, PaTaps(vec[2:].reshape(n_orders(nonlin_order), memory_len)))


def history_matrix(x, memory_len: int) -> np.ndarray:
    """Row n holds (x[n], x[n-1], ..., x[n-M+1]); samples before the start are zero."""
    x = np.asarray(x, dtype=np.complex128)
    out = np.zeros((x.size, memory_len), dtype=np.complex128)
    for m in range(memory_len):
        out[m:, m] = x[: x.size - m]
    return out


def pa_output(x_history, params: HardwareParams) -> complex:
    """Memory-polynomial output for one time step; ``x_history[m]`` is x[n-m]."""
    x_history = np.asarray(x_history, dtype=np.complex128)
    if x_history.shape != (params.memory_len,):
        raise ValueError(f"expected {params.memory_len} history samples, got shape {x_history.shape}")
    xiq = iq_mix(x_history, params.mixer)
    s = xiq.real ** 2 + xiq.imag ** 2
    powers = s[None, :] ** np.arange(params.taps.h.shape[0])[:, None]
    return complex(np.sum(params.taps.h * xiq[None, :] * powers))


def pa_output_sequence(x, k1, k2, taps) -> np.ndarray:
    """Samplewise memory-polynomial output with per-sample parameters.

    ``k1``, ``k2`` are scalars or length-N arrays; ``taps`` is (orders, M) or
    (N, orders, M).  At time n every lag uses the parameters of time n.
    """
    taps = np.asarray(taps, dtype=np.complex128)
    memory_len = taps.shape[-1]
    xh = history_matrix(x, memory_len)
    k1 = np.asarray(k1)[..., None] if np.ndim(k1) else k1
    k2 = np.asarray(k2)[..., None] if np.ndim(k2) else k2
    xiq = k1 * xh + k2 * np.conj(xh)
    s = xiq.real ** 2 + xiq.imag ** 2
    y = np.zeros(xh.shape[0], dtype=np.complex128)
    basis = xiq.copy()
    for i in range(taps.shape[-2]):
        if i:
            basis *= s
        y += np.sum(taps[..., i, :] * basis, axis=-1)
    return y


@dataclass
class Ar1Process:
    """W_t = c + beta W_{t-1} + eps_t."""

    c: complex
    beta: float
    sigma_eps: float
    state: complex
    is_real_valued: bool = False

    def __post_init__(self):
        if not 0 <= self.beta < 1:
            raise ValueError(f"beta must lie in [0, 1) for a stationary process, got {self.beta}")
        if self.sigma_eps < 0:
            raise ValueError("sigma_eps must be non-negative")
        if self.is_real_valued:
            self.c = complex(complex(self.c).real, 0.0)
            self.state = complex(complex(self.state).real, 0.0)
        else:
            self.c = complex(self.c)
            self.state = complex(self.state)

    @property
    def mean(self) -> complex:
        return self.c / (1 - self.beta)

    @property
    def variance(self) -> float:
        return self.sigma_eps ** 2 / (1 - self.beta ** 2)

    def draw_unit(self, rng: np.random.Generator, size=None):
        """Unit-variance innovations of the right kind (real or circular complex)."""
        if self.is_real_valued:
            return rng.standard_normal(size) + 0j
        g = rng.standard_normal((2,) if size is None else (2, size))
        return (g[0] + 1j * g[1]) / math.sqrt(2)

    def step(self, rng: np.random.Generator) -> complex:
        return self.advance(complex(self.draw_unit(rng)))

    def advance(self, unit_innovation: complex) -> complex:
        eps = self.sigma_eps * unit_innovation
        if self.is_real_valued:
            eps = complex(eps.real, 0.0)
        self.state = self.c + self.beta * self.state + eps
        return self.state

    def evolve(self, unit_innovations) -> np.ndarray:
        """Advance once per innovation and return the visited states (vectorised)."""
        u = np.asarray(unit_innovations, dtype=np.complex128)
        if self.is_real_valued:
            u = u.real + 0j
        drive = self.c + self.sigma_eps * u
        out, _ = lfilter([1.0], [1.0, -self.beta], drive, zi=[self.beta * self.state])
        if out.size:
            self.state = complex(out[-1])
        return out


def ar1_step(proc: Ar1Process, rng: np.random.Generator) -> complex:
    return proc.step(rng)


def ar1_moments_to_coeffs(target_mean: complex, target_var: float, beta: float):
    """(c, sigma_eps) giving the requested stationary mean and variance."""
    if not beta < 1:
        raise ValueError(f"beta={beta} gives a non-stationary process")
    if target_var < 0:
        raise ValueError("variance must be non-negative")
    return target_mean * (1 - beta), math.sqrt(target_var * (1 - beta ** 2))


@dataclass(frozen=True)
class HwDistributionConfig:
    mean_a_iq: float = 1.0
    var_a_iq: float = 0.005
    mean_phi_iq: float = 0.0
    var_phi_iq: float = 0.005
    tap_power_decay_db: float = 20.0
    rice_k_factor: float = 100.0
    memory_len: int = 3
    nonlin_order: int = 5

    def validate(self):
        if self.var_a_iq < 0 or self.var_phi_iq < 0:
            raise ValueError("variances must be non-negative")
        if self.tap_power_decay_db <= 0:
            raise ValueError("tap_power_decay_db must be positive")
        if self.rice_k_factor < 0:
            raise ValueError("rice_k_factor must be non-negative")
        if self.memory_len < 1:
            raise ValueError("memory_len must be positive")
        n_orders(self.nonlin_order)

    def tap_powers(self) -> np.ndarray:
        """E|h_p[m]|^2 laid out like PaTaps.h."""
        i = np.arange(n_orders(self.nonlin_order))[:, None]
        m = np.arange(self.memory_len)[None, :]
        return 10 ** (-self.tap_power_decay_db * (i + m) / 10)

    def tap_variances(self) -> np.ndarray:
        var = self.tap_powers().copy()
        k = self.rice_k_factor
        var[:, 0] *= 0.0 if math.isinf(k) else 1 / (k + 1)
        return var

    def los_magnitudes(self) -> np.ndarray:
        """|E h_p[0]| per order."""
        k = self.rice_k_factor
        frac = 1.0 if math.isinf(k) else k / (k + 1)
        return np.sqrt(self.tap_powers()[:, 0] * frac)


def sample_initial_hardware(config: HwDistributionConfig, rng: np.random.Generator) -> HardwareParams:
    """Draw one hardware realisation from the stationary parameter distributions.

    Taps at lag 0 are Rician (complex Gaussian around a LOS mean whose phase is
    random per realisation), later taps Rayleigh (zero-mean complex Gaussian).
    """
    config.validate()
    a_iq = config.mean_a_iq + math.sqrt(config.var_a_iq) * rng.standard_normal()
    phi_iq = config.mean_phi_iq + math.sqrt(config.var_phi_iq) * rng.standard_normal()
    shape = (n_orders(config.nonlin_order), config.memory_len)
    means = np.zeros(shape, dtype=np.complex128)
    means[:, 0] = config.los_magnitudes() * np.exp(2j * np.pi * rng.random(shape[0]))
    g = rng.standard_normal((2,) + shape)
    h = means + np.sqrt(config.tap_variances() / 2) * (g[0] + 1j * g[1])
    return HardwareParams(MixerParams(a_iq, phi_iq), PaTaps(h), tap_means=means)


def build_ar1_family(initial: HardwareParams, config: HwDistributionConfig, beta: float) -> dict[str, Ar1Process]:
    """One AR(1) process per scalar hardware parameter, started at ``initial``.

    Keys follow :func:`param_ids`.  The mixer processes are real-valued.
    """
    if not 0 <= beta < 1:
        raise ValueError(f"beta must lie in [0, 1), got {beta}")
    means = initial.tap_means if initial.tap_means is not None else np.zeros_like(initial.taps.h)
    family = {}
    c, sig = ar1_moments_to_coeffs(config.mean_a_iq, config.var_a_iq, beta)
    family["a_iq"] = Ar1Process(c, beta, sig, initial.mixer.a_iq, is_real_valued=True)
    c, sig = ar1_moments_to_coeffs(config.mean_phi_iq, config.var_phi_iq, beta)
    family["phi_iq"] = Ar1Process(c, beta, sig, initial.mixer.phi_iq, is_real_valued=True)
    var = config.tap_variances()
    for (p, m), value in initial.taps.items():
        i = (p - 1) // 2
        c, sig = ar1_moments_to_coeffs(means[i, m], var[i, m], beta)
        family[f"h{p}_{m}"] = Ar1Process(c, beta, sig, value)
    return family


@dataclass
class Dataset:
    x_static: np.ndarray
    y_static: np.ndarray
    x_dynamic: np.ndarray
    y_dynamic: np.ndarray
    # row 0: parameters of the static period; row k>0: parameters at dynamic sample k-1
    truth_trace: np.ndarray
    param_ids: list[str]
    memory_len: int
    nonlin_order: int
    seed: int | None = None
    beta: float | None = None
    y_clean: np.ndarray | None = field(default=None, repr=False)

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.x_static, self.x_dynamic])

    @property
    def y(self) -> np.ndarray:
        return np.concatenate([self.y_static, self.y_dynamic])

    @property
    def static_len(self) -> int:
        return self.x_static.size

    @property
    def dynamic_len(self) -> int:
        return self.x_dynamic.size

    def initial_params(self) -> HardwareParams:
        return vector_to_params(self.truth_trace[0], self.memory_len, self.nonlin_order)


def _trace_to_sequence(trace: np.ndarray, static_len: int, memory_len: int, nonlin_order: int):
    """Per-sample (K1, K2, taps) over the whole frame from a truth trace."""
    per_sample = np.concatenate([np.repeat(trace[:1], static_len, axis=0), trace[1:]])
    k1, k2 = mixer_coeffs(per_sample[:, 0].real, per_sample[:, 1].real)
    taps = per_sample[:, 2:].reshape(-1, n_orders(nonlin_order), memory_len)
    return k1, k2, taps


def generate_dataset(
    seed: int,
    beta: float,
    config: HwDistributionConfig | None = None,
    ofdm: OfdmConfig | None = None,
    *,
    static_len: int = 10000,
    dynamic_len: int = 10000,
    noise_db: float | None = -40.0,
) -> Dataset:
    """Static + dynamic SI dataset for one seed and drift coefficient.

    Random streams are keyed by ``seed`` and a purpose label, so the OFDM
    frame, initial hardware and the unit innovations are the same for every
    ``beta``; only the innovation scaling changes.
    """
    config = config or HwDistributionConfig()
    ofdm = ofdm or OfdmConfig()
    frame = generate_ofdm_frame(ofdm, static_len + dynamic_len, rngmod.stream(seed, "ofdm"))
    initial = sample_initial_hardware(config, rngmod.stream(seed, "hw_init"))
    family = build_ar1_family(initial, config, beta)
    ids = list(family)
    trace = np.empty((dynamic_len + 1, len(ids)), dtype=np.complex128)
    trace[0] = params_to_vector(initial)
    for j, pid in enumerate(ids):
        proc = family[pid]
        u = proc.draw_unit(rngmod.stream(seed, f"ar1:{pid}"), dynamic_len)
        trace[1:, j] = proc.evolve(u)
    k1, k2, taps = _trace_to_sequence(trace, static_len, config.memory_len, config.nonlin_order)
    y_clean = pa_output_sequence(frame.samples, k1, k2, taps)
    if noise_db is None:
        y = y_clean.copy()
    else:
        y = add_noise(Frame(y_clean), noise_db, rngmod.stream(seed, "noise")).samples
    x = frame.samples
    return Dataset(
        x_static=x[:static_len].copy(),
        y_static=y[:static_len].copy(),
        x_dynamic=x[static_len:].copy(),
        y_dynamic=y[static_len:].copy(),
        truth_trace=trace,
        param_ids=ids,
        memory_len=config.memory_len,
        nonlin_order=config.nonlin_order,
        seed=seed,
        beta=beta,
        y_clean=y_clean,
    )


DATASET_COLUMNS = ["sample_index", "period", "re_x", "im_x", "re_y", "im_y"]
TRUTH_COLUMNS = ["parameter", "sample_index", "re", "im"]


def _num(v) -> str:
    # shortest round-trip text of a float
    return repr(float(v))


def save_dataset(ds: Dataset, path) -> tuple[Path, Path]:
    """Write ``<path>`` (samples) and ``<stem>.truth.csv`` (parameter trace).

    Truth rows at sample_index 0 give the static-period values; later rows give
    the values in force at that dynamic sample.
    """
    path = Path(path)
    truth_path = path.with_name(path.stem + ".truth.csv")
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(DATASET_COLUMNS)
        for n in range(ds.static_len + ds.dynamic_len):
            static = n < ds.static_len
            x = ds.x_static[n] if static else ds.x_dynamic[n - ds.static_len]
            y = ds.y_static[n] if static else ds.y_dynamic[n - ds.static_len]
            w.writerow([n, "static" if static else "dynamic", *map(_num, (x.real, x.imag, y.real, y.imag))])
    with open(truth_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(TRUTH_COLUMNS)
        for k, row in enumerate(ds.truth_trace):
            n = 0 if k == 0 else ds.static_len + k - 1
            for pid, v in zip(ds.param_ids, row):
                w.writerow([pid, n, _num(v.real), _num(v.imag)])
    return path, truth_path


def load_dataset(path) -> Dataset:
    path = Path(path)
    xs, ys, periods = [], [], []
    with open(path, newline="", encoding="utf-8") as f:
        r = csv.DictReader(f)
        if r.fieldnames != DATASET_COLUMNS:
            raise ValueError(f"{path}: unexpected header {r.fieldnames}")
        for row in r:
            periods.append(row["period"])
            xs.append(complex(float(row["re_x"]), float(row["im_x"])))
            ys.append(complex(float(row["re_y"]), float(row["im_y"])))
    xs, ys = np.array(xs), np.array(ys)
    n_static = periods.count("static")
    truth_path = path.with_name(path.stem + ".truth.csv")
    rows: dict[int, dict[str, complex]] = {}
    ids: list[str] = []
    with open(truth_path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            pid = row["parameter"]
            if pid not in ids:
                ids.append(pid)
            rows.setdefault(int(row["sample_index"]), {})[pid] = complex(float(row["re"]), float(row["im"]))
    trace = np.array([[rows[n][pid] for pid in ids] for n in sorted(rows)])
    n_taps = len(ids) - 2
    memory_len = 1 + max(int(pid.split("_")[1]) for pid in ids[2:])
    nonlin_order = 2 * (n_taps // memory_len) - 1
    return Dataset(
        x_static=xs[:n_static],
        y_static=ys[:n_static],
        x_dynamic=xs[n_static:],
        y_dynamic=ys[n_static:],
        truth_trace=trace,
        param_ids=ids,
        memory_len=memory_len,
        nonlin_order=nonlin_order,
    )
