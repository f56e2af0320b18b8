"""Transmit baseband generation and signal utilities."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

# relative noise powers at or below this are treated as "no noise"
NOISE_FLOOR_DB = -300.0


class ConfigError(ValueError):
    pass


class Constellation(str, enum.Enum):
    QPSK = "QPSK"
    QAM16 = "16QAM"


@dataclass(frozen=True)
class Frame:
    """Complex baseband samples x[n], n = 0 .. length-1."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.ascontiguousarray(self.samples, dtype=np.complex128)
        if s.ndim != 1 or s.size == 0:
            raise ValueError("a frame holds a non-empty 1-d sequence of samples")
        object.__setattr__(self, "samples", s)

    @property
    def length(self) -> int:
        return self.samples.size

    def __len__(self):
        return self.samples.size


@dataclass(frozen=True)
class OfdmConfig:
    fft_size: int = 64
    cp_length: int = 16
    active_subcarriers: int = 52
    constellation: Constellation = Constellation.QPSK

    def validate(self):
        if self.fft_size <= 0:
            raise ConfigError(f"fft_size must be positive, got {self.fft_size}")
        if not 0 <= self.cp_length < self.fft_size:
            raise ConfigError(f"cp_length must lie in [0, fft_size), got {self.cp_length}")
        if not 0 < self.active_subcarriers <= self.fft_size - 1:
            raise ConfigError(
                f"active_subcarriers must lie in [1, fft_size-1] (DC is never used), got {self.active_subcarriers}"
            )
        Constellation(self.constellation)

    @property
    def symbol_length(self) -> int:
        return self.fft_size + self.cp_length

    def active_bins(self) -> np.ndarray:
        """FFT bins carrying data: symmetric around DC, DC excluded."""
        half = self.active_subcarriers // 2
        upper = np.arange(1, self.active_subcarriers - half + 1)
        lower = np.arange(self.fft_size - half, self.fft_size)
        return np.concatenate([upper, lower])


def _constellation_points(kind: Constellation, n: int, rng: np.random.Generator) -> np.ndarray:
    kind = Constellation(kind)
    if kind is Constellation.QPSK:
        levels = np.array([-1.0, 1.0])
    else:
        levels = np.array([-3.0, -1.0, 1.0, 3.0])
    re = rng.choice(levels, size=n)
    im = rng.choice(levels, size=n)
    pts = re + 1j * im
    return pts / np.sqrt(np.mean(np.abs(levels) ** 2) * 2)


def generate_ofdm_frame(config: OfdmConfig, n_samples: int, rng: np.random.Generator) -> Frame:
    """Random OFDM symbols with cyclic prefix, cut to ``n_samples`` and scaled to unit power."""
    config.validate()
    if n_samples < config.symbol_length:
        raise ConfigError(
            f"n_samples={n_samples} is shorter than one OFDM symbol ({config.symbol_length} samples)"
        )
    n_symbols = -(-n_samples // config.symbol_length)
    bins = config.active_bins()
    grid = np.zeros((n_symbols, config.fft_size), dtype=np.complex128)
    grid[:, bins] = _constellation_points(config.constellation, n_symbols * bins.size, rng).reshape(
        n_symbols, bins.size
    )
    body = np.fft.ifft(grid, axis=1)
    symbols = np.concatenate([body[:, config.fft_size - config.cp_length:], body], axis=1)
    x = symbols.reshape(-1)[:n_samples]
    return Frame(x / np.sqrt(np.mean(np.abs(x) ** 2)))


def mean_power(frame) -> float:
    x = frame.samples if isinstance(frame, Frame) else np.asarray(frame)
    if x.size == 0:
        raise ValueError("mean power of an empty frame is undefined")
    return float(np.mean(x.real ** 2 + x.imag ** 2))


def papr_db(frame: Frame) -> float:
    p = np.abs(frame.samples) ** 2
    return float(10 * np.log10(p.max() / p.mean()))


def complex_gaussian(rng: np.random.Generator, size, variance: float = 1.0) -> np.ndarray:
    """Circularly-symmetric complex Gaussian draws."""
    g = rng.standard_normal((2,) + tuple(np.atleast_1d(size)))
    return np.sqrt(variance / 2) * (g[0] + 1j * g[1])


def add_noise(frame: Frame, relative_power_db: float, rng: np.random.Generator) -> Frame:
    """Add complex Gaussian noise ``relative_power_db`` below the frame's own mean power."""
    p = mean_power(frame)
    if relative_power_db <= NOISE_FLOOR_DB:
        return Frame(frame.samples.copy())
    w = complex_gaussian(rng, frame.length, p * 10 ** (relative_power_db / 10))
    return Frame(frame.samples + w)
