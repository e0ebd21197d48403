"""Symbol-level modem: Gray-mapped QPSK/16-QAM/64-QAM plus the Tx-Rx
impairment chain (per-symbol amplitude fading, carrier offset, phase
jitter, AWGN calibrated to a target frame SNR).

Constellations use unit average symbol energy. The Gray mapping is
axis-separable: the high half of the index bits selects the in-phase
level, the low half the quadrature level, with bit pattern 0...0 on an
axis mapping to the most positive level. So QPSK index 0 is (1+1j)/sqrt(2).
"""

from dataclasses import dataclass

import numpy as np

CLASS_NAMES = ("qpsk", "qam16", "qam64")

FADING_MODES = ("none", "rayleigh_per_symbol")


class InfiniteSnrError(ValueError):
    """Noise power is exactly zero; the SNR is not a finite number."""


def _gray_levels(bits_per_axis: int) -> np.ndarray:
    # Gray-code order over amplitude levels, most positive level first.
    n = 1 << bits_per_axis
    levels = np.arange(n - 1, -n, -2, dtype=np.float64)  # e.g. [3, 1, -1, -3]
    out = np.empty(n)
    for idx in range(n):
        out[idx] = levels[idx ^ (idx >> 1)]
    return out


def _square_qam(bits: int) -> np.ndarray:
    half = bits // 2
    axis = _gray_levels(half)
    i = np.repeat(axis, 1 << half)
    q = np.tile(axis, 1 << half)
    points = i + 1j * q
    return points / np.sqrt(np.mean(np.abs(points) ** 2))


_ALPHABETS = {
    "qpsk": _square_qam(2),
    "qam16": _square_qam(4),
    "qam64": _square_qam(6),
}


def constellation(scheme: str) -> np.ndarray:
    """Unit-average-energy alphabet for a scheme, indexed by symbol index."""
    try:
        return _ALPHABETS[scheme]
    except KeyError:
        raise ValueError(f"unknown modulation scheme: {scheme!r}") from None


def alphabet_size(scheme: str) -> int:
    return constellation(scheme).size


def modulate(indices, scheme: str) -> np.ndarray:
    """Map symbol indices to constellation points."""
    table = constellation(scheme)
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= table.size):
        raise ValueError(
            f"symbol index out of range for {scheme} (alphabet size {table.size})"
        )
    return table[idx]


@dataclass(frozen=True)
class ModemConfig:
    scheme: str
    num_symbols: int
    gamma_data_db: float
    f0t: float = 0.0  # carrier frequency offset, cycles per symbol
    phase_jitter_std: float = 0.0  # radians per symbol step
    fading: str = "none"
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in _ALPHABETS:
            raise ValueError(f"unknown modulation scheme: {self.scheme!r}")
        if self.num_symbols < 1:
            raise ValueError("num_symbols must be >= 1")
        if not np.isfinite(self.gamma_data_db):
            raise ValueError("gamma_data_db must be finite")
        if self.phase_jitter_std < 0:
            raise ValueError("phase_jitter_std must be >= 0")
        if self.fading not in FADING_MODES:
            raise ValueError(f"unknown fading mode: {self.fading!r}")


@dataclass(frozen=True)
class IqFrame:
    """One received-signal realization split into I/Q sample tracks."""

    i_samples: np.ndarray
    q_samples: np.ndarray
    label: int
    gamma_data_db: float
    seed: int

    def __post_init__(self):
        if self.i_samples.shape != self.q_samples.shape:
            raise ValueError("i/q tracks must have equal length")


def impair_components(clean: np.ndarray, cfg: ModemConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    """Apply the impairment chain, returning (signal_part, noise_part).

    signal_part is A_n * exp(j*(2*pi*f0*n*T + theta_n)) * s(n) with A_n
    Rayleigh-fading (unit mean square) when enabled, theta a zero-start
    Gaussian random walk. noise_part is complex AWGN whose per-sample
    variance is set from the realized faded signal power so the frame
    meets gamma_data_db in expectation, as a ratio of summed powers.
    """
    clean = np.asarray(clean, dtype=np.complex128)
    if clean.size == 0:
        raise ValueError("empty symbol sequence")
    n = clean.size

    if cfg.fading == "rayleigh_per_symbol":
        # scale 1/sqrt(2) gives E[A^2] = 1, so SNR keeps its meaning
        amp = rng.rayleigh(scale=1.0 / np.sqrt(2.0), size=n)
    else:
        amp = np.ones(n)

    steps = rng.normal(0.0, cfg.phase_jitter_std, size=n - 1) if n > 1 else np.empty(0)
    theta = np.concatenate(([0.0], np.cumsum(steps)))
    phase = 2.0 * np.pi * cfg.f0t * np.arange(n) + theta
    signal = amp * np.exp(1j * phase) * clean

    sig_power = np.sum(amp**2 * np.abs(clean) ** 2)
    noise_var = sig_power / (n * 10.0 ** (cfg.gamma_data_db / 10.0))
    scale = np.sqrt(noise_var / 2.0)
    noise = scale * rng.standard_normal(n) + 1j * scale * rng.standard_normal(n)
    return signal, noise


def apply_tx_impairments(clean: np.ndarray, cfg: ModemConfig, rng, label: int = -1) -> IqFrame:
    """Run the impairment chain and extract I/Q tracks of the received signal."""
    signal, noise = impair_components(clean, cfg, rng)
    r = signal + noise
    return IqFrame(
        i_samples=np.real(r),
        q_samples=np.imag(r),
        label=label,
        gamma_data_db=cfg.gamma_data_db,
        seed=cfg.seed,
    )


def generate_frame(cfg: ModemConfig) -> IqFrame:
    """Draw uniform random symbols for cfg.scheme and impair them.

    Fully determined by cfg (including cfg.seed): identical configs give
    bit-identical frames.
    """
    rng = np.random.default_rng(cfg.seed)
    indices = rng.integers(0, alphabet_size(cfg.scheme), size=cfg.num_symbols)
    clean = modulate(indices, cfg.scheme)
    return apply_tx_impairments(clean, cfg, rng, label=CLASS_NAMES.index(cfg.scheme))


def empirical_snr(signal_part: np.ndarray, noise_part: np.ndarray) -> float:
    """SNR in dB as the ratio of summed signal power to summed noise power."""
    signal_part = np.asarray(signal_part)
    noise_part = np.asarray(noise_part)
    if signal_part.shape != noise_part.shape:
        raise ValueError("signal and noise parts must have equal length")
    noise_power = np.sum(np.abs(noise_part) ** 2)
    if noise_power == 0.0:
        raise InfiniteSnrError("noise power is zero")
    return float(10.0 * np.log10(np.sum(np.abs(signal_part) ** 2) / noise_power))
