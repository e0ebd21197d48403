"""The Rx-server analog link: link-budget SNR, block fading, and additive
Gaussian noise injected into transmitted tensors.

Noise uses an absolute (unit-reference-power) convention: the link SNR
defines a fixed noise standard deviation sqrt(10^(-snr/10)) regardless of
the payload's own scale. Payloads with larger intrinsic values therefore
enjoy a higher effective SNR, which is the effect the split protocol
exploits.
"""

import math
from dataclasses import dataclass

import numpy as np

FADING_MODES = ("fixed", "rayleigh")
DIRECTIONS = ("UL", "DL")


class ZeroFadingError(ValueError):
    """h = 0 means minus-infinity SNR; not representable as a number here."""


@dataclass(frozen=True)
class LinkBudget:
    transmit_power_w: float
    distance_m: float
    pathloss_alpha: float
    noise_variance_w: float
    fading_mode: str = "fixed"
    ul_noisy: bool = True
    dl_noisy: bool = False

    def __post_init__(self):
        if self.transmit_power_w <= 0 or self.distance_m <= 0 or self.noise_variance_w <= 0:
            raise ValueError("transmit power, distance and noise variance must be positive")
        if self.pathloss_alpha < 2:
            raise ValueError("pathloss exponent must be >= 2")
        if self.fading_mode not in FADING_MODES:
            raise ValueError(f"unknown fading mode: {self.fading_mode!r}")

    @classmethod
    def for_snr(
        cls,
        snr_db: float,
        transmit_power_w: float = 0.1,
        distance_m: float = 100.0,
        pathloss_alpha: float = 2.0,
        **kwargs,
    ) -> "LinkBudget":
        """Budget whose static (h=1) SNR equals snr_db exactly."""
        sigma2 = transmit_power_w * distance_m ** (-pathloss_alpha) * 10.0 ** (-snr_db / 10.0)
        return cls(transmit_power_w, distance_m, pathloss_alpha, sigma2, **kwargs)

    def static_snr_db(self) -> float:
        return snr_db(self, 1.0)

    def noise_std(self) -> float:
        return noise_std_for_target_snr(self.static_snr_db())

    def noisy(self, direction: str) -> bool:
        if direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
        return self.ul_noisy if direction == "UL" else self.dl_noisy


@dataclass(frozen=True)
class ChannelRealization:
    h: float  # power-fading coefficient of this transmission
    noise_std: float
    direction: str


def snr_db(budget: LinkBudget, h: float) -> float:
    """Link SNR 10*log10(h * P * d^-alpha / sigma^2) in dB."""
    if h < 0:
        raise ValueError("fading coefficient must be >= 0")
    if h == 0:
        raise ZeroFadingError("h = 0 gives minus-infinity SNR")
    return float(
        10.0
        * math.log10(
            h * budget.transmit_power_w * budget.distance_m ** (-budget.pathloss_alpha)
            / budget.noise_variance_w
        )
    )


def noise_std_for_target_snr(gamma_db: float) -> float:
    """Absolute noise std for a link SNR, with reference signal power 1."""
    return math.sqrt(10.0 ** (-gamma_db / 10.0))


def draw_fading(mode: str, rng) -> float:
    """Power-fading coefficient: 1 when fixed, Exp(1) under Rayleigh fading."""
    if mode == "fixed":
        return 1.0
    if mode == "rayleigh":
        return float(rng.exponential(1.0))
    raise ValueError(f"unknown fading mode: {mode!r}")


def transmit(t: np.ndarray, budget: LinkBudget, direction: str, rng):
    """Send a tensor over the link: returns (h*t + noise, realization).

    One fading draw covers the whole payload (block fading). When the
    direction's noisy flag is off the tensor passes through unchanged with
    h = 1 and no RNG consumption.
    """
    if not budget.noisy(direction):
        return t, ChannelRealization(h=1.0, noise_std=0.0, direction=direction)
    h = draw_fading(budget.fading_mode, rng)
    sigma = budget.noise_std()
    noisy = h * t + rng.normal(0.0, sigma, size=t.shape)
    return noisy, ChannelRealization(h=h, noise_std=sigma, direction=direction)
