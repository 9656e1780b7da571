"""System/user parameter containers and reproducible downlink channel sampling.

Fading is i.i.d. circularly-symmetric complex Gaussian per antenna, unit
variance per entry.  Draws are produced by a counter-based generator keyed on
(seed, draw index, subcarrier, user), so any (n, k) slice is bit-identical
no matter how many users or subcarriers surround it and no matter the order
of generation.  That keying is what makes paired common-random-number
comparisons across schemes and sweep values exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator, Philox


@dataclass(frozen=True)
class SystemParams:
    """Transmitter/air-interface constants.

    m_antennas: transmit antennas at the base station.
    n_subcarriers: OFDMA subcarriers.
    bandwidth_hz: bandwidth of one subcarrier.
    noise_w: receiver noise power per subcarrier.
    transcode_weight: relative cost of one watt of transcoding power
        against one watt of transmit power (>= 1).
    """

    m_antennas: int
    n_subcarriers: int
    bandwidth_hz: float
    noise_w: float
    transcode_weight: float = 1.0

    def __post_init__(self):
        if self.m_antennas < 1:
            raise ValueError("m_antennas must be >= 1")
        if self.n_subcarriers < 1:
            raise ValueError("n_subcarriers must be >= 1")
        if self.bandwidth_hz <= 0.0:
            raise ValueError("bandwidth_hz must be positive")
        if self.noise_w <= 0.0:
            raise ValueError("noise_w must be positive")
        if self.transcode_weight < 1.0:
            raise ValueError("transcode_weight must be >= 1")


@dataclass(frozen=True)
class UserProfile:
    """Large-scale gain, requested quality level (1-based), and the power
    this user spends to downconvert one tile by one quality level."""

    large_scale_gain: float
    quality_level: int
    transcode_w_per_step: float = 0.0

    def __post_init__(self):
        if self.large_scale_gain <= 0.0:
            raise ValueError("large_scale_gain must be positive")
        if self.quality_level < 1:
            raise ValueError("quality_level must be >= 1")
        if self.transcode_w_per_step < 0.0:
            raise ValueError("transcode_w_per_step must be nonnegative")


@dataclass(frozen=True)
class QualityLadder:
    """Per-tile source rates (bit/s) of the encoded quality levels, ascending."""

    rates_bps: tuple

    def __post_init__(self):
        rates = tuple(float(r) for r in self.rates_bps)
        if not rates:
            raise ValueError("ladder needs at least one level")
        if any(r <= 0.0 for r in rates):
            raise ValueError("rates must be positive")
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ValueError("rates must be strictly ascending")
        object.__setattr__(self, "rates_bps", rates)

    def __len__(self):
        return len(self.rates_bps)

    def rate(self, level):
        """Rate of a 1-based level."""
        if not 1 <= level <= len(self.rates_bps):
            raise ValueError(f"level {level} outside 1..{len(self.rates_bps)}")
        return self.rates_bps[level - 1]


@dataclass(frozen=True)
class ChannelRealization:
    """One fading draw: h[n, k, :] is user k's channel on subcarrier n."""

    h: np.ndarray = field(repr=False)
    seed: int
    draw_index: int

    def __post_init__(self):
        if self.h.ndim != 3:
            raise ValueError("h must have shape (subcarriers, users, antennas)")

    @property
    def n_subcarriers(self):
        return self.h.shape[0]

    @property
    def n_users(self):
        return self.h.shape[1]

    @property
    def m_antennas(self):
        return self.h.shape[2]


def _entry_generator(seed, draw_index, subcarrier, user):
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, 0x9E3779B97F4A7C15], dtype=np.uint64)
    # counter word 0 stays free for the stream's own block counter
    counter = np.array([0, draw_index, subcarrier, user], dtype=np.uint64)
    return Generator(Philox(key=key, counter=counter))


def _complex_normal(gen, m):
    u = gen.random(2 * m)
    radius = np.sqrt(-np.log1p(-u[0::2]))
    angle = 2.0 * np.pi * u[1::2]
    return radius * np.cos(angle) + 1j * radius * np.sin(angle)


def sample_channel(params, n_users, seed, draw_index):
    """Draw one channel realization for n_users users.

    Each entry is CN(0, 1): real and imaginary parts carry variance 1/2,
    generated by Box-Muller from two uniforms (radius sqrt(-ln(1-u1)),
    already folded by the 1/2 variance, and angle 2*pi*u2).
    """
    if n_users < 1:
        raise ValueError("n_users must be >= 1")
    if seed < 0 or draw_index < 0:
        raise ValueError("seed and draw_index must be nonnegative")
    n = params.n_subcarriers
    m = params.m_antennas
    h = np.empty((n, n_users, m), dtype=np.complex128)
    for sc in range(n):
        for k in range(n_users):
            gen = _entry_generator(seed, draw_index, sc, k)
            h[sc, k, :] = _complex_normal(gen, m)
    return ChannelRealization(h=h, seed=seed, draw_index=draw_index)
