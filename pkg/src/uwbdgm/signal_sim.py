"""Multipath received-waveform synthesis.

A received waveform is the superposition of delayed, scaled copies of the
transmit pulse plus white Gaussian noise.  Delays are quantised to the
nearest sample.  Channel statistics (Poisson path count, exponential
amplitude decay, uniform excess delays, uniform NLOS bias) are simple
stand-ins chosen to give environments distinguishable signatures.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .waveform import Waveform

SPEED_OF_LIGHT = 299_792_458.0
DEFAULT_N_SAMPLES = 152
DEFAULT_SAMPLE_INTERVAL = 1e-9


@dataclass(frozen=True, eq=False)
class TransmitPulse:
    samples: np.ndarray
    sample_interval: float = DEFAULT_SAMPLE_INTERVAL

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if arr.size == 0:
            raise ValueError("transmit pulse is empty")
        if not np.all(np.isfinite(arr)):
            raise ValueError("transmit pulse has non-finite samples")
        if not np.any(arr != 0):
            raise ValueError("transmit pulse is identically zero")
        if not self.sample_interval > 0:
            raise ValueError("sample_interval must be positive")
        object.__setattr__(self, "samples", arr)


def unit_impulse(sample_interval: float = DEFAULT_SAMPLE_INTERVAL) -> TransmitPulse:
    return TransmitPulse(np.array([1.0]), sample_interval)


def gaussian_monocycle(width: int = 5, sample_interval: float = DEFAULT_SAMPLE_INTERVAL) -> TransmitPulse:
    """First derivative of a Gaussian over ``width`` samples, unit peak."""
    if width < 2:
        raise ValueError("monocycle width must be at least 2 samples")
    t = np.arange(width) - (width - 1) / 2.0
    sigma = width / 5.0
    s = -t / sigma**2 * np.exp(-0.5 * (t / sigma) ** 2)
    return TransmitPulse(s / np.abs(s).max(), sample_interval)


@dataclass(frozen=True)
class ChannelRealization:
    """Path amplitudes, delays (seconds) and the AWGN level for one link."""

    amplitudes: tuple[float, ...]
    delays: tuple[float, ...]
    noise_sigma: float
    observation_window: float

    def __post_init__(self):
        if len(self.amplitudes) == 0:
            raise ValueError("channel needs at least one path")
        if len(self.amplitudes) != len(self.delays):
            raise ValueError("amplitudes and delays differ in length")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        d = np.asarray(self.delays, dtype=np.float64)
        if np.any(d < 0) or np.any(d > self.observation_window):
            raise ValueError("path delays must lie inside the observation window")
        if np.any(np.diff(d) < 0):
            raise ValueError("path delays must be sorted")
        if not (np.all(np.isfinite(self.amplitudes)) and np.all(np.isfinite(d))):
            raise ValueError("channel parameters must be finite")

    @property
    def paths(self) -> list[tuple[float, float]]:
        return list(zip(self.amplitudes, self.delays))

    @classmethod
    def from_paths(cls, paths: Sequence[tuple[float, float]], noise_sigma: float = 0.0,
                   observation_window: float | None = None) -> ChannelRealization:
        paths = list(paths)
        if not paths:
            raise ValueError("channel needs at least one path")
        amps = tuple(float(a) for a, _ in paths)
        delays = tuple(float(t) for _, t in paths)
        window = max(delays) if observation_window is None else observation_window
        return cls(amps, delays, noise_sigma, window)


@dataclass(frozen=True)
class EnvironmentProfile:
    label: int
    path_count_mean: float
    decay_rate: float
    nlos_bias_range: tuple[float, float]
    noise_sigma: float
    first_path_attenuation: float
    name: str = ""

    def __post_init__(self):
        lo, hi = self.nlos_bias_range
        values = [self.path_count_mean, self.decay_rate, lo, hi, self.noise_sigma, self.first_path_attenuation]
        if not all(math.isfinite(v) for v in values):
            raise ValueError("environment profile fields must be finite")
        if self.label < 0:
            raise ValueError("label must be non-negative")
        if self.path_count_mean <= 0 or self.decay_rate <= 0:
            raise ValueError("path_count_mean and decay_rate must be positive")
        if lo < 0 or lo > hi:
            raise ValueError("nlos_bias_range must satisfy 0 <= min <= max")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        if not 0.0 <= self.first_path_attenuation <= 1.0:
            raise ValueError("first_path_attenuation must lie in [0, 1]")

    @property
    def display_name(self) -> str:
        return self.name or f"env{self.label}"


def _delay_index(tau: float, dt: float) -> int:
    return math.floor(tau / dt + 0.5)


def synthesize(pulse: TransmitPulse, channel: ChannelRealization, n_samples: int = DEFAULT_N_SAMPLES,
               rng_seed: int = 0) -> Waveform:
    """Render ``sum_l a_l * pulse[t - tau_l] + noise`` on ``n_samples`` points.

    Pulse energy falling past the end of the window is dropped.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be positive")
    dt = pulse.sample_interval
    out = np.zeros(n_samples)
    p = pulse.samples
    for amp, tau in zip(channel.amplitudes, channel.delays):
        start = _delay_index(tau, dt)
        if start >= n_samples:
            continue
        stop = min(n_samples, start + p.size)
        out[start:stop] += amp * p[: stop - start]
    if channel.noise_sigma > 0:
        out += np.random.default_rng(rng_seed).normal(0.0, channel.noise_sigma, n_samples)
    return Waveform(out, dt)


def draw_channel(profile: EnvironmentProfile, true_distance: float, rng_seed: int, *,
                 observation_window: float = DEFAULT_N_SAMPLES * DEFAULT_SAMPLE_INTERVAL,
                 ) -> tuple[ChannelRealization, float]:
    """Sample a channel for ``profile``; returns it with the range error in metres.

    The first path arrives at ``(true_distance + b) / c`` where the NLOS bias
    ``b`` is uniform on the profile's range, so the range error equals ``b``.
    """
    if not true_distance > 0:
        raise ValueError("true_distance must be positive")
    rng = np.random.default_rng(rng_seed)
    lo, hi = profile.nlos_bias_range
    bias = lo if lo == hi else float(rng.uniform(lo, hi))
    tau1 = (true_distance + bias) / SPEED_OF_LIGHT
    if tau1 > observation_window:
        raise ValueError(f"first path at {tau1:.3e} s falls outside the {observation_window:.3e} s window")
    n_paths = max(1, int(rng.poisson(profile.path_count_mean)))
    excess = np.sort(rng.uniform(0.0, observation_window - tau1, n_paths - 1))
    gains = rng.uniform(0.5, 1.0, n_paths - 1)
    amps = [profile.first_path_attenuation] + list(np.exp(-profile.decay_rate * excess) * gains)
    delays = [tau1] + list(np.minimum(tau1 + excess, observation_window))
    channel = ChannelRealization(tuple(float(a) for a in amps), tuple(float(t) for t in delays),
                                 profile.noise_sigma, observation_window)
    return channel, bias


def generate_dataset(profiles: Sequence[EnvironmentProfile], per_class: int,
                     distance_range: tuple[float, float], pulse: TransmitPulse | None = None,
                     n_samples: int = DEFAULT_N_SAMPLES, rng_seed: int = 0, name: str = "synthetic") -> Dataset:
    """Draw ``per_class`` labelled waveforms from every profile.

    Profile labels must be exactly ``0..K-1``.  Rows are ordered by class.
    """
    if not profiles:
        raise ValueError("at least one environment profile is required")
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    d_lo, d_hi = distance_range
    if not (0 < d_lo <= d_hi):
        raise ValueError("distance_range must satisfy 0 < min <= max")
    labels = sorted(p.label for p in profiles)
    if labels != list(range(len(profiles))):
        raise ValueError(f"profile labels must be 0..{len(profiles) - 1} without gaps, got {labels}")
    pulse = gaussian_monocycle() if pulse is None else pulse
    window = n_samples * pulse.sample_interval
    master = np.random.default_rng(rng_seed)
    waves, errors, ks = [], [], []
    for profile in sorted(profiles, key=lambda p: p.label):
        for _ in range(per_class):
            distance = float(master.uniform(d_lo, d_hi))
            channel_seed, noise_seed = (int(s) for s in master.integers(0, 2**63 - 1, size=2))
            channel, err = draw_channel(profile, distance, channel_seed, observation_window=window)
            waves.append(synthesize(pulse, channel, n_samples, noise_seed).samples)
            errors.append(err)
            ks.append(profile.label)
    names = tuple(p.display_name for p in sorted(profiles, key=lambda p: p.label))
    return Dataset(np.stack(waves), np.array(errors), np.array(ks), names, pulse.sample_interval, name)
