"""Per-round compute/upload timing, arrival probabilities and batch adaptation.

Units: seconds, hertz, watts, bits, MAC operations.  Channel power gains are
exponential with mean ``mean_gain`` (independent block fading per device and
round).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


class TimingError(ValueError):
    """Invalid timing/channel parameters or an unreachable calibration target."""


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class DeviceProfile:
    mac_rate: float  # MAC/s
    tx_power: float  # W
    samples: int  # l_i

    def __post_init__(self) -> None:
        if not (self.mac_rate > 0 and self.tx_power > 0 and self.samples >= 1):
            raise TimingError(f"device profile needs positive values, got {self}")


@dataclass(frozen=True)
class ChannelModel:
    bandwidth: float  # B, Hz
    noise_power: float  # N0, W
    mean_gain: float  # mean of |h|^2
    update_size: float  # M, bits
    t_download: float  # seconds
    deadline: float  # T, seconds
    mac_per_sample: float  # N_MAC

    def __post_init__(self) -> None:
        if not (self.bandwidth > 0 and self.noise_power > 0 and self.mean_gain > 0
                and self.deadline > 0 and self.mac_per_sample > 0):
            raise TimingError(f"channel parameters must be positive, got {self}")
        if self.update_size < 0 or self.t_download < 0:
            raise TimingError("update size and download time must be non-negative")


@dataclass(frozen=True)
class RoundTiming:
    compute_time: float
    upload_time: float
    total: float
    arrived: bool
    gain: float


def compute_time(profile: DeviceProfile, ch: ChannelModel, tau: int, b: int) -> float:
    return tau * b * ch.mac_per_sample / profile.mac_rate


def uplink_rate(profile: DeviceProfile, ch: ChannelModel, gain: float) -> float:
    return ch.bandwidth * math.log2(1.0 + gain * profile.tx_power / ch.noise_power)


def upload_time(profile: DeviceProfile, ch: ChannelModel, gain: float) -> float:
    if ch.update_size == 0:
        return 0.0
    rate = uplink_rate(profile, ch, gain)
    return math.inf if rate == 0.0 else ch.update_size / rate


def timing(profile: DeviceProfile, ch: ChannelModel, tau: int, b: int, gain: float) -> RoundTiming:
    tc = compute_time(profile, ch, tau, b)
    tu = upload_time(profile, ch, gain)
    total = ch.t_download + tc + tu
    return RoundTiming(tc, tu, total, total <= ch.deadline, gain)


def draw_gain(ch: ChannelModel, gen: np.random.Generator) -> float:
    return float(gen.exponential(ch.mean_gain))


def draw_round(profile, ch, tau, b, gen: np.random.Generator) -> RoundTiming:
    return timing(profile, ch, tau, b, draw_gain(ch, gen))


def arrival_probability(profile: DeviceProfile, ch: ChannelModel, tau: int, b: int) -> float:
    """P(t_D + t_C + t_U <= T) under exponential fading, in closed form."""
    slack = ch.deadline - ch.t_download - compute_time(profile, ch, tau, b)
    if slack <= 0:
        return 0.0
    if ch.update_size == 0:
        return 1.0
    exponent = ch.update_size / (ch.bandwidth * slack) * math.log(2.0)
    if exponent > 700.0:
        return 0.0
    theta = math.expm1(exponent) * ch.noise_power / profile.tx_power
    return math.exp(-theta / ch.mean_gain)


def adapt_batch(profile: DeviceProfile, ch: ChannelModel, tau: int, gain: float) -> int:
    """Largest batch in [1, l_i] meeting the deadline for the realized gain; 0 if none."""
    if gain < 0:
        raise TimingError("gain must be non-negative")
    tu = upload_time(profile, ch, gain)
    slack = ch.deadline - ch.t_download - tu
    if not slack > 0:
        return 0
    per_sample = tau * ch.mac_per_sample / profile.mac_rate
    b = min(profile.samples, int(math.floor(slack / per_sample)))

    # the floor can be off by one against the summed-time comparison
    def fits(n: int) -> bool:
        return ch.t_download + compute_time(profile, ch, tau, n) + tu <= ch.deadline

    while b >= 1 and not fits(b):
        b -= 1
    while b + 1 <= profile.samples and fits(b + 1):
        b += 1
    return max(b, 0)


def server_batch(mac_rate: float, ch: ChannelModel, tau: int, c: int) -> int:
    """Largest server mini-batch whose ``tau`` steps fit in one round, within [1, c]."""
    b = int(math.floor(ch.deadline * mac_rate / (tau * ch.mac_per_sample)))
    return max(1, min(c, b))


def straggler_ratio(fleet, ch: ChannelModel, tau: int, b: int) -> float:
    return float(np.mean([1.0 - arrival_probability(p, ch, tau, min(b, p.samples)) for p in fleet]))


def straggler_calibrate(
    target_ratio: float,
    fleet,
    ch: ChannelModel,
    tau: int,
    b: int,
    bandwidth_range: tuple[float, float] = (1.0, 1e12),
    tol: float = 1e-3,
) -> ChannelModel:
    """Bisect (in log-bandwidth) until the mean straggling probability hits the target."""
    if not 0 <= target_ratio < 1:
        raise TimingError(f"target ratio must lie in [0, 1), got {target_ratio}")
    lo, hi = (math.log(x) for x in bandwidth_range)

    def gap(log_b: float) -> float:
        return straggler_ratio(fleet, replace(ch, bandwidth=math.exp(log_b)), tau, b) - target_ratio

    g_lo, g_hi = gap(lo), gap(hi)
    if g_hi > tol:
        raise TimingError(
            f"target {target_ratio} unreachable: even B={bandwidth_range[1]:g} Hz leaves ratio {g_hi + target_ratio:.4f}"
        )
    if g_lo < -tol:
        raise TimingError(
            f"target {target_ratio} unreachable: B={bandwidth_range[0]:g} Hz already gives ratio {g_lo + target_ratio:.4f}"
        )
    mid = hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        g = gap(mid)
        if abs(g) <= tol / 10:
            break
        if g > 0:
            lo = mid
        else:
            hi = mid
    else:
        mid = hi
    return replace(ch, bandwidth=math.exp(mid))


def default_fleet(n: int, samples, gen: np.random.Generator, base_mac_rate: float = 1536e3,
                  power_dbm: tuple[float, float] = (15.0, 25.0)) -> tuple[DeviceProfile, ...]:
    """Heterogeneous devices: MAC rate ``u * base`` with ``u ~ U[0.8, 1]``, power uniform in dBm."""
    if isinstance(samples, int):
        samples = [samples] * n
    out = []
    for i in range(n):
        u = gen.uniform(0.8, 1.0)
        p = dbm_to_watts(gen.uniform(*power_dbm))
        out.append(DeviceProfile(u * base_mac_rate, p, int(samples[i])))
    return tuple(out)
