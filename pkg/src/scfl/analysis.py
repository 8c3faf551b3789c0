"""Problem constants, gradient-variance bounds, the optimality-gap bound and
Monte Carlo checks of the random-matrix second moments used to derive them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from scfl.data import Dataset, DevicePartition

GLOBAL_CONVENTION = "zeta = max_i zeta_i^2, kappa = max_i kappa_i^2"


class BoundError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemConstants:
    alpha_sq: tuple[float, ...]
    zeta_sq: tuple[float, ...]
    kappa_sq: tuple[float, ...]
    phi_sq: float
    L: float
    sizes: tuple[int, ...]
    m: int
    d: int
    o: int
    convention: str = GLOBAL_CONVENTION

    @property
    def alpha(self) -> float:
        return float(sum(self.alpha_sq))

    @property
    def zeta(self) -> float:
        return max(self.zeta_sq)

    @property
    def kappa(self) -> float:
        return max(self.kappa_sq)


def largest_eigenvalue(A: np.ndarray, tol: float = 1e-12, max_iter: int = 100_000) -> float:
    """Power iteration with Rayleigh quotient for a symmetric PSD matrix."""
    A = np.asarray(A, dtype=np.float64)
    n = A.shape[0]
    if n == 0:
        raise BoundError("empty matrix")
    v = np.ones(n) / math.sqrt(n) + 1e-3 * np.arange(n)
    v /= np.linalg.norm(v)
    lam = float(v @ A @ v)
    for _ in range(max_iter):
        w = A @ v
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        new = float(v @ A @ v)
        if abs(new - lam) <= tol * max(abs(new), 1e-300):
            return new
        lam = new
    return lam


def estimate_constants(ds: Dataset, partition: DevicePartition, phi: float) -> ProblemConstants:
    """Per-device constants over the ball ``||W||_F <= phi``.

    ``zeta_i^2 = alpha_i^2 = ||X_i||_F^2``; ``kappa_i^2`` uses the triangle
    bound ``(||X_i||_F phi + ||Y_i||_F)^2``; ``L = lambda_max(X^T X)``.
    """
    if not phi > 0:
        raise BoundError(f"model radius phi must be positive, got {phi}")
    zeta, kappa = [], []
    for i in range(partition.device_count):
        Xi, Yi = partition.local(ds, i)
        fx = float(np.sum(Xi * Xi))
        fy = math.sqrt(float(np.sum(Yi * Yi)))
        zeta.append(fx)
        kappa.append((math.sqrt(fx) * phi + fy) ** 2)
    L = largest_eigenvalue(ds.features.T @ ds.features)
    return ProblemConstants(tuple(zeta), tuple(zeta), tuple(kappa), phi * phi, L,
                            partition.sizes, ds.m, ds.d, ds.o)


@dataclass(frozen=True)
class VarianceBound:
    rho1: float
    rho2: float

    def __post_init__(self) -> None:
        if self.rho1 < 0 or self.rho2 < 0:
            raise BoundError("variance bounds must be non-negative")

    @property
    def rho(self) -> float:
        return 0.25 * self.rho1 + 0.25 * self.rho2


def rho1(consts: ProblemConstants, p: Sequence[float], batches: Sequence[int], tau: int) -> float:
    """Device-side estimation error: straggling plus local mini-batch sampling."""
    if len(p) != len(consts.sizes) or len(batches) != len(consts.sizes):
        raise BoundError("need one probability and one batch per device")
    total = 0.0
    for pi, b, l, z, k in zip(p, batches, consts.sizes, consts.zeta_sq, consts.kappa_sq):
        if not 0 < pi <= 1:
            raise BoundError(f"arrival probability must lie in (0, 1], got {pi}")
        if b < 1:
            raise BoundError("batch sizes must be >= 1")
        total += ((1 - pi) / pi) * z * k + (l * (l - b) / b) * z * k
    return 2.0 * tau * total


def rho2(consts: ProblemConstants, sigma2: Sequence[float], c: int, tau: int,
         n_dim: int | None = None, m: int | None = None, d: int | None = None) -> float:
    """Server-side estimation error on the global coded dataset.

    ``n_dim`` defaults to the label dimension ``o``.
    """
    if c < 1:
        raise BoundError("c must be >= 1")
    m = consts.m if m is None else m
    d = consts.d if d is None else d
    n = consts.o if n_dim is None else n_dim
    zeta, kappa, phi2 = consts.zeta, consts.kappa, consts.phi_sq
    s2 = float(sum(sigma2))
    s4 = float(sum(s * s for s in sigma2))
    return (4 * tau / c) * (m + m * m) * zeta * kappa \
        + (4 * tau / c) * (d + d * d) * phi2 * s4 \
        + (4 * d * m * n * tau / c**2) * (zeta * phi2 + kappa) * s2


def theorem1_bound(consts: ProblemConstants, bound: VarianceBound,
                   schedule: Callable[[int], float], K: int, W0, W_star) -> float:
    """Optimality-gap bound for the learning-rate-weighted average after ``K`` rounds.

    The first term carries ``1 - alpha * eta_0`` with ``alpha = sum_i ||X_i||_F^2``
    and may be negative; the result is returned as computed.
    """
    if K < 1:
        raise BoundError("need K >= 1")
    etas = np.array([schedule(k) for k in range(K)], dtype=np.float64)
    if np.any(etas * consts.L >= 1):
        raise BoundError("schedule violates eta_k * L < 1")
    diff = np.asarray(W0, float) - np.asarray(W_star, float)
    s1 = float(etas.sum())
    s2 = float(np.sum(etas * etas))
    return (1 - consts.alpha * etas[0]) / (2 * s1) * float(np.sum(diff * diff)) + s2 / s1 * bound.rho


# -------------------------------------------------------- moment self-checks


@dataclass(frozen=True)
class MomentCheck:
    name: str
    empirical: float
    predicted: float
    std_error: float

    @property
    def rel_error(self) -> float:
        if self.predicted == 0:
            return 0.0 if self.empirical == 0 else math.inf
        return abs(self.empirical - self.predicted) / abs(self.predicted)


@dataclass(frozen=True)
class WishartReport:
    projection: MomentCheck
    noise: MomentCheck
    server_sampling: MomentCheck
    device_sampling: MomentCheck
    # noise moment evaluated with (sum sigma_i^2)^2, which is exact for the summed noise
    noise_exact_prediction: float

    def checks(self) -> tuple[MomentCheck, ...]:
        return (self.projection, self.noise, self.server_sampling, self.device_sampling)


def _summary(name: str, draws: np.ndarray, predicted: float) -> MomentCheck:
    se = float(draws.std(ddof=1) / math.sqrt(draws.size)) if draws.size > 1 else 0.0
    return MomentCheck(name, float(draws.mean()), float(predicted), se)


def wishart_selfcheck(m: int, c: int, d: int, sigma2: Sequence[float], draws: int, seed: int,
                      b_s: int | None = None, l: int | None = None, b: int | None = None) -> WishartReport:
    """Monte Carlo second moments of the coding projection, coding noise and row sampling.

    * ``E||G^T G / c - I_m||_F^2`` vs ``(m + m^2) / c``
    * ``E||N^T N / c - sigma^2 I_d||_F^2`` vs ``(d + d^2) / c * sum sigma_i^4``,
      with ``N`` the sum of per-device noises of variances ``sigma_i^2``
    * ``E||(c/b_s) S - I_c||_F^2`` vs ``c (c - b_s) / b_s`` (server Bernoulli mask)
    * ``E||(l/b) S - I_l||_F^2`` vs ``l (l - b) / b`` (device Bernoulli mask)
    """
    if draws < 1000:
        raise BoundError("need at least 1000 draws")
    b_s = c // 2 if b_s is None else b_s
    l = m if l is None else l
    b = max(1, l // 2) if b is None else b
    gen = np.random.default_rng(seed)
    sig = [float(s) for s in sigma2]
    total = sum(sig)

    proj = np.empty(draws)
    noise = np.empty(draws)
    srv = np.empty(draws)
    dev = np.empty(draws)
    I_m, I_d = np.eye(m), np.eye(d)
    for r in range(draws):
        G = gen.standard_normal((c, m))
        E = G.T @ G / c - I_m
        proj[r] = np.sum(E * E)
        N = np.zeros((c, d))
        for s in sig:
            N += math.sqrt(s) * gen.standard_normal((c, d))
        E = N.T @ N / c - total * I_d
        noise[r] = np.sum(E * E)
        z = (c / b_s) * (gen.random(c) < b_s / c) - 1.0
        srv[r] = np.sum(z * z)
        z = (l / b) * (gen.random(l) < b / l) - 1.0
        dev[r] = np.sum(z * z)

    s4 = sum(s * s for s in sig)
    return WishartReport(
        _summary("projection", proj, (m + m * m) / c),
        _summary("noise", noise, (d + d * d) / c * s4),
        _summary("server_sampling", srv, c * (c - b_s) / b_s),
        _summary("device_sampling", dev, l * (l - b) / b),
        (d + d * d) / c * total * total,
    )
