"""Contract design for privacy budgets.

Devices are sorted by privacy sensitivity ``mu_1 <= ... <= mu_N``.  The server
offers items ``(epsilon_i, r_i)``: a privacy budget (which fixes the device's
noise level through ``q_i^{-1}``) and a reward.  A device's utility is
``r - mu * epsilon``; the server's is ``sum Gamma(sigma_i^2) - lambda * sum r_i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from scfl import privacy

INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
SLACK = 1e-9


class ContractError(ValueError):
    pass


# ----------------------------------------------------------------- primitives


@dataclass(frozen=True)
class GammaSpec:
    """Model-performance function of the noise level (non-increasing, concave)."""

    name: str = "neg_square"
    func: Callable[[float], float] = field(default=lambda s2: -s2 * s2, compare=False)

    def __call__(self, sigma2: float) -> float:
        return self.func(sigma2)

    def check_concave(self, upper: float, points: int = 401) -> bool:
        xs = np.linspace(0.0, upper, points)
        ys = np.array([self(x) for x in xs])
        scale = max(1.0, float(np.max(np.abs(ys))))
        non_increasing = bool(np.all(np.diff(ys) <= 1e-12 * scale))
        concave = bool(np.all(np.diff(ys, 2) <= 1e-9 * scale))
        return non_increasing and concave


DEFAULT_GAMMA = GammaSpec()


@dataclass(frozen=True)
class DeviceEcon:
    mu: float
    h2: float
    c: int

    def __post_init__(self) -> None:
        if not self.mu > 0:
            raise ContractError(f"privacy sensitivity must be positive, got {self.mu}")
        if self.h2 < 0 or self.c < 1:
            raise ContractError("need h2 >= 0 and c >= 1")

    def q(self, sigma2: float) -> float:
        return privacy.epsilon(self.h2, self.c, sigma2)

    def q_inv(self, eps: float) -> float:
        return privacy.epsilon_inverse(eps, self.h2, self.c)


def sort_econ(econ: Sequence[DeviceEcon]) -> tuple[list[DeviceEcon], list[int]]:
    """Stable ascending sort by ``mu``; returns the sorted list and original indices."""
    order = sorted(range(len(econ)), key=lambda i: econ[i].mu)
    return [econ[i] for i in order], order


def _check_sorted(econ: Sequence[DeviceEcon]) -> None:
    if not econ:
        raise ContractError("need at least one device")
    for a, b in zip(econ, econ[1:]):
        if b.mu < a.mu:
            raise ContractError("devices must be sorted by ascending privacy sensitivity")


def server_utility(sigma2: Sequence[float], rewards: Sequence[float], lam: float,
                   gamma: GammaSpec = DEFAULT_GAMMA) -> float:
    if not lam > 0:
        raise ContractError("lambda must be positive")
    return float(sum(gamma(s) for s in sigma2) - lam * sum(rewards))


def device_utility(eps: float, reward: float, mu: float) -> float:
    return reward - mu * eps


@dataclass(frozen=True)
class Contract:
    epsilons: tuple[float, ...]
    rewards: tuple[float, ...]
    mus: tuple[float, ...]

    @property
    def size(self) -> int:
        return len(self.epsilons)

    @property
    def total_reward(self) -> float:
        return float(sum(self.rewards))

    def utility_matrix(self) -> np.ndarray:
        """``U[i, j]``: utility of device ``i`` taking item ``j``."""
        mu = np.asarray(self.mus)[:, None]
        return np.asarray(self.rewards)[None, :] - mu * np.asarray(self.epsilons)[None, :]

    def choices(self, tie_tol: float = SLACK) -> list[int]:
        """Each device's utility-maximizing item, preferring its own item within ``tie_tol``."""
        U = self.utility_matrix()
        out = []
        for i in range(self.size):
            best = int(np.argmax(U[i]))
            out.append(i if U[i, i] >= U[i, best] - tie_tol else best)
        return out


@dataclass(frozen=True)
class FeasibilityReport:
    ir_ok: bool
    ic_ok: bool
    monotone_ok: bool
    violations: tuple[tuple, ...]

    @property
    def ok(self) -> bool:
        return self.ir_ok and self.ic_ok and self.monotone_ok


def check_feasibility(contract: Contract, econ: Sequence[DeviceEcon], slack: float = SLACK) -> FeasibilityReport:
    """IR, full pairwise IC and ordering conditions; violations carry indices and slack."""
    if contract.size != len(econ):
        raise ContractError("contract and device list differ in length")
    mus = [e.mu for e in econ]
    eps, r = contract.epsilons, contract.rewards
    violations = []
    ir_ok = ic_ok = mono_ok = True
    for i in range(contract.size):
        u = device_utility(eps[i], r[i], mus[i])
        if u < -slack:
            ir_ok = False
            violations.append(("IR", i, i, u))
        for j in range(contract.size):
            if j != i:
                gap = u - device_utility(eps[j], r[j], mus[i])
                if gap < -slack:
                    ic_ok = False
                    violations.append(("IC", i, j, gap))
    for i in range(contract.size - 1):
        if eps[i] < eps[i + 1] - slack:
            mono_ok = False
            violations.append(("epsilon_order", i, i + 1, eps[i] - eps[i + 1]))
        if r[i] < r[i + 1] - slack:
            mono_ok = False
            violations.append(("reward_order", i, i + 1, r[i] - r[i + 1]))
    if any(e <= 0 for e in eps):
        mono_ok = False
        violations.append(("epsilon_positive", -1, -1, min(eps)))
    last = contract.size - 1
    if r[last] < mus[last] * eps[last] - slack:
        mono_ok = False
        violations.append(("last_reward", last, last, r[last] - mus[last] * eps[last]))
    return FeasibilityReport(ir_ok, ic_ok, mono_ok, tuple(violations))


def optimal_rewards(eps: Sequence[float], mus: Sequence[float]) -> tuple[float, ...]:
    """Cheapest rewards making the ordered budgets IR and IC (backward recursion)."""
    n = len(eps)
    if n == 0 or len(mus) != n:
        raise ContractError("need matching non-empty budgets and sensitivities")
    for i in range(n - 1):
        if eps[i] < eps[i + 1]:
            raise ContractError(f"budgets must be non-increasing (item {i} < item {i + 1})")
        if mus[i] > mus[i + 1]:
            raise ContractError("sensitivities must be ascending")
    if eps[-1] <= 0:
        raise ContractError("budgets must be positive")
    r = [0.0] * n
    r[-1] = mus[-1] * eps[-1]
    for i in range(n - 2, -1, -1):
        r[i] = r[i + 1] + mus[i] * (eps[i] - eps[i + 1])
    return tuple(r)


def reward_weights(mus: Sequence[float]) -> list[float]:
    """``w_i = i mu_i - (i-1) mu_{i-1}`` so that the total optimal reward is ``sum w_i eps_i``."""
    return [(i + 1) * mus[i] - (i * mus[i - 1] if i > 0 else 0.0) for i in range(len(mus))]


def eps_cap(e: DeviceEcon, sigma_min2: float = 0.0) -> float:
    cap = e.q(sigma_min2)
    if math.isinf(cap):
        raise ContractError("budget domain is unbounded: need h2 > 0 or a positive minimum noise level")
    return cap


def phi(eps: float, i: int, lam: float, econ: Sequence[DeviceEcon], gamma: GammaSpec = DEFAULT_GAMMA,
        sigma_min2: float = 0.0) -> float:
    """Per-item server objective after substituting the cheapest rewards (``i`` is 0-based)."""
    e = econ[i]
    if not 0 < eps <= eps_cap(e, sigma_min2) * (1 + 1e-12):
        raise ContractError(f"budget {eps} outside (0, {eps_cap(e, sigma_min2)}] for device {i}")
    prev = econ[i - 1].mu * i if i > 0 else 0.0
    weight = (i + 1) * e.mu - prev
    return gamma(max(e.q_inv(min(eps, e.q(0.0))), sigma_min2)) - lam * weight * eps


# ----------------------------------------------------------------- optimizers


def golden_max(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-8) -> float:
    """Maximizer of a unimodal function on ``[lo, hi]`` (endpoints included)."""
    a, b = lo, hi
    x1 = b - INV_PHI * (b - a)
    x2 = a + INV_PHI * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > tol:
        if f1 < f2:
            a, x1, f1 = x1, x2, f2
            x2 = a + INV_PHI * (b - a)
            f2 = f(x2)
        else:
            b, x2, f2 = x2, x1, f1
            x1 = b - INV_PHI * (b - a)
            f1 = f(x1)
    best = 0.5 * (a + b)
    candidates = [(f(best), best), (f(lo), lo), (f(hi), hi)]
    return max(candidates, key=lambda t: t[0])[1]


EPS_FLOOR = 1e-9


def _block_argmax(block: list[int], lam, econ, gamma, sigma_min2) -> float:
    hi = min(eps_cap(econ[l], sigma_min2) for l in block)

    def total(x: float) -> float:
        return sum(phi(x, l, lam, econ, gamma, sigma_min2) for l in block)

    return golden_max(total, min(EPS_FLOOR, hi / 2), hi)


def bunching_ironing(econ: Sequence[DeviceEcon], lam: float, gamma: GammaSpec = DEFAULT_GAMMA,
                     sigma_min2: float = 0.0) -> tuple[float, ...]:
    """Optimal non-increasing budgets.

    Each item's objective is maximized on its own; adjacent items that come out
    in the wrong order are pooled and re-optimized jointly (pool-adjacent-
    violators), which is exact for separable concave objectives under an
    ordering constraint.
    """
    _check_sorted(econ)
    if not lam > 0:
        raise ContractError("lambda must be positive")
    upper = max(e.q_inv(min(1e-3, eps_cap(e, sigma_min2))) for e in econ)
    if not gamma.check_concave(upper):
        raise ContractError(f"performance function {gamma.name!r} is not non-increasing and concave")
    blocks: list[tuple[list[int], float]] = []
    for i in range(len(econ)):
        blocks.append(([i], _block_argmax([i], lam, econ, gamma, sigma_min2)))
        while len(blocks) >= 2 and blocks[-2][1] < blocks[-1][1]:
            top = blocks.pop()
            prev = blocks.pop()
            merged = prev[0] + top[0]
            blocks.append((merged, _block_argmax(merged, lam, econ, gamma, sigma_min2)))
    out = []
    for members, value in blocks:
        out.extend([value] * len(members))
    return tuple(out)


@dataclass(frozen=True)
class ContractDesign:
    contract: Contract
    sigma2: tuple[float, ...]
    server_utility: float
    report: FeasibilityReport


def design_contract(econ: Sequence[DeviceEcon], lam: float, gamma: GammaSpec = DEFAULT_GAMMA,
                    sigma_min2: float = 0.0) -> ContractDesign:
    econ = list(econ)
    eps = bunching_ironing(econ, lam, gamma, sigma_min2)
    mus = tuple(e.mu for e in econ)
    rewards = optimal_rewards(eps, mus)
    contract = Contract(eps, rewards, mus)
    report = check_feasibility(contract, econ)
    if not report.ok:
        raise ContractError(f"solver produced an infeasible contract: {report.violations}")
    sigma2 = tuple(max(e.q_inv(min(x, e.q(0.0))), sigma_min2) for e, x in zip(econ, eps))
    return ContractDesign(contract, sigma2, server_utility(sigma2, rewards, lam, gamma), report)


def objective(eps: Sequence[float], lam, econ, gamma: GammaSpec = DEFAULT_GAMMA, sigma_min2: float = 0.0) -> float:
    return float(sum(phi(x, i, lam, econ, gamma, sigma_min2) for i, x in enumerate(eps)))


def brute_force_objective(econ: Sequence[DeviceEcon], lam: float, gamma: GammaSpec = DEFAULT_GAMMA,
                          points: int = 1_000_000, sigma_min2: float = 0.0) -> tuple[float, tuple[float, ...]]:
    """Best objective over non-increasing budget vectors on a grid (exact dynamic program).

    The grid is uniform plus every device's cap, since pooled optima often sit
    exactly on a cap where the objective has a kink.
    """
    _check_sorted(econ)
    caps = [eps_cap(e, sigma_min2) for e in econ]
    grid = np.union1d(np.linspace(max(caps) / points, max(caps), points), caps)
    points = grid.size
    w = reward_weights([e.mu for e in econ])

    def values(i: int) -> np.ndarray:
        e = econ[i]
        out = np.full(points, -np.inf)
        ok = grid <= caps[i]
        g = grid[ok]
        s2 = e.c / np.expm1(2.0 * g * math.log(2.0)) - e.h2
        s2 = np.maximum(s2, sigma_min2)
        out[ok] = np.array([gamma(x) for x in s2]) if gamma is not DEFAULT_GAMMA else -s2 * s2
        out[ok] -= lam * w[i] * g
        return out

    # best[g]: best total over items 0..i with item i at grid[g]; later items must not exceed earlier ones
    stages = [values(0)]
    for i in range(1, len(econ)):
        suffix = np.maximum.accumulate(stages[-1][::-1])[::-1]
        stages.append(values(i) + suffix)
    g = int(np.argmax(stages[-1]))
    value = float(stages[-1][g])
    path = [g]
    for prev in reversed(stages[:-1]):
        g = g + int(np.argmax(prev[g:]))
        path.append(g)
    path.reverse()
    return value, tuple(float(grid[g]) for g in path)


def minimality_probe(contract: Contract, econ: Sequence[DeviceEcon], delta: float) -> bool:
    """True if lowering any single reward by ``delta`` breaks IR or IC."""
    for i in range(contract.size):
        r = list(contract.rewards)
        r[i] -= delta
        rep = check_feasibility(Contract(contract.epsilons, tuple(r), contract.mus), econ, slack=0.0)
        if rep.ir_ok and rep.ic_ok:
            return False
    return True


def lambda_table(econ: Sequence[DeviceEcon], lambdas: Sequence[float], gamma: GammaSpec = DEFAULT_GAMMA,
                 sigma_min2: float = 0.0) -> list[dict]:
    if not lambdas:
        raise ContractError("need at least one lambda")
    rows = []
    for lam in lambdas:
        des = design_contract(econ, lam, gamma, sigma_min2)
        rows.append({"lambda": float(lam), "total_reward": des.contract.total_reward,
                     "sigma2": float(sum(des.sigma2))})
    return rows


# ---------------------------------------------------------------- Stackelberg


@dataclass(frozen=True)
class StackelbergOutcome:
    total_reward: float
    epsilons: tuple[float, ...]
    rewards: tuple[float, ...]
    sigma2: tuple[float, ...]
    converged: bool
    iterations: int
    server_utility: float | None = None


def stackelberg_equilibrium(econ: Sequence[DeviceEcon], R: float, gamma: GammaSpec = DEFAULT_GAMMA,
                            tol: float = 1e-6, max_iter: int = 1000,
                            sigma_min2: float = 0.0) -> StackelbergOutcome:
    """Devices share a posted reward ``R`` in proportion to their budgets.

    Each device best-responds to the others' total ``E`` with
    ``eps = sqrt(R E / mu) - E`` (clipped to its budget domain); the profile is
    iterated (Gauss-Seidel) to a fixed point.  A lone device gets ``R``
    regardless of its budget and so picks the smallest one.
    """
    if not R > 0:
        raise ContractError("posted reward must be positive")
    econ = list(econ)
    caps = [eps_cap(e, sigma_min2) for e in econ]
    n = len(econ)
    if n == 1:
        eps = [EPS_FLOOR]
        converged, it = True, 0
    else:
        eps = [0.5 * cap for cap in caps]
        converged, it = False, 0
        for it in range(1, max_iter + 1):
            change = 0.0
            for i, e in enumerate(econ):
                others = sum(eps) - eps[i]
                new = math.sqrt(R * others / e.mu) - others if others > 0 else caps[i]
                new = min(max(new, EPS_FLOOR), caps[i])
                change = max(change, abs(new - eps[i]))
                eps[i] = new
            if change <= tol:
                converged = True
                break
    total = sum(eps)
    rewards = tuple(R * x / total for x in eps)
    sigma2 = tuple(max(e.q_inv(min(x, e.q(0.0))), sigma_min2) for e, x in zip(econ, eps))
    return StackelbergOutcome(R, tuple(eps), rewards, sigma2, converged, it)


def stackelberg_baseline(econ: Sequence[DeviceEcon], lam: float, gamma: GammaSpec = DEFAULT_GAMMA,
                         reward_grid: Sequence[float] | None = None,
                         sigma_min2: float = 0.0) -> StackelbergOutcome:
    """Server picks the posted total reward maximizing its utility over a grid."""
    if reward_grid is None:
        reward_grid = np.geomspace(1e-3, 1e3, 121)
    best = None
    for R in reward_grid:
        out = stackelberg_equilibrium(econ, float(R), gamma, sigma_min2=sigma_min2)
        u = server_utility(out.sigma2, out.rewards, lam, gamma)
        if best is None or u > best.server_utility:
            best = StackelbergOutcome(out.total_reward, out.epsilons, out.rewards, out.sigma2,
                                      out.converged, out.iterations, u)
    return best


def contract_at_reward(econ: Sequence[DeviceEcon], R: float, gamma: GammaSpec = DEFAULT_GAMMA,
                       lam_range: tuple[float, float] = (1e-8, 1e8), iters: int = 200,
                       sigma_min2: float = 0.0) -> ContractDesign:
    """Contract whose total reward matches ``R`` (bisection on log lambda).

    When even the smallest lambda pays less than ``R`` that cheapest-to-reach
    design is returned (it spends at most ``R``).
    """
    lo, hi = math.log(lam_range[0]), math.log(lam_range[1])
    low_design = design_contract(econ, math.exp(lo), gamma, sigma_min2)
    if low_design.contract.total_reward <= R:
        return low_design
    design = low_design
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        design = design_contract(econ, math.exp(mid), gamma, sigma_min2)
        total = design.contract.total_reward
        if abs(total - R) <= 1e-9 * max(1.0, R):
            break
        if total > R:
            lo = mid
        else:
            hi = mid
    return design


def performance(sigma2: Sequence[float], gamma: GammaSpec = DEFAULT_GAMMA) -> float:
    return float(sum(gamma(s) for s in sigma2))
