"""Mutual-information privacy budgets (in bits) for sharing coded data."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class PrivacyError(ValueError):
    pass


class Unbounded(float):
    """Budget of a release with no noise and no data spread: leakage is unbounded."""

    def __new__(cls):
        return super().__new__(cls, math.inf)

    def __repr__(self) -> str:
        return "UNBOUNDED"

    __str__ = __repr__


UNBOUNDED = Unbounded()


def h_value(local_X) -> tuple[float, float]:
    """``(h, h^2)``: min over columns of (column sum of squares minus its largest square).

    Each column total is the correctly rounded sum of every square but one copy
    of the largest, so the value does not depend on summation order.
    """
    X = np.asarray(local_X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise PrivacyError("need a non-empty l x d matrix")
    sq = X * X
    top = np.argmax(sq, axis=0)
    h2 = min(math.fsum(np.delete(sq[:, k], top[k])) for k in range(sq.shape[1]))
    return math.sqrt(h2), h2


def epsilon(h2: float, c: int, sigma2: float) -> float:
    """``0.5 * log2(1 + c / (h^2 + sigma^2))``; :data:`UNBOUNDED` when ``h^2 + sigma^2 = 0``."""
    if c < 1:
        raise PrivacyError("c must be >= 1")
    if h2 < 0 or sigma2 < 0:
        raise PrivacyError("h^2 and sigma^2 must be non-negative")
    denom = h2 + sigma2
    if denom == 0:
        return UNBOUNDED
    return 0.5 * math.log2(1.0 + c / denom)


def epsilon_inverse(eps: float, h2: float, c: int) -> float:
    """Noise level giving budget ``eps``: ``c / (2^(2 eps) - 1) - h^2``."""
    if not eps > 0:
        raise PrivacyError("budget must be positive")
    cap = epsilon(h2, c, 0.0)
    if eps > cap * (1 + 1e-12):
        raise PrivacyError(f"budget {eps} exceeds the noiseless budget {cap}; it would need negative noise")
    return max(c / math.expm1(2.0 * eps * math.log(2.0)) - h2, 0.0)


@dataclass(frozen=True)
class PrivacyProfile:
    h2: float
    c: int
    sigma2: float

    @property
    def epsilon(self) -> float:
        return epsilon(self.h2, self.c, self.sigma2)


def system_budget(profiles: Sequence[PrivacyProfile]) -> float:
    if not profiles:
        raise PrivacyError("need at least one device")
    return max(p.epsilon for p in profiles)


def device_table(local_Xs, sigma2: Sequence[float], c: int) -> list[dict]:
    """Rows ``device,h2,sigma2,epsilon_bits`` for a fleet."""
    if len(local_Xs) != len(sigma2):
        raise PrivacyError("need one noise level per device")
    rows = []
    for i, (X, s) in enumerate(zip(local_Xs, sigma2)):
        _, h2 = h_value(X)
        rows.append({"device": i, "h2": h2, "sigma2": float(s), "epsilon_bits": epsilon(h2, c, s)})
    return rows
