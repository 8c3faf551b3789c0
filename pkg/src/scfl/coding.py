"""Coded shards: noisy random projections of local data and their server-side sum.

A device holding ``(X_i, Y_i)`` with ``l_i`` rows publishes
``(G_i X_i + N_i, G_i Y_i)`` where ``G_i`` is ``c x l_i`` standard normal and
``N_i`` is ``c x d`` Gaussian with variance ``sigma_i^2``.  The projection and
noise are drawn from the shard's seed and discarded after encoding.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from scfl.data import Dataset, load_csv, save_csv


class CodingError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CodedShard:
    features: np.ndarray
    labels: np.ndarray
    sigma2: float
    seed: int | None = None

    def __post_init__(self) -> None:
        X, Y = np.asarray(self.features, float), np.asarray(self.labels, float)
        if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0] or X.shape[0] < 1:
            raise CodingError(f"coded matrices must share c >= 1 rows, got X{X.shape}, Y{Y.shape}")
        if self.sigma2 < 0:
            raise CodingError(f"noise level must be non-negative, got {self.sigma2}")
        if not (np.isfinite(X).all() and np.isfinite(Y).all()):
            raise CodingError("coded shard contains non-finite values")
        object.__setattr__(self, "features", _frozen(X))
        object.__setattr__(self, "labels", _frozen(Y))
        object.__setattr__(self, "sigma2", float(self.sigma2))

    @property
    def c(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class GlobalCodedDataset:
    features: np.ndarray
    labels: np.ndarray
    sigma2: float
    # encoding seeds of the contributing shards, ascending device order
    seeds: tuple = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "features", _frozen(self.features))
        object.__setattr__(self, "labels", _frozen(self.labels))

    @property
    def c(self) -> int:
        return self.features.shape[0]


def _projection_and_noise(seed: int, c: int, l: int, d: int, sigma2: float):
    """Re-derive ``(G, N)`` for a shard seed.

    Separate child streams keep ``G`` and ``N`` prefix-consistent in ``c``
    (the first rows do not change when ``c`` grows) and make ``N`` a pure
    rescaling across noise levels for the same seed.
    """
    g_ss, n_ss = np.random.SeedSequence(int(seed)).spawn(2)
    G = np.random.default_rng(g_ss).standard_normal((c, l))
    N = math.sqrt(sigma2) * np.random.default_rng(n_ss).standard_normal((c, d))
    return G, N


def encode_local(local_X, local_Y, c: int, sigma2: float, seed: int) -> CodedShard:
    X = np.asarray(local_X, dtype=np.float64)
    Y = np.asarray(local_Y, dtype=np.float64)
    if c < 1:
        raise CodingError(f"c must be >= 1, got {c}")
    if sigma2 < 0:
        raise CodingError(f"noise level must be non-negative, got {sigma2}")
    if X.ndim != 2 or X.shape[0] < 1 or Y.shape[0] != X.shape[0]:
        raise CodingError(f"local data must be non-empty with matching rows, got X{X.shape}, Y{Y.shape}")
    G, N = _projection_and_noise(seed, c, X.shape[0], X.shape[1], sigma2)
    return CodedShard(G @ X + N, G @ Y, sigma2, int(seed))


def build_global(shards) -> GlobalCodedDataset:
    """Sum shards in the given (ascending device) order."""
    shards = list(shards)
    if not shards:
        raise CodingError("need at least one shard")
    first = shards[0]
    X = np.zeros_like(first.features)
    Y = np.zeros_like(first.labels)
    sigma2 = 0.0
    for i, s in enumerate(shards):
        if s.features.shape != first.features.shape or s.labels.shape != first.labels.shape:
            raise CodingError(
                f"shard {i} has shape X{s.features.shape}/Y{s.labels.shape}, "
                f"expected X{first.features.shape}/Y{first.labels.shape}"
            )
        X += s.features
        Y += s.labels
        sigma2 += s.sigma2
    return GlobalCodedDataset(X, Y, sigma2, tuple(s.seed for s in shards))


# ------------------------------------------------------------- reconstruction


@dataclass(frozen=True)
class AttackResult:
    error: float
    degenerate: bool
    reason: str = ""


def reconstruction_attack(coded, local_X, known_index, shard_sizes=None) -> AttackResult:
    """Decode unknown rows of the encoded data from a few known rows.

    The attacker is assumed to hold the encoding seed(s), so it can rebuild the
    projection and pull back ``Z = G^+ X_coded``.  Each row of ``Z`` is the
    true row seen through the same unknown ``d x d`` map plus noise; the map is
    fitted by ordinary least squares on the known rows and inverted on the
    remaining ones.

    ``coded`` is a :class:`CodedShard` (``local_X`` is that device's data) or a
    :class:`GlobalCodedDataset` (``local_X`` is the concatenated data of all
    contributing devices and ``shard_sizes`` gives their row counts).

    Returns the Frobenius error over unknown rows divided by their Frobenius
    norm.  Singular systems are reported as degenerate, never regularized.
    """
    X = np.asarray(local_X, dtype=np.float64)
    known = np.unique(np.asarray(known_index, dtype=int))
    l, d = X.shape
    if known.size == 0:
        raise CodingError("the attack needs at least one known row")
    if known.size >= l or known.min() < 0 or known.max() >= l:
        raise CodingError(f"known rows must be a proper subset of 0..{l - 1}")

    if isinstance(coded, CodedShard):
        if coded.seed is None:
            raise CodingError("shard has no seed to re-derive the projection from")
        G, _ = _projection_and_noise(coded.seed, coded.c, l, d, 0.0)
    else:
        sizes = list(shard_sizes or [])
        if sum(sizes) != l or len(sizes) != len(coded.seeds):
            raise CodingError("shard_sizes must match the contributing shards and sum to the rows of local_X")
        G = np.hstack([
            _projection_and_noise(seed, coded.c, n, d, 0.0)[0] for seed, n in zip(coded.seeds, sizes)
        ])

    if np.linalg.matrix_rank(G) < l:
        return AttackResult(math.nan, True, "projection has fewer independent rows than samples")
    Z = np.linalg.lstsq(G, coded.features, rcond=None)[0]

    Xk, Zk = X[known], Z[known]
    gram = Xk.T @ Xk
    if np.linalg.matrix_rank(gram) < d:
        return AttackResult(math.nan, True, "known rows do not span the feature space")
    A = np.linalg.solve(gram, Xk.T @ Zk)
    if np.linalg.matrix_rank(A) < d:
        return AttackResult(math.nan, True, "estimated map is singular")

    unknown = np.setdiff1d(np.arange(l), known)
    Xu = X[unknown]
    Xu_hat = np.linalg.solve(A.T, Z[unknown].T).T
    denom = np.linalg.norm(Xu)
    if denom == 0.0:
        return AttackResult(math.nan, True, "unknown rows are all zero")
    return AttackResult(float(np.linalg.norm(Xu_hat - Xu) / denom), False)


# --------------------------------------------------------------------- export


def save_coded(shard: CodedShard | GlobalCodedDataset, path: str | Path) -> Path:
    """Write coded rows in the dataset CSV schema plus a ``.json`` sidecar."""
    path = Path(path)
    save_csv(Dataset(shard.features, shard.labels), path)
    meta = {"c": int(shard.c), "sigma2": float(shard.sigma2)}
    if isinstance(shard, CodedShard):
        meta["seed"] = shard.seed
    else:
        meta["seeds"] = list(shard.seeds)
    sidecar = path.with_suffix(".json")
    sidecar.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return sidecar


def load_coded(path: str | Path, d: int, o: int) -> CodedShard:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))
    ds = load_csv(path, d, o)
    if ds.m != meta["c"]:
        raise CodingError(f"{path}: {ds.m} rows but sidecar says c={meta['c']}")
    return CodedShard(ds.features, ds.labels, meta["sigma2"], meta.get("seed"))


__all__ = [
    "AttackResult", "CodedShard", "CodingError", "GlobalCodedDataset", "build_global",
    "encode_local", "load_coded", "reconstruction_attack", "save_coded",
]
