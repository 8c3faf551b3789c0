"""Federated training with coded straggler compensation, plus baselines.

Model: linear regression ``f(W) = 0.5 * ||X W - Y||_F^2``.  Each round the
server broadcasts ``W_k``; devices run ``tau`` local mini-batch steps and
upload the sum of their gradients; the server runs ``tau`` steps on the global
coded dataset.  Arrived device updates are weighted by ``1/p_i`` and averaged
with the server update.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from scfl import rng as rngs
from scfl import system
from scfl.coding import GlobalCodedDataset, build_global, encode_local
from scfl.data import Dataset, DevicePartition


class ConfigError(ValueError):
    pass


class DivergenceError(ArithmeticError):
    def __init__(self, message: str, round_index: int | None = None, step: int | None = None):
        where = []
        if round_index is not None:
            where.append(f"round {round_index}")
        if step is not None:
            where.append(f"step {step}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.round_index = round_index
        self.step = step


# ------------------------------------------------------------------ objective


def loss(X, Y, W) -> float:
    R = np.asarray(X) @ W - np.asarray(Y)
    return 0.5 * float(np.sum(R * R))


def dataset_loss(ds: Dataset, W) -> float:
    return loss(ds.features, ds.labels, W)


def gradient(X, Y, W) -> np.ndarray:
    X = np.asarray(X)
    return X.T @ (X @ W - np.asarray(Y))


class Optimum(NamedTuple):
    model: np.ndarray
    rank_deficient: bool


def solve_optimal(ds: Dataset) -> Optimum:
    """Least-squares optimum; minimum-norm solution (flagged) when ``X^T X`` is singular."""
    W, _, rank, _ = np.linalg.lstsq(ds.features, ds.labels, rcond=None)
    return Optimum(W, bool(rank < ds.d))


# ------------------------------------------------------------------ schedules


@dataclass(frozen=True)
class LrSchedule:
    kind: str = "constant"  # constant | inverse
    eta0: float | None = None
    tau: int = 1
    beta: float | None = None
    scale: float | None = None  # defaults to 0.99 * beta / tau

    def __post_init__(self) -> None:
        if self.kind not in ("constant", "inverse"):
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "constant" and (self.eta0 is None or self.eta0 < 0):
            raise ConfigError("constant schedule needs eta0 >= 0")
        if self.kind == "inverse" and (self.beta is None or self.beta <= 0):
            raise ConfigError("inverse schedule needs beta > 0")


def make_schedule(spec: LrSchedule, L: float) -> Callable[[int], float]:
    """``k -> eta_k``; rejects schedules with ``eta_k * L >= 1``."""
    if not L > 0:
        raise ConfigError(f"smoothness constant must be positive, got {L}")
    if spec.kind == "constant":
        eta0 = float(spec.eta0)
        if eta0 * L >= 1:
            raise ConfigError(f"constant step violates eta*L < 1 (eta*L = {eta0 * L:.4g})")
        return lambda k: eta0
    s = spec.scale if spec.scale is not None else 0.99 * spec.beta / spec.tau
    if s <= 0:
        raise ConfigError("inverse schedule scale must be positive")
    if spec.tau * s / spec.beta >= 1:
        raise ConfigError(f"inverse schedule violates eta_0*L < 1 (eta_0*L = {spec.tau * s / spec.beta:.4g})")
    tau, beta = spec.tau, spec.beta
    return lambda k: tau * s / ((k + beta) * L)


# ---------------------------------------------------------- gradient oracles


def _masked_gradient(X, Y, W, keep: np.ndarray, scale: float) -> np.ndarray:
    idx = np.flatnonzero(keep)
    if idx.size == 0:
        return np.zeros((X.shape[1], Y.shape[1]))
    Xs, Ys = X[idx], Y[idx]
    return scale * (Xs.T @ (Xs @ W - Ys))


def device_gradient(X, Y, W, b: int, gen: np.random.Generator) -> np.ndarray:
    """Bernoulli(b/l) row sample, rescaled by ``l/b`` so its mean is the local gradient."""
    l = X.shape[0]
    if not 1 <= b <= l:
        raise ConfigError(f"batch must lie in [1, {l}], got {b}")
    keep = gen.random(l) < b / l
    return _masked_gradient(X, Y, W, keep, l / b)


def server_gradient(coded: GlobalCodedDataset, W, b_s: int, gen: np.random.Generator,
                    make_up: bool = True) -> np.ndarray:
    """Coded mini-batch gradient ``(1/b_s) X^T (X W - Y)`` plus ``-sigma^2 W`` when ``make_up``."""
    c = coded.c
    if not 1 <= b_s <= c:
        raise ConfigError(f"server batch must lie in [1, {c}], got {b_s}")
    keep = gen.random(c) < b_s / c
    g = _masked_gradient(coded.features, coded.labels, W, keep, 1.0 / b_s)
    if make_up:
        g = g - coded.sigma2 * W
    return g


@dataclass(frozen=True)
class LocalUpdate:
    grad_sum: np.ndarray
    device: int
    arrived: bool
    batch: int


def _check_finite(a: np.ndarray, who: str, round_index, step) -> None:
    if not np.isfinite(a).all():
        raise DivergenceError(f"non-finite {who} state", round_index, step)


def local_train(X, Y, W, tau: int, eta: float, b: int, gen: np.random.Generator,
                device: int = 0, arrived: bool = True, round_index: int | None = None) -> LocalUpdate:
    """Run ``tau`` local steps from ``W``; return the sum of the gradients used."""
    if tau < 1:
        raise ConfigError("tau must be >= 1")
    W = np.array(W, dtype=np.float64)
    total = np.zeros_like(W)
    for u in range(tau):
        g = device_gradient(X, Y, W, b, gen)
        total += g
        W -= eta * g
        _check_finite(W, f"device {device}", round_index, u)
    return LocalUpdate(total, device, arrived, b)


def server_train(coded: GlobalCodedDataset, W, tau: int, eta: float, b_s: int,
                 gen: np.random.Generator, make_up: bool = True,
                 round_index: int | None = None) -> np.ndarray:
    if tau < 1:
        raise ConfigError("tau must be >= 1")
    W = np.array(W, dtype=np.float64)
    total = np.zeros_like(W)
    for u in range(tau):
        g = server_gradient(coded, W, b_s, gen, make_up)
        total += g
        W -= eta * g
        _check_finite(W, "server", round_index, u)
    return total


def aggregate(updates: Sequence[LocalUpdate], p: Sequence[float], server_update) -> np.ndarray:
    """``0.5 * (sum_i 1_i / p_i * g_i + g_s)`` in ascending device order."""
    if len(updates) != len(p):
        raise ConfigError("need one arrival probability per device")
    acc = np.zeros_like(server_update, dtype=np.float64)
    for upd, pi in zip(updates, p):
        if not 0 < pi <= 1:
            raise ConfigError(f"device {upd.device} has arrival probability {pi}; weight 1/p undefined")
        if upd.arrived:
            acc = acc + upd.grad_sum / pi
    return 0.5 * (acc + server_update)


# ------------------------------------------------------------------- the loop


@dataclass
class TrainConfig:
    train: Dataset
    partition: DevicePartition
    rounds: int
    tau: int
    schedule: LrSchedule
    coded_count: int = 100
    sigma2: Sequence[float] | None = None  # per device; zeros when omitted
    test: Dataset | None = None
    batch: int | None = None  # fixed local batch; None means each device's full l_i
    adaptive: bool = False
    server_batch: int | None = None
    # arrivals: either direct Bernoulli probabilities or a timing model
    arrival_probs: Sequence[float] | None = None
    fleet: Sequence[system.DeviceProfile] | None = None
    channel: system.ChannelModel | None = None
    server_mac_rate: float | None = None
    seed: int = 0
    initial_model: np.ndarray | None = None
    init_std: float = 0.0
    lipschitz: float | None = None
    workers: int = 1

    def validate(self) -> None:
        n = self.partition.device_count
        if self.partition.m != self.train.m:
            raise ConfigError(f"partition covers {self.partition.m} rows, training set has {self.train.m}")
        if self.rounds < 0:
            raise ConfigError("rounds must be >= 0")
        if self.tau < 1:
            raise ConfigError("tau must be >= 1")
        if self.coded_count < 1:
            raise ConfigError("coded_count must be >= 1")
        if self.sigma2 is not None:
            if len(self.sigma2) != n:
                raise ConfigError(f"sigma2 has {len(self.sigma2)} entries for {n} devices")
            if any(s < 0 for s in self.sigma2):
                raise ConfigError("sigma2 entries must be non-negative")
        if self.batch is not None and not 1 <= self.batch <= min(self.partition.sizes):
            raise ConfigError(f"batch must lie in [1, {min(self.partition.sizes)}] (smallest device)")
        if self.server_batch is not None and not 1 <= self.server_batch <= self.coded_count:
            raise ConfigError(f"server_batch must lie in [1, {self.coded_count}]")
        if self.arrival_probs is not None:
            if len(self.arrival_probs) != n:
                raise ConfigError(f"arrival_probs has {len(self.arrival_probs)} entries for {n} devices")
            if any(not 0 <= p <= 1 for p in self.arrival_probs):
                raise ConfigError("arrival probabilities must lie in [0, 1]")
            if self.adaptive:
                raise ConfigError("adaptive batching needs a timing model, not direct arrival_probs")
        elif self.fleet is not None or self.channel is not None:
            if self.fleet is None or self.channel is None:
                raise ConfigError("timing model needs both fleet and channel")
            if len(self.fleet) != n:
                raise ConfigError(f"fleet has {len(self.fleet)} devices, partition has {n}")
            for i, (prof, size) in enumerate(zip(self.fleet, self.partition.sizes)):
                if prof.samples != size:
                    raise ConfigError(f"device {i} profile says l={prof.samples}, partition gives {size}")
        elif self.adaptive:
            raise ConfigError("adaptive batching needs a timing model")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


@dataclass
class TrainState:
    global_model: np.ndarray
    round: int = 0
    weighted_model_sum: np.ndarray | None = None
    lr_sum: float = 0.0
    metrics: list = field(default_factory=list)
    history: list = field(default_factory=list)  # W_0 .. W_K
    etas: list = field(default_factory=list)  # eta_0 .. eta_{K-1}
    arrival_probs: tuple = ()
    server_batch: int | None = None

    @property
    def final_model(self) -> np.ndarray:
        """Learning-rate-weighted average of ``W_0 .. W_{K-1}``; the initial model when K = 0."""
        if self.lr_sum == 0.0 or self.weighted_model_sum is None:
            return self.history[0].copy()
        return self.weighted_model_sum / self.lr_sum


METRIC_COLUMNS = ("round", "k_time_s", "train_loss", "test_loss", "test_accuracy", "arrived_count", "mean_batch")

KINDS = ("scfl", "fedavg", "codedfedl", "dpcfl")


def accuracy(ds: Dataset, W) -> float:
    """Argmax accuracy for one-hot labels, 0.5-threshold accuracy for 0/1 labels, else nan."""
    Y = ds.labels
    pred = ds.features @ W
    if Y.shape[1] > 1 and np.all((Y == 0) | (Y == 1)) and np.all(Y.sum(axis=1) == 1):
        return float(np.mean(np.argmax(pred, axis=1) == np.argmax(Y, axis=1)))
    if Y.shape[1] == 1 and np.all((Y == 0) | (Y == 1)):
        return float(np.mean((pred[:, 0] >= 0.5) == (Y[:, 0] == 1)))
    return math.nan


def estimate_lipschitz(X) -> float:
    return float(np.linalg.eigvalsh(np.asarray(X).T @ np.asarray(X))[-1])


def _coded_dataset(cfg: TrainConfig, sigma2: Sequence[float]) -> GlobalCodedDataset:
    shards = []
    for i in range(cfg.partition.device_count):
        Xi, Yi = cfg.partition.local(cfg.train, i)
        seed = rngs.derived_seed(cfg.seed, rngs.CODING, i)
        shards.append(encode_local(Xi, Yi, cfg.coded_count, sigma2[i], seed))
    return build_global(shards)


def _initial_model(cfg: TrainConfig) -> np.ndarray:
    d, o = cfg.train.d, cfg.train.o
    if cfg.initial_model is not None:
        W0 = np.array(cfg.initial_model, dtype=np.float64)
        if W0.shape != (d, o):
            raise ConfigError(f"initial model must be {d}x{o}, got {W0.shape}")
        return W0
    if cfg.init_std > 0:
        return cfg.init_std * rngs.stream(cfg.seed, rngs.INIT).standard_normal((d, o))
    return np.zeros((d, o))


def _fixed_batches(cfg: TrainConfig) -> list[int]:
    sizes = cfg.partition.sizes
    return [cfg.batch if cfg.batch is not None else s for s in sizes]


def arrival_weights(cfg: TrainConfig, tau: int) -> tuple[float, ...]:
    """The ``p_i`` used for inverse-probability weighting."""
    if cfg.arrival_probs is not None:
        return tuple(float(p) for p in cfg.arrival_probs)
    if cfg.fleet is None:
        return tuple(1.0 for _ in range(cfg.partition.device_count))
    batches = [1] * len(cfg.fleet) if cfg.adaptive else _fixed_batches(cfg)
    return tuple(system.arrival_probability(prof, cfg.channel, tau, b) for prof, b in zip(cfg.fleet, batches))


def _resolve_server_batch(cfg: TrainConfig, tau: int) -> int:
    if cfg.server_batch is not None:
        return cfg.server_batch
    if cfg.server_mac_rate is not None and cfg.channel is not None:
        return system.server_batch(cfg.server_mac_rate, cfg.channel, tau, cfg.coded_count)
    return cfg.coded_count


def _round_arrivals(cfg: TrainConfig, k: int, tau: int, batches: list[int]) -> tuple[list[bool], list[int]]:
    n = cfg.partition.device_count
    arrived, used = [], []
    for i in range(n):
        gen = rngs.stream(cfg.seed, rngs.ARRIVAL, i, k)
        if cfg.arrival_probs is not None:
            arrived.append(bool(gen.random() < cfg.arrival_probs[i]))
            used.append(batches[i])
        elif cfg.fleet is None:
            arrived.append(True)
            used.append(batches[i])
        elif cfg.adaptive:
            gain = system.draw_gain(cfg.channel, gen)
            b = system.adapt_batch(cfg.fleet[i], cfg.channel, tau, gain)
            arrived.append(b >= 1)
            used.append(b)
        else:
            t = system.draw_round(cfg.fleet[i], cfg.channel, tau, batches[i], gen)
            arrived.append(t.arrived)
            used.append(batches[i])
    return arrived, used


def run(cfg: TrainConfig, kind: str = "scfl", record_history: bool = True) -> TrainState:
    """Train for ``cfg.rounds`` rounds with the chosen framework.

    ``scfl``: coded server compensation with make-up term and 1/p weighting.
    ``fedavg``: no coded data; ``W -= eta * sum of arrived updates``.
    ``codedfedl``: as ``scfl`` with tau = 1, noiseless coding and no make-up term.
    ``dpcfl``: server-only training on the noisy coded data without make-up term.
    """
    if kind not in KINDS:
        raise ConfigError(f"unknown framework {kind!r}; choose from {KINDS}")
    cfg.validate()
    n = cfg.partition.device_count
    tau = 1 if kind == "codedfedl" else cfg.tau
    sigma2 = list(cfg.sigma2) if cfg.sigma2 is not None else [0.0] * n
    if kind == "codedfedl":
        sigma2 = [0.0] * n
    make_up = kind == "scfl"
    uses_devices = kind != "dpcfl"
    uses_server = kind != "fedavg"

    L = cfg.lipschitz if cfg.lipschitz is not None else estimate_lipschitz(cfg.train.features)
    eta_of = make_schedule(cfg.schedule, L)

    p = arrival_weights(cfg, tau)
    if kind in ("scfl", "codedfedl"):
        bad = [i for i, pi in enumerate(p) if not pi > 0]
        if bad:
            raise ConfigError(f"devices {bad} can never arrive (p_i = 0); exclude them from the fleet")
    coded = _coded_dataset(cfg, sigma2) if uses_server else None
    b_s = _resolve_server_batch(cfg, tau) if uses_server else None
    batches = _fixed_batches(cfg)
    locals_ = [cfg.partition.local(cfg.train, i) for i in range(n)]

    W = _initial_model(cfg)
    state = TrainState(global_model=W.copy(), weighted_model_sum=np.zeros_like(W),
                       arrival_probs=p, server_batch=b_s)
    state.history.append(W.copy())
    pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        for k in range(cfg.rounds):
            eta = float(eta_of(k))
            arrived, used = _round_arrivals(cfg, k, tau, batches)

            def device_job(i: int) -> LocalUpdate:
                # stragglers' work is discarded, so it is not computed
                if not (uses_devices and arrived[i]):
                    return LocalUpdate(np.zeros_like(W), i, False, used[i])
                X_i, Y_i = locals_[i]
                gen = rngs.stream(cfg.seed, rngs.DEVICE, i, k)
                return local_train(X_i, Y_i, W, tau, eta, used[i], gen, i, True, k)

            def server_job() -> np.ndarray:
                gen = rngs.stream(cfg.seed, rngs.SERVER, k)
                return server_train(coded, W, tau, eta, b_s, gen, make_up, k)

            if pool is not None:
                futures = [pool.submit(device_job, i) for i in range(n)]
                server_future = pool.submit(server_job) if uses_server else None
                updates = [f.result() for f in futures]
                g_s = server_future.result() if server_future is not None else None
            else:
                updates = [device_job(i) for i in range(n)]
                g_s = server_job() if uses_server else None

            if kind in ("scfl", "codedfedl"):
                g = aggregate(updates, p, g_s)
            elif kind == "fedavg":
                g = np.zeros_like(W)
                for upd in updates:
                    if upd.arrived:
                        g = g + upd.grad_sum
            else:
                g = g_s

            state.weighted_model_sum = state.weighted_model_sum + eta * W
            state.lr_sum += eta
            state.etas.append(eta)
            W = W - eta * g
            _check_finite(W, "global model", k, None)
            if record_history:
                state.history.append(W.copy())
            state.global_model = W.copy()
            state.round = k + 1

            n_arrived = sum(1 for u in updates if u.arrived) if uses_devices else 0
            arrived_batches = [u.batch for u in updates if u.arrived]
            state.metrics.append({
                "round": k + 1,
                "k_time_s": (k + 1) * cfg.channel.deadline if cfg.channel is not None else float(k + 1),
                "train_loss": dataset_loss(cfg.train, W),
                "test_loss": dataset_loss(cfg.test, W) if cfg.test is not None else math.nan,
                "test_accuracy": accuracy(cfg.test, W) if cfg.test is not None else math.nan,
                "arrived_count": n_arrived,
                "mean_batch": float(np.mean(arrived_batches)) if arrived_batches else 0.0,
            })
    finally:
        if pool is not None:
            pool.shutdown()
    return state


def run_scfl(cfg: TrainConfig) -> TrainState:
    return run(cfg, "scfl")


def run_baseline(kind: str, cfg: TrainConfig) -> TrainState:
    if kind == "scfl":
        raise ConfigError("use run_scfl for the coded framework")
    return run(cfg, kind)


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return repr(float(v))


def write_metrics_csv(metrics, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for row in metrics:
            w.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])
