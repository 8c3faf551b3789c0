"""Experiment orchestration: config parsing, end-to-end runs, sweeps and baselines.

A run directory holds ``config.json`` (normalized echo), ``metrics.csv``,
``summary.csv``, ``privacy.csv``, ``bounds.csv``, ``final_model.csv`` and
``manifest.json`` (every derived stream seed).
"""

from __future__ import annotations

import copy
import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from scfl import analysis, incentive, privacy, system, training
from scfl import rng as rngs
from scfl.data import Dataset, DevicePartition, LabelSortSpec, generate_synthetic, load_csv, \
    normalize, partition_even, partition_noniid, train_test_split


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "output_dir": "runs/experiment",
    "dataset": {"kind": "synthetic", "m": 200, "m_test": 100, "d": 5, "o": 1, "noise_std": 0.1},
    "partition": {"kind": "noniid", "devices": 4, "shards_per_device": 1},
    "system": None,
    "arrival_probs": None,
    "coding": {"c": 100, "sigma2": 0.25},
    "training": {
        "rounds": 100, "tau": 1, "batch": None, "server_batch": None, "init_std": 0.0, "workers": 1,
        "schedule": {"kind": "inverse", "beta": 100.0, "scale": None, "eta0": None, "eta0_L": None},
    },
    "incentive": None,
    "analysis": {"phi": None, "n_dim": None},
}

SYSTEM_DEFAULTS: dict[str, Any] = {
    "bandwidth_hz": 180e3,
    "noise_power_dbm": -70.0,
    "mean_gain": 1e-8,
    "tx_power_dbm": [15.0, 25.0],
    "mac_rate_kmacs": 1536.0,
    "mac_rate_spread": [0.8, 1.0],
    "server_mac_rate_kmacs": 15360.0,
    "update_size_bits": 1e5,
    "t_download_s": 0.0,
    "round_deadline_s": 10.0,
    "mac_per_sample": None,  # defaults to d * o
    "mode": "fixed",
    "straggler_ratio": None,  # calibrate bandwidth when set
}

INCENTIVE_DEFAULTS: dict[str, Any] = {"lambda": 1.0, "mu": None, "total_reward": None, "sigma_min2": 0.0}

SWEEP_AXES = {
    "tau": ("training", "tau"),
    "straggler_ratio": ("system", "straggler_ratio"),
    "coded_count_c": ("coding", "c"),
    "sigma2": ("coding", "sigma2"),
    "lambda": ("incentive", "lambda"),
    "total_reward": ("incentive", "total_reward"),
}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        if key not in out:
            raise ConfigError(f"{path}{key}: unknown key")
        if isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _merge(out[key], value, f"{path}{key}.")
        else:
            out[key] = value
    return out


def normalize_config(raw: dict) -> dict:
    """Fill defaults and reject unknown keys; the result is what ``config.json`` echoes."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    cfg = _merge(DEFAULTS, {k: v for k, v in raw.items() if k not in ("system", "incentive")})
    if raw.get("system") is not None:
        cfg["system"] = _merge(SYSTEM_DEFAULTS, raw["system"], "system.")
    if raw.get("incentive") is not None:
        cfg["incentive"] = _merge(INCENTIVE_DEFAULTS, raw["incentive"], "incentive.")
    return cfg


def load_config(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    return normalize_config(raw)


def _require(cond: bool, where: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{where}: {msg}")


@dataclass
class ExperimentConfig:
    raw: dict
    train: Dataset
    test: Dataset | None
    partition: DevicePartition
    train_config: training.TrainConfig
    sigma2: tuple[float, ...]
    contract: incentive.ContractDesign | None = None
    notes: dict = field(default_factory=dict)

    @property
    def output_dir(self) -> Path:
        return Path(self.raw["output_dir"])


def _build_data(cfg: dict) -> tuple[Dataset, Dataset | None]:
    ds = cfg["dataset"]
    seed = cfg["seed"]
    kind = ds.get("kind")
    if kind == "synthetic":
        for key in ("m", "d", "o"):
            _require(isinstance(ds.get(key), int) and ds[key] >= 1, f"dataset.{key}", "must be an integer >= 1")
        m_test = ds.get("m_test") or 0
        _require(isinstance(m_test, int) and m_test >= 0, "dataset.m_test", "must be an integer >= 0")
        _require(ds.get("noise_std", 0) >= 0, "dataset.noise_std", "must be >= 0")
        full = generate_synthetic(seed, ds["m"] + m_test, ds["d"], ds["o"], float(ds.get("noise_std", 0.0)))
        if m_test:
            return train_test_split(full, ds["m"])
        return full, None
    if kind == "csv":
        _require(bool(ds.get("path")), "dataset.path", "required for csv datasets")
        train = normalize(load_csv(ds["path"], ds["d"], ds["o"]))
        test = load_csv(ds["test_path"], ds["d"], ds["o"]) if ds.get("test_path") else None
        return train, test
    raise ConfigError(f"dataset.kind: expected 'synthetic' or 'csv', got {kind!r}")


def _per_device(value, n: int, where: str) -> list[float]:
    if isinstance(value, (int, float)):
        return [float(value)] * n
    _require(isinstance(value, (list, tuple)) and len(value) == n, where, f"needs a scalar or {n} values")
    return [float(v) for v in value]


def _build_fleet(sc: dict, sizes, seed: int) -> tuple[system.DeviceProfile, ...]:
    """MAC rate ``u * base`` with ``u`` uniform in ``mac_rate_spread``; power fixed or uniform in a dBm range."""
    gen = rngs.stream(seed, rngs.CHANNEL)
    lo, hi = sc["mac_rate_spread"]
    power = sc["tx_power_dbm"]
    fleet = []
    for l in sizes:
        u = gen.uniform(lo, hi)
        p_dbm = gen.uniform(*power) if isinstance(power, (list, tuple)) else float(power)
        fleet.append(system.DeviceProfile(u * sc["mac_rate_kmacs"] * 1e3, system.dbm_to_watts(p_dbm), l))
    return tuple(fleet)


def build_experiment(cfg: dict) -> ExperimentConfig:
    """Validate a normalized config and assemble every runtime object."""
    seed = cfg["seed"]
    _require(isinstance(seed, int) and seed >= 0, "seed", "must be a non-negative integer")
    train, test = _build_data(cfg)

    pc = cfg["partition"]
    n = pc.get("devices")
    _require(isinstance(n, int) and 1 <= n <= train.m, "partition.devices", f"must be an integer in [1, {train.m}]")
    if pc.get("kind") == "noniid":
        train, part = partition_noniid(train, n, LabelSortSpec(int(pc.get("shards_per_device", 1))), seed)
    elif pc.get("kind") == "even":
        part = partition_even(train.m, n)
    else:
        raise ConfigError(f"partition.kind: expected 'noniid' or 'even', got {pc.get('kind')!r}")

    cc = cfg["coding"]
    c = cc.get("c")
    _require(isinstance(c, int) and c >= 1, "coding.c", "must be an integer >= 1")

    tc = cfg["training"]
    for key in ("rounds", "tau"):
        _require(isinstance(tc.get(key), int) and tc[key] >= (0 if key == "rounds" else 1),
                 f"training.{key}", "must be a non-negative integer" if key == "rounds" else "must be an integer >= 1")
    tau = tc["tau"]

    L = training.estimate_lipschitz(train.features)
    sc_ = tc["schedule"]
    if sc_.get("kind") == "constant":
        eta0 = sc_.get("eta0")
        if eta0 is None and sc_.get("eta0_L") is not None:
            eta0 = sc_["eta0_L"] / L
        _require(eta0 is not None, "training.schedule.eta0", "constant schedule needs eta0 or eta0_L")
        sched = training.LrSchedule("constant", eta0=float(eta0))
    elif sc_.get("kind") == "inverse":
        _require(sc_.get("beta") is not None and sc_["beta"] > 0, "training.schedule.beta", "must be > 0")
        scale = sc_.get("scale")
        if scale is None and sc_.get("eta0_L") is not None:
            scale = sc_["eta0_L"] * sc_["beta"] / tau
        sched = training.LrSchedule("inverse", tau=tau, beta=float(sc_["beta"]),
                                    scale=None if scale is None else float(scale))
    else:
        raise ConfigError(f"training.schedule.kind: expected 'constant' or 'inverse', got {sc_.get('kind')!r}")
    try:
        training.make_schedule(sched, L)
    except training.ConfigError as exc:
        raise ConfigError(f"training.schedule: {exc}") from None

    notes: dict = {"L": L}
    fleet = channel = server_rate = None
    probs = cfg.get("arrival_probs")
    adaptive = False
    batch = tc.get("batch")
    if cfg.get("system") is not None:
        _require(probs is None, "arrival_probs", "give either system or arrival_probs, not both")
        sc = cfg["system"]
        _require(sc["mode"] in ("fixed", "adaptive"), "system.mode", "must be 'fixed' or 'adaptive'")
        adaptive = sc["mode"] == "adaptive"
        fleet = _build_fleet(sc, part.sizes, seed)
        try:
            channel = system.ChannelModel(
                bandwidth=float(sc["bandwidth_hz"]),
                noise_power=float(sc.get("noise_power_w") or system.dbm_to_watts(sc["noise_power_dbm"])),
                mean_gain=float(sc["mean_gain"]),
                update_size=float(sc["update_size_bits"]),
                t_download=float(sc["t_download_s"]),
                deadline=float(sc["round_deadline_s"]),
                mac_per_sample=float(sc["mac_per_sample"] or train.d * train.o),
            )
        except system.TimingError as exc:
            raise ConfigError(f"system: {exc}") from None
        server_rate = float(sc["server_mac_rate_kmacs"]) * 1e3
        if sc.get("straggler_ratio") is not None:
            b_cal = 1 if adaptive else (batch or min(part.sizes))
            try:
                channel = system.straggler_calibrate(float(sc["straggler_ratio"]), fleet, channel, tau, b_cal)
            except system.TimingError as exc:
                raise ConfigError(f"system.straggler_ratio: {exc}") from None
            notes["calibrated_bandwidth_hz"] = channel.bandwidth
    elif probs is not None:
        probs = _per_device(probs, n, "arrival_probs")

    contract = None
    if cfg.get("incentive") is not None:
        ic = cfg["incentive"]
        mus = _per_device(ic["mu"], n, "incentive.mu") if ic.get("mu") is not None else \
            [1.0 + 0.02 * (i + 1) for i in range(n)]
        h2s = [privacy.h_value(part.local(train, i)[0])[1] for i in range(n)]
        econ = [incentive.DeviceEcon(mu, h2, c) for mu, h2 in zip(mus, h2s)]
        sorted_econ, order = incentive.sort_econ(econ)
        try:
            if ic.get("total_reward") is not None:
                contract = incentive.contract_at_reward(sorted_econ, float(ic["total_reward"]),
                                                        sigma_min2=float(ic["sigma_min2"]))
            else:
                _require(ic["lambda"] > 0, "incentive.lambda", "must be > 0")
                contract = incentive.design_contract(sorted_econ, float(ic["lambda"]),
                                                     sigma_min2=float(ic["sigma_min2"]))
        except incentive.ContractError as exc:
            raise ConfigError(f"incentive: {exc}") from None
        sigma2 = [0.0] * n
        for pos, dev in enumerate(order):
            sigma2[dev] = contract.sigma2[pos]
        notes["contract_order"] = order
    else:
        sigma2 = _per_device(cc.get("sigma2", 0.0), n, "coding.sigma2")
        _require(all(s >= 0 for s in sigma2), "coding.sigma2", "must be non-negative")

    tcfg = training.TrainConfig(
        train=train, partition=part, rounds=tc["rounds"], tau=tau, schedule=sched, coded_count=c,
        sigma2=tuple(sigma2), test=test, batch=batch, adaptive=adaptive,
        server_batch=tc.get("server_batch"), arrival_probs=probs, fleet=fleet, channel=channel,
        server_mac_rate=server_rate, seed=seed, init_std=float(tc.get("init_std") or 0.0),
        lipschitz=L, workers=int(tc.get("workers") or 1),
    )
    try:
        tcfg.validate()
        p = training.arrival_weights(tcfg, tau)
    except (training.ConfigError, system.TimingError) as exc:
        raise ConfigError(f"training: {exc}") from None
    zero = [i for i, pi in enumerate(p) if not pi > 0]
    _require(not zero, "system", f"devices {zero} can never meet the deadline (p_i = 0)")
    return ExperimentConfig(cfg, train, test, part, tcfg, tuple(sigma2), contract, notes)


# ------------------------------------------------------------------- outputs


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(path: Path, columns: Sequence[str], rows: Sequence[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(col, "")) for col in columns])


def read_rows(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


SUMMARY_COLUMNS = ("kind", "seed", "rounds", "final_train_loss", "final_test_loss", "final_test_accuracy",
                   "avg_model_train_loss", "avg_model_test_loss", "optimal_loss", "gap", "max_epsilon_bits",
                   "rho", "theorem1_bound", "server_batch")


@dataclass
class RunResult:
    directory: Path
    state: training.TrainState
    summary: dict


def _manifest(exp: ExperimentConfig, kind: str) -> dict:
    seed = exp.raw["seed"]
    n = exp.partition.device_count
    rounds = exp.train_config.rounds
    streams = {
        "data": rngs.derived_seed(seed, rngs.DATA),
        "partition": rngs.derived_seed(seed, rngs.PARTITION),
        "channel_fleet": rngs.derived_seed(seed, rngs.CHANNEL),
        "init": rngs.derived_seed(seed, rngs.INIT),
        "coding": [rngs.derived_seed(seed, rngs.CODING, i) for i in range(n)],
        "device": [[rngs.derived_seed(seed, rngs.DEVICE, i, k) for k in range(rounds)] for i in range(n)],
        "arrival": [[rngs.derived_seed(seed, rngs.ARRIVAL, i, k) for k in range(rounds)] for i in range(n)],
        "server": [rngs.derived_seed(seed, rngs.SERVER, k) for k in range(rounds)],
    }
    return {"master_seed": seed, "kind": kind, "streams": streams,
            "notes": {k: v for k, v in exp.notes.items()}}


def run_experiment(exp: ExperimentConfig | dict, kind: str = "scfl", out_dir: str | Path | None = None) -> RunResult:
    if isinstance(exp, dict):
        exp = build_experiment(normalize_config(exp))
    out = Path(out_dir) if out_dir is not None else exp.output_dir
    out.mkdir(parents=True, exist_ok=True)
    tcfg = exp.train_config
    state = training.run(tcfg, kind)

    W_star = training.solve_optimal(exp.train).model
    f_star = training.dataset_loss(exp.train, W_star)
    W_avg = state.final_model
    f_avg = training.dataset_loss(exp.train, W_avg)
    last = state.metrics[-1] if state.metrics else None

    n = exp.partition.device_count
    c = tcfg.coded_count
    priv_rows = []
    for i in range(n):
        _, h2 = privacy.h_value(exp.partition.local(exp.train, i)[0])
        s2 = exp.sigma2[i] if kind in ("scfl", "dpcfl") else 0.0
        priv_rows.append({"device": i, "h2": h2, "sigma2": s2,
                          "epsilon_bits": privacy.epsilon(h2, c, s2) if kind != "fedavg" else 0.0})
    max_eps = max(r["epsilon_bits"] for r in priv_rows)

    radius = max([float(np.linalg.norm(W)) for W in state.history] + [float(np.linalg.norm(W_star)), 1e-12])
    phi = exp.raw["analysis"].get("phi") or radius
    consts = analysis.estimate_constants(exp.train, exp.partition, phi)
    tau = 1 if kind == "codedfedl" else tcfg.tau
    batches = [1] * n if tcfg.adaptive else training._fixed_batches(tcfg)
    p = training.arrival_weights(tcfg, tau)
    bound_rows = []
    rho = bound = math.nan
    if all(pi > 0 for pi in p):
        vb = analysis.VarianceBound(
            analysis.rho1(consts, p, batches, tau),
            analysis.rho2(consts, exp.sigma2, c, tau, n_dim=exp.raw["analysis"].get("n_dim")),
        )
        rho = vb.rho
        gap = f_avg - f_star
        bound_rows += [
            {"quantity": "rho1", "value": vb.rho1, "empirical": math.nan, "ratio": math.nan},
            {"quantity": "rho2", "value": vb.rho2, "empirical": math.nan, "ratio": math.nan},
            {"quantity": "rho", "value": vb.rho, "empirical": math.nan, "ratio": math.nan},
        ]
        if tcfg.rounds >= 1:
            sched = training.make_schedule(tcfg.schedule, consts.L)
            bound = analysis.theorem1_bound(consts, vb, sched, tcfg.rounds, state.history[0], W_star)
            bound_rows.append({"quantity": "theorem1_bound", "value": bound, "empirical": gap,
                               "ratio": gap / bound if bound != 0 else math.nan})
    bound_rows += [
        {"quantity": "L", "value": consts.L, "empirical": math.nan, "ratio": math.nan},
        {"quantity": "alpha", "value": consts.alpha, "empirical": math.nan, "ratio": math.nan},
        {"quantity": "phi", "value": phi, "empirical": radius, "ratio": radius / phi},
    ]

    summary = {
        "kind": kind, "seed": exp.raw["seed"], "rounds": tcfg.rounds,
        "final_train_loss": last["train_loss"] if last else training.dataset_loss(exp.train, state.global_model),
        "final_test_loss": last["test_loss"] if last else math.nan,
        "final_test_accuracy": last["test_accuracy"] if last else math.nan,
        "avg_model_train_loss": f_avg,
        "avg_model_test_loss": training.dataset_loss(exp.test, W_avg) if exp.test is not None else math.nan,
        "optimal_loss": f_star, "gap": f_avg - f_star,
        "max_epsilon_bits": max_eps, "rho": rho, "theorem1_bound": bound,
        "server_batch": state.server_batch if state.server_batch is not None else 0,
    }

    (out / "config.json").write_text(json.dumps(exp.raw, indent=2, sort_keys=True, default=str) + "\n",
                                     encoding="utf-8")
    training.write_metrics_csv(state.metrics, out / "metrics.csv")
    write_rows(out / "summary.csv", SUMMARY_COLUMNS, [summary])
    write_rows(out / "privacy.csv", ("device", "h2", "sigma2", "epsilon_bits"), priv_rows)
    write_rows(out / "bounds.csv", ("quantity", "value", "empirical", "ratio"), bound_rows)
    d, o = W_avg.shape
    write_rows(out / "final_model.csv", [f"y{j}" for j in range(o)],
               [{f"y{j}": W_avg[r, j] for j in range(o)} for r in range(d)])
    if exp.contract is not None:
        con = exp.contract.contract
        order = exp.notes["contract_order"]
        write_rows(out / "contract.csv", ("device", "epsilon_bits", "sigma2", "reward", "device_utility"), [
            {"device": order[pos], "epsilon_bits": con.epsilons[pos], "sigma2": exp.contract.sigma2[pos],
             "reward": con.rewards[pos],
             "device_utility": incentive.device_utility(con.epsilons[pos], con.rewards[pos], con.mus[pos])}
            for pos in range(con.size)])
    (out / "manifest.json").write_text(json.dumps(_manifest(exp, kind), indent=1, sort_keys=True) + "\n",
                                       encoding="utf-8")
    return RunResult(out, state, summary)


def load_final_model(path: str | Path) -> np.ndarray:
    rows = read_rows(path)
    return np.array([[float(v) for v in row.values()] for row in rows])


# ------------------------------------------------------------------- sweeps


@dataclass(frozen=True)
class SweepSpec:
    axis: str
    values: tuple
    repetitions: int = 1

    def __post_init__(self) -> None:
        if self.axis not in SWEEP_AXES:
            raise ConfigError(f"sweep axis must be one of {sorted(SWEEP_AXES)}, got {self.axis!r}")
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        if self.repetitions < 1:
            raise ConfigError("sweep repetitions must be >= 1")


def apply_axis(cfg: dict, axis: str, value) -> dict:
    out = copy.deepcopy(cfg)
    section, key = SWEEP_AXES[axis]
    if out.get(section) is None:
        if section == "system":
            out["system"] = copy.deepcopy(SYSTEM_DEFAULTS)
        elif section == "incentive":
            out["incentive"] = copy.deepcopy(INCENTIVE_DEFAULTS)
    out[section][key] = value
    if axis == "lambda":
        out["incentive"]["total_reward"] = None
    return out


AGG_METRICS = ("final_train_loss", "final_test_loss", "avg_model_train_loss", "avg_model_test_loss", "gap", "max_epsilon_bits")


def _mean_sd(xs: list[float]) -> tuple[float, float]:
    arr = np.array(xs, dtype=float)
    if arr.size == 0:
        return math.nan, math.nan
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


def run_sweep(cfg: dict, sweep: SweepSpec, out_dir: str | Path | None = None, kind: str = "scfl",
              workers: int = 1) -> list[dict]:
    """Run every (value, repetition) point; aggregate mean and sd per value.

    Writes ``sweep.csv`` (aggregate), ``sweep_details.csv`` (per seed) and
    ``failures.json`` (points that raised, with messages).
    """
    out = Path(out_dir) if out_dir is not None else Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    base_seed = cfg["seed"]
    jobs = [(v, r) for v in sweep.values for r in range(sweep.repetitions)]

    def job(item):
        value, rep = item
        point = apply_axis(cfg, sweep.axis, value)
        point["seed"] = base_seed + rep
        sub = out / f"{sweep.axis}={value}" / f"seed={base_seed + rep}"
        try:
            res = run_experiment(build_experiment(point), kind, sub)
            return value, rep, res.summary, None
        except (ConfigError, training.ConfigError, training.DivergenceError, system.TimingError,
                incentive.ContractError) as exc:
            return value, rep, None, f"{type(exc).__name__}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, jobs))
    else:
        results = [job(j) for j in jobs]

    details, failures, agg = [], [], []
    for value, rep, summary, err in results:
        if err is not None:
            failures.append({"value": value, "seed": base_seed + rep, "error": err})
        else:
            details.append({"axis": sweep.axis, "value": value, **summary})
    for value in sweep.values:
        rows = [d for d in details if d["value"] == value]
        row = {"axis": sweep.axis, "value": value, "runs": len(rows),
               "failures": sum(1 for f in failures if f["value"] == value)}
        for metric in AGG_METRICS:
            row[f"{metric}_mean"], row[f"{metric}_sd"] = _mean_sd([d[metric] for d in rows])
        agg.append(row)

    agg_cols = ["axis", "value", "runs", "failures"] + [f"{m}_{s}" for m in AGG_METRICS for s in ("mean", "sd")]
    write_rows(out / "sweep.csv", agg_cols, agg)
    write_rows(out / "sweep_details.csv", ["axis", "value", *SUMMARY_COLUMNS], details)
    (out / "failures.json").write_text(json.dumps(failures, indent=2) + "\n", encoding="utf-8")
    return agg


def compare_baselines(cfg: dict, kinds: Sequence[str], out_dir: str | Path | None = None) -> list[dict]:
    """Run each framework on identical seeds; write per-framework metrics and ``comparison.csv``."""
    out = Path(out_dir) if out_dir is not None else Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for kind in kinds:
        if kind not in training.KINDS:
            raise ConfigError(f"kinds: unknown framework {kind!r}")
        res = run_experiment(build_experiment(cfg), kind, out / kind)
        rows.append(res.summary)
    write_rows(out / "comparison.csv", SUMMARY_COLUMNS, rows)
    return rows
