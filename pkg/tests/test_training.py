import numpy as np
import pytest

from scfl import data, rng as rngs, system, training
from scfl.coding import build_global, encode_local
from scfl.data import Dataset
from scfl.training import LocalUpdate, LrSchedule, TrainConfig


def toy():
    return Dataset(np.array([[1.0], [2.0]]), np.array([[1.0], [2.0]]))


def test_loss_examples():
    assert training.loss(np.ones((3, 2)), np.zeros((3, 1)), np.zeros((2, 1))) == 0.0
    ds = toy()
    assert training.dataset_loss(ds, np.array([[1.0]])) == 0.0


def test_loss_matches_double_loop():
    gen = np.random.default_rng(0)
    X, Y, W = gen.normal(size=(7, 3)), gen.normal(size=(7, 2)), gen.normal(size=(3, 2))
    naive = 0.0
    for i in range(7):
        for j in range(2):
            r = sum(X[i, k] * W[k, j] for k in range(3)) - Y[i, j]
            naive += 0.5 * r * r
    assert training.loss(X, Y, W) == pytest.approx(naive, rel=1e-12)


def test_solve_optimal():
    assert training.solve_optimal(toy()).model[0, 0] == pytest.approx(1.0)
    gen = np.random.default_rng(1)
    x = gen.normal(size=(9, 1))
    y = gen.normal(size=(9, 1))
    W = training.solve_optimal(Dataset(x, y)).model
    assert W[0, 0] == pytest.approx(float(x[:, 0] @ y[:, 0] / (x[:, 0] @ x[:, 0])))
    ds = data.generate_synthetic(2, 40, 5, 1, noise_std=0.3)
    opt = training.solve_optimal(ds)
    assert not opt.rank_deficient
    assert np.linalg.norm(training.gradient(ds.features, ds.labels, opt.model)) < 1e-8


def test_solve_optimal_flags_rank_deficiency():
    X = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
    assert training.solve_optimal(Dataset(X, np.ones((3, 1)))).rank_deficient


def test_device_gradient_full_batch_and_toy():
    gen = np.random.default_rng(0)
    X, Y = np.array([[1.0]]), np.array([[1.0]])
    g1 = training.device_gradient(X, Y, np.zeros((1, 1)), 1, gen)
    g2 = training.device_gradient(np.array([[2.0]]), np.array([[2.0]]), np.zeros((1, 1)), 1, gen)
    assert g1[0, 0] == -1.0 and g2[0, 0] == -4.0
    assert g1[0, 0] + g2[0, 0] == training.gradient(toy().features, toy().labels, np.zeros((1, 1)))[0, 0]


def test_device_gradient_unbiased():
    gen = np.random.default_rng(5)
    X, Y = gen.normal(size=(8, 2)), gen.normal(size=(8, 1))
    W = gen.normal(size=(2, 1))
    draws = np.array([training.device_gradient(X, Y, W, 3, gen) for _ in range(10_000)])
    se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - training.gradient(X, Y, W)) < 4 * se)


def test_local_train_cases():
    gen = np.random.default_rng(0)
    X, Y = np.random.default_rng(1).normal(size=(6, 2)), np.random.default_rng(2).normal(size=(6, 1))
    W = np.zeros((2, 1))
    one = training.local_train(X, Y, W, 1, 0.1, 3, np.random.default_rng(9))
    assert np.array_equal(one.grad_sum, training.device_gradient(X, Y, W, 3, np.random.default_rng(9)))
    frozen = training.local_train(X, Y, W, 4, 0.0, 6, gen)
    assert np.allclose(frozen.grad_sum, 4 * training.gradient(X, Y, W))
    W_loc = np.linalg.lstsq(X, Y, rcond=None)[0]
    Y_fit = X @ W_loc
    stat = training.local_train(X, Y_fit, W_loc, 3, 0.05, 6, gen)
    assert np.allclose(stat.grad_sum, 0.0, atol=1e-12)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_local_train_divergence_reports_location():
    X = np.full((2, 1), 1e200)
    with pytest.raises(training.DivergenceError, match="round 7"):
        training.local_train(X, np.ones((2, 1)), np.ones((1, 1)), 3, 1e10, 2, np.random.default_rng(0),
                             round_index=7)


def _coded(X, Y, c, sigma2, seed=0):
    return build_global([encode_local(X, Y, c, sigma2, seed)])


def test_server_gradient_cases():
    gen = np.random.default_rng(0)
    X, Y = gen.normal(size=(5, 2)), gen.normal(size=(5, 1))
    coded = _coded(X, Y, 30, 0.0)
    W = gen.normal(size=(2, 1))
    g = training.server_gradient(coded, W, 30, gen)
    Xt, Yt = coded.features, coded.labels
    assert np.allclose(g, Xt.T @ (Xt @ W - Yt) / 30)
    noisy = _coded(X, Y, 30, 2.0)
    g0 = training.server_gradient(noisy, np.zeros((2, 1)), 30, gen)
    assert np.allclose(g0, -noisy.features.T @ noisy.labels / 30)


def test_server_gradient_unbiased_over_coding():
    gen = np.random.default_rng(3)
    X, Y = gen.uniform(-1, 1, size=(10, 3)), gen.normal(size=(10, 1))
    W = gen.normal(size=(3, 1))
    draws = []
    for s in range(10_000):
        coded = _coded(X, Y, 200, 0.3, seed=s)
        draws.append(training.server_gradient(coded, W, 100, np.random.default_rng(s + 10**6)))
    draws = np.array(draws)
    se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - training.gradient(X, Y, W)) < 4 * se)


def test_server_train_cases():
    gen = np.random.default_rng(0)
    X, Y = gen.normal(size=(4, 2)), gen.normal(size=(4, 1))
    coded = _coded(X, Y, 20, 0.5)
    W = gen.normal(size=(2, 1))
    one = training.server_train(coded, W, 1, 0.1, 10, np.random.default_rng(4))
    assert np.array_equal(one, training.server_gradient(coded, W, 10, np.random.default_rng(4)))
    # zero data: only the make-up term survives
    zero = _coded(np.zeros((4, 2)), np.zeros((4, 1)), 20, 3.0)
    zero = type(zero)(np.zeros_like(zero.features), zero.labels, zero.sigma2)
    W = np.array([[5.0], [-2.0]])
    assert np.allclose(training.server_train(zero, W, 4, 0.0, 20, gen), -3.0 * W * 4)


def test_aggregate_cases():
    g = [np.array([[1.0]]), np.array([[2.0]])]
    ups = [LocalUpdate(g[0], 0, True, 1), LocalUpdate(g[1], 1, True, 1)]
    assert training.aggregate(ups, [1, 1], g[0] + g[1])[0, 0] == 3.0
    none = [LocalUpdate(x, i, False, 1) for i, x in enumerate(g)]
    assert training.aggregate(none, [0.5, 0.5], np.array([[4.0]]))[0, 0] == 2.0
    with pytest.raises(training.ConfigError):
        training.aggregate(ups, [0.0, 1.0], g[0])


def test_inverse_probability_weighting_unbiased():
    gen = np.random.default_rng(0)
    g = [np.array([[1.5, -2.0]]), np.array([[0.3, 4.0]])]
    p = (0.5, 0.8)
    draws = []
    for _ in range(10_000):
        arr = gen.random(2) < p
        draws.append(sum(gi / pi for gi, pi, a in zip(g, p, arr) if a) if arr.any() else np.zeros((1, 2)))
    draws = np.array(draws)
    se = draws.std(axis=0, ddof=1) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - (g[0] + g[1])) < 4 * se)


def test_schedules():
    L = 4.0
    assert training.make_schedule(LrSchedule("constant", eta0=0.5 / L), L)(3) == 0.5 / L
    with pytest.raises(training.ConfigError):
        training.make_schedule(LrSchedule("constant", eta0=1.0 / L), L)
    inv = training.make_schedule(LrSchedule("inverse", tau=1, beta=1.0, scale=0.99), L)
    assert inv(0) * L == pytest.approx(0.99)
    with pytest.raises(training.ConfigError):
        training.make_schedule(LrSchedule("inverse", tau=2, beta=1.0, scale=0.6), L)
    etas = np.array([inv(k) for k in range(10_000)])
    assert np.all(np.diff(etas) < 0)
    partial = np.cumsum(etas)
    # partial sums grow like log K while the squares converge
    assert partial[9_999] - partial[999] == pytest.approx(0.99 / L * np.log(10_001 / 1_001), rel=1e-3)
    assert np.sum(etas**2) < 0.99**2 / L**2 * (np.pi**2 / 6)


def base_cfg(**kw):
    ds = data.generate_synthetic(0, 40, 5, 1)
    part = data.partition_even(40, 4)
    args = dict(train=ds, partition=part, rounds=20, tau=1,
                schedule=LrSchedule("inverse", tau=1, beta=50.0), coded_count=50, sigma2=(0.1,) * 4,
                arrival_probs=(0.5, 0.6, 0.7, 0.8), seed=3)
    args.update(kw)
    return TrainConfig(**args)


def test_zero_rounds_returns_initial_model():
    st = training.run(base_cfg(rounds=0, init_std=1.0))
    assert st.metrics == []
    assert np.array_equal(st.final_model, st.history[0])


def test_full_participation_gd_is_monotone():
    ds = data.generate_synthetic(0, 40, 5, 1)
    L = training.estimate_lipschitz(ds.features)
    cfg = base_cfg(rounds=60, arrival_probs=(1.0,) * 4, sigma2=(0.0,) * 4, coded_count=50, server_batch=50,
                   schedule=LrSchedule("constant", eta0=0.5 / L))
    # with full batches and full participation the devices compute the exact gradient;
    # fedavg with every device present is then plain gradient descent
    st = training.run(cfg, "fedavg")
    losses = [m["train_loss"] for m in st.metrics]
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
    W = st.history[0].copy()
    eta = 0.5 / L
    for _ in range(60):
        W = W - eta * training.gradient(ds.features, ds.labels, W)
    assert np.allclose(W, st.global_model, atol=1e-10)


def test_scfl_converges():
    cfg = base_cfg(rounds=500, coded_count=200, sigma2=(0.25,) * 4, arrival_probs=(0.3, 0.5, 0.7, 0.9),
                   schedule=LrSchedule("inverse", tau=1, beta=100.0), init_std=1.0)
    st = training.run(cfg)
    W_star = training.solve_optimal(cfg.train).model
    f = lambda W: training.dataset_loss(cfg.train, W)
    assert f(st.final_model) - f(W_star) < 0.05 * (f(st.history[0]) - f(W_star))


def test_final_model_identity():
    st = training.run(base_cfg(rounds=30, init_std=0.5))
    recomputed = sum(e * W for e, W in zip(st.etas, st.history[:-1])) / sum(st.etas)
    assert np.max(np.abs(recomputed - st.final_model)) < 1e-12


def test_determinism_across_workers(tmp_path):
    a = training.run(base_cfg(rounds=15, workers=1))
    b = training.run(base_cfg(rounds=15, workers=4))
    training.write_metrics_csv(a.metrics, tmp_path / "a.csv")
    training.write_metrics_csv(b.metrics, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_baseline_reductions():
    ds = data.generate_synthetic(4, 12, 3, 1)
    part = data.partition_even(12, 1)
    L = training.estimate_lipschitz(ds.features)
    cfg = TrainConfig(ds, part, rounds=5, tau=1, schedule=LrSchedule("constant", eta0=0.3 / L),
                      coded_count=30, server_batch=30, sigma2=(0.0,), seed=2)
    st = training.run(cfg, "fedavg")
    W = np.zeros((3, 1))
    for _ in range(5):
        W = W - 0.3 / L * training.gradient(ds.features, ds.labels, W)
    assert np.allclose(st.global_model, W)

    st = training.run(cfg, "dpcfl")
    coded = build_global([encode_local(ds.features, ds.labels, 30, 0.0, rngs.derived_seed(2, rngs.CODING, 0))])
    W = np.zeros((3, 1))
    for _ in range(5):
        W = W - 0.3 / L * training.gradient(coded.features, coded.labels, W) / 30
    assert np.allclose(st.global_model, W)


def test_codedfedl_uses_single_step_and_no_noise():
    st = training.run(base_cfg(rounds=3, tau=3, schedule=LrSchedule("inverse", tau=3, beta=50.0)), "codedfedl")
    assert len(st.metrics) == 3


def test_config_validation():
    with pytest.raises(training.ConfigError):
        training.run(base_cfg(arrival_probs=(0.0, 0.5, 0.5, 0.5)))
    with pytest.raises(training.ConfigError):
        training.run(base_cfg(batch=100))
    with pytest.raises(training.ConfigError):
        training.run(base_cfg(sigma2=(0.1,)))
    with pytest.raises(training.ConfigError):
        training.run(base_cfg(), "sgd")


def test_timing_driven_runs():
    ds = data.generate_synthetic(0, 40, 5, 1)
    part = data.partition_even(40, 4)
    fleet = system.default_fleet(4, list(part.sizes), np.random.default_rng(0))
    ch = system.ChannelModel(180e3, 1e-10, 1e-8, 3e5, 0.0, 1.0, 5.0)
    for adaptive in (False, True):
        cfg = base_cfg(arrival_probs=None, fleet=fleet, channel=ch, adaptive=adaptive, server_mac_rate=1e3,
                       batch=None if adaptive else 5, rounds=10)
        st = training.run(cfg)
        assert all(0 < p <= 1 for p in st.arrival_probs)
        assert st.metrics[-1]["k_time_s"] == 10.0
        assert st.server_batch == system.server_batch(1e3, ch, 1, 50)


def test_accuracy_modes():
    X = np.array([[1.0], [0.0]])
    assert training.accuracy(Dataset(X, np.array([[1.0], [0.0]])), np.array([[1.0]])) == 1.0
    onehot = Dataset(np.eye(2), np.eye(2))
    assert training.accuracy(onehot, np.eye(2)) == 1.0
    assert np.isnan(training.accuracy(Dataset(X, np.array([[0.3], [2.0]])), np.array([[1.0]])))
