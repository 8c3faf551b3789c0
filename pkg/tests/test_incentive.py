import math

import numpy as np
import pytest

from scfl import incentive
from scfl.incentive import Contract, DeviceEcon


def rand_econ(gen, n):
    c = int(gen.integers(5, 51))
    mus = np.sort(gen.uniform(0.5, 3.0, n))
    return [DeviceEcon(float(mu), float(gen.uniform(0.5, 5.0)), c) for mu in mus]


def test_utilities():
    assert incentive.server_utility([0, 0], [0, 0], 1.0) == 0.0
    s, r = [0.5, 2.0], [1.0, 3.0]
    base = incentive.server_utility(s, r, 2.0)
    assert incentive.server_utility(s, [1.0, 3.5], 2.0) == pytest.approx(base - 1.0)
    assert base == pytest.approx(-(0.25 + 4.0) - 2.0 * 4.0)
    assert incentive.device_utility(2.0, 4.0, 2.0) == 0.0
    assert incentive.device_utility(1.0, 5.0, 2.0) == 3.0


def test_feasibility_single_and_swap():
    econ = [DeviceEcon(2.0, 1.0, 10)]
    rep = incentive.check_feasibility(Contract((1.5,), (3.0,), (2.0,)), econ)
    assert rep.ok
    econ = [DeviceEcon(1.0, 1.0, 10), DeviceEcon(2.0, 1.0, 10)]
    good = Contract((3.0, 1.0), incentive.optimal_rewards((3.0, 1.0), (1.0, 2.0)), (1.0, 2.0))
    assert incentive.check_feasibility(good, econ).ok
    swapped = Contract(good.epsilons[::-1], good.rewards[::-1], good.mus)
    rep = incentive.check_feasibility(swapped, econ)
    assert not rep.ic_ok and any(v[0] == "IC" for v in rep.violations)


def test_feasibility_matches_matrix_oracle():
    gen = np.random.default_rng(0)
    for _ in range(50):
        n = 4
        eps = tuple(sorted(gen.uniform(0.1, 2, n), reverse=True))
        r = tuple(sorted(gen.uniform(0.1, 5, n), reverse=True))
        mus = tuple(sorted(gen.uniform(0.5, 3, n)))
        econ = [DeviceEcon(m, 1.0, 10) for m in mus]
        con = Contract(eps, r, mus)
        U = np.array([[r[j] - mus[i] * eps[j] for j in range(n)] for i in range(n)])
        rep = incentive.check_feasibility(con, econ)
        assert rep.ir_ok == bool(np.all(np.diag(U) >= -1e-9))
        assert rep.ic_ok == bool(np.all(np.diag(U)[:, None] >= U - 1e-9))


def test_optimal_rewards_examples():
    assert incentive.optimal_rewards([3.0], [2.0]) == (6.0,)
    assert incentive.optimal_rewards([3.0, 1.0], [1.0, 2.0]) == (4.0, 2.0)
    econ = [DeviceEcon(1.0, 1.0, 10), DeviceEcon(2.0, 1.0, 10)]
    con = Contract((3.0, 1.0), (4.0, 2.0), (1.0, 2.0))
    for delta in (1e-3, 1e-2):
        assert incentive.minimality_probe(con, econ, delta)
    with pytest.raises(incentive.ContractError):
        incentive.optimal_rewards([1.0, 3.0], [1.0, 2.0])


def test_phi_examples():
    econ = [DeviceEcon(1.5, 2.0, 20), DeviceEcon(2.0, 1.0, 20)]
    e = 0.4
    s2 = econ[0].q_inv(e)
    assert incentive.phi(e, 0, 3.0, econ) == pytest.approx(-s2 * s2 - 3.0 * 1.5 * e)
    s2b = econ[1].q_inv(e)
    assert incentive.phi(e, 1, 3.0, econ) == pytest.approx(-s2b * s2b - 3.0 * (2 * 2.0 - 1.5) * e)
    with pytest.raises(incentive.ContractError):
        incentive.phi(econ[0].q(0.0) * 1.1, 0, 1.0, econ)


def test_phi_without_payment_prefers_no_noise():
    econ = [DeviceEcon(1.0, 2.0, 20)]
    f = lambda x: incentive.phi(x, 0, 1e-300, econ)
    cap = econ[0].q(0.0)
    assert incentive.golden_max(f, 1e-6, cap) == pytest.approx(cap, rel=1e-6)


def test_server_utility_equals_phi_sum():
    gen = np.random.default_rng(1)
    for _ in range(50):
        econ = rand_econ(gen, int(gen.integers(1, 6)))
        lam = float(gen.uniform(0.1, 10))
        caps = [e.q(0.0) for e in econ]
        top = min(caps)
        eps = sorted(gen.uniform(0.01, top, len(econ)), reverse=True)
        r = incentive.optimal_rewards(eps, [e.mu for e in econ])
        s2 = [e.q_inv(x) for e, x in zip(econ, eps)]
        direct = incentive.server_utility(s2, r, lam)
        assert direct == pytest.approx(incentive.objective(eps, lam, econ), rel=1e-9, abs=1e-9)


def test_bunching_no_ironing_needed():
    econ = [DeviceEcon(1.0, 1.0, 10), DeviceEcon(1.2, 1.0, 10)]
    eps = incentive.bunching_ironing(econ, 0.5)
    single = [incentive._block_argmax([i], 0.5, econ, incentive.DEFAULT_GAMMA, 0.0) for i in range(2)]
    assert eps[0] > eps[1]
    assert eps == pytest.approx(tuple(single))


def test_bunching_forced_pooling():
    # the low-sensitivity device has much more data spread, pushing its own optimum below its neighbour's
    econ = [DeviceEcon(1.0, 40.0, 10), DeviceEcon(1.0001, 0.5, 10)]
    single = [incentive._block_argmax([i], 2.0, econ, incentive.DEFAULT_GAMMA, 0.0) for i in range(2)]
    assert single[0] < single[1]
    eps = incentive.bunching_ironing(econ, 2.0)
    assert eps[0] == eps[1]
    top = min(e.q(0.0) for e in econ)
    grid = np.linspace(top / 20000, top, 20000)
    pooled = max(grid, key=lambda x: incentive.phi(x, 0, 2.0, econ) + incentive.phi(x, 1, 2.0, econ))
    assert eps[0] == pytest.approx(pooled, abs=2 * top / 20000)


def test_bunching_matches_brute_force_n5():
    gen = np.random.default_rng(7)
    for _ in range(3):
        econ = rand_econ(gen, 5)
        lam = float(gen.uniform(0.1, 10))
        eps = incentive.bunching_ironing(econ, lam)
        best, _ = incentive.brute_force_objective(econ, lam)
        assert incentive.objective(eps, lam, econ) >= best - 1e-4


def test_design_contract_single_device():
    econ = [DeviceEcon(2.0, 1.5, 12)]
    des = incentive.design_contract(econ, 0.7)
    cap = econ[0].q(0.0)
    grid = np.linspace(cap / 10**5, cap, 10**5)
    vals = [-(econ[0].q_inv(x)) ** 2 - 0.7 * 2.0 * x for x in grid]
    assert des.contract.epsilons[0] == pytest.approx(grid[int(np.argmax(vals))], abs=2 * cap / 10**5)
    assert des.contract.rewards[0] == pytest.approx(2.0 * des.contract.epsilons[0])


def test_design_beats_coarse_grid_contracts():
    gen = np.random.default_rng(3)
    for _ in range(5):
        econ = rand_econ(gen, 3)
        lam = float(gen.uniform(0.1, 5))
        des = incentive.design_contract(econ, lam)
        top = max(e.q(0.0) for e in econ)
        grid = np.linspace(top / 40, top, 40)
        for a in grid:
            for b in grid[grid <= a]:
                for c in grid[grid <= b]:
                    eps = (a, b, c)
                    if any(x > e.q(0.0) for x, e in zip(eps, econ)):
                        continue
                    r = incentive.optimal_rewards(eps, [e.mu for e in econ])
                    s2 = [e.q_inv(x) for e, x in zip(econ, eps)]
                    assert des.server_utility >= incentive.server_utility(s2, r, lam) - 1e-9


def test_lambda_sweep_total_reward_non_increasing():
    gen = np.random.default_rng(5)
    econ = rand_econ(gen, 4)
    rows = incentive.lambda_table(econ, [0.05, 0.1, 0.5, 1, 2, 5, 10])
    totals = [r["total_reward"] for r in rows]
    noise = [r["sigma2"] for r in rows]
    assert all(b <= a + 1e-9 for a, b in zip(totals, totals[1:]))
    assert all(b >= a - 1e-9 for a, b in zip(noise, noise[1:]))
    single = incentive.lambda_table(econ, [0.5])[0]
    assert single["total_reward"] == pytest.approx(incentive.design_contract(econ, 0.5).contract.total_reward)


def test_non_concave_gamma_rejected():
    econ = [DeviceEcon(1.0, 1.0, 10)]
    bad = incentive.GammaSpec("convex", lambda s: s * s)
    with pytest.raises(incentive.ContractError):
        incentive.bunching_ironing(econ, 1.0, bad)


def test_self_selection():
    gen = np.random.default_rng(11)
    econ = rand_econ(gen, 6)
    con = incentive.design_contract(econ, 1.0).contract
    assert con.choices() == list(range(6))


def test_stackelberg_cases():
    one = incentive.stackelberg_equilibrium([DeviceEcon(1.0, 1.0, 10)], 5.0)
    assert one.epsilons == (incentive.EPS_FLOOR,)
    assert one.rewards == (5.0,)
    sym = [DeviceEcon(1.0, 2.0, 20)] * 3
    out = incentive.stackelberg_equilibrium(sym, 2.0)
    assert out.converged
    assert max(out.epsilons) - min(out.epsilons) < 1e-5
    assert sum(out.rewards) == pytest.approx(2.0)
    # interior symmetric Tullock equilibrium: eps = R (n-1) / (n^2 mu)
    assert out.epsilons[0] == pytest.approx(2.0 * 2 / 9, rel=1e-4)
    base = incentive.stackelberg_baseline(sym, 1.0)
    assert base.server_utility is not None


def test_contract_at_reward_matches_total():
    gen = np.random.default_rng(2)
    econ = rand_econ(gen, 4)
    target = 0.5 * incentive.design_contract(econ, 0.1).contract.total_reward
    des = incentive.contract_at_reward(econ, target)
    assert des.contract.total_reward == pytest.approx(target, rel=1e-6)


def test_econ_validation():
    with pytest.raises(incentive.ContractError):
        DeviceEcon(0.0, 1.0, 1)
    with pytest.raises(incentive.ContractError):
        incentive.bunching_ironing([DeviceEcon(2.0, 1.0, 5), DeviceEcon(1.0, 1.0, 5)], 1.0)
    with pytest.raises(incentive.ContractError):
        incentive.eps_cap(DeviceEcon(1.0, 0.0, 5))
    assert math.isfinite(incentive.eps_cap(DeviceEcon(1.0, 0.0, 5), sigma_min2=0.5))
