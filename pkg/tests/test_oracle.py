import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from elbsde.errors import InvariantViolation, NegativeRate
from elbsde.model import ModelParams, State
from elbsde.oracle import (
    GmmbParams,
    McEstimate,
    Method,
    bel_monte_carlo,
    bs_call,
    bs_put,
    death_distribution_tilted,
    death_expectation_tilted,
    gmmb_price,
    simulate_tilted_deaths,
)
from elbsde.scenario import GridSpec

P = ModelParams()
G = GmmbParams()


# --- Black-Scholes ------------------------------------------------------------


def test_bs_put_reference_value():
    # Monte-Carlo oracle with 10^7 draws, frozen
    rng = np.random.default_rng(0)
    xi = rng.standard_normal(10_000_000)
    payoff = math.exp(-0.02) * np.maximum(1.02 - np.exp(0.02 - 0.005 + 0.1 * xi), 0.0)
    se = payoff.std(ddof=1) / math.sqrt(payoff.size)
    val = bs_put(1.0, 1.02, 0.02, 0.0, 0.1, 1.0)
    assert abs(payoff.mean() - val) < 3 * se
    assert val == pytest.approx(0.03979, abs=5e-5)


def test_bs_put_deterministic_limit():
    assert bs_put(1.0, 1.01, 0.02, 0.0, 0.0, 1.0) == 0.0
    assert bs_put(1.0, 1.05, 0.02, 0.0, 0.0, 1.0) == pytest.approx(math.exp(-0.02) * (1.05 - math.exp(0.02)))


@given(st.floats(0.2, 3), st.floats(0.2, 3), st.floats(-0.05, 0.1), st.floats(0, 0.1),
       st.floats(0.01, 0.8), st.floats(0.05, 5))
def test_put_call_parity(F0, K, r, div, sigma, T):
    lhs = bs_call(F0, K, r, div, sigma, T) - bs_put(F0, K, r, div, sigma, T)
    assert lhs == pytest.approx(F0 * math.exp(-div * T) - K * math.exp(-r * T), abs=1e-10)


def test_bs_put_shape_on_grids():
    F = np.linspace(0.5, 1.5, 41)
    vals = np.array([bs_put(f, 1.02, 0.02, 0.0, 0.15, 1.0) for f in F])
    assert np.all(np.diff(vals) <= 0)
    assert np.all(np.diff(vals, 2) >= -1e-14)
    K = np.linspace(0.5, 1.5, 41)
    assert np.all(np.diff([bs_put(1.0, k, 0.02, 0.0, 0.15, 1.0) for k in K]) >= 0)


# --- tilted death chain ------------------------------------------------------------


def test_death_expectation_limits():
    g0 = G.replace(alpha=0.0)
    assert death_expectation_tilted(g0) == pytest.approx(100 * math.exp(-0.015), abs=1e-9)
    assert death_expectation_tilted(g0) == pytest.approx(98.5112, abs=5e-5)
    assert death_expectation_tilted(G.replace(lam_const=0.0, alpha=0.0)) == 100.0
    p = death_distribution_tilted(G)
    assert p.sum() == pytest.approx(1.0, abs=1e-12) and np.all(p >= -1e-15)


def test_death_expectation_tilted_reference():
    val = death_expectation_tilted(G)
    assert val == pytest.approx(98.63, abs=5e-3)
    draws = simulate_tilted_deaths(G, 1_000_000, np.random.default_rng(4))
    se = draws.std(ddof=1) / math.sqrt(draws.size)
    assert abs(draws.mean() - val) < 3 * se


@given(st.floats(0.0, 0.05), st.floats(0.0, 0.05))
def test_death_expectation_monotone(l1, l2):
    lo, hi = sorted((l1, l2))
    a = death_expectation_tilted(G.replace(alpha=0.0, lam_const=lo, n=20))
    b = death_expectation_tilted(G.replace(alpha=0.0, lam_const=hi, n=20))
    assert b <= a + 1e-12


@given(st.floats(0.0, 0.12), st.floats(0.0, 0.12))
def test_death_expectation_non_decreasing_in_alpha(a1, a2):
    lo, hi = sorted((a1, a2))
    g = G.replace(n=30)
    assert death_expectation_tilted(g.replace(alpha=hi)) >= death_expectation_tilted(g.replace(alpha=lo)) - 1e-12


def test_negative_rate_rejected():
    with pytest.raises(NegativeRate):
        GmmbParams(alpha=0.2, lam_const=0.015)


# --- GMMB prices ---------------------------------------------------------------------


def test_gmmb_limits():
    g = G.replace(alpha=0.0, lam_const=0.0)
    assert gmmb_price(g) == pytest.approx(100 * bs_put(1, 1.02, 0.02, 0, 0.1, 1), rel=1e-14)
    assert gmmb_price(G.replace(sigma_f=0.0)) == 0.0


def test_gmmb_reference_and_monte_carlo():
    semi = gmmb_price(G, Method.SEMI_ANALYTIC)
    assert semi == pytest.approx(98.63 * 0.03979, abs=5e-3)
    assert semi == pytest.approx(3.92, abs=5e-3)
    mc = gmmb_price(G, Method.MONTE_CARLO, 200_000, seed=1)
    assert mc.within(semi, 3.0)


def test_gmmb_random_parameter_draws_agree():
    rng = np.random.default_rng(17)
    for i in range(20):
        lam = rng.uniform(0.005, 0.05)
        n = int(rng.integers(5, 120))
        alpha = rng.uniform(0.0, math.sqrt(lam))
        g = GmmbParams(r=rng.uniform(0.0, 0.05), sigma_f=rng.uniform(0.05, 0.3), lam_const=lam,
                       s_star=rng.uniform(0.9, 1.2), n=n, alpha=alpha, T=rng.uniform(0.5, 2.0))
        mc = gmmb_price(g, Method.MONTE_CARLO, 40_000, seed=i)
        assert mc.within(gmmb_price(g), 3.0), (i, g)


# --- best-estimate liability -------------------------------------------------------


def test_bel_empty_portfolio_is_zero():
    est = bel_monte_carlo(P, State(0, 0, 1, 0.1, 0.015, 0), 1000, GridSpec(10, 0.1), seed=0)
    assert est.mean == 0.0 and est.std_error == 0.0


def test_bel_deterministic_limit():
    # no mortality, no market noise in the fund: payoff known in closed form
    g = GmmbParams(r=0.01, sigma_f=0.0, lam_const=0.0, alpha=0.0, n=50)
    grid = GridSpec(100, 0.01)
    est = bel_monte_carlo(g.dynamics(), g.state, 50, grid, seed=0)
    f_T = (1 + 0.01 * 0.01) ** 100
    assert est.mean == pytest.approx(math.exp(-0.01) * 50 * max(1.02 - f_T, 0.0), rel=1e-12)
    assert est.std_error == 0.0


def test_mc_estimate():
    est = McEstimate.from_samples([1.0, 2.0, 3.0])
    assert est.mean == 2.0 and est.n_sims == 3
    assert est.std_error == pytest.approx(1 / math.sqrt(3))
    with pytest.raises(InvariantViolation):
        McEstimate.from_samples([1.0])
