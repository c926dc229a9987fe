import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamcal.errors import ShapeError, SimulationFailed, SingularSystem
from streamcal.hydromodel import LOWER, RANGE, UPPER, ParameterSet, prepare_forcing, run_prepared, Basin
from streamcal.paramest import (
    ObjectiveSpec,
    estimate,
    identifiable,
    jacobian,
    phi_p,
    posterior_sd,
    season_mask,
    svd_step,
)
from streamcal.pipeline.synth import TRUTH, synth_dem, synth_forcing
from streamcal.series import StreamflowSeries
from streamcal.terrain import DemGrid, route_grid


class Linear:
    """U = X p with a plain-vector objective."""

    def __init__(self, X):
        self.X = X

    def __call__(self, p):
        return self.X @ np.asarray(p)


@pytest.fixture(scope="module")
def toy():
    rng = np.random.default_rng(11)
    dem = synth_dem(rng, rows=7, cols=7)
    filled, flow = route_grid(dem)
    forcing = synth_forcing(rng, "2011-01-01", "2011-10-31")
    basin = Basin(flow, {"o": (6, 3)}, filled)
    prepared = prepare_forcing(forcing, ("2011-05-01", "2011-10-31"))

    def sim(p):
        return run_prepared(basin, *prepared, p, spinup_years=1)

    obs = sim(ParameterSet(TRUTH))
    return sim, list(obs.values())


# -- phi ---------------------------------------------------------------------


def test_phi_examples():
    assert phi_p([1, 2], [1, 2], [1, 1]) == 0.0
    assert phi_p([1, 2], [0, 0], [1, 1]) == 5.0
    assert phi_p([1, 2], [0, 0], [1, 4]) == 2.0


def test_phi_mask_and_shape():
    assert phi_p([1, 2, 3], [0, 0, 0], [1, 1, 1], mask=[True, False, True]) == 10.0
    with pytest.raises(ShapeError):
        phi_p([1, 2], [1], [1, 1])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30), st.floats(0.01, 100))
def test_phi_nonnegative_and_scales_with_q(r, k):
    r = np.array(r)
    q = np.linspace(0.5, 2.0, r.size)
    phi = phi_p(r, np.zeros_like(r), q)
    assert phi >= 0
    assert phi_p(r, np.zeros_like(r), q * k) == pytest.approx(phi / k, rel=1e-12, abs=1e-300)


def test_season_mask_wraps():
    dates = np.array(["2011-04-30", "2011-05-01", "2011-10-31", "2011-11-01", "2011-12-31"], dtype="datetime64[D]")
    assert season_mask(dates, ("05-01", "10-31")).tolist() == [False, True, True, False, False]
    assert season_mask(dates, ("11-01", "04-30")).tolist() == [True, False, False, True, True]


def test_objective_default_weights():
    dates = np.arange(np.datetime64("2011-04-01"), np.datetime64("2011-11-30"))
    a = StreamflowSeries("a", dates, np.full(dates.size, 4.0))
    b = StreamflowSeries("b", dates, np.full(dates.size, 20.0))
    spec = ObjectiveSpec([a, b], window=("05-01", "10-31"))
    n = int(season_mask(dates, ("05-01", "10-31")).sum())
    assert len(spec) == 2 * n
    assert np.allclose(spec.Q[:n], 0.4**2) and np.allclose(spec.Q[n:], 2.0**2)
    with pytest.raises(ValueError):
        ObjectiveSpec(np.ones(3), q=[1, 0, 1])


def test_objective_skips_masked_days():
    dates = np.arange(np.datetime64("2011-06-01"), np.datetime64("2011-06-11"))
    values = np.arange(10.0)
    values[3] = np.nan
    spec = ObjectiveSpec([StreamflowSeries("s", dates, values)])
    assert len(spec) == 9
    out = {"s": StreamflowSeries("s", dates, values[::-1].copy() * 0 + 1)}
    assert spec.extract(out).size == 9


# -- jacobian ----------------------------------------------------------------


def test_linear_jacobian_exact():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(15, 9))
    J, base = jacobian(Linear(X), ParameterSet().values)
    assert np.allclose(J, X, atol=1e-8)
    assert np.allclose(base, X @ ParameterSet().values)


def test_zero_sensitivity_gives_zero_column():
    X = np.ones((5, 3))
    X[:, 1] = 0
    J, _ = jacobian(Linear(X), np.array([0.5, 0.5, 0.5]), lower=np.zeros(3), upper=np.ones(3))
    assert not J[:, 1].any()


def test_step_flips_at_upper_bound():
    seen = []

    def sim(p):
        seen.append(np.array(p))
        return np.asarray(p) * 2.0

    J, _ = jacobian(sim, np.array([1.0, 0.5]), lower=np.zeros(2), upper=np.ones(2))
    assert seen[1][0] < 1.0
    assert np.allclose(J, 2.0 * np.eye(2))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_toy_jacobian_matches_central_difference(seed):
    # two cells, evaluated mid-range where a 1%-of-range step is a small relative move
    rng = np.random.default_rng(seed)
    filled, flow = route_grid(DemGrid(np.array([[100.0, 130.0]]), cell_size=1000.0))
    forcing = synth_forcing(rng, "2011-01-01", "2011-10-31")
    basin = Basin(flow, {"o": (0, 0)}, filled)
    prepared = prepare_forcing(forcing, ("2011-05-01", "2011-10-31"))

    def sim(p):
        return run_prepared(basin, *prepared, p, spinup_years=1)

    spec = ObjectiveSpec(list(sim(ParameterSet(TRUTH)).values()))
    p = (LOWER + UPPER) / 2

    def forward(v):
        return spec.extract(sim(ParameterSet(v, check=False)))

    J, _ = jacobian(forward, p)
    for j in range(9):
        h = 0.005 * RANGE[j]
        up, dn = p.copy(), p.copy()
        up[j] += h
        dn[j] -= h
        central = (forward(up) - forward(dn)) / (2 * h)
        scale = np.linalg.norm(central)
        if scale == 0:
            assert np.linalg.norm(J[:, j]) == 0
            continue
        assert np.linalg.norm(J[:, j] - central) <= 0.05 * scale


def test_threaded_jacobian_matches_serial(toy):
    sim, obs = toy
    spec = ObjectiveSpec(obs)

    def forward(v):
        return spec.extract(sim(ParameterSet(v, check=False)))

    a, _ = jacobian(forward, ParameterSet().values, workers=1)
    b, _ = jacobian(forward, ParameterSet().values, workers=4)
    assert np.array_equal(a, b)


def test_jacobian_failure_names_parameter():
    def sim(p):
        if p[2] != 0.5:
            raise RuntimeError("boom")
        return np.asarray(p)

    with pytest.raises(SimulationFailed) as err:
        jacobian(sim, np.array([0.5, 0.5, 0.5]), lower=np.zeros(3), upper=np.ones(3))
    assert err.value.parameter == "p[2]"


# -- svd_step ----------------------------------------------------------------


def test_identity_step():
    dp = svd_step(np.eye(9), np.ones(9), np.ones(9))
    assert np.allclose(dp, 1.0)
    clamped = svd_step(np.eye(9), np.ones(9), np.ones(9), ranges=np.ones(9))
    assert np.allclose(clamped, 0.5)


def test_rank_one_step_in_row_space():
    rng = np.random.default_rng(1)
    u, v = rng.normal(size=12), rng.normal(size=9)
    J = np.outer(u, v)
    dp = svd_step(J, rng.normal(size=12), np.ones(12))
    orth = dp - v * (v @ dp) / (v @ v)
    assert np.linalg.norm(orth) <= 1e-9


def test_matches_pseudoinverse_oracle():
    rng = np.random.default_rng(2)
    J = rng.normal(size=(20, 9))
    r = rng.normal(size=20)
    q = rng.uniform(0.5, 3.0, 20)
    W = np.diag(1 / q)
    oracle = np.linalg.inv(J.T @ W @ J) @ J.T @ W @ r
    assert np.allclose(svd_step(J, r, q), oracle, atol=1e-6)


def test_zero_jacobian_is_singular():
    with pytest.raises(SingularSystem):
        svd_step(np.zeros((4, 2)), np.ones(4), np.ones(4))
    with pytest.raises(ValueError):
        svd_step(np.array([[np.nan]]), np.ones(1), np.ones(1))


def test_damping_shortens_step():
    rng = np.random.default_rng(3)
    J, r = rng.normal(size=(10, 4)), rng.normal(size=10)
    plain = svd_step(J, r, np.ones(10))
    damped = svd_step(J, r, np.ones(10), damping=1.0)
    assert np.linalg.norm(damped) < np.linalg.norm(plain)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(1e-3, 1e3))
def test_step_invariant_to_q_scale(seed, k):
    rng = np.random.default_rng(seed)
    J, r = rng.normal(size=(12, 5)), rng.normal(size=12)
    q = rng.uniform(0.1, 2.0, 12)
    ranges = np.full(5, 0.5)
    assert np.allclose(svd_step(J, r, q, ranges=ranges), svd_step(J, r, q * k, ranges=ranges), rtol=1e-9, atol=1e-12)


# -- estimate ----------------------------------------------------------------


def test_linear_one_iteration_optimum():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(30, 3))
    q = rng.uniform(0.5, 2.0, 30)
    C = X @ np.array([1.0, -2.0, 3.0]) + rng.normal(0, 0.3, 30)
    spec = ObjectiveSpec(C, q=q)
    lo, hi = np.full(3, -10.0), np.full(3, 10.0)
    p, trace = estimate(Linear(X), spec, np.zeros(3), max_iter=1, lower=lo, upper=hi)
    resid = C - X @ p
    assert np.max(np.abs(X.T @ (resid / q))) <= 1e-6
    assert trace.entries[1].step == "gauss-newton"


def test_truth_start_stops_immediately(toy):
    sim, obs = toy
    p, trace = estimate(sim, ObjectiveSpec(obs), ParameterSet(TRUTH))
    assert trace.phis == [0.0]
    assert trace.status == "converged"
    assert p == ParameterSet(TRUTH)


@pytest.fixture(scope="module")
def twin_run(toy):
    sim, obs = toy
    spec = ObjectiveSpec(obs)
    p, trace = estimate(sim, spec, ParameterSet())
    return spec, p, trace


def test_twin_reduces_phi(twin_run):
    _, _, trace = twin_run
    assert trace.phis[-1] <= 0.1 * trace.phis[0]


def test_trace_monotone_and_feasible(twin_run):
    _, p, trace = twin_run
    assert all(b <= a for a, b in zip(trace.phis, trace.phis[1:]))
    assert all(np.isfinite(trace.phis)) and min(trace.phis) >= 0
    for e in trace.entries:
        assert np.all(e.params >= LOWER) and np.all(e.params <= UPPER)
    assert all(e.runs >= 10 for e in trace.entries[1:])
    p.check()


def test_trace_json(twin_run, tmp_path):
    _, _, trace = twin_run
    path = tmp_path / "trace.json"
    trace.save(path)
    doc = json.loads(path.read_text())
    assert len(doc["iterations"]) == len(trace.entries)
    assert set(doc["iterations"][0]["values"]) == set(TRUTH)


def test_identifiable_recovered(toy, twin_run):
    sim, _ = toy
    spec, p, _ = twin_run
    mask = identifiable(sim, spec, ParameterSet(TRUTH))
    assert mask.any()
    err = np.abs(p.values - ParameterSet(TRUTH).values) / RANGE
    assert np.all(err[mask] <= 0.1)


def test_noise_floor(toy):
    sim, obs = toy
    rng = np.random.default_rng(5)
    clean = obs[0]
    sd = 0.05 * clean.values.mean()
    noise = rng.normal(0, sd, clean.values.size)
    noisy = StreamflowSeries("o", clean.dates, np.maximum(clean.values + noise, 0.0))
    spec = ObjectiveSpec([noisy])
    floor = phi_p(noisy.values, clean.values, spec.Q)
    _, trace = estimate(sim, spec, ParameterSet())
    assert floor / 2 <= trace.phis[-1] <= 2 * floor


def test_uniform_q_scaling_keeps_trajectory(toy):
    sim, obs = toy
    a = ObjectiveSpec(obs)
    b = ObjectiveSpec(obs, q=a.Q * 37.0)
    _, ta = estimate(sim, a, ParameterSet(), max_iter=2)
    _, tb = estimate(sim, b, ParameterSet(), max_iter=2)
    for ea, eb in zip(ta.entries, tb.entries):
        assert np.allclose(ea.params, eb.params, rtol=1e-8, atol=1e-10)
    assert len(ta.entries) == len(tb.entries)


def test_bound_landing_is_reported():
    X = np.eye(3)
    spec = ObjectiveSpec(np.array([5.0, 0.2, -4.0]))
    lo, hi = np.zeros(3), np.ones(3)
    p, trace = estimate(Linear(X), spec, np.full(3, 0.5), lower=lo, upper=hi)
    assert np.allclose(p, [1.0, 0.2, 0.0])
    assert set(trace.entries[-1].at_bounds) == {"p0", "p2"}


def test_no_improvement_status():
    spec = ObjectiveSpec(np.array([1.0, 2.0, 3.0]))

    def flat(p):
        return np.zeros(3) + 0.0 * np.sum(p)

    with pytest.raises(SingularSystem):
        estimate(flat, spec, np.full(2, 0.5), lower=np.zeros(2), upper=np.ones(2))

    def bumpy(p):
        # any move away from the start makes things worse
        return np.array([1.0, 2.0, 3.0]) - 1.0 - 50.0 * np.sum((np.asarray(p) - 0.5) ** 2)

    _, trace = estimate(bumpy, spec, np.full(2, 0.5), lower=np.zeros(2), upper=np.ones(2))
    assert trace.status == "NoImprovement"
    assert len(trace.phis) == 2 and trace.phis[0] == trace.phis[1]


def test_rejects_bad_start():
    with pytest.raises(ValueError):
        estimate(Linear(np.eye(2)), ObjectiveSpec(np.ones(2)), np.array([2.0, 0.0]), lower=np.zeros(2), upper=np.ones(2))
    with pytest.raises(ValueError):
        estimate(Linear(np.ones((1, 2))), ObjectiveSpec(np.ones(1)), np.zeros(2), lower=np.zeros(2), upper=np.ones(2))


def test_posterior_sd_flags_blind_direction():
    J = np.array([[1.0, 0.0], [2.0, 0.0], [0.5, 0.0]])
    sd = posterior_sd(J, np.ones(3))
    assert np.isfinite(sd[0]) and np.isinf(sd[1])
    assert sd[0] == pytest.approx(1 / np.sqrt(5.25))
