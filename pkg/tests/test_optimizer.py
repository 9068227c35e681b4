import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vdrating.errors import InfeasibleSpec
from vdrating.likelihood import log_likelihood, predict
from vdrating.model import (CSDT_UV, SDT_EV, SDT_UV, VDR, CountMatrix, FitResult, ModelSpec,
                            ParamSet, canonicalize, validate_params)
from vdrating.optimizer import (SearchConfig, default_starts, fit, multi_start_fit,
                                percent_inconsistency)
from vdrating.rng import substream
from vdrating.simulator import simulate_counts

QUICK = SearchConfig(n_steps=300, n_starts=2, seed=4)


def _sdt_data(tps=400, seed=1, sd=1.0):
    th = ParamSet([-1.0, 0.0, 1.2], [sd] * 3, [-0.8, 0.1, 0.9], [0.0] * 3)
    spec = ModelSpec(3, 4, SDT_EV)
    return th, spec, simulate_counts(th, spec, tps, seed)


@pytest.mark.parametrize("lls, expected", [
    ([-100, -100, -100, -100], 0.0),
    ([-100, -102], 100 * 2 / 101),
    ([-1000, -1001], 100 * 1 / 1000.5),
])
def test_percent_inconsistency(lls, expected):
    assert percent_inconsistency(lls) == pytest.approx(expected, rel=1e-12)


def test_percent_inconsistency_needs_two_values():
    with pytest.raises(ValueError):
        percent_inconsistency([-1.0])


@given(st.lists(st.floats(-1e5, -1.0), min_size=2, max_size=8))
def test_percent_inconsistency_nonnegative_and_order_free(lls):
    v = percent_inconsistency(lls)
    assert v >= 0
    assert v == pytest.approx(percent_inconsistency(lls[::-1]))


def test_default_starts_cover_simplex():
    spec = ModelSpec(4, 6, VDR, (1, 2, 3))
    _, _, data = _sdt_data()
    data = CountMatrix(np.tile(data.counts.sum(axis=0)[:1], (4, 6)) + np.arange(24).reshape(4, 6),
                       100)
    starts = default_starts(spec, data, 4, substream(0, "s"))
    probs = {tuple(np.round(s.rule_probs, 12)) for s in starts}
    third = round(1 / 3, 12)
    assert probs >= {(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)}
    assert any(np.allclose(p, third) for p in probs)
    for s in starts:
        assert validate_params(s, spec) == []
    for a in range(4):
        for b in range(a + 1, 4):
            assert not starts[a] == starts[b]


@pytest.mark.parametrize("klass, rules", [(SDT_EV, (1,)), (SDT_UV, (1,)), (CSDT_UV, (1, 2)),
                                          (VDR, (2,))])
def test_default_starts_valid_for_every_class(klass, rules):
    spec = ModelSpec(5, 8, klass, rules)
    data = CountMatrix(np.random.default_rng(0).integers(0, 30, (5, 8)), 100)
    starts = default_starts(spec, data, 6, substream(0, "s"))
    assert len(starts) == 6
    assert all(validate_params(s, spec) == [] for s in starts)
    assert len({str(s.to_dict()) for s in starts}) == 6


def test_fit_is_deterministic():
    _, spec, data = _sdt_data()
    a = multi_start_fit(data, spec, None, QUICK)
    b = multi_start_fit(data, spec, None, QUICK)
    assert a.log_l == b.log_l and a.theta == b.theta and a.start_log_ls == b.start_log_ls


def test_fit_independent_of_jobs():
    _, spec, data = _sdt_data()
    a = multi_start_fit(data, spec, None, QUICK, jobs=1)
    b = multi_start_fit(data, spec, None, QUICK, jobs=2)
    assert a.to_json() == b.to_json()


def test_identical_starts_give_zero_inconsistency():
    _, spec, data = _sdt_data()
    start = default_starts(spec, data, 1, substream(0, "s"))[0]
    cfg = SearchConfig(n_steps=200, seed=3)

    # same start and same chain stream for every run
    lls = [fit(data, spec, start, cfg, rng=substream(3, "chain"))[1] for _ in range(4)]
    assert percent_inconsistency(lls) == 0.0


def test_fit_improves_on_start_and_beats_generator():
    th, spec, data = _sdt_data()
    res = multi_start_fit(data, spec, None, SearchConfig(n_steps=2000, n_starts=2, seed=0))
    ll_g = log_likelihood(predict(th, spec), data)
    assert res.log_l >= ll_g
    assert max(res.start_log_ls) == res.log_l
    assert validate_params(res.theta, spec) == []
    assert res.gof.r2 > 0.9


def test_fit_result_round_trip():
    _, spec, data = _sdt_data()
    res = multi_start_fit(data, spec, None, QUICK)
    back = FitResult.from_dict(res.to_dict())
    assert back.to_json() == res.to_json()


def test_degenerate_single_column_data():
    counts = np.zeros((3, 4), dtype=int)
    counts[0, 0] = counts[1, 2] = counts[2, 3] = 100
    data, spec = CountMatrix(counts, 100), ModelSpec(3, 4, SDT_EV)
    res = multi_start_fit(data, spec, None, QUICK)
    starts = default_starts(spec, data, QUICK.n_starts,
                            substream(QUICK.seed, "optimizer", "starts"))
    ll0 = max(log_likelihood(predict(s, spec), data) for s in starts)
    assert np.isfinite(res.log_l) and res.log_l > ll0
    th = res.theta
    # separation in SD units grows towards a degenerate configuration
    assert (th.rep_means[-1] - th.rep_means[0]) / th.rep_sds[0] > \
        (starts[0].rep_means[-1] - starts[0].rep_means[0]) / starts[0].rep_sds[0]


def test_infeasible_spec_raises():
    data = CountMatrix(np.ones((3, 4), dtype=int), 4)
    with pytest.raises(InfeasibleSpec):
        multi_start_fit(data, ModelSpec(3, 4, VDR), None, QUICK)


def test_search_config_validation():
    with pytest.raises(ValueError):
        SearchConfig(t_initial=0.01, t_final=0.1)
    with pytest.raises(ValueError):
        SearchConfig(n_steps=10)
    with pytest.raises(ValueError):
        SearchConfig(n_starts=0)
    assert SearchConfig(n_steps=100, t_initial=1.0, t_final=0.01).cooling ** 99 == \
        pytest.approx(0.01)


@pytest.mark.slow
def test_sdt_recovery_at_large_tps():
    """Well-separated SDT-EV means come back within 0.1 canonical units in most runs."""
    th = ParamSet([-1.5, 0.0, 1.5], [1.0] * 3, [-1.0, 0.0, 1.0], [0.0] * 3)
    spec = ModelSpec(3, 4, SDT_EV)
    target = canonicalize(th).rep_means
    good = 0
    for r in range(10):
        data = simulate_counts(th, spec, 4000, seed=50 + r)
        res = multi_start_fit(data, spec, None, SearchConfig(n_steps=1500, n_starts=2, seed=r))
        good += int(np.abs(canonicalize(res.theta).rep_means - target).max() <= 0.1)
    assert good >= 8
