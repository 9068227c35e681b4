import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vdrating.errors import DataMismatch, SampleTooSmall
from vdrating.gof import (aicc, compare, gof, kl_divergence, n_observations, percent_delta_gf)
from vdrating.model import SDT_EV, VDR, FitResult, ModelSpec, ParamSet


def test_gof_perfect():
    p = np.array([[0.2, 0.5, 0.3], [0.6, 0.3, 0.1]])
    g = gof(p, p)
    assert g.r2 == 1.0 and g.rmsd == 0.0 and g.kl == 0.0
    assert g.b0 == pytest.approx(0.0, abs=1e-12) and g.b1 == pytest.approx(1.0)


def test_gof_alternating_offset():
    pred = np.array([[0.1, 0.2, 0.3, 0.4], [0.4, 0.3, 0.2, 0.1]])
    obs = pred + np.array([[0.01, -0.01, 0.01, -0.01], [-0.01, 0.01, -0.01, 0.01]])
    g = gof(obs, pred)
    assert g.b1 == pytest.approx(1.0, abs=0.1)
    assert g.rmsd == pytest.approx(0.01, rel=1e-12)
    assert g.cl_b1[0] < g.b1 < g.cl_b1[1]


def test_gof_degenerate_prediction():
    with pytest.raises(ValueError):
        gof(np.full((2, 2), 0.5), np.full((2, 2), 0.5))


def test_kl_examples():
    assert kl_divergence([[0.3, 0.7]], [[0.3, 0.7]]) == 0.0
    assert kl_divergence([[1.0, 0.0]], [[0.5, 0.5]]) == pytest.approx(1.0, rel=1e-9)
    expected = 0.5 * math.log2(2.0) + 0.5 * math.log2(2.0 / 3.0)
    assert kl_divergence([[0.5, 0.5]], [[0.25, 0.75]]) == pytest.approx(expected, rel=1e-9)
    assert expected == pytest.approx(0.2075, abs=1e-4)


@given(st.integers(2, 6), st.integers(0, 2**32))
def test_kl_nonnegative(m, seed):
    rng = np.random.default_rng(seed)
    o, p = rng.dirichlet(np.ones(m), 3), rng.dirichlet(np.ones(m), 3)
    assert kl_divergence(o, p) >= -1e-12


def test_aicc_examples():
    assert aicc(-1000.0, 30, 2000) == pytest.approx(2000 + 60 + 1860 / 1969, rel=1e-9)
    assert aicc(-1000.0, 30, 2000) == pytest.approx(2060.9446, abs=1e-4)
    assert aicc(-12.5, 0, 10) == 25.0
    assert aicc(-50.0, 4, 10**12) == pytest.approx(100.0 + 8.0, rel=1e-9)


def test_aicc_small_sample():
    with pytest.raises(SampleTooSmall):
        aicc(-10.0, 5, 6)


def test_n_observations_bases():
    counts = np.array([[3, 4], [5, 6]])
    assert n_observations(counts) == 18
    assert n_observations(counts, "cells") == 4
    with pytest.raises(ValueError):
        n_observations(counts, "rows")


def test_percent_delta_gf_examples():
    assert percent_delta_gf(-1000.0, -1000.0) == 0.0
    assert percent_delta_gf(-995.0, -1005.0) == pytest.approx(1.0, rel=1e-9)
    assert percent_delta_gf(-1005.0, -995.0) < 0


def _fit(aicc_value, spec, digest="d"):
    th = ParamSet([0.0], [1.0], [0.0], [0.0])
    return FitResult(th, -aicc_value / 2, aicc_value, None, 1, 0.0, 0, spec, [], digest, 10)


def test_compare_winner_and_tie():
    a, b = ModelSpec(3, 4, SDT_EV), ModelSpec(3, 4, VDR)
    rep = compare(_fit(100.0, a), _fit(110.0, b))
    assert rep.winner == "SDT-EV" and rep.preferred == "a" and not rep.tie
    assert rep.delta_aicc == 10.0
    assert rep.pct_aicc_diff == pytest.approx(100 * 10 / 105)
    rep = compare(_fit(100.0, a), _fit(100.0, b))
    assert rep.tie and rep.preferred == "tie"
    rep = compare(_fit(120.0, a), _fit(110.0, a))
    assert rep.preferred == "b"
    assert "winner" in rep.table()


def test_compare_requires_same_data():
    a = ModelSpec(3, 4, SDT_EV)
    with pytest.raises(DataMismatch):
        compare(_fit(1.0, a, "x"), _fit(2.0, a, "y"))
