import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from hmmfluct.config import ExperimentConfig
from hmmfluct.errors import EnsembleError
from hmmfluct.experiment import (
    _jackknife_shape,
    _moments,
    amplification_scan,
    batch_variance_stderr,
    epsilon_scan,
    gaussianity_report,
    run_coupled,
    run_ensemble,
    summarize,
    variance_ratio,
)

SMALL = ExperimentConfig(N=4, eps=2.0**-7, samples=12, seed=3, ratios=(1.0, 0.5))


def test_batch_stderr():
    assert math.isnan(batch_variance_stderr(np.ones(10)))
    x = np.random.default_rng(0).normal(size=4000)
    se = batch_variance_stderr(x)
    assert 0.5 * math.sqrt(2 / 4000) < se < 2.0 * math.sqrt(2 / 4000)


def test_shape_statistics_match_scipy():
    x = np.random.default_rng(1).gamma(3.0, size=500)
    skew, kurt = _moments(x)
    assert math.isclose(skew, stats.skew(x), rel_tol=1e-10)
    assert math.isclose(kurt, stats.kurtosis(x), rel_tol=1e-10)
    js, jk = _jackknife_shape(x)
    for i in (0, 17, 499):
        s, k = _moments(np.delete(x, i))
        assert math.isclose(js[i], s, rel_tol=1e-8) and math.isclose(jk[i], k, rel_tol=1e-8)


def test_gaussianity_report():
    x = np.random.default_rng(2).normal(3.0, 1e-6, size=2000)
    g = gaussianity_report(x)
    assert not g["degenerate"]
    assert abs(g["skewness"]) < 4 * g["skewness_stderr"]
    assert abs(g["excess_kurtosis"]) < 4 * g["excess_kurtosis_stderr"]
    assert g["ks_pvalue"] > 1e-3
    with pytest.raises(ValueError):
        gaussianity_report(x[:100])
    assert gaussianity_report(np.ones(600))["degenerate"]
    e = gaussianity_report(np.random.default_rng(3).exponential(size=2000))
    assert e["ks_pvalue"] < 1e-6 and e["skewness"] > 1.5


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.1, 10.0))
def test_variance_ratio_of_scaled_copy(seed, c):
    x = np.random.default_rng(seed).normal(size=200)
    R, se = variance_ratio(c * x + 1.0, x)
    assert math.isclose(R, c * c, rel_tol=1e-10)
    assert se < 1e-8 * max(R, 1.0)


def test_variance_ratio_stderr_covers_truth():
    rng = np.random.default_rng(4)
    x = rng.normal(size=4000)
    y = 2.0 * x + rng.normal(size=4000)
    R, se = variance_ratio(y, x)
    assert abs(R - 5.0) < 4 * se


def test_coupled_run_shares_fields_and_is_deterministic():
    a = run_coupled(SMALL, (1.0, 0.5))
    b = run_coupled(SMALL, (1.0, 0.5))
    assert [s.value for s in a[0]] == [s.value for s in b[0]]
    assert [s.seed for s in a[0]] == [s.seed for s in a[1]]
    assert [s.index for s in a[1]] == list(range(12))
    single = run_coupled(SMALL, (0.5,))
    assert [s.value for s in single[0]] == [s.value for s in a[1]]


def test_zero_field_ensemble():
    ens = run_ensemble(SMALL.with_overrides(kind="zero"))
    assert np.all(ens.values == 0)
    assert ens.summary["variance"] == 0.0
    assert ens.intermediate_variance == 0.0


def test_failing_ensemble_raises():
    cfg = SMALL.with_overrides(q0="0.5")  # q0 + q_eps can reach -0.5
    with pytest.raises(EnsembleError) as info:
        run_coupled(cfg, (1.0,))
    assert len(info.value.failures) == 12


def test_summary_and_scans():
    scan = amplification_scan(SMALL.with_overrides(n_ref=16), (1.0, 0.5))
    assert [row["ratio"] for row in scan.rows] == [1.0, 0.5]
    assert scan.rows[0]["variance_ratio"] == 1.0
    assert math.isclose(scan.rows[1]["limit_ratio"], 4.0)
    s = summarize(scan.ensembles[0].samples)
    assert s["count"] == 12 and s["invalid"] == 0
    assert s["residual_fraction"] < 0.05
    eps_scan = epsilon_scan(SMALL.with_overrides(samples=4), (2.0**-7, 2.0**-8))
    assert [row["eps"] for row in eps_scan.rows] == [2.0**-7, 2.0**-8]
    assert all(r["intermediate_variance"] > 0 for r in eps_scan.rows)
