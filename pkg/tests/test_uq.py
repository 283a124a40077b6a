import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from botuq.bnn import BayesianModel
from botuq.uq import (
    AccountPrediction,
    Decision,
    PosteriorSamplingConfig,
    closure_zscore,
    decide,
    decide_all,
    posterior_predict,
    read_predictions,
    uncertainty_profile,
    write_predictions,
)

import oracles


def one_weight_model(f_mean=0.0, f_log_var=None, s_value=-30.0):
    """x = 1 feeds a single head: f = W_f + b_f, s = W_s + b_s, no hidden layer.

    Log-variances of -1e3 clamp to the 1e-12 floor (weights effectively fixed).
    """
    m = BayesianModel(1, hidden=(), flow_length=0, batch_norm=False, init_log_var=-1e3, seed=0)
    h = m.head
    h.weight_mean.values = np.array([[f_mean, s_value]])
    h.bias_mean.values = np.zeros(2)
    if f_log_var is not None:
        h.weight_log_var.values = np.array([[f_log_var, -1e3]])
    return m


def test_deterministic_collapse():
    m = one_weight_model(f_mean=0.7)
    (p,) = posterior_predict(m, np.ones((1, 1)), PosteriorSamplingConfig(n_weight_samples=50, n_noise_samples=16))
    assert p.p_mean == pytest.approx(1 / (1 + math.exp(-0.7)), abs=1e-5)
    assert p.sigma_epistemic < 1e-5 and p.sigma_aleatoric < 1e-9


def test_epistemic_channel_small_n():
    ref = oracles.sigmoid_normal_moments()
    m = one_weight_model(f_log_var=0.0)
    n = 20_000
    (p,) = posterior_predict(m, np.ones((1, 1)), PosteriorSamplingConfig(n_weight_samples=n, n_noise_samples=8))
    assert abs(p.sigma_epistemic - ref["std"]) <= 3 * ref["se_std_factor"] / math.sqrt(n)
    assert abs(p.p_mean - 0.5) <= 3 * ref["std"] / math.sqrt(n)
    assert p.sigma_aleatoric < 0.01


def test_aleatoric_channel_small_n():
    ref = oracles.sigmoid_normal_moments()
    m = one_weight_model(s_value=0.0)
    (p,) = posterior_predict(m, np.ones((1, 1)), PosteriorSamplingConfig(n_weight_samples=200, n_noise_samples=256))
    assert p.sigma_aleatoric == pytest.approx(ref["std"], abs=2e-4)
    assert p.sigma_epistemic < 0.01


def test_delta_method_option():
    m = one_weight_model(s_value=math.log(0.1))
    cfg = PosteriorSamplingConfig(n_weight_samples=10, n_noise_samples=4, aleatoric_method="delta")
    (p,) = posterior_predict(m, np.ones((1, 1)), cfg)
    assert p.sigma_aleatoric == pytest.approx(0.25 * 0.1, rel=1e-6)


def test_predictive_probability_option():
    m = one_weight_model(f_mean=2.0, s_value=0.0)
    base = dict(n_weight_samples=4, n_noise_samples=512)
    (lat,) = posterior_predict(m, np.ones((1, 1)), PosteriorSamplingConfig(**base))
    (pre,) = posterior_predict(m, np.ones((1, 1)), PosteriorSamplingConfig(**base, probability="predictive"))
    assert lat.p_mean == pytest.approx(1 / (1 + math.exp(-2.0)), abs=1e-5)
    assert pre.p_mean == pytest.approx(oracles.sigmoid_normal_moments(2.0, 1.0)["mean"], abs=1e-3)


def test_needs_two_samples():
    with pytest.raises(ValueError):
        posterior_predict(one_weight_model(), np.ones((1, 1)), PosteriorSamplingConfig(n_weight_samples=1))
    preds = posterior_predict(one_weight_model(), np.ones((3, 1)), PosteriorSamplingConfig(n_weight_samples=2))
    assert len(preds) == 3


def test_chunking_does_not_change_results():
    m = BayesianModel(3, hidden=(4,), init_log_var=-2.0, seed=1)
    x = np.random.default_rng(0).normal(size=(10, 3))
    a = posterior_predict(m, x, PosteriorSamplingConfig(n_weight_samples=5, n_noise_samples=8, batch_size=3))
    b = posterior_predict(m, x, PosteriorSamplingConfig(n_weight_samples=5, n_noise_samples=8, batch_size=100))
    for pa, pb in zip(a, b):
        assert pa.p_mean == pytest.approx(pb.p_mean, rel=1e-12)
        assert pa.sigma_aleatoric == pytest.approx(pb.sigma_aleatoric, rel=1e-12)


def test_sampling_convergence():
    m = BayesianModel(3, hidden=(4,), init_log_var=-1.0, batch_norm=False, seed=2)
    x = np.random.default_rng(1).normal(size=(200, 3))
    n = 200
    a = posterior_predict(m, x, PosteriorSamplingConfig(n_weight_samples=n, n_noise_samples=4, seed=1))
    b = posterior_predict(m, x, PosteriorSamplingConfig(n_weight_samples=4 * n, n_noise_samples=4, seed=2))
    ok = [abs(pa.p_mean - pb.p_mean) < 3 * pa.sigma_epistemic / math.sqrt(n) for pa, pb in zip(a, b)]
    assert np.mean(ok) >= 0.95


# ---- decisions ----------------------------------------------------------------------

def _pred(p, e=0.0, a=0.0):
    return AccountPrediction("x", p, e, a, 100)


def test_decision_examples():
    assert decide(_pred(0.9, e=0.05), "epistemic").decision is Decision.BOT
    assert decide(_pred(0.52, a=0.02), "aleatoric").decision is Decision.ABSTAIN
    q = decide(_pred(0.2, e=0.05, a=0.05), "quadrature")
    assert q.sigma_total == pytest.approx(0.0707106781, rel=1e-9)
    assert q.decision is Decision.HUMAN
    assert decide(_pred(0.5), "none").decision is Decision.ABSTAIN
    assert decide(_pred(0.5000001), "none").decision is Decision.BOT
    with pytest.raises(ValueError):
        decide(_pred(0.9), "epistemic", k=-1)


@given(st.floats(0, 1), st.floats(0, 0.3), st.floats(0, 0.3), st.floats(0, 5))
def test_decisions_recheckable_and_nested(p, e, a, k):
    pred = _pred(p, e, a)
    assert pred.sigma_total**2 == pytest.approx(e**2 + a**2, abs=1e-12)
    out = {kind: decide(pred, kind, k).decision for kind in ("epistemic", "aleatoric", "quadrature")}
    for kind, d in out.items():
        s = pred.sigma(kind)
        expect = Decision.ABSTAIN if not (abs(p - 0.5) > k * s and p != 0.5) else (
            Decision.BOT if p > 0.5 else Decision.HUMAN)
        assert d is expect
    if out["epistemic"] is Decision.ABSTAIN or out["aleatoric"] is Decision.ABSTAIN:
        assert out["quadrature"] is Decision.ABSTAIN


def test_decide_all_matches_decide():
    preds = [_pred(p, e, a) for p, e, a in [(0.1, 0.1, 0.0), (0.7, 0.01, 0.05), (0.5, 0, 0), (0.95, 0.2, 0.2)]]
    assert [d.decision for d in decide_all(preds, "quadrature")] == [decide(p).decision for p in preds]


# ---- closure ------------------------------------------------------------------------

def test_closure_examples():
    a = [AccountPrediction("u", 0.6, 0.1, 0.0, 10), AccountPrediction("v", 0.3, 0.0, 0.0, 10)]
    b = [AccountPrediction("v", 0.3, 0.0, 0.0, 10), AccountPrediction("u", 0.5, 0.1, 0.0, 10)]
    res = closure_zscore(a, b)
    assert res.account_ids == ["u"] and res.n_excluded == 1
    assert res.z[0] == pytest.approx(0.1 / math.sqrt(0.02), rel=1e-12)
    assert closure_zscore(a, a).z.tolist() == [0.0]
    with pytest.raises(ValueError):
        closure_zscore(a, a[:1])
    hist = res.histogram()
    assert sum(hist["counts"]) == 1 and hist["n_excluded"] == 1


# ---- profile ------------------------------------------------------------------------

def test_profile_single_point():
    bins = uncertainty_profile([_pred(0.3, 0.1, 0.2)], 10)
    assert [b.count for b in bins] == [0, 0, 0, 1, 0, 0, 0, 0, 0, 0]
    assert bins[3].mean_sigma_total == pytest.approx(math.hypot(0.1, 0.2))
    assert bins[0].empty and math.isnan(bins[0].mean_p)
    with pytest.raises(ValueError):
        uncertainty_profile([], 10)
    with pytest.raises(ValueError):
        uncertainty_profile([_pred(0.3)], 1)


def test_profile_mirror_symmetry():
    rng = np.random.default_rng(0)
    p = rng.random(500)
    e = 0.1 * p * (1 - p)
    preds = [_pred(x, s, 0.0) for x, s in zip(p, e)] + [_pred(1 - x, s, 0.0) for x, s in zip(p, e)]
    bins = uncertainty_profile(preds, 10)
    for lo, hi in zip(bins, bins[::-1]):
        assert lo.count == hi.count
        assert lo.mean_sigma_epistemic == pytest.approx(hi.mean_sigma_epistemic, rel=0.05)


def test_predictions_round_trip(tmp_path):
    preds = decide_all([_pred(0.1, 0.01, 0.02), _pred(0.55, 0.2, 0.0)], "epistemic")
    write_predictions(preds, tmp_path / "p.csv")
    back = read_predictions(tmp_path / "p.csv")
    assert back == preds
    header = (tmp_path / "p.csv").read_text().splitlines()[0]
    assert header == "account_id,p_mean,sigma_epistemic,sigma_aleatoric,sigma_total,decision,n_weight_samples"
