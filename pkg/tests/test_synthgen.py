import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scalefit.alloc import optimal_params_for_tokens
from scalefit.errors import ValidationError
from scalefit.laws import SPEECH, SPEECH_UNIGRAM, TEXT, predict_loss, predict_loss_multi
from scalefit.runstore import RunRecord
from scalefit.scalecurves import fit_power_law, loss_compute_law, metric_compute_law
from scalefit.synthgen import SplitMix64, SynthSpec, checkpoint_tokens, generate_curves, generate_runs


def test_splitmix64_reference_vector():
    # published outputs of the reference implementation for seed 1234567
    r = SplitMix64(1234567)
    assert [r.next_u64() for _ in range(5)] == [
        6457827717110365317, 3203168211198807973, 9817491932198370423,
        4593380528125082431, 16408922859458223821,
    ]


def test_uniform_range_and_normal_moments():
    r = SplitMix64(7)
    u = np.array([r.uniform() for _ in range(20000)])
    assert u.min() > 0 and u.max() <= 1
    z = np.array([r.normal() for _ in range(40000)])
    assert abs(z.mean()) < 0.02 and abs(z.std() - 1) < 0.02


def test_default_grid_cardinality():
    assert len(generate_runs(SynthSpec(SPEECH_UNIGRAM))) == 40
    runs = generate_runs(SynthSpec(SPEECH))
    assert len(runs) == 40 + 40 * 4
    assert sum(1 for r in runs if r.u_tokens == r.d_tokens) == 40


def test_noiseless_identity():
    for r in generate_runs(SynthSpec(SPEECH)):
        if r.u_tokens == r.d_tokens:
            assert r.test_loss == predict_loss(SPEECH.base, r.n_params, r.d_tokens)
        else:
            u_n = optimal_params_for_tokens(SPEECH.base, r.u_tokens)
            assert r.test_loss == predict_loss_multi(SPEECH, r.n_params, r.d_tokens, r.u_tokens, u_n)
            assert r.d_tokens / r.u_tokens in (2, 4, 8, 10) or math.isclose(
                r.d_tokens / r.u_tokens, round(r.d_tokens / r.u_tokens))


def test_determinism_and_seed_sensitivity():
    a = generate_runs(SynthSpec(SPEECH, noise_sigma=0.01, seed=3))
    b = generate_runs(SynthSpec(SPEECH, noise_sigma=0.01, seed=3))
    c = generate_runs(SynthSpec(SPEECH, noise_sigma=0.01, seed=4))
    assert a == b
    assert [r.test_loss for r in a] != [r.test_loss for r in c]


def test_noise_is_log_normal_draw_in_record_order():
    spec = SynthSpec(SPEECH_UNIGRAM, sizes=(1e7,), ratios=(10, 20), noise_sigma=0.05, seed=11)
    rng = SplitMix64(11)
    for r in generate_runs(spec):
        clean = predict_loss(SPEECH_UNIGRAM, r.n_params, r.d_tokens)
        assert r.test_loss == math.exp(math.log(clean) + 0.05 * rng.normal())


@pytest.mark.parametrize("kw", [dict(sizes=()), dict(ratios=()), dict(noise_sigma=-1.0),
                                dict(epoch_grid=(0.5,))])
def test_spec_validation(kw):
    with pytest.raises(ValidationError):
        SynthSpec(SPEECH, **kw)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**64 - 1), st.floats(0, 0.2))
def test_records_always_valid(seed, sigma):
    spec = SynthSpec(TEXT, sizes=(2e7, 3e8), ratios=(2, 50), epoch_grid=(2, 10), noise_sigma=sigma, seed=seed)
    for r in generate_runs(spec):
        assert isinstance(r, RunRecord) and r.test_loss > 0 and r.u_tokens <= r.d_tokens


def test_log_residual_mean_over_1000_seeds():
    law = SPEECH_UNIGRAM
    clean = [math.log(predict_loss(law, n, n * k)) for n in (20e6, 85e6, 155e6, 309e6, 823e6)
             for k in (2, 4, 8, 10, 20, 32, 64, 100)]
    total = 0.0
    count = 0
    for seed in range(1000):
        runs = generate_runs(SynthSpec(law, noise_sigma=0.01, seed=seed))
        total += sum(math.log(r.test_loss) - c for r, c in zip(runs, clean))
        count += len(runs)
    assert abs(total / count) <= 0.001


# ---------------------------------------------------------------- curves

def test_checkpoint_tokens():
    t = checkpoint_tokens(1e9, 3, 0.01)
    assert t[-1] == 1e9 and t[0] == pytest.approx(1e7) and t[1] == pytest.approx(1e8)


def test_curves_endpoint_matches_runs():
    spec = SynthSpec(SPEECH.base)
    runs = {r.run_id: r for r in generate_runs(spec)}
    curves = generate_curves(spec, 2)
    assert len(curves) == 80
    for rid, pts in curves.by_run().items():
        assert len(pts) == 2
        assert pts[-1].loss == runs[rid].test_loss
        assert pts[-1].compute == 6 * runs[rid].n_params * runs[rid].d_tokens


def test_curves_validation():
    with pytest.raises(ValidationError):
        generate_curves(SynthSpec(SPEECH), 1)


def analytic_envelope(law, spec, lo, hi, n=4000):
    """Minimal loss at each compute on a dense grid, straight from the law."""
    cs = np.geomspace(lo, hi, n)
    best = np.full(n, np.inf)
    for size in spec.sizes:
        # the runs of one size jointly cover t in [0.01 * min ratio, max ratio] * N
        t = cs / (6 * size)
        lo_t, hi_t = 0.01 * min(spec.ratios) * size, max(spec.ratios) * size
        ok = (t >= lo_t * (1 - 1e-12)) & (t <= hi_t * (1 + 1e-12))
        loss = law.E + law.A / size**law.alpha + law.B / np.where(ok, t, 1.0) ** law.beta
        best = np.where(ok, np.minimum(best, loss), best)
    return cs, best


def test_envelope_slope_matches_dense_grid_oracle():
    spec = SynthSpec(SPEECH.base)
    curves = generate_curves(spec, 40)
    fit = loss_compute_law(curves)
    cs, best = analytic_envelope(SPEECH.base, spec, *fit.domain)
    oracle = fit_power_law(list(zip(cs, best)))
    assert abs(fit.exponent - oracle.exponent) <= 0.005


def test_metric_map_composition_matches_oracle():
    spec = SynthSpec(SPEECH.base)
    curves = generate_curves(spec, 40, metric_maps={"acc": (-20.0, 120.0)})
    fit = metric_compute_law(curves, "acc")
    cs, best = analytic_envelope(SPEECH.base, spec, *fit.domain)
    oracle = fit_power_law(list(zip(cs, 120.0 - 20.0 * best)))
    assert fit.exponent > 0
    assert abs(fit.exponent - oracle.exponent) <= 0.005
    for p in curves:
        assert p.metrics["acc"] == -20.0 * p.loss + 120.0
