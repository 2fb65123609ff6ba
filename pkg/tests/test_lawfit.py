import math

import numpy as np
import pytest

from scalefit.errors import NumericalError, ValidationError
from scalefit.lawfit import (
    FitConfig,
    InitGrid,
    MultiEpochObjective,
    RhoGrid,
    SingleEpochObjective,
    fit_multi_epoch,
    fit_single_epoch,
    is_single_epoch,
    multi_epoch_inputs,
    multistart,
    objective_at,
    params_to_theta,
)
from scalefit.laws import SPEECH, ChinchillaParams, predict_loss
from scalefit.numopt import OptConfig, grad_check
from scalefit.runstore import RunRecord
from scalefit.synthgen import SynthSpec, generate_runs

SMALL = FitConfig(init_grid=InitGrid(e=(0.5,), a=(3.0,), b=(3.0, 5.0)))


def rel(a, b):
    return abs(a - b) / abs(b)


def single(runs):
    return [r for r in runs if is_single_epoch(r)]


# ---------------------------------------------------------------- objective

def test_objective_matches_direct_formula(speech_runs_noisy):
    runs = single(speech_runs_noisy)
    obj = SingleEpochObjective([r.n_params for r in runs], [r.d_tokens for r in runs],
                               [r.test_loss for r in runs], 0.03)
    theta = params_to_theta(SPEECH.base)
    want = 0.0
    for r in runs:
        res = math.log(predict_loss(SPEECH.base, r.n_params, r.d_tokens)) - math.log(r.test_loss)
        want += 0.5 * res**2 if abs(res) <= 0.03 else 0.03 * (abs(res) - 0.015)
    assert obj(theta) == pytest.approx(want, rel=1e-10)


def test_log_sum_exp_is_stable_at_extremes():
    obj = SingleEpochObjective([1e6], [1e7], [3.0], 0.03)
    f, g = obj.value_and_grad(np.array([800.0, 800.0, -800.0, 0.1, 0.1]))
    assert math.isfinite(f) and np.all(np.isfinite(g))


def test_gradients_on_grid_points(speech_runs_noisy):
    runs = single(speech_runs_noisy)
    obj = SingleEpochObjective([r.n_params for r in runs], [r.d_tokens for r in runs],
                               [r.test_loss for r in runs], 0.03)
    pts = InitGrid().points()
    for i in range(0, len(pts), 37):
        assert grad_check(obj, obj.gradient, pts[i]) < 1e-6
    used, u_n = multi_epoch_inputs(speech_runs_noisy, SPEECH.base)
    mobj = MultiEpochObjective(SPEECH.base, [r.n_params for r in used], [r.d_tokens for r in used],
                               [r.u_tokens for r in used], u_n, [r.test_loss for r in used], 0.03)
    for p in RhoGrid().points():
        assert grad_check(mobj, mobj.gradient, p) < 1e-6


# ---------------------------------------------------------------- stage one

def test_noiseless_recovery(fit_clean):
    got = fit_clean.params.as_dict()
    for k, v in SPEECH.base.as_dict().items():
        assert rel(got[k], v) < 1e-3, k
    assert fit_clean.n_runs_used == 40
    assert fit_clean.n_starts_ok == 1600


def test_noisy_fit_is_a_genuine_optimum(fit_noisy, speech_runs_noisy):
    # The noisy fit must do at least as well as the generating law on its own
    # objective; any distance from the truth is then a property of the data.
    truth = type(fit_noisy)(SPEECH.base, 0, 0, 0, [], [], None, True, 0)
    assert fit_noisy.objective <= objective_at(truth, speech_runs_noisy, 0.03)
    assert objective_at(fit_noisy, speech_runs_noisy, 0.03) == pytest.approx(
        fit_noisy.objective, rel=1e-12)


def test_report_fields(fit_noisy, speech_runs_noisy):
    assert len(fit_noisy.per_run_residuals) == fit_noisy.n_runs_used == 40
    assert fit_noisy.run_ids == [r.run_id for r in single(speech_runs_noisy)]
    assert 0 <= fit_noisy.winning_init < 1600


def test_too_few_runs():
    runs = [RunRecord(f"r{i}", 1e6 * (i + 1), 1e8 * (i + 1), 3.0) for i in range(5)]
    with pytest.raises(ValidationError, match="more than 5"):
        fit_single_epoch(runs)


def test_degenerate_span():
    runs = [RunRecord(f"r{i}", 1e6, 1e8 * (i + 1), 3.0 - 0.1 * i) for i in range(8)]
    with pytest.raises(ValidationError, match="distinct"):
        fit_single_epoch(runs)


def test_near_single_epoch_runs_count():
    assert is_single_epoch(RunRecord("a", 1, 1.005e9, 2.0, u_tokens=1e9))
    assert not is_single_epoch(RunRecord("a", 1, 1.02e9, 2.0, u_tokens=1e9))


def test_order_and_workers_do_not_change_winner(speech_runs_noisy):
    n = len(SMALL.init_grid.points())
    a = fit_single_epoch(speech_runs_noisy, SMALL)
    b = fit_single_epoch(speech_runs_noisy, SMALL, order=list(reversed(range(n))))
    c = fit_single_epoch(speech_runs_noisy, FitConfig(init_grid=SMALL.init_grid, workers=2))
    for other in (b, c):
        assert other.winning_init == a.winning_init
        assert np.array_equal(other.x_min, a.x_min)
        assert other.objective == a.objective


def test_multistart_tie_breaks_on_lowest_index():
    class Flat:
        def value_and_grad(self, x):
            return 1.0, np.zeros_like(x)

    idx, f, x, conv, n_ok = multistart(Flat(), np.zeros((4, 2)), OptConfig(), order=[3, 1, 0, 2])
    assert idx == 0 and n_ok == 4


def test_multistart_all_fail():
    class Bad:
        def value_and_grad(self, x):
            return math.nan, np.zeros_like(x)

    with pytest.raises(NumericalError, match="every initialization"):
        multistart(Bad(), np.zeros((3, 2)), OptConfig())


def test_multistart_rejects_bad_order():
    with pytest.raises(ValidationError):
        multistart(None, np.zeros((3, 2)), OptConfig(), order=[0, 0, 1])


def test_config_validation():
    with pytest.raises(ValidationError):
        FitConfig(huber_delta=0)
    with pytest.raises(ValidationError):
        FitConfig(init_grid=InitGrid(e=()))
    assert FitConfig().as_dict()["huber_delta"] == 0.03


# ---------------------------------------------------------------- stage two

def test_multi_noiseless_recovery(multi_fit_clean):
    p = multi_fit_clean.params
    assert rel(p.r_star_n, 31.0) < 0.01
    assert rel(p.r_star_d, 25.0) < 0.01
    assert p.base == SPEECH.base
    assert multi_fit_clean.n_runs_used == 160


def test_multi_requires_repeated_runs(speech_runs_clean):
    with pytest.raises(ValidationError, match="repeated-data"):
        fit_multi_epoch(single(speech_runs_clean), SPEECH.base)


def test_multi_requires_chinchilla_base(speech_runs_clean):
    with pytest.raises(ValidationError, match="base"):
        fit_multi_epoch(speech_runs_clean, SPEECH)


def test_multi_objective_self_consistent(multi_fit_noisy, speech_runs_noisy):
    assert objective_at(multi_fit_noisy, speech_runs_noisy, 0.03) == pytest.approx(
        multi_fit_noisy.objective, rel=1e-12)


def test_multi_deterministic_across_workers(speech_runs_noisy, multi_fit_noisy):
    again = fit_multi_epoch(speech_runs_noisy, SPEECH.base, FitConfig(workers=2), order=list(range(24, -1, -1)))
    assert np.array_equal(again.x_min, multi_fit_noisy.x_min)
    assert again.winning_init == multi_fit_noisy.winning_init


def test_text_preset_round_trip():
    from scalefit.laws import TEXT
    runs = generate_runs(SynthSpec(TEXT, epoch_grid=(2, 4)))
    rep = fit_multi_epoch(runs, TEXT.base)
    assert rel(rep.params.r_star_n, 5.31) < 0.01 and rel(rep.params.r_star_d, 15.4) < 0.01
