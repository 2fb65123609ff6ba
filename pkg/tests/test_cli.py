import json

import pytest

from scalefit.artifacts import LawArtifact, load_artifact, save_artifact
from scalefit.cli import run
from scalefit.laws import SPEECH
from scalefit.runstore import load_curves, load_runs
from scalefit.scalecurves import PowerLawFit

SMALL_GRID = ["--grid-e", "0.5", "--grid-a", "3", "--grid-b", "3,5"]


@pytest.fixture
def data(tmp_path):
    runs, curves = tmp_path / "runs.csv", tmp_path / "curves.csv"
    assert run(["synth", "--law", "preset:speech", "--seed", "0", "--noise", "0.01",
                "--out", str(runs), "--curves-out", str(curves), "--checkpoints", "8"]) == 0
    return tmp_path, runs, curves


def test_synth_outputs_and_determinism(data, tmp_path):
    _, runs, curves = data
    assert len(load_runs(runs)) == 200 and len(load_curves(curves)) == 320
    again = tmp_path / "again.csv"
    assert run(["synth", "--law", "preset:speech", "--seed", "0", "--noise", "0.01",
                "--out", str(again)]) == 0
    assert again.read_bytes() == runs.read_bytes()


def test_synth_custom_grid(tmp_path):
    out = tmp_path / "r.json"
    assert run(["synth", "--law", "preset:speech-unigram", "--sizes", "1e7,2e7", "--ratios", "5,10,20",
                "--seed", "1", "--out", str(out)]) == 0
    assert len(load_runs(out)) == 6


def test_fit_single_writes_artifact_with_meta(data, capsys):
    tmp, runs, curves = data
    out = tmp / "law.json"
    rc = run(["fit", "--runs", str(runs), "--curves", str(curves), "--stage", "single",
              "--out", str(out)] + SMALL_GRID)
    assert rc == 0
    art = load_artifact(out)
    assert art.type == "single_epoch"
    meta = art.fit_meta
    assert meta["n_runs_used"] == 40 and meta["huber_delta"] == 0.03
    assert meta["config"]["init_grid"]["b"] == [3.0, 5.0]
    assert len(meta["input_sha256"]) == 64 and meta["tool_version"] == "0.1.0"
    assert meta["loss_compute_law"]["type"] == "power_law"
    assert "wrote single_epoch" in capsys.readouterr().out


def test_fit_is_bit_identical_across_runs_and_workers(data):
    tmp, runs, _ = data
    outs = [tmp / f"l{i}.json" for i in range(3)]
    for o, extra in zip(outs, ([], [], ["--workers", "2"])):
        assert run(["fit", "--runs", str(runs), "--stage", "single", "--out", str(o)]
                   + SMALL_GRID + extra) == 0
    body = [json.loads(o.read_text()) for o in outs]
    for b in body:
        b["fit_meta"]["config"].pop("workers", None)
    assert outs[0].read_bytes() == outs[1].read_bytes()
    assert body[0] == body[2]


def test_fit_multi_with_base(data):
    tmp, runs, _ = data
    base = tmp / "base.json"
    save_artifact(LawArtifact(SPEECH.base), base)
    out = tmp / "multi.json"
    assert run(["fit", "--runs", str(runs), "--stage", "multi", "--base", str(base),
                "--out", str(out)]) == 0
    law = load_artifact(out).law
    assert abs(law.r_star_n / 31 - 1) < 0.2 and abs(law.r_star_d / 25 - 1) < 0.2


def test_fit_huber_override_echoed(data):
    tmp, runs, _ = data
    out = tmp / "law.json"
    assert run(["fit", "--runs", str(runs), "--stage", "single", "--huber-delta", "0.1",
                "--out", str(out)] + SMALL_GRID) == 0
    assert load_artifact(out).fit_meta["config"]["huber_delta"] == 0.1


def test_fit_errors(tmp_path, capsys):
    assert run(["fit", "--runs", str(tmp_path / "none.csv"), "--stage", "single",
                "--out", str(tmp_path / "o.json")]) == 2
    assert "no such file" in capsys.readouterr().err.lower()
    few = tmp_path / "few.csv"
    few.write_text("run_id,n_params,d_tokens,test_loss\na,1,2,3\n")
    assert run(["fit", "--runs", str(few), "--stage", "single", "--out", str(tmp_path / "o.json")]) == 2
    assert run(["fit", "--runs", str(few), "--stage", "double", "--out", "x"]) == 1


def test_allocate_speech(tmp_path, capsys):
    law = tmp_path / "law.json"
    save_artifact(LawArtifact(SPEECH), law)
    assert run(["allocate", "--law", str(law), "--compute", "6e18"]) == 0
    out = capsys.readouterr().out
    assert "N_opt     8.32e+07" in out and "D_opt     1.20192e+10" in out
    assert "constraint 6*N*D = C: OK" in out


def test_invert(capsys):
    assert run(["invert", "--law", "preset:speech", "--target-loss", "1.9673"]) == 0
    assert "compute   3.76529e+19" in capsys.readouterr().out
    assert run(["invert", "--law", "preset:speech", "--target-loss", "1.73"]) == 2
    assert "E=1.73" in capsys.readouterr().err


def test_predict(capsys):
    assert run(["predict", "--law", "preset:speech", "--n", "823e6", "--d", "10.89e9"]) == 0
    assert capsys.readouterr().out.strip() == "loss 1.967303705"
    assert run(["predict", "--law", "preset:speech", "--n", "1e8", "--d", "4e9", "--u-d", "1e9"]) == 0
    assert float(capsys.readouterr().out.split()[1]) > 1.967
    assert run(["predict", "--law", "preset:speech-unigram", "--n", "1e8", "--d", "4e9",
                "--u-d", "1e9"]) == 2


def test_compare_direct(capsys):
    assert run(["compare", "--metric", "blimp", "--gamma-ref", "0.066", "--gamma-other", "0.021"]) == 0
    line = capsys.readouterr().out.splitlines()[1].split()
    assert line[0] == "blimp" and line[3] == "3.14"


def test_compare_lists_and_laws(tmp_path, capsys):
    assert run(["compare", "--metric", "blimp,tcloze,scloze", "--gamma-ref", "0.066,0.039,0.046",
                "--gamma-other", "0.021,0.025,0.017"]) == 0
    ratios = [ln.split()[3] for ln in capsys.readouterr().out.splitlines()[1:]]
    assert ratios == ["3.14", "1.56", "2.71"]
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    save_artifact(LawArtifact(PowerLawFit(30.0, 0.066, 1.0, (1e15, 1e21), 5)), a)
    save_artifact(LawArtifact(PowerLawFit(30.0, 0.021, 1.0, (1e15, 1e21), 5)), b)
    assert run(["compare", "--metric", "blimp", "--law-ref", str(a), "--law-other", str(b)]) == 0
    assert run(["compare", "--metric", "blimp", "--law-ref", str(a)]) == 1
    assert run(["compare", "--metric", "blimp"]) == 1
    assert run(["compare", "--metric", "x", "--gamma-ref", "0.05", "--gamma-other", "-0.02"]) == 2


def test_project(tmp_path, capsys):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    save_artifact(LawArtifact(PowerLawFit(3.0, 0.066, 1.0, (1e15, 1e21), 5)), a)
    save_artifact(LawArtifact(PowerLawFit(3.0, 0.021, 1.0, (1e15, 1e21), 5)), b)
    assert run(["project", "--law-ref", str(a), "--law-other", str(b), "--c-ref", "1e18"]) == 0
    out = capsys.readouterr().out
    assert "C_other" in out and "warning: extrapolated" in out
    assert run(["project", "--law-ref", str(a), "--law-other", "preset:speech", "--c-ref", "1"]) == 2


def test_envelope_and_plot(data, capsys):
    tmp, _, curves = data
    out, plot = tmp / "env.json", tmp / "plot.csv"
    assert run(["envelope", "--curves", str(curves), "--y", "loss", "--out", str(out),
                "--emit-plot", str(plot), "--burn-in", "0.1"]) == 0
    art = load_artifact(out)
    assert art.type == "power_law" and art.law.exponent < 0 and art.fit_meta["burn_in"] == 0.1
    lines = plot.read_text().splitlines()
    assert "scale=log-log" in lines[0] and lines[1] == "series,compute,loss"
    assert {ln.split(",")[0] for ln in lines[2:]} == {"envelope", "fit"}
    assert run(["envelope", "--curves", str(curves), "--y", "metric:blimp", "--out", str(out)]) == 2
    assert run(["envelope", "--curves", str(curves), "--y", "acc", "--out", str(out)]) == 1


def test_correlate(tmp_path, capsys):
    p = tmp_path / "r.csv"
    p.write_text("run_id,n_params,d_tokens,test_loss,metric.acc\n"
                 "a,1,1,2.0,80\nb,1,1,2.1,78\nc,1,1,2.2,76\n")
    out = tmp_path / "lin.json"
    assert run(["correlate", "--runs", str(p), "--metric", "acc", "--out", str(out)]) == 0
    assert "pearson r -1.000000" in capsys.readouterr().out
    assert load_artifact(out).type == "linear"
    assert run(["correlate", "--runs", str(p), "--metric", "acc", "--metric-cap", "77"]) == 2


def test_config_file_and_flag_precedence(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"compute": 6e18, "law": "preset:speech"}))
    assert run(["allocate", "--config", str(cfg)]) == 0
    assert "compute   6e+18" in capsys.readouterr().out
    assert run(["allocate", "--config", str(cfg), "--compute", "6e20"]) == 0
    assert "compute   6e+20" in capsys.readouterr().out
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run(["allocate", "--config", str(cfg)]) == 1
    assert run(["allocate", "--config", str(tmp_path / "none.json")]) == 2


def test_usage_errors(capsys):
    assert run([]) == 1
    assert run(["nope"]) == 1
    assert run(["allocate", "--law", "preset:speech", "--compute", "6e18", "--colour"]) == 1
    assert "unrecognized arguments" in capsys.readouterr().err
    assert run(["--version"]) == 0
    assert run(["allocate", "--law", "preset:nope", "--compute", "1"]) == 2


def test_no_color_plain_output(monkeypatch, capsys):
    monkeypatch.setenv("NO_COLOR", "1")
    assert run(["compare", "--metric", "blimp", "--gamma-ref", "0.066", "--gamma-other", "0.021"]) == 0
    assert "\x1b[" not in capsys.readouterr().out


def test_check(capsys):
    assert run(["check", "--verbose"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "14/14 checks passed" in out
