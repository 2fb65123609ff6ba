"""Command-line interface: ``scalefit <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numerical
failure. Output is plain text (no colour), so ``NO_COLOR`` is always honoured.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import alloc, lawfit, linkage, scalecurves, synthgen
from .artifacts import LawArtifact, __version__, file_sha256, load_artifact, save_artifact
from .errors import NumericalError, ScaleFitError, ValidationError
from .laws import PRESETS, ChinchillaParams, MultiEpochParams, predict_loss, predict_loss_multi
from .numopt import OptConfig, grad_check
from .runstore import load_curves, load_runs, save_curves, save_runs
from .scalecurves import PowerLawFit

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers: {text!r}")


def _out(msg: str = ""):
    print(msg, file=sys.stdout)


def _load_law(spec: str):
    """A law artifact path, or ``preset:<name>`` for a built-in parameter set."""
    if spec.startswith("preset:"):
        name = spec.split(":", 1)[1]
        if name not in PRESETS:
            raise ValidationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return LawArtifact(PRESETS[name], {"preset": name})
    return load_artifact(spec)


def _chinchilla(art: LawArtifact) -> ChinchillaParams:
    law = art.law
    if isinstance(law, MultiEpochParams):
        return law.base
    if isinstance(law, ChinchillaParams):
        return law
    raise ValidationError(f"expected a single_epoch or multi_epoch law, got {art.type}")


def _power_law(art: LawArtifact, which: str) -> PowerLawFit:
    if not isinstance(art.law, PowerLawFit):
        raise ValidationError(f"{which}: expected a power_law artifact, got {art.type}")
    return art.law


# ---------------------------------------------------------------------------
# commands


def cmd_fit(args) -> int:
    runs = load_runs(args.runs)
    opt = OptConfig(
        memory_pairs=args.memory_pairs, grad_tol=args.grad_tol, max_iters=args.max_iters
    )
    grid = lawfit.InitGrid(
        *(tuple(getattr(args, f"grid_{k}") or d) for k, d in (
            ("e", lawfit.DEFAULT_E_GRID), ("a", lawfit.DEFAULT_AB_GRID),
            ("b", lawfit.DEFAULT_AB_GRID), ("alpha", lawfit.DEFAULT_ALPHA_GRID),
            ("beta", lawfit.DEFAULT_ALPHA_GRID)))
    )
    rho = lawfit.RhoGrid(
        tuple(args.grid_rho_n or lawfit.DEFAULT_RHO_GRID),
        tuple(args.grid_rho_d or lawfit.DEFAULT_RHO_GRID),
    )
    cfg = lawfit.FitConfig(
        huber_delta=args.huber_delta, init_grid=grid, rho_grid=rho, opt=opt, workers=args.workers
    )
    meta = {
        "stage": args.stage,
        "input": str(args.runs),
        "input_sha256": file_sha256(args.runs),
        "config": cfg.as_dict(),
        "tool_version": __version__,
    }
    if args.stage == "single":
        rep = lawfit.fit_single_epoch(runs, cfg)
    else:
        if args.base:
            base_art = _load_law(args.base)
            base = _chinchilla(base_art)
            meta["base"] = str(args.base)
        else:
            base_rep = lawfit.fit_single_epoch(runs, cfg)
            base = base_rep.params
            meta["base"] = "fitted from the single-epoch runs of the same input"
            meta["base_objective"] = base_rep.objective
        rep = lawfit.fit_multi_epoch(runs, base, cfg)
    meta.update(
        huber_delta=cfg.huber_delta,
        n_runs_used=rep.n_runs_used,
        objective=rep.objective,
        winning_init=rep.winning_init,
        converged=rep.converged,
    )
    if args.curves:
        curves = load_curves(args.curves)
        pl = scalecurves.loss_compute_law(curves, args.burn_in)
        meta["loss_compute_law"] = LawArtifact(pl).to_dict()
        meta["curves_sha256"] = file_sha256(args.curves)
    art = LawArtifact(rep.params, meta)
    save_artifact(art, args.out)
    _out(f"wrote {art.type} law to {args.out}")
    for k, v in rep.params.as_dict().items():
        _out(f"  {k:9s} {v:.6g}")
    _out(f"  objective {rep.objective:.6g}  runs used {rep.n_runs_used}  "
         f"winning init {rep.winning_init}")
    return EXIT_OK


def cmd_predict(args) -> int:
    art = _load_law(args.law)
    law = art.law
    if isinstance(law, MultiEpochParams) and args.u_d is not None:
        # U_N is the compute-optimal size for the unique tokens
        u_n = alloc.optimal_params_for_tokens(law.base, args.u_d)
        loss = predict_loss_multi(law, args.n, args.d, args.u_d, u_n)
    else:
        if args.u_d is not None and args.u_d != args.d:
            raise ValidationError("--u-d below --d needs a multi_epoch law")
        loss = predict_loss(_chinchilla(art), args.n, args.d)
    _out(f"loss {loss:.10g}")
    return EXIT_OK


def _print_alloc(res: alloc.AllocationResult):
    rel = abs(6.0 * res.n_opt * res.d_opt - res.compute) / res.compute
    _out(f"compute   {res.compute:.6g}")
    _out(f"N_opt     {res.n_opt:.6g}")
    _out(f"D_opt     {res.d_opt:.6g}")
    _out(f"loss      {res.predicted_loss:.10g}")
    _out(f"constraint 6*N*D = C: {'OK' if rel <= 1e-12 else 'FAIL'} (rel err {rel:.2e})")
    return rel <= 1e-12


def cmd_allocate(args) -> int:
    params = _chinchilla(_load_law(args.law))
    k = alloc.allocation_constants(params)
    _out(f"G {k.G:.6g}  a {k.a:.6g}  b {k.b:.6g}")
    ok = _print_alloc(alloc.optimal_allocation(params, args.compute))
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_invert(args) -> int:
    params = _chinchilla(_load_law(args.law))
    c = alloc.compute_for_loss(params, args.target_loss)
    ok = _print_alloc(alloc.optimal_allocation(params, c))
    return EXIT_OK if ok else EXIT_NUMERIC


def _write_plot(path, env, fit: PowerLawFit, y_name: str):
    with open(path, "w", newline="") as fh:
        fh.write(f"# x=compute (FLOPs) y={y_name}; scale=log-log\n")
        w = csv.writer(fh)
        w.writerow(["series", "compute", y_name])
        for c, v in env:
            w.writerow(["envelope", repr(c), repr(v)])
        lo, hi = fit.domain
        for c in np.geomspace(lo, hi, 50):
            w.writerow(["fit", repr(float(c)), repr(float(fit.predict(c)))])


def cmd_envelope(args) -> int:
    curves = load_curves(args.curves)
    if args.y == "loss":
        env = scalecurves.loss_envelope(curves, args.burn_in)
        fit = scalecurves.loss_compute_law(curves, args.burn_in)
        y_name = "loss"
    elif args.y.startswith("metric:"):
        y_name = args.y.split(":", 1)[1]
        env = scalecurves.metric_envelope(curves, y_name, args.burn_in)
        fit = scalecurves.metric_compute_law(curves, y_name, args.burn_in)
    else:
        raise UsageError(f"--y must be 'loss' or 'metric:<name>', got {args.y!r}")
    meta = {
        "y": y_name,
        "input": str(args.curves),
        "input_sha256": file_sha256(args.curves),
        "burn_in": args.burn_in,
        "tool_version": __version__,
    }
    save_artifact(LawArtifact(fit, meta), args.out)
    if args.emit_plot:
        _write_plot(args.emit_plot, env, fit, y_name)
    _out(f"envelope points {len(env)}")
    _out(f"{y_name} = {fit.coefficient:.6g} * C^{fit.exponent:.6g}  (r^2 {fit.r_squared:.4f})")
    return EXIT_OK


def cmd_correlate(args) -> int:
    runs = load_runs(args.runs)
    fit = linkage.loss_metric_correlation(runs, args.metric, args.metric_cap, args.loss_min)
    _out(f"{args.metric} = {fit.intercept:.6g} + {fit.slope:.6g} * loss")
    _out(f"pearson r {fit.pearson_r:.6f}  n {fit.n_points}  filter {fit.filter_applied}")
    if args.out:
        meta = {"metric": args.metric, "input": str(args.runs),
                "input_sha256": file_sha256(args.runs), "tool_version": __version__}
        save_artifact(LawArtifact(fit, meta), args.out)
    return EXIT_OK


def cmd_compare(args) -> int:
    if args.law_ref or args.law_other:
        if not (args.law_ref and args.law_other):
            raise UsageError("compare: give both --law-ref and --law-other")
        g_ref = [_power_law(load_artifact(args.law_ref), "--law-ref").exponent]
        g_other = [_power_law(load_artifact(args.law_other), "--law-other").exponent]
    elif args.gamma_ref is not None and args.gamma_other is not None:
        g_ref, g_other = args.gamma_ref, args.gamma_other
    else:
        raise UsageError("compare: give --law-ref/--law-other or --gamma-ref/--gamma-other")
    metrics = [m for m in args.metric.split(",") if m]
    if not (len(metrics) == len(g_ref) == len(g_other)):
        raise UsageError("compare: --metric and exponent lists must have equal length")
    _out(f"{'metric':10s} {'gamma_ref':>10s} {'gamma_other':>12s} {'ratio':>8s} {'10^ratio':>10s}")
    for m, gr, go in zip(metrics, g_ref, g_other):
        rep = linkage.efficiency_ratio(gr, go, m)
        _out(f"{m:10s} {gr:10.4g} {go:12.4g} {rep.ratio:8.2f} {rep.compute_multiplier:10.4g}")
    return EXIT_OK


def cmd_project(args) -> int:
    ref = _power_law(load_artifact(args.law_ref), "--law-ref")
    other = _power_law(load_artifact(args.law_other), "--law-other")
    res = linkage.project_parity(ref, other, args.c_ref, None if args.no_cap else 100.0)
    _out(f"target value {res.target_value:.6g} at C_ref {args.c_ref:.6g}")
    _out(f"C_other {res.compute:.6g}")
    if res.extrapolated:
        where = [n for n, ok in (("reference", res.ref_in_domain), ("other", res.other_in_domain))
                 if not ok]
        _out(f"warning: extrapolated beyond the fitted domain of the {' and '.join(where)} law")
    return EXIT_OK


def cmd_synth(args) -> int:
    art = _load_law(args.law)
    law = art.law
    if not isinstance(law, (ChinchillaParams, MultiEpochParams)):
        raise ValidationError(f"synth needs a single_epoch or multi_epoch law, got {art.type}")
    spec = synthgen.SynthSpec(
        law,
        sizes=args.sizes or synthgen.DEFAULT_SIZES,
        ratios=args.ratios or synthgen.DEFAULT_RATIOS,
        epoch_grid=args.epochs if args.epochs is not None else synthgen.DEFAULT_EPOCHS,
        noise_sigma=args.noise,
        seed=args.seed,
    )
    runs = synthgen.generate_runs(spec)
    save_runs(runs, args.out)
    _out(f"wrote {len(runs)} runs to {args.out}")
    if args.curves_out:
        curves = synthgen.generate_curves(spec, args.checkpoints)
        save_curves(curves, args.curves_out)
        _out(f"wrote {len(curves)} curve points to {args.curves_out}")
    return EXIT_OK


def run_checks(verbose: bool = False) -> list[tuple[str, bool, str]]:
    """Self-test: gradient checks, allocation cross-checks, efficiency ratios."""
    results: list[tuple[str, bool, str]] = []
    speech = PRESETS["speech"]
    runs = synthgen.generate_runs(synthgen.SynthSpec(speech, noise_sigma=0.01, seed=0))
    single = [r for r in runs if lawfit.is_single_epoch(r)]
    obj = lawfit.SingleEpochObjective(
        [r.n_params for r in single], [r.d_tokens for r in single],
        [r.test_loss for r in single], 0.03,
    )
    worst = max(grad_check(obj, obj.gradient, p) for p in lawfit.InitGrid().points())
    results.append(("gradient, single-epoch objective (1600 grid points)", worst < 1e-6,
                    f"max rel err {worst:.2e}"))
    used, u_n = lawfit.multi_epoch_inputs(runs, speech.base)
    mobj = lawfit.MultiEpochObjective(
        speech.base, [r.n_params for r in used], [r.d_tokens for r in used],
        [r.u_tokens for r in used], u_n, [r.test_loss for r in used], 0.03,
    )
    worst = max(grad_check(mobj, mobj.gradient, p) for p in lawfit.RhoGrid().points())
    results.append(("gradient, multi-epoch objective (25 grid points)", worst < 1e-6,
                    f"max rel err {worst:.2e}"))
    for name, law in PRESETS.items():
        base = law.base if isinstance(law, MultiEpochParams) else law
        for c in (1e18, 1e20, 1e22):
            try:
                chk = alloc.verify_allocation(base, c, 1e-3)
                results.append((f"allocation {name} C={c:g}", True, f"rel err {chk.rel_error:.2e}"))
            except NumericalError as exc:
                results.append((f"allocation {name} C={c:g}", False, str(exc)))
    for m, gr, go, want in (("blimp", 0.066, 0.021, 3.14), ("tcloze", 0.039, 0.025, 1.56),
                            ("scloze", 0.046, 0.017, 2.7)):
        ratio = linkage.efficiency_ratio(gr, go, m).ratio
        results.append((f"efficiency ratio {m}", abs(ratio - want) <= 0.01, f"{ratio:.4f}"))
    return results


def cmd_check(args) -> int:
    results = run_checks(args.verbose)
    failed = 0
    for name, ok, detail in results:
        failed += not ok
        if args.verbose or not ok:
            _out(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    _out(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_NUMERIC


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="scalefit", description="Fit and apply neural scaling laws.")
    p.add_argument("--version", action="version", version=f"scalefit {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", help="JSON file of flag defaults (flags win)")
        sp.set_defaults(func=func)
        return sp

    sp = add("fit", cmd_fit, "fit a loss law to runs")
    sp.add_argument("--runs", required=True)
    sp.add_argument("--curves")
    sp.add_argument("--stage", choices=("single", "multi"), required=True)
    sp.add_argument("--base", help="single-epoch law to hold fixed for --stage multi")
    sp.add_argument("--huber-delta", type=float, default=0.03)
    sp.add_argument("--grad-tol", type=float, default=1e-8)
    sp.add_argument("--max-iters", type=int, default=1000)
    sp.add_argument("--memory-pairs", type=int, default=10)
    sp.add_argument("--workers", type=int, default=1)
    for k in ("e", "a", "b", "alpha", "beta", "rho-n", "rho-d"):
        sp.add_argument(f"--grid-{k}", type=_floats, help=f"comma list of {k} starting values")
    sp.add_argument("--burn-in", type=float, default=0.0)
    sp.add_argument("--out", required=True)

    sp = add("predict", cmd_predict, "predict loss at (N, D[, U_D])")
    sp.add_argument("--law", required=True)
    sp.add_argument("--n", type=float, required=True)
    sp.add_argument("--d", type=float, required=True)
    sp.add_argument("--u-d", type=float)

    sp = add("allocate", cmd_allocate, "compute-optimal N and D for a budget")
    sp.add_argument("--law", required=True)
    sp.add_argument("--compute", type=float, required=True)

    sp = add("invert", cmd_invert, "budget needed to reach a target loss")
    sp.add_argument("--law", required=True)
    sp.add_argument("--target-loss", type=float, required=True)

    sp = add("envelope", cmd_envelope, "fit a power law to a curve envelope")
    sp.add_argument("--curves", required=True)
    sp.add_argument("--y", default="loss", help="'loss' or 'metric:<name>'")
    sp.add_argument("--out", required=True)
    sp.add_argument("--emit-plot")
    sp.add_argument("--burn-in", type=float, default=0.0,
                    help="drop points below this fraction of each run's final compute")

    sp = add("correlate", cmd_correlate, "linear fit of a metric on test loss")
    sp.add_argument("--runs", required=True)
    sp.add_argument("--metric", required=True)
    sp.add_argument("--metric-cap", type=float)
    sp.add_argument("--loss-min", type=float)
    sp.add_argument("--out")

    sp = add("compare", cmd_compare, "relative efficiency of two modalities")
    sp.add_argument("--metric", required=True, help="name, or comma-separated names")
    sp.add_argument("--law-ref")
    sp.add_argument("--law-other")
    sp.add_argument("--gamma-ref", type=_floats)
    sp.add_argument("--gamma-other", type=_floats)

    sp = add("project", cmd_project, "compute at which the other modality catches up")
    sp.add_argument("--law-ref", required=True)
    sp.add_argument("--law-other", required=True)
    sp.add_argument("--c-ref", type=float, required=True)
    sp.add_argument("--no-cap", action="store_true", help="do not enforce the 100%% ceiling")

    sp = add("synth", cmd_synth, "generate synthetic runs from a law")
    sp.add_argument("--law", required=True, help="artifact path or preset:<name>")
    sp.add_argument("--sizes", type=_floats)
    sp.add_argument("--ratios", type=_floats)
    sp.add_argument("--epochs", type=_floats)
    sp.add_argument("--noise", type=float, default=0.0)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--curves-out")
    sp.add_argument("--checkpoints", type=int, default=20)

    sp = add("check", cmd_check, "run numerical self-tests")
    sp.add_argument("--verbose", action="store_true")
    return p


def _config_path(argv: list[str]) -> str | None:
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    """Parse ``argv``, using a ``--config`` JSON object as flag defaults.

    Config values are installed as subcommand defaults before parsing, so a
    config may supply required flags and any explicit flag still wins.
    """
    path = _config_path(argv)
    command = next((t for t in argv if not t.startswith("-")), None)
    choices = parser._subparsers._group_actions[0].choices
    if path is None or command not in choices:
        return parser.parse_args(argv)
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ValidationError(f"no such config file: {path!r}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"config {path!r}: invalid JSON ({exc.msg})") from None
    if not isinstance(cfg, dict):
        raise ValidationError("config file must hold a JSON object")
    sub = choices[command]
    known = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, value in cfg.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("config", "func", "help"):
            raise UsageError(f"config key {key!r} is not an option of {command!r}")
        action = known[dest]
        if action.type is _floats:
            value = [float(v) for v in value] if isinstance(value, list) else _floats(str(value))
        elif action.type is not None:
            try:
                value = action.type(value)
            except (TypeError, ValueError):
                raise UsageError(f"config key {key!r}: bad value {value!r}") from None
        defaults[dest] = value
        action.required = False
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def run(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        return args.func(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except NumericalError as exc:
        print(f"scalefit: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ScaleFitError, OSError) as exc:
        print(f"scalefit: error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
