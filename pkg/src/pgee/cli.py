"""Command-line front-end: fit, cross-validate, paths, simulation, benchmarks."""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from .correlation import CorrelationSpec, VarianceModel
from .data import ColumnSchema, load_dataset, standardize, to_frame
from .penalties import DEFAULT_A, PenaltySpec
from .simulate import DESIGNS, bootstrap_se, run_study
from .solver import ModelSpec, SolverError, fit_gee, fit_pgee
from .tuning import TuningGrid, loso_cv, penalization_path, select_tuning

USAGE_ERROR = 1
NUMERICAL_ERROR = 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)


def _add_io_flags(p):
    p.add_argument("--input", required=True, help="long-format CSV file")
    p.add_argument("--subject-col", default="subject")
    p.add_argument("--time-col", default="time")
    p.add_argument("--response-col", default="y")


def _add_model_flags(p):
    p.add_argument("--family", choices=["gaussian", "binomial"], default="gaussian")
    p.add_argument("--working", choices=["independence", "exchangeable", "ar1"],
                   default="independence")


def _add_output_flags(p):
    p.add_argument("--output", help="output file (default: stdout)")
    p.add_argument("--format", choices=["table", "csv", "json"], default="table")


def _seed_value(raw, required=True):
    if raw is None:
        if required:
            raise SystemExit(USAGE_ERROR)
        return None
    if raw == "auto":
        return None
    return int(raw)


def build_parser() -> _Parser:
    parser = _Parser(prog="pgee",
                     description="Penalized GEE for clustered longitudinal data")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_fit = sub.add_parser("fit", help="fit one penalized model")
    _add_io_flags(p_fit)
    _add_model_flags(p_fit)
    p_fit.add_argument("--penalty", required=True,
                       choices=["none", "lasso", "ridge", "en", "scad", "scad_l2"])
    p_fit.add_argument("--lambda", dest="lam", type=float)
    p_fit.add_argument("--alpha", type=float)
    p_fit.add_argument("--lambda1", type=float)
    p_fit.add_argument("--lambda2", type=float)
    p_fit.add_argument("--a", type=float, default=DEFAULT_A)
    p_fit.add_argument("--bootstrap", type=int, metavar="B",
                       help="cluster-bootstrap standard errors")
    p_fit.add_argument("--seed", help="integer or 'auto'")
    _add_output_flags(p_fit)

    p_cv = sub.add_parser("cv", help="leave-one-subject-out cross-validation")
    _add_io_flags(p_cv)
    _add_model_flags(p_cv)
    p_cv.add_argument("--penalty", required=True,
                      choices=["lasso", "ridge", "en", "scad", "scad_l2"])
    p_cv.add_argument("--grid-lambdas", default="30",
                      help="count, or comma-separated descending values")
    p_cv.add_argument("--grid-alphas", default="15",
                      help="count, or comma-separated increasing values")
    p_cv.add_argument("--rule", choices=["min", "one-se"], default="min")
    _add_output_flags(p_cv)

    p_path = sub.add_parser("path", help="penalization path at fixed alpha")
    _add_io_flags(p_path)
    _add_model_flags(p_path)
    p_path.add_argument("--penalty", required=True,
                        choices=["lasso", "ridge", "en", "scad", "scad_l2"])
    p_path.add_argument("--alpha", type=float, required=True)
    p_path.add_argument("--grid-lambdas", default="30")
    p_path.add_argument("--plot", help="write an SVG of the largest coefficient paths")
    p_path.add_argument("--top-k", type=int, default=10)
    _add_output_flags(p_path)

    p_sim = sub.add_parser("simulate", help="write a simulated dataset CSV")
    p_sim.add_argument("--design", required=True, choices=sorted(DESIGNS))
    p_sim.add_argument("--n", type=int, help="override subject count")
    p_sim.add_argument("--T", type=int, help="override observations per subject")
    p_sim.add_argument("--seed", required=True, help="integer or 'auto'")
    p_sim.add_argument("--output", help="output CSV (default: stdout)")

    p_bench = sub.add_parser("bench", help="Monte-Carlo benchmark study")
    p_bench.add_argument("--design", required=True, choices=sorted(DESIGNS))
    p_bench.add_argument("--penalties",
                         default="none,lasso,ridge,en,scad,scad_l2")
    p_bench.add_argument("--replicates", type=int, default=100)
    p_bench.add_argument("--grid-lambdas", type=int, default=10)
    p_bench.add_argument("--grid-alphas", type=int, default=5)
    p_bench.add_argument("--rule", choices=["min", "one-se"], default="min")
    p_bench.add_argument("--seed", required=True, help="integer or 'auto'")
    p_bench.add_argument("--threads", type=int, default=1)
    _add_output_flags(p_bench)

    return parser


def _parse_grid_axis(raw, kind, data=None, alphas=None):
    if "," in str(raw):
        return tuple(float(v) for v in str(raw).split(","))
    count = int(raw)
    if kind == "alpha":
        if count == 1:
            return (1.0,)
        return tuple(k / (count - 1) for k in range(count))
    from .tuning import lambda_max
    lmax = lambda_max(data, max(alphas))
    return tuple(np.geomspace(lmax, lmax * 1e-3, count))


def _r(v) -> str:
    """Round-trippable text for a scalar (numpy scalars print as plain floats)."""
    return repr(float(v))


def _emit(text, output):
    if output:
        with open(output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {k: _jsonable(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _load(args):
    schema = ColumnSchema(subject=args.subject_col, time=args.time_col,
                          response=args.response_col)
    return load_dataset(args.input, schema)


def _model(args) -> ModelSpec:
    link = "identity" if args.family == "gaussian" else "logit"
    return ModelSpec(link, VarianceModel(args.family),
                     CorrelationSpec(args.working))


def _penalty_from_flags(args) -> PenaltySpec:
    if args.lambda1 is not None or args.lambda2 is not None:
        if args.lam is not None or args.alpha is not None:
            raise SystemExit(USAGE_ERROR)
        return PenaltySpec(args.penalty, lambda1=args.lambda1 or 0.0,
                           lambda2=args.lambda2 or 0.0, a=args.a)
    if args.penalty == "none":
        return PenaltySpec("none")
    if args.lam is None:
        print("error: --lambda (or --lambda1/--lambda2) required", file=sys.stderr)
        raise SystemExit(USAGE_ERROR)
    alpha = args.alpha
    if alpha is None:
        alpha = {"lasso": 1.0, "scad": 1.0, "ridge": 0.0}.get(args.penalty)
        if alpha is None:
            print("error: --alpha required for this penalty", file=sys.stderr)
            raise SystemExit(USAGE_ERROR)
    return PenaltySpec.from_reparam(args.penalty, args.lam, alpha, args.a)


def _cmd_fit(args) -> int:
    data = _load(args)
    model = _model(args)
    penalty = _penalty_from_flags(args)
    std, info = standardize(data, scale_response=args.family == "gaussian")
    if penalty.family == "none":
        # plain GEE: no coefficient thresholding, explicit rank check
        fit = fit_gee(std, model)
    else:
        fit = fit_pgee(std, model, penalty)
    beta_orig, intercept = info.coefficients_original_scale(fit.beta_nonnaive)
    doc = {
        "coefficients": {
            "naive_standardized": fit.beta_naive,
            "nonnaive_standardized": fit.beta_nonnaive,
            "original_scale": beta_orig,
            "intercept_original_scale": intercept,
            "names": list(data.covariate_names),
        },
        "active_set": [data.covariate_names[j] for j in fit.active_set],
        "iterations": fit.iterations,
        "converged": fit.converged,
        "penalty": fit.penalty,
        "model": {"family": args.family, "working": args.working},
    }
    if args.bootstrap:
        seed = _seed_value(args.seed)
        se = bootstrap_se(std, model, penalty, args.bootstrap, seed)
        doc["bootstrap_se_standardized"] = se
    if args.format == "json":
        _emit(json.dumps(_jsonable(doc), indent=2) + "\n", args.output)
    elif args.format == "csv":
        lines = ["name,naive_std,nonnaive_std,original_scale"]
        for j, name in enumerate(data.covariate_names):
            lines.append(f"{name},{_r(fit.beta_naive[j])},"
                         f"{_r(fit.beta_nonnaive[j])},{_r(beta_orig[j])}")
        _emit("\n".join(lines) + "\n", args.output)
    else:
        rows = [f"{'variable':<16}{'nonnaive(std)':>16}{'original':>16}"]
        for j, name in enumerate(data.covariate_names):
            rows.append(f"{name:<16}{fit.beta_nonnaive[j]:>16.6f}{beta_orig[j]:>16.6f}")
        rows.append(f"intercept (original scale): {intercept:.6f}")
        rows.append(f"converged: {fit.converged} after {fit.iterations} iterations")
        if args.bootstrap:
            rows.append("bootstrap SE (std): "
                        + ", ".join(f"{v:.4f}" for v in doc["bootstrap_se_standardized"]))
        _emit("\n".join(rows) + "\n", args.output)
    return 0 if fit.converged else NUMERICAL_ERROR


def _cmd_cv(args) -> int:
    data = _load(args)
    model = _model(args)
    std, _ = standardize(data, scale_response=args.family == "gaussian")
    alphas = _parse_grid_axis(args.grid_alphas, "alpha")
    if args.penalty in ("lasso", "scad"):
        alphas = (1.0,)
    elif args.penalty == "ridge":
        alphas = (0.0,)
    lams = _parse_grid_axis(args.grid_lambdas, "lambda", std, alphas)
    surface = loso_cv(std, model, args.penalty, TuningGrid(lams, alphas))
    lam_min, a_min = select_tuning(surface, "min")
    lam_1se, a_1se = select_tuning(surface, "one_se")
    if args.format == "json":
        doc = {"points": surface.points,
               "min": {"lambda": lam_min, "alpha": a_min},
               "one_se": {"lambda": lam_1se, "alpha": a_1se}}
        _emit(json.dumps(_jsonable(doc), indent=2) + "\n", args.output)
    else:
        lines = ["lambda,alpha,pl_cv,se_cv,valid"]
        for pt in surface.points:
            lines.append(f"{_r(pt.lam)},{_r(pt.alpha)},{_r(pt.pl_cv)},"
                         f"{_r(pt.se_cv)},{int(pt.valid)}")
        text = "\n".join(lines) + "\n"
        if args.format == "table":
            text += (f"# min: lambda={_r(lam_min)} alpha={_r(a_min)}\n"
                     f"# one-se: lambda={_r(lam_1se)} alpha={_r(a_1se)}\n")
        _emit(text, args.output)
    return 0


def _cmd_path(args) -> int:
    data = _load(args)
    model = _model(args)
    std, _ = standardize(data, scale_response=args.family == "gaussian")
    lams = _parse_grid_axis(args.grid_lambdas, "lambda", std,
                            (max(args.alpha, 0.01),))
    result = penalization_path(std, model, args.penalty, args.alpha, lams)
    lines = ["lambda,valid," + ",".join(data.covariate_names)]
    for k, lam in enumerate(result.lambda_values):
        coefs = ",".join(_r(v) for v in result.coefficients[:, k])
        lines.append(f"{_r(lam)},{int(result.valid[k])},{coefs}")
    _emit("\n".join(lines) + "\n", args.output)
    if args.plot:
        _plot_path(result, data.covariate_names, args.top_k, args.plot)
    return 0


def _plot_path(result, names, top_k, outfile):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(7, 5))
    lams = np.asarray(result.lambda_values)
    for j in result.top_k(top_k):
        ax.plot(lams, result.coefficients[j], label=str(names[j]))
    ax.set_xscale("log")
    ax.invert_xaxis()
    ax.set_xlabel("lambda (reverse log scale)")
    ax.set_ylabel("standardized coefficient")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(outfile, format="svg")
    plt.close(fig)


def _cmd_simulate(args) -> int:
    design = DESIGNS[args.design]
    cfg = design.config
    if args.n or args.T:
        cfg = dataclasses.replace(cfg, **{k: v for k, v in
                                          (("n", args.n), ("T", args.T)) if v})
        design = dataclasses.replace(design, config=cfg)
    data = design.simulate(_seed_value(args.seed))
    text = to_frame(data).to_csv(index=False)
    _emit(text, args.output)
    return 0


def _cmd_bench(args) -> int:
    design = DESIGNS[args.design]
    penalties = [f.strip() for f in args.penalties.split(",") if f.strip()]
    report = run_study(design, penalties, args.replicates,
                       seed=_seed_value(args.seed),
                       n_lambda=args.grid_lambdas, n_alpha=args.grid_alphas,
                       rule={"one-se": "one_se"}.get(args.rule, args.rule),
                       threads=args.threads)
    if args.format == "json":
        _emit(json.dumps(_jsonable(report), indent=2) + "\n", args.output)
        return 0
    lines = ["penalty,me_mean,me_se,lambda_median,alpha_median,cd,id,rel_bias"]
    for fam in report.families:
        lines.append(",".join("" if v is None else
                              (_r(v) if isinstance(v, float) else str(v))
                              for v in (
            fam.family, fam.me_mean, fam.me_se, fam.lambda_median,
            fam.alpha_median, fam.cd_ratio, fam.id_ratio, fam.rel_bias_first)))
    text = "\n".join(lines) + "\n"
    if args.format == "table":
        rows = [f"design: {report.design}  replicates: {report.replicates}",
                f"{'penalty':<10}{'ME (SE)':>20}{'(lambda,alpha)':>20}"
                f"{'C.D.':>8}{'I.D.':>8}{'RelBias':>10}"]
        for fam in report.families:
            se = f"{fam.me_se:.3f}" if fam.me_se is not None else "-"
            tun = ("-" if fam.lambda_median is None
                   else f"({fam.lambda_median:.3f}; {fam.alpha_median:.3f})")
            cd = "-" if fam.cd_ratio is None else f"{fam.cd_ratio:.3f}"
            idr = "-" if fam.id_ratio is None else f"{fam.id_ratio:.3f}"
            rows.append(f"{fam.family:<10}{fam.me_mean:>12.3f} ({se}){tun:>20}"
                        f"{cd:>8}{idr:>8}{fam.rel_bias_first:>10.3f}")
        text = "\n".join(rows) + "\n"
    _emit(text, args.output)
    return 0


_COMMANDS = {"fit": _cmd_fit, "cv": _cmd_cv, "path": _cmd_path,
             "simulate": _cmd_simulate, "bench": _cmd_bench}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.subcommand](args)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return USAGE_ERROR
    except SolverError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return NUMERICAL_ERROR
    except np.linalg.LinAlgError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return NUMERICAL_ERROR


if __name__ == "__main__":
    sys.exit(main())
