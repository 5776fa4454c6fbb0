"""Command-line front end.

Subcommands: ``design``, ``estimate``, ``infer``, ``simulate`` and ``rerun``.
Every run writes ``manifest.json`` (or ``--manifest PATH``) recording the
subcommand, resolved arguments, input file hashes and package versions;
``synthdesign rerun MANIFEST`` replays it.

Exit codes: 0 success, 2 usage error, 3 data error, 4 solver failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import default_source
from .estimators import Method, estimate
from .inference import Scheme, permutation_test
from .mip import MipExportError, export_mip, to_mps
from .panel import PanelError, read_panel
from .selector import Design, DesignProblem, Mode, SelectionError, select_design
from .simlab import (
    LambdaRule,
    SimConfig,
    power_config,
    run_power_experiment,
    run_rmse_experiment,
    select_lambda_cv,
    variance_lambda,
)
from .weights import Variant, WeightConstraints, WeightSolverError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SOLVER = 0, 2, 3, 4

log = logging.getLogger("synthdesign")


class UsageError(Exception):
    pass


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _strs(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _add_weight_flags(p):
    p.add_argument("--nonneg", dest="nonneg", action=argparse.BooleanOptionalAction, default=True, help="nonnegative weights")
    p.add_argument("--normalize", dest="normalize", action=argparse.BooleanOptionalAction, default=True, help="group weight sums equal 1")


def _add_lambda_flags(p):
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="fixed ridge penalty (implies --lambda-rule fixed)")
    p.add_argument("--lambda-rule", choices=[r.value for r in LambdaRule], default="variance")
    p.add_argument("--cv-grid", type=_floats, default=(), help="comma-separated lambda grid for --lambda-rule cv")
    p.add_argument("--cv-split", type=int, default=None, help="training periods for --lambda-rule cv")


def _add_common(p, panel_required=True):
    p.add_argument("--config", default=None, help="TOML file whose keys set flag defaults")
    p.add_argument("--panel", required=panel_required, default=None, help="wide CSV panel")
    p.add_argument("--t-pre", type=int, default=None, help="pre-treatment periods (design: default all)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--manifest", default=None, help="manifest path (default: next to the first output)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synthdesign", description="Design and analysis of panel experiments.")
    parser.add_argument("--version", action="version", version=f"synthdesign {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design", help="select treated units and weights")
    _add_common(p)
    p.add_argument("--variant", choices=[v.value for v in Variant], default="per-unit")
    p.add_argument("--K", "-K", dest="K", type=int, required=True)
    _add_lambda_flags(p)
    _add_weight_flags(p)
    p.add_argument("--mode", choices=[m.value for m in Mode], default="auto")
    p.add_argument("--enum-limit", type=int, default=200_000)
    p.add_argument("--restarts", type=int, default=20)
    p.add_argument("--out", required=True, help="design JSON output")
    p.add_argument("--export-mps", default=None, help="also write the mixed-integer model as MPS")
    p.add_argument("--k-free", action="store_true", help="MPS without the cardinality row")
    p.add_argument("--plot", default=None, help="scatter of the first two pre-periods (svg/png/pdf)")

    p = sub.add_parser("estimate", help="estimate effects for a design")
    _add_common(p)
    p.add_argument("--design", required=True)
    p.add_argument("--method", choices=[m.value for m in Method], default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="penalty for sc-random weight fitting")
    _add_weight_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("infer", help="permutation test of the sharp null")
    _add_common(p)
    p.add_argument("--design", required=True)
    p.add_argument("--method", choices=[m.value for m in Method], default=None)
    p.add_argument("--scheme", choices=[s.value for s in Scheme], default="moving-block")
    p.add_argument("--draws", type=int, default=40)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    _add_weight_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("simulate", help="RMSE or power study on a source panel")
    _add_common(p, panel_required=False)
    p.add_argument("--study", choices=["rmse", "power"], default="rmse")
    p.add_argument("--sims", type=int, default=None)
    p.add_argument("--K", "-K", dest="K", type=int, default=3)
    p.add_argument("--sub-units", type=int, default=10)
    p.add_argument("--sub-periods", type=int, default=None)
    p.add_argument("--sim-t-pre", type=int, default=None, help="pre-periods within each subsample")
    p.add_argument("--tau", type=float, default=0.05)
    p.add_argument("--tau-grid", type=_floats, default=(0.0, 0.01, 0.02, 0.04, 0.06))
    p.add_argument("--effect-modes", type=_strs, default=("homogeneous", "heterogeneous"))
    p.add_argument("--methods", type=_strs, default=tuple(m.value for m in Method))
    p.add_argument("--schemes", type=_strs, default=("iid", "moving-block"))
    p.add_argument("--draws", type=int, default=40)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--mode", choices=[m.value for m in Mode], default="auto")
    _add_lambda_flags(p)
    _add_weight_flags(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-plot", action="store_true")

    p = sub.add_parser("rerun", help="replay a run from its manifest")
    p.add_argument("manifest")
    return parser


# --------------------------------------------------------------------------
# helpers


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write(path, text: str) -> str:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return str(path)


def _load_panel(args, all_pre: bool = False):
    text_path = args.panel
    if not Path(text_path).exists():
        raise PanelError(f"panel file not found: {text_path}")
    with open(text_path, encoding="utf-8") as fh:
        header = fh.readline()
    s = len(header.rstrip("\n").split(",")) - 1
    if args.t_pre is None and not all_pre:
        raise UsageError("--t-pre is required")
    t_pre = args.t_pre if args.t_pre is not None else s
    return read_panel(text_path, t_pre)


def _load_design(path) -> Design:
    if not Path(path).exists():
        raise PanelError(f"design file not found: {path}")
    try:
        return Design.from_json(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise PanelError(f"malformed design file {path}: {exc}") from None


def _cons(args) -> WeightConstraints:
    return WeightConstraints(nonnegative=args.nonneg, normalize=args.normalize)


def _versions() -> dict:
    import matplotlib

    return {
        "synthdesign": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "matplotlib": matplotlib.__version__,
    }


def _manifest(args, argv, outputs: list[str], config: dict | None) -> str:
    inputs = {}
    for key in ("panel", "design", "config"):
        path = getattr(args, key, None)
        if path:
            inputs[key] = {"path": str(path), "sha256": _sha256(path)}
    record = {
        "subcommand": args.command,
        "argv": list(argv),
        "args": {k: (list(v) if isinstance(v, tuple) else v) for k, v in sorted(vars(args).items()) if k not in ("threads",)},
        "config": config,
        "seed": getattr(args, "seed", None),
        "inputs": inputs,
        "outputs": sorted(outputs),
        "versions": _versions(),
    }
    path = args.manifest or str(Path(outputs[0]).parent / "manifest.json")
    _write(path, json.dumps(record, indent=2, sort_keys=True) + "\n")
    return path


def _apply_config(parser, argv):
    """Use TOML values as subcommand defaults so explicit flags still win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    subparsers = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in subparsers), None)
    config = None
    if known.config and command is not None:
        import tomli

        try:
            with open(known.config, "rb") as fh:
                config = tomli.load(fh)
        except (OSError, tomli.TOMLDecodeError) as exc:
            parser.error(f"cannot read config {known.config}: {exc}")
        defaults = {k.replace("-", "_"): v for k, v in config.items()}
        sub = subparsers[command]
        for action in sub._actions:
            if action.dest in defaults:
                action.required = False
        sub.set_defaults(**defaults)
    return parser.parse_args(argv), config


# --------------------------------------------------------------------------
# subcommands


def _design_lambda(args, panel, variant) -> float:
    if args.lam is not None:
        return args.lam
    if args.lambda_rule == "cv":
        if panel.t_pre < 2:
            raise UsageError("--lambda-rule cv needs at least 2 pre-treatment periods")
        base = variance_lambda(panel.pre)
        grid = args.cv_grid or tuple(base * f for f in (0.1, 0.3, 1.0, 3.0, 10.0))
        split = args.cv_split or max(1, panel.t_pre // 2)
        return select_lambda_cv(panel, grid, split, args.K, variant, _cons(args), args.seed)
    return variance_lambda(panel.pre)


def cmd_design(args) -> list[str]:
    panel = _load_panel(args, all_pre=True)
    variant = Variant.parse(args.variant)
    if not 1 <= args.K <= panel.n_units - 1:
        raise UsageError(f"--K {args.K} must lie in [1, {panel.n_units - 1}] for a panel with {panel.n_units} units")
    mode = Mode.parse(args.mode)
    count = math.comb(panel.n_units, args.K)
    if mode is Mode.EXACT and count > args.enum_limit:
        raise UsageError(
            f"refusing exact enumeration: C({panel.n_units},{args.K}) = {count} subsets exceeds --enum-limit {args.enum_limit}"
        )
    if args.lambda_rule == "fixed" and args.lam is None:
        raise UsageError("--lambda-rule fixed needs --lambda")
    lam = _design_lambda(args, panel, variant)
    problem = DesignProblem(variant, args.K, lam, _cons(args), mode, args.enum_limit, args.restarts, args.seed)
    design = select_design(panel, problem, workers=args.threads)
    record = design.to_dict(panel.unit_ids)
    record["problem"] = problem.to_dict()
    outputs = [_write(args.out, json.dumps(record, indent=2, sort_keys=True) + "\n")]
    if args.export_mps:
        outputs.append(_write(args.export_mps, to_mps(export_mip(panel, problem, k_free=args.k_free))))
    if args.plot:
        from .plotting import plot_design

        Path(args.plot).parent.mkdir(parents=True, exist_ok=True)
        plot_design(panel.pre, design.D, args.plot, f"{variant.value}, K={args.K}")
        outputs.append(str(args.plot))
    print(f"treated: {', '.join(panel.unit_ids[i] for i in design.treated)}")
    print(f"objective: {design.objective!r}")
    return outputs


def _method_for(args, design: Design) -> Method:
    if args.method:
        return Method.parse(args.method)
    if design.variant is None:
        return Method.DIM_RANDOM
    return Method.parse(design.variant.value)


def cmd_estimate(args) -> list[str]:
    panel = _load_panel(args)
    design = _load_design(args.design)
    if design.N != panel.n_units:
        raise PanelError(f"design has {design.N} units, panel has {panel.n_units}")
    method = _method_for(args, design)
    lam = args.lam if args.lam is not None else design.lam
    est = estimate(panel, design, method, lam, _cons(args))
    est.meta["seed"] = args.seed
    print(f"ATET ({method.value}): {est.atet!r}")
    return [_write(args.out, est.to_json(panel.unit_ids) + "\n")]


def cmd_infer(args) -> list[str]:
    panel = _load_panel(args)
    design = _load_design(args.design)
    if design.N != panel.n_units:
        raise PanelError(f"design has {design.N} units, panel has {panel.n_units}")
    if panel.n_post < 1:
        raise UsageError("panel has no post-treatment periods; set --t-pre below the period count")
    method = _method_for(args, design)
    test = permutation_test(
        panel, design, method, args.scheme, args.draws, args.alpha, args.seed, lam=args.lam, cons=design.cons or _cons(args)
    )
    for w in test.warnings:
        log.warning(w)
    print(f"statistic {test.observed_stat!r}, p-value {test.p_value!r}, reject={test.reject}")
    return [_write(args.out, test.to_json() + "\n")]


def cmd_simulate(args) -> list[str]:
    if args.panel:
        source = _load_panel(args, all_pre=True)
        source_name = Path(args.panel).name
    else:
        source, source_name = default_source()
    power = args.study == "power"
    lam_rule = "fixed" if args.lam is not None else args.lambda_rule
    common = dict(
        K=args.K,
        sub_units=args.sub_units,
        tau=args.tau,
        tau_grid=args.tau_grid,
        methods=args.methods,
        schemes=args.schemes,
        n_draws=args.draws,
        alpha=args.alpha,
        lambda_rule=lam_rule,
        lambda_value=args.lam,
        cv_grid=args.cv_grid,
        cv_split=args.cv_split,
        cons=_cons(args),
        mode=args.mode,
        seed=args.seed,
        workers=args.threads,
    )
    if args.sims is not None:
        common["n_sims"] = args.sims
    if power:
        sub_periods = args.sub_periods or source.n_periods
        cfg = power_config(sub_periods=sub_periods, t_pre=args.sim_t_pre or sub_periods - 5, **common)
        report = run_power_experiment(source, cfg, source_name)
    else:
        sub_periods = args.sub_periods or 10
        cfg = SimConfig(
            sub_periods=sub_periods,
            t_pre=args.sim_t_pre or sub_periods - 3,
            effect_modes=args.effect_modes,
            **common,
        )
        report = run_rmse_experiment(source, cfg, source_name)
    out = Path(args.out_dir)
    outputs = []
    if power:
        outputs.append(_write(out / "power.csv", report.power_csv()))
        if not args.no_plot:
            from .plotting import plot_power_curves

            out.mkdir(parents=True, exist_ok=True)
            plot_power_curves(report.power_rows, out / "power.svg", args.alpha)
            outputs.append(str(out / "power.svg"))
        for r in report.power_rows:
            print(f"{r['scheme']:>12} {r['method']:>10} tau={r['tau']:<6g} rejection={r['rejection_rate']:.3f}")
    else:
        outputs.append(_write(out / "rmse.csv", report.rmse_csv()))
        if not args.no_plot:
            from .plotting import plot_rmse

            out.mkdir(parents=True, exist_ok=True)
            plot_rmse(report.rmse_rows, out / "rmse.svg")
            outputs.append(str(out / "rmse.svg"))
        for r in report.rmse_rows:
            print(f"{r['effect_mode']:>13} {r['method']:>10} ATET {1e3 * r['atet_rmse']:6.2f}  unit {1e3 * r['unit_rmse']:6.2f}  (x1e-3)")
    meta = {"source": report.source, "config": report.config}
    outputs.append(_write(out / "report.json", json.dumps(meta, indent=2, sort_keys=True) + "\n"))
    return outputs


COMMANDS = {"design": cmd_design, "estimate": cmd_estimate, "infer": cmd_infer, "simulate": cmd_simulate}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args, config = _apply_config(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "rerun":
        try:
            record = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            print(f"error: cannot read manifest: {exc}", file=sys.stderr)
            return EXIT_DATA
        return main(record["argv"])
    try:
        outputs = COMMANDS[args.command](args)
        _manifest(args, argv, outputs, config)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SelectionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PanelError, MipExportError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except WeightSolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
