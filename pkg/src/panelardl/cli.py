"""Command-line front end: simulate, filter, grid, estimate, effects, jackknife, full.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical error.  Errors
are also written to stderr as a one-line JSON object.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd
import yaml

from .debt_capacity import PolicySeries, ThresholdParams, capacity_indicators, combine_policies, load_policy, scale_policy
from .design import ModelSpec, absorb_two_way, design_for_thresholds, design_layout, industry_loadings
from .dgp import DgpConfig, simulate
from .effects import distributed_lag, effect_bars, f_pvalue, industry_weights, joint_f_test, policy_effect_report
from .errors import DataError, NumericalError, PanelArdlError
from .estimator import FitResult, fit_ols, regression_table
from .jackknife import half_panel_jackknife
from .panel_io import FilterConfig, PanelDataset, apply_filters, load_panel, quarter_index, write_panel
from .threshold_search import GridSpec, grid_search

SUBCOMMANDS = ("simulate", "filter", "grid", "estimate", "effects", "jackknife", "full")


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------- serialisation


def to_jsonable(obj: Any) -> Any:
    """Plain JSON types with every float rounded to 12 significant digits."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            return None
        return float(f"{x:.12g}")
    if isinstance(obj, Path):
        return str(obj)
    return obj


def dump_json(obj: Any, path: Path) -> None:
    path.write_text(json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, float_format="%.12g")


# --------------------------------------------------------------------------- configuration


@dataclass
class RunConfig:
    """Resolved inputs for one subcommand."""

    command: str
    out: Path
    panel: Path | None = None
    policies: dict[str, Path] = field(default_factory=dict)
    policy_scale: str = "self"
    weights: str = "equal"
    macro: Path | None = None
    spec: ModelSpec = field(default_factory=ModelSpec)
    grid: GridSpec = field(default_factory=GridSpec)
    thresholds: ThresholdParams | None = None
    vcov: str = "cluster_by_firm"
    min_t: int = 8
    filters: FilterConfig = field(default_factory=FilterConfig)
    truth: Path | None = None
    seed: int = 0
    threads: int = 1
    dgp: dict = field(default_factory=dict)


def _parser() -> argparse.ArgumentParser:
    class Parser(argparse.ArgumentParser):
        def error(self, message):
            raise UsageError(message)

    root = Parser(prog="panelardl", description=__doc__.splitlines()[0])
    subs = root.add_subparsers(dest="command", parser_class=Parser)

    common = Parser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON or YAML file of option defaults; flags override it")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int, help="worker cap (default: $PANELARDL_THREADS or 1)")

    data = Parser(add_help=False)
    data.add_argument("--panel", type=Path)
    data.add_argument("--policy", action="append", metavar="[NAME=]CSV", help="policy series CSV; repeatable")
    data.add_argument("--policy-scale", choices=("self", "total"))
    data.add_argument("--macro", type=Path, help="CSV with a quarter column and macro proxy series")
    data.add_argument("--controls", help="comma-separated control columns (default: all panel controls)")
    data.add_argument("--p", type=int)
    data.add_argument("--dynamics", choices=("panardl", "partial_adjustment", "static"))
    data.add_argument("--ft", help="trend | macro:<col> | both[:<col>]")
    data.add_argument("--vcov", choices=("classical", "hetero_robust", "cluster_by_firm"))

    grid = Parser(add_help=False)
    grid.add_argument("--mode", choices=("single", "two"))
    grid.add_argument("--grid-lo", type=float)
    grid.add_argument("--grid-hi", type=float)
    grid.add_argument("--grid-step", type=float)

    thr = Parser(add_help=False)
    thr.add_argument("--gamma-pre", type=float)
    thr.add_argument("--gamma-post", type=float)
    thr.add_argument("--thresholds", type=Path, help="thresholds.json written by `grid`")
    thr.add_argument("--truth", type=Path, help="truth.json from `simulate` for recovery diagnostics")

    sim = subs.add_parser("simulate", parents=[common], help="simulate a panel from the model")
    sim.add_argument("--n-firms", type=int)
    sim.add_argument("--n-quarters", type=int)
    sim.add_argument("--n-industries", type=int)
    sim.add_argument("--gamma-pre", type=float)
    sim.add_argument("--gamma-post", type=float)
    sim.add_argument("--unbalanced", action="store_true", default=None)

    flt = subs.add_parser("filter", parents=[common], help="apply the sample-selection cascade")
    flt.add_argument("--panel", type=Path)
    flt.add_argument("--min-t", type=int, help="minimum consecutive quarters per firm")
    flt.add_argument("--controls", help="comma-separated control columns")

    subs.add_parser("grid", parents=[common, data, grid], help="SSR grid search over thresholds")
    subs.add_parser("estimate", parents=[common, data, grid, thr], help="fit at given or searched thresholds")
    subs.add_parser("effects", parents=[common, data, grid, thr], help="dynamic and policy effects")
    jk = subs.add_parser("jackknife", parents=[common, data, grid, thr], help="half-panel jackknife")
    jk.add_argument("--min-t", type=int, help="minimum usable observations per firm")
    full = subs.add_parser("full", parents=[common, data, grid, thr], help="grid, estimate and effects")
    for p in (subs.choices["effects"], full):
        p.add_argument("--weights", help="equal | size:<column> | employment:<column> | CSV with industry,weight")
    return root


def _load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    if not path.exists():
        raise UsageError(f"config file {path} not found")
    text = path.read_text()
    data = yaml.safe_load(text) if path.suffix.lower() in (".yaml", ".yml") else json.loads(text)
    if not isinstance(data, dict):
        raise UsageError("config file must hold a mapping of option names to values")
    return {k.replace("-", "_"): v for k, v in data.items()}


def _threads(value: int | None) -> int:
    if value is None:
        env = os.environ.get("PANELARDL_THREADS")
        value = int(env) if env else 1
    if value < 1:
        raise UsageError("--threads must be at least 1")
    return value


def _policy_map(entries: Sequence[str] | None) -> dict[str, Path]:
    out = {}
    for entry in entries or []:
        name, sep, path = str(entry).partition("=")
        if not sep:
            name, path = Path(entry).stem, entry
        out[name] = Path(path)
    return out


def _ft(value: str | None) -> tuple[str, ...]:
    if value is None or value == "trend":
        return ("trend",)
    if value.startswith("macro:"):
        return (value,)
    if value.startswith("both"):
        _, _, col = value.partition(":")
        return ("trend", f"macro:{col or 'macro'}")
    raise UsageError(f"--ft must be trend, macro:<col> or both[:<col>], got {value!r}")


def resolve(argv: Sequence[str]) -> RunConfig:
    parser = _parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(f"a subcommand is required: {', '.join(SUBCOMMANDS)}")
    cfg = _load_config(getattr(args, "config", None))
    unknown = set(cfg) - set(vars(args)) - {"policy"}
    if args.command == "simulate":
        unknown -= set(DgpConfig.__dataclass_fields__)
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    for key, value in cfg.items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)

    def get(name, default=None):
        value = getattr(args, name, None)
        return default if value is None else value

    if get("out") is None:
        raise UsageError("--out is required")
    run = RunConfig(command=args.command, out=Path(get("out")), seed=int(get("seed", 0)), threads=_threads(get("threads")))

    if args.command == "simulate":
        dgp = {k: v for k, v in cfg.items() if k in DgpConfig.__dataclass_fields__}
        for flag, key in (("n_firms", "n_firms"), ("n_quarters", "n_quarters"), ("n_industries", "n_industries"),
                          ("gamma_pre", "gamma_pre"), ("gamma_post", "gamma_post"), ("unbalanced", "unbalanced")):
            value = getattr(args, flag, None)
            if value is not None:
                dgp[key] = value
        dgp["seed"] = run.seed
        if "gamma_pre" in dgp and "gamma_post" not in dgp:
            dgp["gamma_post"] = dgp["gamma_pre"]
        for key in ("lam", "beta0", "beta1", "phi", "policy_window"):
            if key in dgp and dgp[key] is not None:
                dgp[key] = tuple(dgp[key])
        run.dgp = dgp
        return run

    if get("panel") is None:
        raise UsageError("--panel is required")
    run.panel = Path(get("panel"))
    if not run.panel.exists():
        raise UsageError(f"panel file {run.panel} not found")
    controls = get("controls")
    if isinstance(controls, str):
        controls = tuple(c.strip() for c in controls.split(",") if c.strip())
    elif controls is not None:
        controls = tuple(controls)

    if args.command == "filter":
        fc = FilterConfig(min_consecutive=int(get("min_t", FilterConfig.min_consecutive)))
        run.filters = fc
        run.dgp = {"controls": controls}
        return run

    policy_arg = getattr(args, "policy", None)
    if policy_arg is None:
        policy_arg = cfg.get("policy")
    if isinstance(policy_arg, dict):
        run.policies = {k: Path(v) for k, v in policy_arg.items()}
    else:
        run.policies = _policy_map([policy_arg] if isinstance(policy_arg, str) else policy_arg)
    if not run.policies:
        raise UsageError("at least one --policy is required")
    for path in run.policies.values():
        if not Path(path).exists():
            raise UsageError(f"policy file {path} not found")
    run.policy_scale = get("policy_scale", "self")
    run.macro = Path(get("macro")) if get("macro") else None
    run.weights = str(get("weights", "equal"))
    run.vcov = get("vcov", "cluster_by_firm")
    run.min_t = int(get("min_t", 8))
    run.truth = Path(get("truth")) if get("truth") else None

    dynamics = get("dynamics", "panardl")
    p = int(get("p", 2 if dynamics == "panardl" else 0))
    mode = get("mode", "two")
    try:
        run.spec = ModelSpec(
            p=p,
            dynamics=dynamics,
            threshold_mode=mode,
            ft_proxy=_ft(get("ft")),
            policies=tuple(run.policies),
            controls=controls if controls is not None else (),
        )
        run.grid = GridSpec(
            lo=float(get("grid_lo", GridSpec.lo)),
            hi=float(get("grid_hi", GridSpec.hi)),
            step=float(get("grid_step", GridSpec.step)),
            mode=mode,
        )
        run.thresholds = _thresholds(get("gamma_pre"), get("gamma_post"), get("thresholds"), mode)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    run.dgp = {"controls_given": controls is not None}
    if args.command in ("estimate", "effects", "jackknife") and run.thresholds is None:
        raise UsageError(f"{args.command} needs --gamma-pre/--gamma-post or --thresholds")
    return run


def _thresholds(gp, gq, path, mode) -> ThresholdParams | None:
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise UsageError(f"thresholds file {path} not found")
        data = json.loads(path.read_text())
        data = data.get("best", data)
        return ThresholdParams(float(data["gamma_pre"]), float(data["gamma_post"]))
    if gp is None and gq is None:
        return None
    if gp is None or gq is None:
        if mode == "two":
            raise UsageError("two-threshold mode needs both --gamma-pre and --gamma-post")
        gp = gq = gp if gp is not None else gq
    return ThresholdParams(float(gp), float(gq))


# --------------------------------------------------------------------------- inputs


@dataclass
class Inputs:
    panel: PanelDataset
    policies: dict[str, PolicySeries]
    q: dict[str, pd.Series]
    macro: dict[str, pd.Series] | None
    spec: ModelSpec


def _load_inputs(run: RunConfig) -> Inputs:
    panel = load_panel(run.panel)
    spec = run.spec
    if not run.dgp.get("controls_given"):
        spec = replace(spec, controls=tuple(panel.controls))
    policies = {name: load_policy(path, name) for name, path in run.policies.items()}
    if run.policy_scale == "total":
        total = combine_policies(list(policies.values()), "total")
        q = {name: scale_policy(p, total) for name, p in policies.items()}
    else:
        q = {name: scale_policy(p) for name, p in policies.items()}
    macro = None
    if run.macro is not None:
        frame = pd.read_csv(run.macro)
        if "quarter" not in frame.columns:
            raise DataError(f"macro file {run.macro} needs a quarter column")
        idx = [quarter_index(v) for v in frame["quarter"]]
        macro = {c: pd.Series(frame[c].to_numpy(float), index=idx) for c in frame.columns if c != "quarter"}
        if any(f == "macro:macro" for f in spec.ft_proxy):
            first = next(iter(macro))
            spec = replace(spec, ft_proxy=tuple(f"macro:{first}" if f == "macro:macro" else f for f in spec.ft_proxy))
    return Inputs(panel, policies, q, macro, spec)


# --------------------------------------------------------------------------- stages


def stage_grid(run: RunConfig, inp: Inputs) -> tuple[ThresholdParams, list[str]]:
    result = grid_search(inp.panel, inp.q, inp.spec, run.grid, inp.macro, threads=run.threads)
    result.surface_csv(run.out / "ssr_surface.csv")
    dump_json({**result.to_dict(), "grid": {"lo": run.grid.lo, "hi": run.grid.hi, "step": run.grid.step}},
              run.out / "thresholds.json")
    lines = [
        f"Threshold search ({result.mode} mode, {len(result.ssr_surface)} points, {result.n_degenerate} degenerate)",
        f"  gamma_pre = {result.best.gamma_pre:.2f}, gamma_post = {result.best.gamma_post:.2f}, SSR = {result.min_ssr:.6g}",
    ]
    lines += [f"  note: {w}" for w in result.warnings]
    return result.best, lines


def _fit(run: RunConfig, inp: Inputs, thresholds: ThresholdParams, spec: ModelSpec | None = None) -> FitResult:
    spec = spec or inp.spec
    dm = design_for_thresholds(inp.panel, inp.q, spec, thresholds, inp.macro)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        absorbed = absorb_two_way(dm)
    echo = {**spec.to_dict(), **thresholds.to_dict(), "absorbed_dropped": list(absorbed.dropped)}
    fit = fit_ols(absorbed, vcov_kind=run.vcov, spec_echo=echo)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    return fit


def stage_estimate(run: RunConfig, inp: Inputs, thresholds: ThresholdParams) -> tuple[FitResult, list[str]]:
    fit = _fit(run, inp, thresholds)
    out = fit.to_dict(include_vcov=True)
    out["thresholds"] = thresholds.to_dict()
    if fit.column_groups.get("industry_interactions"):
        restricted = fit_ols(absorb_two_way(fit.design.drop_group("industry_interactions")), vcov_kind="classical")
        F, d1, d2 = joint_f_test(restricted, fit, len(fit.group("industry_interactions")))
        out["industry_interaction_test"] = {"F": F, "dof_num": d1, "dof_den": d2, "p_value": f_pvalue(F, d1, d2)}
        loadings = industry_loadings(fit.coefficients, fit.design)
        out["industry_loadings"] = {f: {str(k): v for k, v in loadings[f].items()} for f in loadings.columns}
    lines = [regression_table({"estimate": fit})]
    if "industry_interaction_test" in out:
        t = out["industry_interaction_test"]
        lines.append(f"Industry-interaction F({t['dof_num']}, {t['dof_den']}) = {t['F']:.4f} (p = {t['p_value']:.4g})")
    if run.truth is not None:
        rec, rec_lines = _recovery(run.truth, fit, thresholds)
        out["recovery"] = rec
        lines += rec_lines
    dump_json(out, run.out / "estimate.json")
    (run.out / "estimate.txt").write_text("\n".join(lines) + "\n")
    return fit, lines


def _recovery(path: Path, fit: FitResult, thresholds: ThresholdParams) -> tuple[dict, list[str]]:
    truth = json.loads(Path(path).read_text())
    rows, lines = {}, ["Recovery against simulation truth:"]
    for lab, true in truth.get("coefficients", {}).items():
        if lab in fit.coefficients.index:
            est, se = float(fit.coefficients[lab]), float(fit.std_errors[lab])
            z = (est - true) / se if se > 0 else float("nan")
            rows[lab] = {"true": true, "estimate": est, "se": se, "z": z}
            lines.append(f"  {lab:28s} true {true: .4f}  est {est: .4f}  z {z: .2f}")
    out = {
        "coefficients": rows,
        "gamma_pre": {"true": truth.get("gamma_pre"), "estimate": thresholds.gamma_pre},
        "gamma_post": {"true": truth.get("gamma_post"), "estimate": thresholds.gamma_post},
    }
    lines.append(
        f"  thresholds true ({truth.get('gamma_pre')}, {truth.get('gamma_post')}) "
        f"est ({thresholds.gamma_pre:.2f}, {thresholds.gamma_post:.2f})"
    )
    return out, lines


def _weights(run: RunConfig, panel: PanelDataset) -> tuple[dict, str]:
    spec = run.weights
    if spec == "equal":
        return industry_weights(panel, "equal"), "equal"
    kind, sep, col = spec.partition(":")
    if sep and kind in ("size", "employment"):
        if col not in panel.frame.columns:
            raise DataError(f"weight column {col!r} not in panel")
        return industry_weights(panel, kind, col), kind
    path = Path(spec)
    if not path.exists():
        raise UsageError(f"--weights must be equal, size:<col>, employment:<col> or a CSV path; got {spec!r}")
    frame = pd.read_csv(path)
    if not {"industry", "weight"} <= set(frame.columns):
        raise DataError("weights CSV needs columns industry, weight")
    kind = str(frame["kind"].iloc[0]) if "kind" in frame.columns else "size"
    known = {str(s): s for s in industry_weights(panel, "equal")}
    weights = {}
    for s, w in zip(frame["industry"].astype(str), frame["weight"].astype(float)):
        if s in known:
            weights[known[s]] = w
    missing = sorted(set(known) - {str(s) for s in weights})
    if missing:
        raise DataError(f"weights CSV lacks industries {missing}")
    return weights, kind


def stage_effects(run: RunConfig, inp: Inputs, thresholds: ThresholdParams, fit: FitResult | None = None) -> list[str]:
    fit = fit or _fit(run, inp, thresholds)
    weights, kind = _weights(run, inp.panel)
    pi = capacity_indicators(inp.panel, thresholds.gamma_post, "industry")
    single = len(inp.spec.policies) == 1
    out, lines, profiles, bars = {}, [], [], []
    for name in inp.spec.policies:
        group = "policy_interactions" if single else f"policy:{name}"
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            dyn = distributed_lag(fit, group)
        notes = [str(w.message) for w in caught]
        window = sorted(inp.policies[name].policy_on)
        report = policy_effect_report(dyn.net_sr[0], inp.q[name], pi, window, weights, kind)
        out[name] = {**dyn.to_dict(), "policy_effects": report.to_dict(), "warnings": notes}
        prof = dyn.lag_profile()
        prof.insert(0, "policy", name)
        profiles.append(prof)
        b = effect_bars(report, inp.panel)
        b.insert(0, "policy", name)
        bars.append(b)
        lines += [
            f"Policy {name}:",
            f"  net short-run {dyn.net_sr[0]:.4f} ({dyn.net_sr[1]:.4f})   long-run {dyn.long_run[0]:.4f} ({dyn.long_run[1]:.4f})",
            f"  mean lag {dyn.mean_lag:.2f} quarters, half-life {dyn.half_life} quarters",
            f"  national average effect ({kind} weights) {report.national:.4f}",
        ]
    dump_json({"thresholds": thresholds.to_dict(), "policies": out}, run.out / "effects.json")
    _write_csv(pd.concat(profiles, ignore_index=True), run.out / "lag_profile.csv")
    _write_csv(pd.concat(bars, ignore_index=True), run.out / "policy_effects.csv")
    return lines


def stage_jackknife(run: RunConfig, inp: Inputs, thresholds: ThresholdParams) -> list[str]:
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        jk = half_panel_jackknife(
            inp.panel, inp.q, inp.spec, thresholds, inp.macro, vcov_kind=run.vcov, min_obs=run.min_t, threads=run.threads
        )
    dump_json({**jk.to_dict(), "thresholds": thresholds.to_dict(), "warnings": [str(w.message) for w in caught]},
              run.out / "jackknife.json")
    table = jk.comparison_table()
    (run.out / "jackknife.txt").write_text(table + "\n")
    return ["Half-panel jackknife (standard errors from the full-sample fit):", table]


# --------------------------------------------------------------------------- driver


def execute(run: RunConfig) -> list[str]:
    run.out.mkdir(parents=True, exist_ok=True)
    if run.command == "simulate":
        try:
            cfg = DgpConfig(**run.dgp)
        except (TypeError, ValueError) as exc:
            raise UsageError(str(exc)) from None
        sim = simulate(cfg)
        paths = sim.write(run.out)
        return [f"simulated {sim.panel.n_firms} firms, {sim.panel.n_obs} firm-quarters -> {paths['panel']}"]
    if run.command == "filter":
        controls = run.dgp.get("controls")
        raw = load_panel(run.panel, controls=list(controls) if controls is not None else None)
        clean, report = apply_filters(raw, run.filters)
        write_panel(clean, run.out / "panel_filtered.csv")
        (run.out / "filter_report.json").write_text(report.to_json() + "\n")
        text = report.to_text()
        (run.out / "filter_report.txt").write_text(text + "\n")
        return [text]

    inp = _load_inputs(run)
    if run.command == "grid":
        return stage_grid(run, inp)[1]
    if run.command == "estimate":
        return stage_estimate(run, inp, run.thresholds)[1]
    if run.command == "effects":
        return stage_effects(run, inp, run.thresholds)
    if run.command == "jackknife":
        return stage_jackknife(run, inp, run.thresholds)
    # full
    thresholds, grid_lines = stage_grid(run, inp)
    fit, est_lines = stage_estimate(run, inp, thresholds)
    return grid_lines + [""] + est_lines + [""] + stage_effects(run, inp, thresholds, fit)


def run(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        cfg = resolve(argv)
        lines = execute(cfg)
    except UsageError as exc:
        return _fail(1, "usage", exc)
    except DataError as exc:
        return _fail(2, "data", exc)
    except NumericalError as exc:
        return _fail(3, "numerical", exc)
    except PanelArdlError as exc:
        return _fail(3, "numerical", exc)
    text = "\n".join(lines)
    (cfg.out / "summary.txt").write_text(text + "\n")
    print(text)
    return 0


def _fail(code: int, category: str, exc: Exception) -> int:
    print(json.dumps({"error": type(exc).__name__, "category": category, "message": str(exc), "exit_code": code}),
          file=sys.stderr)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
