"""Command-line interface.

Exit codes: 0 on success, 2 on invalid input, 3 on numerical failure.
"""

from __future__ import annotations

import argparse
import glob
import logging
import shutil
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import io
from .aft import fit_weibull_cause_specific, latent_age_check
from .errors import NumericalError, SpatioJointError, ValidationError
from .estimation import FitResult, SaemSettings, fit, theta_names, theta_vector
from .metrics import (
    bic_parameter_counts,
    bic_penalty,
    c_index_truncated,
    coverage_rate,
    cumulative_dynamic_auc,
    icc,
    integrated_brier_score,
    relative_bias,
    ree,
    rrmse,
)
from .model import Dataset, Geometry, Hyperparameters, PatientRecord, space_shift
from .personalization import personalize, predict_event, predict_longitudinal
from .simulation import LINK_MODES, SimulationConfig, dataset_summary, paper_fixed_effects, simulate_dataset

log = logging.getLogger("spatiojoint")

SIM_KEYS = tuple(f.name for f in fields(SimulationConfig) if f.name not in ("fixed_effects", "link_mode", "seed"))
SETTINGS_KEYS = tuple(f.name for f in fields(SaemSettings))


# --- helpers ---------------------------------------------------------------------


def _out_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_settings(path, seed=None, n_iterations=None) -> tuple[SaemSettings, str]:
    values = io.read_params(path) if path else {}
    init_mode = str(values.pop("init_mode", "heuristic"))
    unknown = set(values) - set(SETTINGS_KEYS)
    if unknown:
        raise ValidationError(f"unknown setting(s): {', '.join(sorted(unknown))}")
    if n_iterations is not None:
        values["n_iterations"] = n_iterations
    if seed is not None:
        values["seed"] = seed
    for key in ("n_iterations", "n_burnin", "n_robbins_monro", "adaptation_interval",
                "n_posterior", "se_window", "max_infeasible", "seed"):
        if key in values:
            values[key] = int(values[key])
    return SaemSettings(**values), init_mode


def _load_hyper(path, dataset: Dataset, n_sources=None) -> Hyperparameters:
    values = io.read_params(path) if path else {}
    defaults = {"n_outcomes": dataset.n_outcomes, "n_events": max(dataset.n_events, 1),
                "n_sources": 1}
    if n_sources is not None:
        values["n_sources"] = n_sources
    for key in ("n_outcomes", "n_events", "n_sources"):
        if key in values:
            values[key] = int(values[key])
    return io.hyperparameters_from_dict(values, **defaults)


def _truth_rows(ids, truth, geometry):
    w = space_shift(geometry, truth.sources)
    return ([pid, x, t, *s, *ww] for pid, x, t, s, ww in zip(ids, truth.xi, truth.tau, truth.sources, w))


def _read_truth(path):
    header, rows = io._read_csv(path)
    arr = np.array([[float(c) for c in row[1:]] for row in rows])
    cols = {name: arr[:, i] for i, name in enumerate(header[1:])}
    return [row[0] for row in rows], cols


def _save_fit(out: Path, result: FitResult, dataset: Dataset) -> None:
    hyper = result.hyper
    io.save_fixed_effects(out / "params.out", result.theta_hat, {
        "n_outcomes": hyper.n_outcomes, "n_events": hyper.n_events, "n_sources": hyper.n_sources,
        "n_iterations": result.settings.n_iterations, "seed": result.settings.seed,
    })
    io.write_params(out / "params_se.out", result.standard_errors)
    io.write_random_effects(out / "random_effects.csv", result.patient_ids, result.re_posterior_mean)
    io.write_csv(out / "space_shifts.csv", ["patient_id"] + [f"w_{k}" for k in range(hyper.n_outcomes)],
                 ([pid, *w] for pid, w in zip(result.patient_ids, result.space_shift_mean)))
    io.write_csv(out / "trace.csv", result.trace_header(), result.trace_rows())


# --- commands --------------------------------------------------------------------


def cmd_simulate(args) -> None:
    values = io.read_params(args.config) if args.config else {}
    fe = io.fixed_effects_from_dict(values) if any(k in values for k in io.FIXED_KEYS) else paper_fixed_effects()
    extra = {k: values[k] for k in SIM_KEYS if k in values}
    unknown = set(values) - set(io.FIXED_KEYS) - set(SIM_KEYS) - {"link_mode", "seed"}
    if unknown:
        raise ValidationError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    if "n_patients" in extra:
        extra["n_patients"] = int(extra["n_patients"])
    if args.n_patients is not None:
        extra["n_patients"] = args.n_patients
    mode = args.mode or values.get("link_mode", "real-like")
    seed = args.seed if args.seed is not None else int(values.get("seed", 0))
    config = SimulationConfig(fixed_effects=fe, link_mode=mode, seed=seed, **extra)
    cohort = simulate_dataset(config)
    out = _out_dir(args.out)
    io.write_dataset(out, cohort.dataset)
    ids = [p.id for p in cohort.dataset.patients]
    geometry = Geometry.from_effects(fe)
    Ns, K = fe.n_sources, fe.n_outcomes
    header = ["patient_id", "xi", "tau"] + [f"s_{m + 1}" for m in range(Ns)] + [f"w_{k}" for k in range(K)]
    io.write_csv(out / "truth.csv", header, _truth_rows(ids, cohort.truth, geometry))
    if cohort.survival_truth is not None:
        io.write_csv(out / "truth_survival.csv", header, _truth_rows(ids, cohort.survival_truth, geometry))
    io.save_fixed_effects(out / "params_true.out", fe)
    summary = {"link_mode": mode, "seed": seed, **dataset_summary(cohort.dataset, fe.n_events)}
    io.write_csv(out / "summary.csv", ["key", "value"], summary.items())
    if args.plot:
        from .plotting import plot_population_curves

        plot_population_curves(fe, out / "population_curves.png")


def cmd_fit(args) -> None:
    dataset = io.read_dataset(args.data)
    hyper = _load_hyper(args.hyper, dataset, args.n_sources)
    settings, init_mode = _load_settings(args.settings, args.seed, args.iterations)
    params = None
    if args.init:
        params = io.load_fixed_effects(args.init)
        init_mode = "warm"

    def progress(c, theta, ll):
        if c % 1000 == 0:
            log.info("iteration %d  loglik %.3f", c, ll)

    result = fit(dataset, hyper, settings, init_mode=init_mode, params=params, progress=progress)
    out = _out_dir(args.out)
    _save_fit(out, result, dataset)
    truth = Path(args.data) / "truth.csv"
    if truth.exists():
        shutil.copyfile(truth, out / "truth.csv")
    if args.plot:
        from .plotting import plot_population_curves, plot_traces

        plot_traces(result.traces, result.trace_names, out / "traces.png", burnin=settings.n_burnin)
        plot_population_curves(result.theta_hat, out / "population_curves.png")


def _conditioned_patient(p: PatientRecord, n_visits: int) -> PatientRecord:
    n = min(n_visits, p.n_visits)
    return PatientRecord(p.id, p.times[:n], p.values[:n], float(p.times[n - 1]), 0)


def _safe(metric, *a):
    try:
        return metric(*a)
    except ValidationError as exc:
        log.warning("metric skipped: %s", exc)
        return float("nan")


def cmd_personalize(args) -> None:
    dataset = io.read_dataset(args.data)
    params = io.read_params(args.params)
    fe = io.fixed_effects_from_dict(params)
    geometry = Geometry.from_effects(fe)
    horizons = [float(h) for h in args.horizons.split(",")]
    if any(h < 0 for h in horizons):
        raise ValidationError("horizons must be non-negative")
    if args.condition_on_visits < 1:
        raise ValidationError("--condition-on-visits must be at least 1")
    K, L = fe.n_outcomes, fe.n_events
    if dataset.n_outcomes != K:
        raise ValidationError(f"data has {dataset.n_outcomes} outcomes, parameters have {K}")

    streams = np.random.SeedSequence(args.seed).spawn(dataset.n_patients)
    long_rows, event_rows, res = [], [], []
    risks = {(l, h): [] for l in range(L) for h in horizons}
    outcome_t, outcome_code, sq_err = [], [], [[] for _ in range(K)]
    for p, ss in zip(dataset.patients, streams):
        cond = _conditioned_patient(p, args.condition_on_visits)
        re = personalize(cond, fe, seed=np.random.default_rng(ss))
        res.append(re)
        pred = predict_longitudinal(re, fe, geometry, p.times)
        for j, t in enumerate(p.times):
            used = j < cond.n_visits
            for k in range(K):
                long_rows.append([p.id, t, k, p.values[j, k], pred[j, k], int(used)])
                if not used:
                    sq_err[k].append((p.values[j, k] - pred[j, k]) ** 2)
        t_last = cond.event_time
        for h in horizons:
            for l in range(L):
                prob = predict_event(re, fe, None, geometry, l, t_last + h, t_last)
                event_rows.append([p.id, t_last, h, l + 1, prob])
                risks[(l, h)].append(prob)
        outcome_t.append(p.event_time - t_last)
        outcome_code.append(p.event_code)

    out = _out_dir(args.out)
    io.write_csv(out / "predictions_long.csv",
                 ["patient_id", "time_years", "outcome", "observed", "predicted", "used_for_fit"], long_rows)
    io.write_csv(out / "predictions_event.csv",
                 ["patient_id", "t_last", "horizon", "event", "probability"], event_rows)
    ids = [p.id for p in dataset.patients]
    sources = np.array([np.atleast_1d(r.sources) for r in res])
    io.write_random_effects(out / "random_effects.csv", ids,
                            type(res[0])(np.array([float(r.xi) for r in res]),
                                         np.array([float(r.tau) for r in res]), sources))

    # predictive metrics on the part of follow-up after the conditioning time
    t_rel = np.array(outcome_t)
    codes = np.array(outcome_code)
    keep = t_rel > 0
    rows = []
    for k in range(K):
        value = float(np.sqrt(np.mean(sq_err[k]))) if sq_err[k] else float("nan")
        rows.append(["rmse", f"y_{k}", value, "", ""])
    for l in range(L):
        d = (codes == l + 1)[keep]
        for h in horizons:
            r = np.array(risks[(l, h)])[keep]
            rows.append(["c_index", f"event_{l + 1}@{io.fmt(h)}", _safe(c_index_truncated, r, t_rel[keep], d, h), "", ""])
        surv = np.column_stack([1.0 - np.array(risks[(l, h)])[keep] for h in horizons])
        rows.append(["ibs", f"event_{l + 1}", _safe(integrated_brier_score, surv, t_rel[keep], d, horizons), "", ""])
        risk_matrix = np.column_stack([np.array(risks[(l, h)])[keep] for h in horizons])
        auc = _safe(lambda *a: cumulative_dynamic_auc(*a)[1], risk_matrix, t_rel[keep], d, horizons)
        rows.append(["mean_auc", f"event_{l + 1}", auc, "", ""])
    io.write_csv(out / "metrics.csv", ["metric", "parameter", "value", "ci_low", "ci_high"], rows)

    if args.plot_data:
        _write_curves(out, dataset, res, fe, geometry, horizons)
    if args.plot:
        from .plotting import plot_event_curves, plot_patient_predictions

        for p, re in list(zip(dataset.patients, res))[: args.plot_patients]:
            grid = np.linspace(p.times[0], p.times[-1] + max(horizons), 100)
            plot_patient_predictions(p.times, p.values, grid, predict_longitudinal(re, fe, geometry, grid),
                                     out / f"trajectory_{p.id}.png", title=p.id)
            t_last = _conditioned_patient(p, args.condition_on_visits).event_time
            hs = np.linspace(0, max(horizons), 25)
            probs = np.array([[predict_event(re, fe, None, geometry, l, t_last + h, t_last) for l in range(L)]
                              for h in hs])
            plot_event_curves(hs, probs, out / f"events_{p.id}.png", title=p.id)


def _write_curves(out: Path, dataset: Dataset, res, fe, geometry, horizons) -> None:
    rows = []
    for p, re in zip(dataset.patients, res):
        grid = np.linspace(p.times[0], p.times[-1] + max(horizons), 50)
        pred = predict_longitudinal(re, fe, geometry, grid)
        rows.extend([p.id, t, k, pred[j, k]] for j, t in enumerate(grid) for k in range(fe.n_outcomes))
    io.write_csv(out / "curves_long.csv", ["patient_id", "time_years", "outcome", "predicted"], rows)


def _run_theta(run: Path, names):
    params = io.read_params(run / "params.out")
    theta = theta_vector(io.fixed_effects_from_dict(params))
    se_doc = io.read_params(run / "params_se.out") if (run / "params_se.out").exists() else {}
    se = np.array([float(se_doc.get(n, np.nan)) for n in names])
    return theta, se


def cmd_validate(args) -> None:
    runs = sorted(Path(p) for p in glob.glob(args.runs) if (Path(p) / "params.out").exists())
    if not runs:
        raise ValidationError(f"no run directory with params.out matches {args.runs!r}")
    truth_fe = io.load_fixed_effects(args.truth_config)
    K, L, Ns = truth_fe.n_outcomes, truth_fe.n_events, truth_fe.n_sources
    names = theta_names(K, L, Ns)
    true_vec = theta_vector(truth_fe)
    estimates, ses = [], []
    for run in runs:
        theta, se = _run_theta(run, names)
        if theta.size != true_vec.size:
            raise ValidationError(f"{run}: parameter sizes differ from the truth configuration")
        estimates.append(theta)
        ses.append(se)
    estimates, ses = np.array(estimates), np.array(ses)

    rows, ree_rows = [], []
    ree_by_name = {}
    for j, name in enumerate(names):
        truth = true_vec[j]
        if truth == 0:
            continue
        rows.append(["RB", name, relative_bias(estimates[:, j], truth), "", ""])
        rows.append(["RRMSE", name, rrmse(estimates[:, j], truth), "", ""])
        if np.all(np.isfinite(ses[:, j])):
            rate, (lo, hi) = coverage_rate(estimates[:, j], ses[:, j], truth)
            rows.append(["CR", name, rate, lo, hi])
        errors = ree(estimates[:, j], truth)
        ree_by_name[name] = np.atleast_1d(errors)
        ree_rows.extend([run.name, name, e] for run, e in zip(runs, np.atleast_1d(errors)))

    # random-effect recovery, ICC averaged over runs that carry the simulation truth
    iccs: dict[str, list] = {}
    for run in runs:
        if not (run / "truth.csv").exists():
            continue
        t_ids, truth_cols = _read_truth(run / "truth.csv")
        e_ids, est = io.read_random_effects(run / "random_effects.csv")
        if t_ids != e_ids:
            raise ValidationError(f"{run}: truth and estimates list different patients")
        iccs.setdefault("xi", []).append(icc(truth_cols["xi"], est.xi))
        iccs.setdefault("tau", []).append(icc(truth_cols["tau"], est.tau))
        if (run / "space_shifts.csv").exists():
            _, w_cols = _read_truth(run / "space_shifts.csv")
            for k in range(K):
                if f"w_{k}" in truth_cols:
                    iccs.setdefault(f"w_{k}", []).append(icc(truth_cols[f"w_{k}"], w_cols[f"w_{k}"]))
    for name, values in iccs.items():
        rows.append(["ICC", name, float(np.mean(values)), float(np.min(values)), float(np.max(values))])

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_csv(out, ["metric", "parameter", "value", "ci_low", "ci_high"], rows)
    io.write_csv(out.with_name(out.stem + "_ree.csv"), ["run", "parameter", "ree"], ree_rows)
    if args.plot:
        from .plotting import plot_ree_boxplot

        plot_ree_boxplot(ree_by_name, out.with_name(out.stem + "_ree.png"))


def cmd_select_sources(args) -> None:
    from .metrics import extended_bic

    dataset = io.read_dataset(args.data)
    settings, init_mode = _load_settings(args.settings, args.seed, args.iterations)
    base = _load_hyper(args.hyper, dataset)
    max_sources = args.max_sources or base.n_outcomes - 1
    if not 1 <= max_sources <= base.n_outcomes - 1:
        raise ValidationError(f"--max-sources must lie in [1, {base.n_outcomes - 1}]")
    out = _out_dir(args.out)
    n_obs = int(dataset.flat()["values"].size)
    rows, bics = [], []
    for ns in range(1, max_sources + 1):
        hyper = Hyperparameters(**{**base.__dict__, "n_sources": ns})
        result = fit(dataset, hyper, settings, init_mode=init_mode)
        sub = _out_dir(out / f"sources_{ns}")
        _save_fit(sub, result, dataset)
        bic = extended_bic(result, dataset)
        penalty = bic_penalty(hyper.n_outcomes, hyper.n_events, ns, dataset.n_patients, n_obs)
        d_r, d_f = bic_parameter_counts(hyper.n_outcomes, hyper.n_events, ns)
        bics.append(bic)
        rows.append([ns, bic, penalty, d_r, d_f])
    best = int(np.argmin(bics)) + 1
    io.write_csv(out / "bic.csv", ["n_sources", "bic", "penalty", "d_r", "d_f", "selected"],
                 [r + [int(r[0] == best)] for r in rows])
    print(f"selected n_sources = {best}")
    if args.plot:
        from .plotting import plot_bic

        plot_bic(range(1, max_sources + 1), bics, out / "bic.png")


def cmd_check_latent_age(args) -> None:
    dataset = io.read_dataset(args.data)
    fe = io.load_fixed_effects(args.joint_params)
    fits = fit_weibull_cause_specific(dataset, fe.n_events)
    diags = latent_age_check(fe, fits)
    rows = [[d.event, d.matched_scale_reldiff_pct, d.rho_joint, d.rho_aft, d.rho_aft_ci[0], d.rho_aft_ci[1],
             f.nu, d.joint_class, d.aft_class, int(d.concordant)] for d, f in zip(diags, fits)]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    io.write_csv(out, ["event", "matched_scale_reldiff_pct", "rho_joint", "rho_aft", "rho_aft_ci_low",
                       "rho_aft_ci_high", "nu_aft", "joint_class", "aft_class", "concordant"], rows)


# --- entry point -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spatiojoint", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def plots(p):
        p.add_argument("--plot", action="store_true", help="also render PNG figures into the output location")

    p = sub.add_parser("simulate", help="simulate a cohort")
    p.add_argument("--config", help="parameter/config document (defaults to the reference scenario)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", choices=LINK_MODES)
    p.add_argument("--n-patients", type=int)
    plots(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit the joint model by MCMC-SAEM")
    p.add_argument("--data", required=True)
    p.add_argument("--hyper")
    p.add_argument("--settings")
    p.add_argument("--init", help="warm start from a parameter document")
    p.add_argument("--n-sources", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    plots(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("personalize", help="random effects and predictions for new patients")
    p.add_argument("--data", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--condition-on-visits", type=int, default=2)
    p.add_argument("--horizons", default="1,1.5")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--plot-data", action="store_true", help="write long-format predicted curves")
    p.add_argument("--plot-patients", type=int, default=4)
    plots(p)
    p.set_defaults(func=cmd_personalize)

    p = sub.add_parser("validate", help="aggregate simulation runs against the truth")
    p.add_argument("--runs", required=True, help="glob of fit output directories")
    p.add_argument("--truth-config", required=True)
    p.add_argument("--out", required=True)
    plots(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("select-sources", help="extended BIC over the number of sources")
    p.add_argument("--data", required=True)
    p.add_argument("--max-sources", type=int)
    p.add_argument("--hyper")
    p.add_argument("--settings")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    plots(p)
    p.set_defaults(func=cmd_select_sources)

    p = sub.add_parser("check-latent-age", help="compare the survival submodel with a Weibull AFT fit")
    p.add_argument("--data", required=True)
    p.add_argument("--joint-params", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_check_latent_age)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (SpatioJointError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
