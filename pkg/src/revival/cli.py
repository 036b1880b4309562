"""Command-line driver.

    revival <command> --config run.yaml [--output DIR]

Commands: simulate, fit-survival, fit-revival, predict, recurrent, diagnose.
Exit codes: 0 ok, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings

import numpy as np

from . import __version__
from . import config as cf
from .diagnostics import additivity_check, alignment_ss, t_by_T_table
from .exceptions import DataError, NumericalError, RankDeficiencyError
from .gp import RevivalGP
from .io import (ensure_dir, fmt, read_dataset, read_event_records, write_columns, write_dataset,
                 write_event_records, write_rows)
from .poisson import EventRecord, fit_intensity, intensity_from_dict, predictive_hazard_ratio
from .predict import predictive_survival
from .records import Death
from .simulate import RNG_ALGORITHM, simulate, simulate_events

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


def _dataset(cfg):
    data = cf.section(cfg, "data")
    if "longitudinal" not in data or "survival" not in data:
        raise cf.ConfigError("data.longitudinal and data.survival paths are required")
    return read_dataset(data["longitudinal"], data["survival"], data.get("time_unit", "years"))


def _fit_model(cfg, dataset):
    model = cf.section(cfg, "model")
    est = RevivalGP(mean=cf.mean_spec(cfg), variance=cf.variance_spec(cfg),
                    method=model.get("method", "reml"), **cf.optimizer_options(cfg))
    return est.fit(dataset)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg, out):
    sim = cf.section(cfg, "simulation")
    if sim.get("events"):
        spec = sim["events"]
        intensity = intensity_from_dict(spec["intensity"])
        records = simulate_events(intensity, cf.survival_law(cfg), int(sim.get("n_patients", 200)),
                                  int(cfg["seed"]), float(spec.get("window", 2.0)))
        paths = [os.path.join(out, "events.csv"), os.path.join(out, "survival.csv")]
        write_event_records(records, *paths)
        return paths, {"n_patients": len(records)}
    data = simulate(cf.sim_config(cfg))
    paths = [os.path.join(out, "longitudinal.csv"), os.path.join(out, "survival.csv")]
    write_dataset(data, *paths)
    return paths, {"n_patients": len(data), "n_observations": data.n_observations}


def cmd_fit_survival(cfg, out):
    data = _dataset(cfg)
    law = cf.survival_law(cfg, data)
    params = law.to_dict()
    path = os.path.join(out, "survival_fit.csv")
    if params["family"] == "kaplan_meier":
        write_columns(path, {"t": law.timeline_, "survival": law.survival_})
    else:
        write_rows(path, ["parameter", "value"],
                   [(k, v) for k, v in params.items() if k != "family"]
                   + [("log_likelihood", law.log_likelihood(*data.survival_data()))])
    return [path], {"family": params["family"]}


def cmd_fit_revival(cfg, out):
    data = _dataset(cfg)
    model = _fit_model(cfg, data)
    summ = model.summary()
    coef_path = os.path.join(out, "coefficients.csv")
    write_rows(coef_path, ["term", "estimate", "se", "estimable"],
               [(n, c["estimate"], c["se"], str(c["estimable"]).lower())
                for n, c in summ["coef"].items()])
    var_path = os.path.join(out, "variance.csv")
    write_rows(var_path, ["component", "sigma2", "kernel"],
               [(lab, v, _kernel_text(model.variance_spec_.component(lab).kernel))
                for lab, v in summ["sigma2"].items()])
    fit_path = os.path.join(out, "fit.csv")
    write_rows(fit_path, ["quantity", "value"],
               [("max_loglik", summ["max_loglik"]), ("n_patients", summ["n_patients"]),
                ("n_observations", summ["n_observations"]),
                ("converged", str(summ["converged"]).lower()),
                ("drift_basis", "; ".join(summ["drift_basis"]) or "none")])
    return [coef_path, var_path, fit_path], {"method": summ["method"],
                                              "degenerate": summ["degenerate"]}


def _kernel_text(kernel):
    d = kernel.to_dict()
    name = d.pop("name")
    args = " ".join(f"{k}={fmt(v) if not isinstance(v, (dict, str)) else v}" for k, v in d.items())
    return f"{name}({args})" if args else name


def cmd_predict(cfg, out):
    pred = cf.section(cfg, "prediction")
    model_cfg = cf.section(cfg, "model")
    data = _dataset(cfg) if cf.section(cfg, "data").get("longitudinal") else None
    law = cf.survival_law(cfg, data)
    history = cf.history_from_config(pred, data)
    if "coef" in model_cfg:
        model, shared = cf.known_process(cfg)
        if shared:
            raise cf.ConfigError("known-parameter prediction supports per-patient components only")
        mode = None
    else:
        if data is None:
            raise cf.ConfigError("prediction with a fitted model needs data")
        model = _fit_model(cfg, data.uncensored())
        mode = pred.get("mode")
    grid_cfg = pred.get("grid") or {}
    last = history.last_appointment if history.appointments else 0.0
    grid = cf.grid_from_config(grid_cfg, last)
    curve = predictive_survival(history, law, model, grid=grid, n_grid=int(grid_cfg.get("n", 2000)),
                                upper_q=float(grid_cfg.get("upper_quantile", 0.9999)), mode=mode)
    path = os.path.join(out, "curve.csv")
    write_columns(path, curve.to_columns())
    return [path], {"predictive_mean": curve.mean(), "predictive_sd": curve.sd()}


def cmd_recurrent(cfg, out):
    rc = cf.section(cfg, "recurrent")
    data = cf.section(cfg, "data")
    records = None
    if "events" in data:
        records = read_event_records(data["events"], data["survival"], data.get("time_unit", "years"))
    spec = rc.get("intensity") or {"fit": "constant"}
    if "fit" in spec:
        if not records:
            raise cf.ConfigError("fitting an intensity needs data.events and data.survival")
        intensity = fit_intensity(records, spec["fit"], edges=spec.get("edges"))
    else:
        intensity = intensity_from_dict(spec)
    law = cf.survival_law(cfg, None if "family" in (cfg.get("survival") or {}) and
                          len(cfg.get("survival") or {}) > 1 else _dataset_from_events(records))
    targets = []
    for r in rc.get("records") or []:
        targets.append(EventRecord(r.get("id", f"config{len(targets) + 1}"), float(r["window"]),
                                   tuple(r.get("events", ())), Death(np.inf)))
    if not targets and records:
        targets = records[: int(rc.get("max_curves", 5))]
    paths = []
    ipath = os.path.join(out, "intensity.csv")
    write_rows(ipath, ["parameter", "value"],
               [(k, v if not isinstance(v, list) else " ".join(map(str, v)))
                for k, v in intensity.to_dict().items()])
    paths.append(ipath)
    grid_cfg = rc.get("grid") or {}
    for r in targets:
        grid = cf.grid_from_config(grid_cfg, r.window)
        curve = predictive_hazard_ratio(r, intensity, law, grid=grid,
                                        n_grid=int(grid_cfg.get("n", 2000)),
                                        normalize_at=rc.get("normalize_at", 20.0))
        path = os.path.join(out, f"curve_{r.patient_id}.csv")
        write_columns(path, curve.to_columns())
        paths.append(path)
    return paths, {"family": intensity.family}


def _dataset_from_events(records):
    if not records:
        return None
    from .records import Dataset, HealthRecord
    return Dataset([HealthRecord(r.patient_id, (), (), r.event) for r in records])


def cmd_diagnose(cfg, out):
    data = _dataset(cfg)
    d = cf.section(cfg, "diagnose")
    table = t_by_T_table(data, float(d.get("bin_width", 1.0)), int(d.get("n_bins", 9)))
    labels = table.labels()
    means_path = os.path.join(out, "table_means.csv")
    counts_path = os.path.join(out, "table_counts.csv")
    write_rows(means_path, ["T_bin"] + labels,
               [[labels[i]] + ["" if np.isnan(v) else v for v in row]
                for i, row in enumerate(table.means)])
    write_rows(counts_path, ["T_bin"] + labels,
               [[labels[i]] + list(map(int, row)) for i, row in enumerate(table.counts)])
    ss_f, ss_r = alignment_ss(table, d.get("weighting", "cells"))
    add = additivity_check(table)
    sum_path = os.path.join(out, "alignment.csv")
    write_rows(sum_path, ["quantity", "value"],
               [("ss_forward", ss_f), ("ss_reverse", ss_r)] + list(add.items()))
    return [means_path, counts_path, sum_path], {"ss_forward": ss_f, "ss_reverse": ss_r}


COMMANDS = {
    "simulate": cmd_simulate,
    "fit-survival": cmd_fit_survival,
    "fit-revival": cmd_fit_revival,
    "predict": cmd_predict,
    "recurrent": cmd_recurrent,
    "diagnose": cmd_diagnose,
}


def build_parser():
    p = argparse.ArgumentParser(prog="revival", description="Revival models for survival processes.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", "-c", required=True, help="YAML run configuration")
    p.add_argument("--output", "-o", help="output directory (overrides the config)")
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        cfg, digest = cf.load_config(args.config)
        out = ensure_dir(args.output or os.path.join(cfg["_base"], cfg.get("output", "revival-out")))
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            paths, info = COMMANDS[args.command](cfg, out)
        manifest = {
            "command": args.command,
            "config": os.path.abspath(args.config),
            "config_sha256": digest,
            "seed": cfg.get("seed"),
            "version": __version__,
            "rng": RNG_ALGORITHM,
            "float_format": "%.12g",
            "outputs": [os.path.basename(p) for p in paths],
            "info": info,
            "warnings": [str(w.message) for w in caught],
        }
        with open(os.path.join(out, "manifest.json"), "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True, default=_jsonable)
            f.write("\n")
    except cf.ConfigError as exc:
        print(f"revival: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, RankDeficiencyError) as exc:
        print(f"revival: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"revival: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, TypeError) as exc:
        print(f"revival: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for p in paths:
        print(p)
    return EXIT_OK


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    return str(x)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
