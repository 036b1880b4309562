"""YAML run configuration.

One file drives every CLI subcommand.  Top-level keys:

``seed``        integer, mandatory for ``simulate``
``data``        ``longitudinal``, ``survival``, ``events`` paths; ``time_unit``
``survival``    ``family`` to fit, or a full parameter record such as
                ``{family: exponential, mean: 10}``
``model``       ``mean`` terms, ``variance`` components, optional ``coef``
                (known-parameter process), ``method``
``optimizer``   ``n_restarts``, ``tol``, ``max_iter``, ``jitter``
``prediction``  ``history`` or ``patient_id`` plus ``k``; ``mode``; ``grid``
``simulation``  ``n_patients``, ``appointments``, ``censoring``, ``arms``
``recurrent``   ``intensity`` (parameters or ``{fit: family}``), ``normalize_at``,
                ``record``
``diagnose``    ``bin_width``, ``n_bins``, ``weighting``
``output``      output directory

Relative data paths resolve against the config file's directory.
"""

from __future__ import annotations

import hashlib
import os

import numpy as np
import yaml

from .exceptions import RevivalError
from .gp import VarianceModelSpec, component_from_config
from .mean import MeanFunction, mean_spec_from_config
from .process import GaussianRevivalProcess
from .records import ArmSchedule, History
from .simulate import AppointmentScheme, SimConfig
from .survival import FAMILIES, fit_survival, law_from_dict

KNOWN_KEYS = {"seed", "data", "survival", "model", "optimizer", "prediction", "simulation",
              "recurrent", "diagnose", "output"}


class ConfigError(RevivalError, ValueError):
    """The configuration file is malformed or inconsistent."""


def load_config(path) -> tuple[dict, str]:
    """Parse ``path``; return the mapping and the SHA-256 of its bytes."""
    try:
        with open(path, "rb") as f:
            raw = f.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        cfg = yaml.safe_load(raw) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping at the top level")
    unknown = set(cfg) - KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    base = os.path.dirname(os.path.abspath(path))
    data = cfg.get("data") or {}
    for key in ("longitudinal", "survival", "events"):
        if key in data and not os.path.isabs(data[key]):
            data[key] = os.path.join(base, data[key])
    if data:
        cfg["data"] = data
    cfg["_base"] = base
    return cfg, hashlib.sha256(raw).hexdigest()


def section(cfg, name) -> dict:
    out = cfg.get(name) or {}
    if not isinstance(out, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    return out


def survival_law(cfg, dataset=None):
    """Fixed law when parameters are given, otherwise fitted to ``dataset``."""
    spec = cfg.get("survival") or {"family": "exponential"}
    if isinstance(spec, str):
        spec = {"family": spec}
    family = spec.get("family")
    if family not in FAMILIES:
        raise ConfigError(f"unknown survival family {family!r}")
    if set(spec) - {"family"}:
        try:
            return law_from_dict(spec)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad survival parameters: {exc}") from None
    if dataset is None:
        raise ConfigError("survival family given without parameters and no data to fit")
    return fit_survival(dataset, family)


def mean_spec(cfg):
    model = section(cfg, "model")
    try:
        return mean_spec_from_config(model.get("mean", ["intercept"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def variance_spec(cfg) -> VarianceModelSpec:
    model = section(cfg, "model")
    items = model.get("variance")
    if not items:
        raise ConfigError("model.variance must list the variance components")
    try:
        return VarianceModelSpec(tuple(component_from_config(i) for i in items))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad variance component: {exc}") from None


def known_process(cfg) -> tuple[GaussianRevivalProcess, tuple]:
    """Known-parameter process and shared components from ``model.coef`` and
    per-component ``sigma2`` values."""
    model = section(cfg, "model")
    spec = mean_spec(cfg)
    coef = model.get("coef")
    if coef is None:
        raise ConfigError("model.coef is required for a known-parameter process")
    try:
        mean = MeanFunction(spec, coef)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    own, shared = [], []
    for item in model.get("variance") or []:
        if "sigma2" not in item:
            raise ConfigError(f"component {item.get('label')!r} needs sigma2")
        comp = component_from_config(item)
        entry = (comp.label, float(item["sigma2"]), comp.kernel)
        (shared if comp.shared else own).append(entry)
    try:
        return GaussianRevivalProcess(mean, tuple(own)), tuple(shared)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def optimizer_options(cfg) -> dict:
    opt = section(cfg, "optimizer")
    allowed = {"n_restarts", "tol", "max_iter", "jitter", "random_state"}
    bad = set(opt) - allowed
    if bad:
        raise ConfigError(f"unknown optimizer options: {sorted(bad)}")
    out = {k: opt[k] for k in allowed if k in opt}
    if "random_state" not in out and "seed" in cfg:
        out["random_state"] = int(cfg["seed"])
    return out


def appointment_scheme(spec) -> AppointmentScheme:
    spec = dict(spec or {"kind": "keep"})
    kind = spec.pop("kind", "keep")
    if kind == "fixed":
        return AppointmentScheme("fixed", times=tuple(float(t) for t in spec.get("times", ())))
    if kind == "keep":
        c = spec.get("c", 5.0)
        return AppointmentScheme("keep", float(spec.get("interval", 1.0)),
                                 np.inf if c in (None, "inf") else float(c))
    if kind == "poisson":
        return AppointmentScheme("poisson", rate=float(spec.get("rate", 1.0)))
    raise ConfigError(f"unknown appointment scheme {kind!r}")


def sim_config(cfg) -> SimConfig:
    if "seed" not in cfg:
        raise ConfigError("simulation needs a seed")
    sim = section(cfg, "simulation")
    law = survival_law(cfg)
    process, shared = known_process(cfg)
    censoring = sim.get("censoring")
    if isinstance(censoring, dict):
        censoring = law_from_dict(censoring)
    arms = sim.get("arms") or {}
    try:
        return SimConfig(n_patients=int(sim.get("n_patients", 200)), survival=law,
                         process=process, shared=shared,
                         shared_axis=sim.get("shared_axis", "revival"),
                         appointments=appointment_scheme(sim.get("appointments")),
                         censoring=censoring, arms=tuple(arms.get("labels", ())),
                         arm_probs=tuple(arms.get("probs", ())),
                         covariates={k: tuple(v) for k, v in (sim.get("covariates") or {}).items()},
                         seed=int(cfg["seed"]))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad simulation settings: {exc}") from None


def history_from_config(pred, dataset=None) -> History:
    if "history" in pred:
        h = pred["history"]
        arm = h.get("arm")
        return History(tuple(h.get("times", ())), tuple(h.get("values", ())),
                       ArmSchedule.constant(arm) if arm else ArmSchedule(),
                       dict(h.get("covariates") or {}))
    if "patient_id" in pred:
        if dataset is None:
            raise ConfigError("prediction.patient_id needs data")
        try:
            rec = dataset.by_id(pred["patient_id"])
        except KeyError:
            raise ConfigError(f"patient {pred['patient_id']!r} not in the data") from None
        return rec.history(pred.get("k"))
    raise ConfigError("prediction needs a history or a patient_id")


def grid_from_config(spec, last):
    """Explicit grid from ``start``/``stop``/``step`` or ``points``; else None."""
    spec = spec or {}
    if "points" in spec:
        return np.asarray(spec["points"], dtype=float)
    if "step" in spec:
        start = float(spec.get("start", last))
        stop = float(spec["stop"])
        step = float(spec["step"])
        n = int(np.floor((stop - start) / step + 1e-9))
        grid = start + step * np.arange(1, n + 1)
        return grid[grid > last]
    return None


__all__ = ["ConfigError", "load_config", "survival_law", "mean_spec", "variance_spec",
           "known_process", "optimizer_options", "sim_config", "history_from_config",
           "grid_from_config", "appointment_scheme"]
