"""Experiment configuration files.

A config is a sectioned ``key = value`` file with one experiment per file::

    [experiment]
    kind = wkb_sweep
    output = out/wkb
    seed = 0

    [potential]
    kind = power_decay
    c = 1
    r = 0.6

    [lambda]
    lo = 0.5
    hi = 2
    count = 50

Every kind has its own schema (see ``SCHEMAS``); unknown keys, missing
sections and malformed values are collected and reported together.
"""
from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ConfigurationError, WKBLabError
from .potential import spec_from_mapping

__all__ = ["KINDS", "SCHEMAS", "ExperimentConfig", "load_config", "parse_config",
           "parse_override"]

KINDS = ("wkb_sweep", "eigen_scan", "q_convergence", "dyadic_verify",
         "multilinear_probe", "z_decay", "band_scan")

REQUIRED = object()
POTENTIAL = "potential-section"


def _float(v):
    v = v.strip()
    if v.lower() in ("inf", "infinity"):
        return math.inf
    try:
        return float(v)
    except ValueError:
        return float(Fraction(v))


def _opt_float(v):
    return None if v.strip().lower() in ("", "none") else _float(v)


def _int(v):
    f = _float(v)
    if f != int(f):
        raise ValueError(f"{v!r} is not an integer")
    return int(f)


def _opt_int(v):
    return None if v.strip().lower() in ("", "none") else _int(v)


def _bool(v):
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"{v!r} is not a boolean")


def _floats(v):
    return tuple(_float(t) for t in v.replace(";", ",").split(",") if t.strip())


def _ints(v):
    return tuple(_int(t) for t in v.replace(";", ",").split(",") if t.strip())


def _choice(*opts):
    def conv(v):
        s = v.strip()
        if s not in opts:
            raise ValueError(f"{s!r} is not one of {', '.join(opts)}")
        return s
    return conv


_LAMBDA = {"lo": (_float, REQUIRED), "hi": (_float, None), "count": (_int, 1)}
_BASIS = {"kind": (_choice("free", "bloch"), "free")}

SCHEMAS = {
    "wkb_sweep": {
        "potential": POTENTIAL,
        "basis": _BASIS,
        "lambda": _LAMBDA,
        "numerics": {"X_max": (_float, 1e4), "tol": (_float, 1e-10), "init": (_floats, (1.0, 0.0)),
                     "stab_tol": (_float, 0.05), "steps_per_octave": (_int, 4)},
        "checks": {"pass_fraction": (_float, 0.95), "phase_drift_tol": (_opt_float, None),
                   "drift_lo": (_float, 1e3), "drift_hi": (_float, 1e4)},
        "output": {"trajectories": (_bool, False), "stride": (_int, 1)},
    },
    "eigen_scan": {
        "potential": POTENTIAL,
        "lambda": _LAMBDA,
        "numerics": {"X_max": (_float, 1e3), "tol": (_float, 1e-7), "threshold": (_float, 0.1),
                     "decade": (_float, 10.0), "refine": (_bool, True),
                     "bound_X": (_float, 1e4), "bound_windows": (_int, 4)},
        "checks": {"expected_candidates": (_opt_int, None), "bounded_fraction": (_float, 0.95)},
    },
    "q_convergence": {
        "potential": POTENTIAL,
        "basis": _BASIS,
        "lambda": _LAMBDA,
        "numerics": {"n_max": (_int, 3), "X_cut": (_float, 1e4), "range_lo": (_float, 10.0),
                     "range_hi": (_opt_float, None), "grid_points": (_int, 1025),
                     "tail": (_choice("auto", "asymptotic", "none"), "auto")},
        "checks": {"improvement": (_float, 2.0)},
    },
    "dyadic_verify": {
        "dyadic": {"trials": (_int, 100), "cells": (_int, 64), "depth": (_int, 8),
                   "p": (_float, 1.0), "norm_kind": (_choice("lp", "lp_l1"), "lp"),
                   "grid_points": (_int, 129), "signed": (_bool, True)},
        "checks": {"identity_tol": (_float, 1e-12), "mass_tol": (_float, 1e-12)},
    },
    "multilinear_probe": {
        "potential": POTENTIAL,
        "basis": _BASIS,
        "lambda": _LAMBDA,
        "multilinear": {"n": (_int, 2), "p": (_float, 4.0 / 3.0), "trials": (_int, 50),
                        "cells": (_int, 32), "subdivide": (_int, 4), "sigma": (_ints, None),
                        "positive": (_bool, True)},
        "checks": {"max_over_median": (_float, 2.0), "outlier_factor": (_float, 10.0)},
    },
    "z_decay": {
        "potential": POTENTIAL,
        "cutoff": {"a": (_float, 0.5), "b": (_float, 2.0), "lo": (_opt_float, None),
                   "hi": (_opt_float, None), "order": (_opt_int, 0)},
        "z": {"N": (_int, 4), "p": (_float, 2.0), "d_lo": (_float, 1.0), "d_hi": (_float, 1e4),
              "count": (_int, 100), "y": (_float, 5.0), "fit_min": (_float, 10.0),
              "safety": (_float, 1.25)},
        "checks": {"slope_tolerance": (_float, 0.2)},
    },
    "band_scan": {
        "background": POTENTIAL,
        "lambda": _LAMBDA,
        "numerics": {"edge_tol": (_float, 1e-8), "margin": (_float, 1e-6), "edge_samples": (_int, 400)},
    },
}

_EXPERIMENT = {"kind": (_choice(*KINDS), REQUIRED), "output": (str, "out"), "seed": (_int, 0),
               "workers": (_opt_int, None), "log": (str, "run.log")}


@dataclass
class ExperimentConfig:
    """Validated configuration.

    ``values`` maps section names to typed key dictionaries; potential
    sections are stored as built specs under ``potentials``.
    """

    kind: str
    values: dict
    potentials: dict = field(default_factory=dict)
    base_dir: str = "."
    source: str = ""

    def get(self, section, key):
        return self.values[section][key]

    @property
    def output(self):
        out = self.values["experiment"]["output"]
        return out if os.path.isabs(out) else os.path.normpath(os.path.join(self.base_dir, out))

    @property
    def seed(self):
        return self.values["experiment"]["seed"]

    @property
    def workers(self):
        w = self.values["experiment"]["workers"]
        return w if w is not None else (os.cpu_count() or 1)

    def lambda_grid(self):
        s = self.values["lambda"]
        if s["count"] == 1 or s["hi"] is None:
            return np.array([s["lo"]])
        return np.linspace(s["lo"], s["hi"], s["count"])


def parse_override(text):
    """``section.key=value`` -> ``(section, key, value)``."""
    if "=" not in text:
        raise ConfigurationError(f"override {text!r} must look like section.key=value")
    lhs, value = text.split("=", 1)
    lhs = lhs.strip()
    if "." not in lhs:
        raise ConfigurationError(f"override {text!r} must name a section")
    section, key = lhs.rsplit(".", 1)
    return section.strip(), key.strip(), value.strip()


def _typed(section, schema, raw, problems):
    out = {}
    for key, (conv, default) in schema.items():
        if key in raw:
            try:
                out[key] = conv(raw[key])
            except (ValueError, ZeroDivisionError) as exc:
                problems.append(f"[{section}] {key}: {exc}")
        elif default is REQUIRED:
            problems.append(f"[{section}] {key}: missing")
        else:
            out[key] = default
    for key in raw:
        if key not in schema:
            problems.append(f"[{section}] {key}: unknown key")
    return out


def parse_config(text, base_dir=".", overrides=(), source="<string>"):
    """Parse and validate config text; ``overrides`` are ``section.key=value``.

    Raises
    ------
    ConfigurationError
        listing every problem found.
    """
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigurationError(f"{source}: {exc}") from None
    for ov in overrides:
        sec, key, val = parse_override(ov) if isinstance(ov, str) else ov
        if sec not in cp:
            cp.add_section(sec)
        cp[sec][key] = val
    problems = []
    if "experiment" not in cp:
        raise ConfigurationError(f"{source}: missing [experiment] section", key="experiment")
    values = {"experiment": _typed("experiment", _EXPERIMENT, dict(cp["experiment"]), problems)}
    kind = values["experiment"].get("kind")
    if kind is None:
        raise ConfigurationError("; ".join(problems), key="kind")
    schema = SCHEMAS[kind]
    potentials = {}
    for section, sch in schema.items():
        raw = dict(cp[section]) if section in cp else {}
        if sch is POTENTIAL:
            if section not in cp:
                if section == "potential" and kind in ("wkb_sweep", "q_convergence", "multilinear_probe",
                                                       "eigen_scan", "z_decay"):
                    problems.append(f"[{section}]: missing section")
                continue
            try:
                potentials[section] = spec_from_mapping(raw, cp, section, base_dir)
            except WKBLabError as exc:
                problems.append(f"[{section}] {getattr(exc, 'key', None) or ''}: {exc}")
            continue
        values[section] = _typed(section, sch, raw, problems)
    known = set(schema) | {"experiment"} | ({"background"} if "basis" in schema else set())
    for section in cp.sections():
        base = section.split(".")[0]
        if base not in known:
            problems.append(f"[{section}]: unknown section for kind {kind}")
    # cross-field checks
    if "lambda" in values and "lo" in values["lambda"]:
        lam = values["lambda"]
        if not lam["lo"] > 0:
            problems.append("[lambda] lo: must be > 0")
        if lam.get("count", 1) < 1:
            problems.append("[lambda] count: must be >= 1")
        if lam.get("count", 1) > 1 and (lam.get("hi") is None or not lam["hi"] > lam["lo"]):
            problems.append("[lambda] hi: must exceed lo when count > 1")
    for sec, vals in values.items():
        for key, v in vals.items():
            if key.endswith("fraction") and isinstance(v, float) and not 0 <= v <= 1:
                problems.append(f"[{sec}] {key}: must lie in [0, 1]")
    if values.get("basis", {}).get("kind") == "bloch" and "background" not in cp:
        problems.append("[background]: the bloch basis needs a periodic background section")
    if "background" in cp and "background" not in schema:
        try:
            potentials["background"] = spec_from_mapping(dict(cp["background"]), cp, "background",
                                                         base_dir)
        except WKBLabError as exc:
            problems.append(f"[background]: {exc}")
    if kind == "band_scan" and "background" not in cp:
        problems.append("[background]: missing section")
    if problems:
        raise ConfigurationError("invalid configuration:\n  " + "\n  ".join(problems))
    return ExperimentConfig(kind, values, potentials, base_dir, source)


def load_config(path, overrides=()):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from None
    return parse_config(text, os.path.dirname(os.path.abspath(path)), overrides, path)
