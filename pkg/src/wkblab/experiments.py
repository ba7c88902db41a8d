"""Experiment runners behind ``wkblab run``.

Each runner takes a validated :class:`~wkblab.config.ExperimentConfig`, an
output directory and a logger, writes its CSV/JSON artifacts and returns a
:class:`Report` with the summary and the pass/fail of every check.  Per-energy
work is isolated: a numerical failure at one energy is recorded in its row
and does not abort the sweep.
"""
from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import __version__
from .basis import _trace, band_edges, band_scan, theta_basis, write_band_scan_csv
from .dyadic import build_tree, decomposition_identity_check, dump_tree_json, node_masses
from .errors import NumericalError, WKBLabError
from .multilinear import (Cutoff, KernelSpec, MultilinearSpec, empirical_norm_constant,
                          write_probe_csv, z_kernel_decay)
from .potential import combine, dumps_spec
from .qiter import decay_exponent, q_iterate, residual_norm, write_qiterate_csv
from .schrod import (boundedness_metrics, embedded_eigenvalue_scan, integrate_eigenfunction,
                     subordinate_solution, write_scan_csv, write_trajectory_csv)
from .stepfn import StepFunction, random_step_function
from .transform import PhaseAccumulator, wkb_deviation, write_deviation_csv

__all__ = ["Report", "run_experiment", "RUNNERS"]


@dataclass
class Report:
    kind: str
    summary: dict
    checks: dict
    files: list = field(default_factory=list)

    @property
    def passed(self):
        return all(c["pass"] for c in self.checks.values())

    def to_json(self):
        doc = {"kind": self.kind, "version": __version__, "passed": self.passed,
               "checks": self.checks, "summary": self.summary, "files": sorted(self.files)}
        return json.dumps(_clean(doc), indent=2, sort_keys=True)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def _check(value, threshold, ok, note=""):
    out = {"value": value, "threshold": threshold, "pass": bool(ok)}
    if note:
        out["note"] = note
    return out


def _map(func, tasks, workers):
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(func, tasks))
    return [func(t) for t in tasks]


def _err(exc):
    return f"{type(exc).__name__}: {exc}"


# ---------------------------------------------------------------- wkb_sweep
def _wkb_one(task):
    (i, lam, W, V, bkind, U, X, tol, init, stab_tol, spo, drift_range, out_dir,
     save_traj, stride) = task
    row = {"index": i, "lambda": lam}
    try:
        basis = theta_basis(bkind, U, lam)
        traj = integrate_eigenfunction(W, lam, init, X, tol, verify=False)
        acc = PhaseAccumulator(basis, V)
        dev = wkb_deviation(traj, basis, V, acc, tol=stab_tol, steps_per_octave=spo)
        lo, hi = drift_range
        drift = dev.drift_over(lo, min(hi, X)) if X >= lo else math.nan
        bnd = boundedness_metrics(traj)
        write_deviation_csv(os.path.join(out_dir, "deviation", f"lam_{i:03d}.csv"), dev)
        if save_traj:
            write_trajectory_csv(os.path.join(out_dir, "trajectory", f"lam_{i:03d}.csv"), traj, stride)
        row.update(var_c1=dev.variation[0], var_c2=dev.variation[1], stable=dev.stable,
                   phase_drift=drift, sup_amp=bnd.sup_amp, growth=bnd.growth_exponent,
                   bounded=bnd.bounded, error="")
    except WKBLabError as exc:
        row.update(var_c1=math.nan, var_c2=math.nan, stable=False, phase_drift=math.nan,
                   sup_amp=math.nan, growth=math.nan, bounded=False, error=_err(exc))
    return row


def _write_rows(path, rows, cols):
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in cols])


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def run_wkb_sweep(cfg, out, log):
    V = cfg.potentials["potential"]
    bkind = cfg.get("basis", "kind")
    U = cfg.potentials.get("background")
    W = combine([(1.0, U), (1.0, V)]) if U is not None else V
    num, chk = cfg.values["numerics"], cfg.values["checks"]
    os.makedirs(os.path.join(out, "deviation"), exist_ok=True)
    save = cfg.get("output", "trajectories")
    if save:
        os.makedirs(os.path.join(out, "trajectory"), exist_ok=True)
    init = tuple(num["init"])
    if len(init) != 2:
        init = (1.0, 0.0)
    grid = cfg.lambda_grid()
    tasks = [(i, float(l), W, V, bkind, U, num["X_max"], num["tol"], init, num["stab_tol"],
              num["steps_per_octave"], (chk["drift_lo"], chk["drift_hi"]), out, save,
              cfg.get("output", "stride")) for i, l in enumerate(grid)]
    rows = _map(_wkb_one, tasks, cfg.workers)
    for r in rows:
        if r["error"]:
            log.warning("lambda=%r failed: %s", r["lambda"], r["error"])
    cols = ["lambda", "var_c1", "var_c2", "stable", "phase_drift", "sup_amp", "growth",
            "bounded", "error"]
    _write_rows(os.path.join(out, "sweep.csv"), rows, cols)
    n = len(rows)
    stable = [r for r in rows if r["stable"]]
    frac = len(stable) / n
    checks = {"stabilization": _check(frac, chk["pass_fraction"], frac >= chk["pass_fraction"],
                                      "fraction of energies with |c1|,|c2| variation below stab_tol")}
    drifts = [r["phase_drift"] for r in stable if math.isfinite(r["phase_drift"])]
    if chk["phase_drift_tol"] is not None:
        worst = max(drifts) if drifts else math.nan
        checks["phase_drift"] = _check(worst, chk["phase_drift_tol"],
                                       bool(drifts) and worst < chk["phase_drift_tol"],
                                       "largest drift of arg c1 over the drift range among stable energies")
    summary = {"potential": dumps_spec(V), "basis": bkind, "count": n, "stable": len(stable),
               "errors": sum(1 for r in rows if r["error"]),
               "max_variation": max((max(r["var_c1"], r["var_c2"]) for r in stable), default=None),
               "max_phase_drift": max(drifts, default=None),
               "bounded": sum(1 for r in rows if r["bounded"])}
    return Report(cfg.kind, summary, checks, ["sweep.csv", "deviation/"] + (["trajectory/"] if save else []))


# --------------------------------------------------------------- eigen_scan
def _bounded_one(task):
    W, lam, X, tol, nw = task
    try:
        ok = True
        worst = -math.inf
        for init in ((1.0, 0.0), (0.0, math.sqrt(lam))):
            traj = integrate_eigenfunction(W, lam, init, X, max(tol, 1e-10), verify=False)
            # late windows only: the first few octaves are transient for a strong potential
            rep = boundedness_metrics(traj, n_windows=nw)
            ok = ok and rep.bounded
            worst = max(worst, rep.growth_exponent)
        return ok, worst, ""
    except WKBLabError as exc:
        return False, math.nan, _err(exc)


def run_eigen_scan(cfg, out, log):
    W = cfg.potentials["potential"]
    num, chk = cfg.values["numerics"], cfg.values["checks"]
    grid = cfg.lambda_grid()
    res = embedded_eigenvalue_scan(W, grid, num["X_max"], num["threshold"], num["tol"],
                                   num["decade"], cfg.workers, num["refine"])
    write_scan_csv(os.path.join(out, "scan.csv"), res)
    for r in res.rows:
        if r.error:
            log.warning("lambda=%r failed: %s", r.lam, r.error)
    rest = [r for r in res.rows if r.verdict == "regular"]
    bnd = _map(_bounded_one, [(W, r.lam, num["bound_X"], num["tol"], num["bound_windows"])
                                  for r in rest], cfg.workers)
    nb = sum(1 for ok, _, _ in bnd if ok)
    frac = nb / len(rest) if rest else 1.0
    files = ["scan.csv"]
    cands = []
    for j, lam in enumerate(res.candidates):
        info = {"lambda": lam}
        try:
            traj = subordinate_solution(W, lam, num["X_max"], max(num["tol"], 1e-10), num["decade"])
            rep = boundedness_metrics(traj)
            name = f"subordinate_{j}.csv"
            write_trajectory_csv(os.path.join(out, name), traj)
            files.append(name)
            info.update(growth_exponent=rep.growth_exponent, sup_amp=rep.sup_amp)
        except WKBLabError as exc:
            info["error"] = _err(exc)
        cands.append(info)
    checks = {"bounded_fraction": _check(frac, chk["bounded_fraction"], frac >= chk["bounded_fraction"],
                                         "regular grid points whose two fundamental solutions stay bounded")}
    if chk["expected_candidates"] is not None:
        checks["candidates"] = _check(len(res.candidates), chk["expected_candidates"],
                                      len(res.candidates) == chk["expected_candidates"])
    scores = [r.score for r in res.rows if r.verdict == "candidate"]
    summary = {"potential": dumps_spec(W), "count": len(res.rows), "candidates": cands,
               "candidate_scores": scores, "regular": len(rest), "bounded": nb,
               "errors": sum(1 for r in res.rows if r.error)}
    return Report(cfg.kind, summary, checks, files)


# ------------------------------------------------------------ q_convergence
def run_q_convergence(cfg, out, log):
    V = cfg.potentials["potential"]
    U = cfg.potentials.get("background")
    num, chk = cfg.values["numerics"], cfg.values["checks"]
    X_cut = num["X_cut"]
    hi = num["range_hi"] if num["range_hi"] is not None else X_cut
    grid = np.concatenate([[0.0], np.geomspace(1.0, X_cut, num["grid_points"] - 1)])
    per_lam = []
    files = []
    ok = True
    for i, lam in enumerate(cfg.lambda_grid()):
        basis = theta_basis(cfg.get("basis", "kind"), U, float(lam))
        q = q_iterate(V, basis, num["n_max"], grid, X_cut, tail=num["tail"])
        res, dec = [], []
        for m in range(num["n_max"] + 1):
            qm = replace(q, n=m, values=q.level(m, grid))
            res.append(residual_norm(qm, (num["range_lo"], hi)))
            try:
                dec.append(decay_exponent(qm))
            except WKBLabError as exc:
                dec.append(math.nan)
                log.warning("decay fit at n=%d: %s", m, exc)
            name = f"qiterate_{i:03d}_n{m}.csv"
            write_qiterate_csv(os.path.join(out, name), qm)
            files.append(name)
        ratio = res[-2] / res[-1] if len(res) > 1 and res[-1] > 0 else math.inf
        finite = all(math.isfinite(r) for r in res)
        ok = ok and finite and ratio >= chk["improvement"]
        per_lam.append({"lambda": float(lam), "residuals": res, "decay_exponents": dec,
                        "improvement": ratio, "tail": q.provenance.get("tail"),
                        "tail_estimate": q.tail_estimate})
    worst = min(p["improvement"] for p in per_lam)
    checks = {"residual_improvement": _check(worst, chk["improvement"], ok,
                                             "residual(n_max - 1) / residual(n_max), finite residuals")}
    summary = {"potential": dumps_spec(V), "n_max": num["n_max"], "X_cut": X_cut,
               "range": [num["range_lo"], hi], "results": per_lam}
    return Report(cfg.kind, summary, checks, files)


# ------------------------------------------------------------ dyadic_verify
def _disjoint_cover(tree):
    # rectangles E(m,l) x E(m,l+1), l odd: no point pair may lie in two of them
    rects = []
    for m in range(1, tree.depth + 1):
        for l in range(0, 2 ** m, 2):
            rects.append((tree.lo[m][l], tree.hi[m][l], tree.lo[m][l + 1], tree.hi[m][l + 1]))
    r = np.array(rects)
    ax = np.maximum(r[:, None, 0], r[None, :, 0]) < np.minimum(r[:, None, 1], r[None, :, 1])
    ay = np.maximum(r[:, None, 2], r[None, :, 2]) < np.minimum(r[:, None, 3], r[None, :, 3])
    both = ax & ay
    np.fill_diagonal(both, False)
    return not bool(both.any())


def run_dyadic_verify(cfg, out, log):
    d, chk = cfg.values["dyadic"], cfg.values["checks"]
    children = np.random.SeedSequence(cfg.seed).spawn(d["trials"])
    rows = []
    worst_id = worst_mass = worst_dom = 0.0
    disjoint = True
    for t, child in enumerate(children):
        rng = np.random.default_rng(child)
        ncell = int(rng.integers(1, d["cells"] + 1))
        f = random_step_function(rng, ncell, positive=not d["signed"])
        if not np.any(f.values != 0):
            f = StepFunction(f.edges, np.ones(ncell))
        tree = build_tree(f, d["p"], d["depth"], d["norm_kind"])
        x = np.linspace(0.0, float(ncell), d["grid_points"])
        rep = decomposition_identity_check(tree, f, x)
        excess = max(float(np.max(tree.mass[m] - 2.0 ** -m)) for m in range(tree.depth + 1))
        mask = StepFunction(f.edges, f.values * rng.uniform(0, 1, ncell))
        dom = max(float(np.max(a - 2.0 ** -m)) for m, a in enumerate(node_masses(tree, mask)))
        if t < 50:
            disjoint = disjoint and _disjoint_cover(tree)
        worst_id = max(worst_id, rep.max_error)
        worst_mass = max(worst_mass, excess)
        worst_dom = max(worst_dom, dom)
        rows.append({"trial": t, "cells": ncell, "max_error": rep.max_error,
                     "excluded": rep.excluded, "mass_excess": excess, "dominated_excess": dom})
        if t == 0:
            dump_tree_json(tree, os.path.join(out, "tree_000.json"))
    _write_rows(os.path.join(out, "dyadic.csv"), rows,
                ["trial", "cells", "max_error", "excluded", "mass_excess", "dominated_excess"])
    checks = {
        "identity": _check(worst_id, chk["identity_tol"], worst_id <= chk["identity_tol"]),
        "mass_bound": _check(worst_mass, chk["mass_tol"], worst_mass <= chk["mass_tol"],
                             "largest mass - 2^-m over all nodes"),
        "dominated_mass_bound": _check(worst_dom, chk["mass_tol"], worst_dom <= chk["mass_tol"]),
        "disjoint_cover": _check(disjoint, True, disjoint),
    }
    summary = {"trials": d["trials"], "depth": d["depth"], "p": d["p"], "norm_kind": d["norm_kind"],
               "excluded_pairs": sum(r["excluded"] for r in rows)}
    return Report(cfg.kind, summary, checks, ["dyadic.csv", "tree_000.json"])


# -------------------------------------------------------- multilinear_probe
def _slot_kernels(n, V, bkind, U):
    ka = KernelSpec("a", "conj_theta_sq_phase", V=V, basis_kind=bkind, U=U)
    kb = KernelSpec("abar", "theta_sq_phase", V=V, basis_kind=bkind, U=U)
    return [ka if j % 2 == 0 else kb for j in range(n)]


def run_multilinear_probe(cfg, out, log):
    V = cfg.potentials["potential"]
    U = cfg.potentials.get("background")
    m, chk = cfg.values["multilinear"], cfg.values["checks"]
    n = m["n"]
    sigma = m["sigma"] if m["sigma"] is not None else tuple(range(1, n))
    spec = MultilinearSpec.class_m(_slot_kernels(n, V, cfg.get("basis", "kind"), U), sigma, m["p"])
    res = empirical_norm_constant(spec, m["p"], m["trials"], cfg.seed, cfg.lambda_grid(),
                                  ncell=m["cells"], subdivide=m["subdivide"], positive=m["positive"])
    write_probe_csv(os.path.join(out, "probe.csv"), res)
    s = res.summary()
    with open(os.path.join(out, "probe.json"), "w") as fh:
        fh.write(json.dumps(_clean(s), indent=2, sort_keys=True))
    med = res.median
    checks = {
        "stability": _check(s["max_over_median"], chk["max_over_median"],
                            res.max_ratio < chk["max_over_median"] * med),
        "outliers": _check(int(np.sum(res.ratios > chk["outlier_factor"] * med)), 0,
                           not np.any(res.ratios > chk["outlier_factor"] * med),
                           "trials above outlier_factor x median"),
    }
    summary = {"potential": dumps_spec(V), "n": n, "sigma": list(sigma), **s}
    return Report(cfg.kind, summary, checks, ["probe.csv", "probe.json"])


# ------------------------------------------------------------------ z_decay
def run_z_decay(cfg, out, log):
    V = cfg.potentials["potential"]
    c, z, chk = cfg.values["cutoff"], cfg.values["z"], cfg.values["checks"]
    phi = Cutoff(c["a"], c["b"], c["lo"], c["hi"], c["order"])
    ds = np.geomspace(z["d_lo"], z["d_hi"], z["count"])
    pairs = [(z["y"] + d, z["y"]) for d in ds]
    rep = z_kernel_decay(phi, V, pairs, z["N"], z["p"], safety=z["safety"], fit_min=z["fit_min"])
    _write_rows(os.path.join(out, "zdecay.csv"),
                [dict(r, re_z=r["Z"].real, im_z=r["Z"].imag) for r in rep.rows],
                ["x", "y", "d", "re_z", "im_z", "absZ", "bound", "role", "ok", "fallback"])
    target = -rep.exponent
    dev = abs(rep.slope - target) / rep.exponent
    checks = {
        "verify_bounded": _check(sum(1 for r in rep.rows if r["role"] == "verify" and not r["ok"]), 0,
                                 rep.all_bounded, "verify pairs above the fitted bound"),
        "slope": _check(rep.slope, [target * (1 + chk["slope_tolerance"]), target * (1 - chk["slope_tolerance"])],
                        dev <= chk["slope_tolerance"]),
    }
    summary = {"potential": dumps_spec(V), "C": rep.C, "exponent": rep.exponent, "slope": rep.slope,
               "norm_V": rep.norm_V, "pairs": len(rep.rows),
               "fallbacks": sum(1 for r in rep.rows if r["fallback"])}
    return Report(cfg.kind, summary, checks, ["zdecay.csv"])


# ---------------------------------------------------------------- band_scan
def run_band_scan(cfg, out, log):
    U = cfg.potentials["background"]
    num = cfg.values["numerics"]
    grid = cfg.lambda_grid()
    rows = band_scan(U, grid, num["margin"])
    write_band_scan_csv(os.path.join(out, "band_scan.csv"), rows)
    lo, hi = float(grid[0]), float(grid[-1])
    edges = band_edges(U, lo, hi, num["edge_samples"], num["edge_tol"]) if hi > lo else []
    bracketed = True
    for e in edges:
        a = abs(_trace(U, max(e - num["edge_tol"], 1e-300))) - 2.0
        b = abs(_trace(U, e + num["edge_tol"])) - 2.0
        bracketed = bracketed and a * b <= 0
    checks = {"edges_bracketed": _check(len(edges), None, bracketed,
                                        "|trace| - 2 changes sign within edge_tol of every edge")}
    summary = {"background": dumps_spec(U, "background"), "edges": edges,
               "in_band": sum(1 for r in rows if r.in_band), "count": len(rows)}
    return Report(cfg.kind, summary, checks, ["band_scan.csv"])


RUNNERS = {
    "wkb_sweep": run_wkb_sweep,
    "eigen_scan": run_eigen_scan,
    "q_convergence": run_q_convergence,
    "dyadic_verify": run_dyadic_verify,
    "multilinear_probe": run_multilinear_probe,
    "z_decay": run_z_decay,
    "band_scan": run_band_scan,
}


def run_experiment(cfg, log=None):
    """Run the configured experiment and write ``summary.json`` next to its data.

    Raises
    ------
    NumericalError
        (or another library error) when the experiment as a whole fails;
        the message carries the experiment kind.
    """
    out = cfg.output
    os.makedirs(out, exist_ok=True)
    own = log is None
    if own:
        log = logging.getLogger(f"wkblab.run.{id(cfg)}")
        log.setLevel(logging.INFO)
        log.propagate = False
        h = logging.FileHandler(os.path.join(out, cfg.values["experiment"]["log"]), mode="w")
        h.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
        log.addHandler(h)
    try:
        log.info("wkblab %s: %s from %s", __version__, cfg.kind, cfg.source)
        try:
            rep = RUNNERS[cfg.kind](cfg, out, log)
        except NumericalError as exc:
            raise type(exc)(f"{cfg.kind}: {exc}") from exc
        for name, c in rep.checks.items():
            log.info("check %s: %s (value=%s)", name, "pass" if c["pass"] else "FAIL", c["value"])
        with open(os.path.join(out, "summary.json"), "w") as fh:
            fh.write(rep.to_json())
        return rep
    finally:
        if own:
            for h in list(log.handlers):
                h.close()
                log.removeHandler(h)
