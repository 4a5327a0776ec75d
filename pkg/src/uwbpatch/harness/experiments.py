"""The experiment runners: one function per experiment name, all returning a report dict."""

from __future__ import annotations

import time
from importlib import metadata

import numpy as np

from .. import attacks, nn
from ..defenses import FilteredVictim, detectability_report
from .spec import ExperimentSpec, InvariantViolation
from .workspace import Workspace

REPORT_VERSION = 1
CELL_KEYS = ("attack", "epsilon", "size", "mode", "defense", "victim")
TOL = 1e-12


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


class _Run:
    def __init__(self, ws: Workspace):
        self.ws = ws
        self.cells = {}
        self.timings = {}
        self.summary = {}

    def add(self, attack, epsilon, size, mode, defense, victim, success_rate, started, **extra):
        key = (attack, epsilon, size, mode, defense, victim)
        if key in self.cells:
            raise InvariantViolation(f"cell {key} produced twice")
        rate = float(success_rate)
        if not 0.0 <= rate <= 1.0:
            raise InvariantViolation(f"success rate {rate} outside [0, 1] for {key}")
        self.cells[key] = {**dict(zip(CELL_KEYS, key)), "success_rate": rate, "accuracy": 1.0 - rate, **extra}
        self.timings["/".join(str(k) for k in key)] = round(time.perf_counter() - started, 3)

    def victim_for(self, name: str, defense: str):
        params = self.ws.victim(name)
        if defense == "filter":
            return FilteredVictim(params, self.ws.band())
        return params


def _check_patch(patch: attacks.Patch, eps: float):
    if patch.linf() > eps + TOL:
        raise InvariantViolation(f"{patch.kind} patch has l-inf norm {patch.linf()} > epsilon {eps}")


def _shift_rate(run: _Run, patch, victim="base", defense="none", mode=attacks.SHIFT):
    X, y = run.ws.eval_set()
    spec = run.ws.spec
    return attacks.evaluate_patch(run.victim_for(victim, defense), X, y, patch, mode, spec.n_shifts,
                                  seed=spec.seeds.eval).success_rate


def _sync_rate(run: _Run, patch, victim="base", defense="none"):
    X, y = run.ws.eval_set()
    return attacks.shift_profile(run.victim_for(victim, defense), X, y, patch, [0])[0]


def _clean(run: _Run, victim="base", defenses=("none", "filter")):
    X, y = run.ws.eval_set()
    for defense in defenses:
        t = time.perf_counter()
        pred = np.asarray(run.victim_for(victim, defense).predict(X)) if defense == "filter" \
            else nn.predict_batched(run.ws.victim(victim), X)
        run.add("none", 0.0, None, "clean", defense, victim, float(np.mean(pred != y)), t)


# ---------------------------------------------------------------------------


def _train_baseline(run: _Run):
    train, test = run.ws.data()
    run.ws.model()
    _clean(run)
    band = run.ws.band()
    run.summary.update({
        "band_hz": [band.f_min, band.f_max],
        "n_train": len(train), "n_test": len(test),
        "train_accuracy": nn.accuracy(run.ws.model(), train.X, train.y),
    })


def _baseline_sync_desync(run: _Run):
    spec = run.ws.spec
    params = run.ws.model()
    X, y = run.ws.eval_set()
    effective = {}
    for name in ("fgsm", "pgd"):
        for eps in spec.epsilons:
            t = time.perf_counter()
            if name == "fgsm":
                X_adv = attacks.fgsm(params, X, y, eps)
            else:
                X_adv = attacks.pgd(params, X, y, eps, eps / spec.pgd_step_divisor, spec.pgd_iterations)
            if np.max(np.abs(X_adv - X)) > eps + TOL or np.max(np.abs(X_adv)) > 1.0:
                raise InvariantViolation(f"{name} output leaves the epsilon ball or the signal domain")
            sync, desync = attacks.evaluate_perturbations(params, X, y, X_adv, spec.n_shifts, seed=spec.seeds.eval)
            run.add(name, eps, None, "sync", "none", "base", sync, t)
            run.add(name, eps, None, "desync", "none", "base", desync, t)
            if name not in effective and sync >= 0.5:
                effective[name] = {"epsilon": eps, "sync": sync, "desync": desync,
                                   "retained": desync / sync}
    run.summary["smallest_effective"] = effective
    run.summary["n_eval"] = int(X.shape[0])


def _universal(run: _Run, kinds, defenses=("none",), sync=True):
    spec = run.ws.spec
    for eps in spec.epsilons:
        for kind in kinds:
            t = time.perf_counter()
            patch = run.ws.patch(kind, eps)
            _check_patch(patch, eps)
            for defense in defenses:
                if sync:
                    run.add(kind, eps, None, "sync", defense, "base", _sync_rate(run, patch, defense=defense), t)
                    t = time.perf_counter()
                run.add(kind, eps, None, attacks.SHIFT, defense, "base", _shift_rate(run, patch, defense=defense), t)
                t = time.perf_counter()


def _uap_eval(run):
    _universal(run, ("uap",))


def _srp_eval(run):
    _universal(run, ("uap", "srp"))


def _filter_impact(run):
    _clean(run)
    _universal(run, ("uap", "srp"), defenses=("none", "filter"), sync=False)


def _sfr_eval(run):
    _universal(run, ("uap", "srp", "sfr"), defenses=("none", "filter"), sync=False)


def _size_sweep(run: _Run, magnitudes=False):
    spec = run.ws.spec
    for eps in spec.epsilons:
        patches = []
        for s in spec.sizes:
            t = time.perf_counter()
            patch = run.ws.patch("arna", eps, s)
            _check_patch(patch, eps)
            patches.append(patch)
            extra = {}
            if magnitudes:
                (_, avg, peak), = detectability_report([patch], run.ws.data()[0].X.shape[1])
                extra = {"avg_magnitude": avg, "max_magnitude": peak}
            run.add("arna", eps, s, attacks.ONE_SHOT, "none", "base",
                    _shift_rate(run, patch, mode=attacks.ONE_SHOT), t, **extra)
            if not magnitudes:
                t = time.perf_counter()
                run.add("arna", eps, s, attacks.CONTINUOUS, "none", "base",
                        _shift_rate(run, patch, mode=attacks.CONTINUOUS), t)
        if magnitudes:
            run.summary.setdefault("detectability", {})[repr(eps)] = [
                list(row) for row in detectability_report(patches, run.ws.data()[0].X.shape[1])]


def _magnitude_table(run):
    _size_sweep(run, magnitudes=True)


def _random_baseline(run: _Run):
    spec = run.ws.spec
    d = run.ws.data()[0].X.shape[1]
    for eps in spec.epsilons:
        for kind in ("arna", "random"):
            t = time.perf_counter()
            patch = run.ws.patch(kind, eps, d)
            _check_patch(patch, eps)
            run.add(kind, eps, d, attacks.ONE_SHOT, "none", "base", _shift_rate(run, patch, mode=attacks.ONE_SHOT), t)


def _at_eval(run: _Run):
    spec = run.ws.spec
    d = run.ws.data()[0].X.shape[1]
    for victim in ("base", "at"):
        _clean(run, victim, defenses=("none",))
    for eps in spec.epsilons:
        for victim in ("base", "at"):
            t = time.perf_counter()
            patch = run.ws.patch("arna", eps, d, victim=victim)
            _check_patch(patch, eps)
            for mode in (attacks.ONE_SHOT, attacks.CONTINUOUS):
                run.add("arna", eps, d, mode, "none", victim, _shift_rate(run, patch, victim, mode=mode), t)
                t = time.perf_counter()
    run.summary["at_config"] = run.ws.at_config().to_dict()


RUNNERS = {
    "train_baseline": _train_baseline,
    "baseline_sync_desync": _baseline_sync_desync,
    "uap_eval": _uap_eval,
    "srp_eval": _srp_eval,
    "filter_impact": _filter_impact,
    "sfr_eval": _sfr_eval,
    "size_sweep": _size_sweep,
    "magnitude_table": _magnitude_table,
    "random_baseline": _random_baseline,
    "at_eval": _at_eval,
}


def expected_cells(spec: ExperimentSpec, d: int):
    """Every cell key the experiment must produce."""
    eps, sizes = spec.epsilons, spec.sizes
    clean = lambda victim="base", defenses=("none", "filter"): [
        ("none", 0.0, None, "clean", df, victim) for df in defenses]
    name = spec.name
    if name == "train_baseline":
        return clean()
    if name == "baseline_sync_desync":
        return [(a, e, None, m, "none", "base") for a in ("fgsm", "pgd") for e in eps for m in ("sync", "desync")]
    if name in ("uap_eval", "srp_eval"):
        kinds = ("uap",) if name == "uap_eval" else ("uap", "srp")
        return [(k, e, None, m, "none", "base") for e in eps for k in kinds for m in ("sync", attacks.SHIFT)]
    if name in ("filter_impact", "sfr_eval"):
        kinds = ("uap", "srp") if name == "filter_impact" else ("uap", "srp", "sfr")
        cells = clean() if name == "filter_impact" else []
        return cells + [(k, e, None, attacks.SHIFT, df, "base") for e in eps for k in kinds for df in ("none", "filter")]
    if name == "size_sweep":
        return [("arna", e, s, m, "none", "base") for e in eps for s in sizes
                for m in (attacks.ONE_SHOT, attacks.CONTINUOUS)]
    if name == "magnitude_table":
        return [("arna", e, s, attacks.ONE_SHOT, "none", "base") for e in eps for s in sizes]
    if name == "random_baseline":
        return [(k, e, d, attacks.ONE_SHOT, "none", "base") for e in eps for k in ("arna", "random")]
    if name == "at_eval":
        return clean("base", ("none",)) + clean("at", ("none",)) + [
            ("arna", e, d, m, "none", v) for e in eps for v in ("base", "at")
            for m in (attacks.ONE_SHOT, attacks.CONTINUOUS)]
    raise ValueError(name)


def _sort_key(key):
    return tuple((0, "") if v is None else (1, v) if isinstance(v, (int, float)) else (2, str(v)) for v in key)


def run(spec: ExperimentSpec, workdir, build: bool = False, log=None):
    """Run one experiment; returns ``(report, timings)``.

    ``report`` is a deterministic function of the spec, the seeds and the
    consumed artifacts; wall-clock timings are returned separately so they
    never enter the report.
    """
    ws = Workspace(workdir, spec, build=build, log=log)
    state = _Run(ws)
    RUNNERS[spec.name](state)
    d = ws.data()[0].X.shape[1]
    want = set(expected_cells(spec, d))
    got = set(state.cells)
    if want != got:
        raise InvariantViolation(
            f"report cells do not match the grid: missing {sorted(want - got, key=_sort_key)[:5]}, "
            f"unexpected {sorted(got - want, key=_sort_key)[:5]}"
        )
    report = {
        "report_version": REPORT_VERSION,
        "experiment": spec.name,
        "spec": ws.spec_echo(),
        "cells": [state.cells[k] for k in sorted(got, key=_sort_key)],
        "summary": state.summary,
        "provenance": dict(sorted(ws.consumed.items())),
        "environment": {"package_version": _version(), "numpy_version": np.__version__, "seeds": ws.spec_echo()["seeds"]},
    }
    return report, state.timings
