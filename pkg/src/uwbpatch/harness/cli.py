"""Command-line entry point.

Exit status: 0 on success, 1 when a produced result violates an invariant,
2 on configuration errors (bad flags, bad spec files, missing inputs).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import attacks, dataset, nn
from ..dataset import DatasetConfig, DatasetError
from ..defenses import ATConfig, FilteredVictim, adversarial_train, defended_predict
from ..signal import FrequencyBand, estimate_band
from .experiments import run
from .report import dumps, write_report
from .spec import EXPERIMENTS, ConfigError, ExperimentSpec, InvariantViolation, MissingArtifactError, load_spec

EXIT_OK, EXIT_INVARIANT, EXIT_CONFIG = 0, 1, 2
PATCH_KINDS = ("uap", "srp", "sfr", "arna", "random")


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from exc


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of integers: {text!r}") from exc


def _band(text):
    if text == "auto":
        return None
    lo_hi = _floats(text)
    if len(lo_hi) != 2:
        raise argparse.ArgumentTypeError("band must be 'auto' or 'f_min,f_max' in Hz")
    try:
        return FrequencyBand(*lo_hi).validate()
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc


def _existing(path):
    if not Path(path).exists():
        raise MissingArtifactError(f"file not found: {path}")
    return path


def _split(args):
    ds = dataset.load(_existing(args.data))
    return dataset.split(ds, args.train_size, seed=args.split_seed)


def _echo(obj):
    sys.stdout.write(dumps(obj))


# ---------------------------------------------------------------------------


def cmd_synth(args):
    cfg = DatasetConfig(seed=args.seed)
    if args.config:
        with open(_existing(args.config)) as fh:
            overrides = json.load(fh)
        cfg = DatasetConfig.from_dict({**cfg.to_dict(), **overrides})
    if args.samples_per_class is not None:
        cfg = replace(cfg, samples_per_class=args.samples_per_class)
    ds = dataset.synthesize(cfg)
    dataset.save(ds, args.out)
    _echo({"out": str(args.out), "samples": len(ds), "classes": list(ds.class_names)})


def cmd_train(args):
    train, test = _split(args)
    cfg = nn.TrainConfig(epochs=args.epochs, seed=args.seed, learning_rate=args.lr, batch_size=args.batch_size)
    params, _ = nn.train(train.X, train.y, cfg, verbose=args.verbose)
    nn.save_params(params, args.out, cfg)
    _echo({"out": str(args.out), "test_accuracy": nn.accuracy(params, test.X, test.y)})


def cmd_attack(args):
    params = nn.load_params(_existing(args.model))
    train, test = _split(args)
    eps = args.eps
    if args.kind in ("fgsm", "pgd"):
        X, y = test.X[: args.n_eval], test.y[: args.n_eval]
        if args.kind == "fgsm":
            X_adv = attacks.fgsm(params, X, y, eps)
        else:
            alpha = eps / 10 if args.alpha is None else args.alpha
            X_adv = attacks.pgd(params, X, y, eps, alpha, args.m)
        if np.max(np.abs(X_adv - X)) > eps + 1e-12:
            raise InvariantViolation(f"{args.kind} perturbation exceeds epsilon")
        sync, desync = attacks.evaluate_perturbations(params, X, y, X_adv, args.n_shifts, seed=args.eval_seed)
        if args.out:
            np.save(args.out, X_adv - X)
        _echo({"attack": args.kind, "epsilon": eps, "sync_success": sync, "desync_success": desync,
               "n_eval": int(X.shape[0]), "n_shifts": args.n_shifts})
        return
    d = train.X.shape[1]
    if args.kind == "random":
        patch = attacks.random_patch(eps, args.s or d, seed=args.seed)
    else:
        cfg = attacks.AttackConfig(epsilon=eps, step_size=args.alpha, inner_iterations=args.m,
                                   outer_iterations=args.N, seed=args.seed,
                                   target_fooling_rate=args.target_fooling_rate)
        X, y = train.X[: args.n_train], train.y[: args.n_train]
        band = args.band if args.band is not None else estimate_band(train.X)
        if args.kind == "uap":
            patch = attacks.uap(params, X, y, cfg)
        elif args.kind == "srp":
            patch = attacks.srp(params, X, y, cfg)
        elif args.kind == "sfr":
            patch = attacks.sfr(params, X, y, cfg, band)
        else:
            patch = attacks.arna(params, X, y, cfg, args.s or d, band)
    if patch.linf() > eps + 1e-12:
        raise InvariantViolation(f"patch l-inf norm {patch.linf()} exceeds epsilon {eps}")
    if not args.out:
        raise ConfigError("--out is required for patch attacks")
    attacks.save_patch(patch, args.out)
    _echo({"out": str(args.out), "kind": patch.kind, "epsilon": eps, "size": patch.size, "linf": patch.linf(),
           "history": patch.history})


def cmd_defend(args):
    train, test = _split(args)
    if args.method == "filter":
        params = nn.load_params(_existing(args.model))
        band = args.band if args.band is not None else estimate_band(train.X, args.power_fraction)
        clean = nn.accuracy(params, test.X, test.y)
        filtered = float(np.mean(defended_predict(params, band, test.X) == test.y))
        out = {"band": band.to_dict(), "clean_accuracy": clean, "filtered_accuracy": filtered}
        if args.out:
            Path(args.out).write_text(dumps(out))
        _echo(out)
        return
    cfg = ATConfig(epsilon=args.eps, step_size=args.alpha, iterations=args.m, epochs=args.epochs, seed=args.seed)
    params, _ = adversarial_train(train.X, train.y, cfg, verbose=args.verbose)
    if not args.out:
        raise ConfigError("--out is required for adversarial training")
    nn.save_params(params, args.out, cfg.train_config())
    _echo({"out": str(args.out), "at_config": cfg.to_dict(), "test_accuracy": nn.accuracy(params, test.X, test.y)})


def cmd_eval(args):
    params = nn.load_params(_existing(args.model))
    train, test = _split(args)
    victim = params
    if args.defense == "filter":
        victim = FilteredVictim(params, args.band if args.band is not None else estimate_band(train.X))
    X, y = test.X[: args.n_eval], test.y[: args.n_eval]
    if args.patch is None:
        rate = float(np.mean(np.asarray(victim.predict(X) if args.defense == "filter"
                                        else nn.predict_batched(params, X)) != y))
        _echo({"mode": "clean", "defense": args.defense, "success_rate": rate, "accuracy": 1 - rate})
        return
    patch = attacks.load_patch(_existing(args.patch))
    res = attacks.evaluate_patch(victim, X, y, patch, args.mode, args.n_shifts, seed=args.eval_seed)
    _echo({"patch": str(args.patch), "mode": args.mode, "defense": args.defense,
           "success_rate": res.success_rate, "n_eval": res.n_samples, "n_shifts": res.n_shifts})


def cmd_report(args):
    base = load_spec(args.spec) if args.spec else ExperimentSpec(name="train_baseline")
    names = args.experiment or ([base.name] if args.spec else list(EXPERIMENTS))
    if "all" in names:
        names = list(EXPERIMENTS)
    overrides = {}
    for flag, key in (("eps", "epsilons"), ("sizes", "sizes"), ("n_shifts", "n_shifts"), ("n_eval", "n_eval")):
        value = getattr(args, flag)
        if value is not None:
            overrides[key] = tuple(value) if isinstance(value, list) else value
    written = []
    for name in names:
        spec = base if name == base.name else base.with_name(name)
        if overrides:
            spec = ExperimentSpec.from_dict({**spec.to_dict(), **overrides})
        report, timings = run(spec, args.workdir, build=args.build, log=_log if args.verbose else None)
        written += [str(p) for p in write_report(report, timings, args.workdir)]
    _echo({"written": written})


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


# ---------------------------------------------------------------------------


def _data_flags(p, model=True):
    p.add_argument("--data", required=True, help="dataset file written by 'synth'")
    if model:
        p.add_argument("--model", required=True, help="model checkpoint written by 'train'")
    p.add_argument("--train-size", type=int, default=800)
    p.add_argument("--split-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uwbpatch", description="Adversarial radio-noise experiments on synthetic UWB echoes.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples-per-class", type=int)
    p.add_argument("--config", help="JSON file of dataset config overrides")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the CNN")
    _data_flags(p, model=False)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="craft adversarial noise")
    p.add_argument("kind", choices=("fgsm", "pgd") + PATCH_KINDS)
    _data_flags(p)
    p.add_argument("--out")
    p.add_argument("--eps", type=float, default=0.02)
    p.add_argument("--alpha", type=float, help="inner step size (default eps/10)")
    p.add_argument("--m", type=int, default=20, help="inner iterations")
    p.add_argument("--N", type=int, default=5, help="passes over the patch training set")
    p.add_argument("--s", type=int, help="patch size (a-RNA and random)")
    p.add_argument("--band", type=_band, default=None, help="'auto' or 'f_min,f_max' in Hz")
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-eval", type=int)
    p.add_argument("--n-shifts", type=int, default=50)
    p.add_argument("--target-fooling-rate", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-seed", type=int, default=1)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("defend", help="pass-band filter or adversarial training")
    p.add_argument("method", choices=("filter", "at"))
    p.add_argument("--data", required=True)
    p.add_argument("--model", help="checkpoint to defend (filter)")
    p.add_argument("--train-size", type=int, default=800)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--band", type=_band, default=None)
    p.add_argument("--power-fraction", type=float, default=0.95)
    p.add_argument("--eps", type=float, default=0.002)
    p.add_argument("--alpha", type=float, default=0.0005)
    p.add_argument("--m", type=int, default=20)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_defend)

    p = sub.add_parser("eval", help="clean accuracy or patch success rate")
    _data_flags(p)
    p.add_argument("--patch")
    p.add_argument("--mode", choices=attacks.MODES, default=attacks.SHIFT)
    p.add_argument("--defense", choices=("none", "filter"), default="none")
    p.add_argument("--band", type=_band, default=None)
    p.add_argument("--n-eval", type=int)
    p.add_argument("--n-shifts", type=int, default=50)
    p.add_argument("--eval-seed", type=int, default=1)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="run experiments and write reports and plot series")
    p.add_argument("--workdir", required=True)
    p.add_argument("--spec", help="JSON experiment spec")
    p.add_argument("--experiment", action="append", choices=EXPERIMENTS + ("all",))
    p.add_argument("--eps", type=_floats)
    p.add_argument("--sizes", type=_ints)
    p.add_argument("--n-shifts", type=int)
    p.add_argument("--n-eval", type=int)
    p.add_argument("--build", action="store_true", help="produce missing dataset/model artifacts")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # argparse itself exits with status 2
    if getattr(args, "method", None) == "filter" and args.model is None:
        parser.error("defend filter needs --model")
    try:
        args.func(args)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ConfigError, DatasetError, nn.CheckpointError, attacks.PatchFormatError, ValueError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
