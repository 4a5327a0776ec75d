"""On-disk artifacts of a pipeline run and how each one is produced."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .. import attacks, dataset, nn
from ..defenses import ATConfig, adversarial_train
from ..signal import FrequencyBand, estimate_band
from .spec import ExperimentSpec, MissingArtifactError


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _key(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def _eps_tag(eps: float) -> str:
    return f"{eps:.6f}".rstrip("0").rstrip(".").replace(".", "p")


class Workspace:
    """Artifact directory shared by the experiments of one pipeline.

    Layout::

        data.bin, model.bin, at_model.bin     (+ JSON sidecars)
        patches/<kind>_e<eps>_s<size>_<victim>.bin
        reports/<experiment>.json, series/<figure>/*.csv

    With ``build=True`` missing prerequisites are produced on demand;
    otherwise asking for one raises :class:`MissingArtifactError`. Patches
    are always (re)generated when absent or stale: they are outputs of the
    experiments themselves.
    """

    def __init__(self, root, spec: ExperimentSpec, build: bool = False, log=None):
        self.root = Path(root)
        self.spec = spec
        self.build = build
        self.log = log or (lambda msg: None)
        self.consumed = {}  # relative path -> sha256
        self._cache = {}
        (self.root / "patches").mkdir(parents=True, exist_ok=True)

    # -- paths -------------------------------------------------------------

    @property
    def data_path(self) -> Path:
        return self.root / "data.bin"

    @property
    def model_path(self) -> Path:
        return self.root / "model.bin"

    @property
    def at_model_path(self) -> Path:
        return self.root / "at_model.bin"

    def _record(self, path: Path):
        self.consumed[path.relative_to(self.root).as_posix()] = sha256_file(path)

    def _require(self, path: Path, what: str, builder):
        if not path.exists():
            if not self.build:
                raise MissingArtifactError(f"{what} not found at {path}; run the producing stage or pass --build")
            self.log(f"building {what} -> {path}")
            builder(path)
        self._record(path)
        return path

    # -- data and models ---------------------------------------------------

    def _build_data(self, path):
        dataset.save(dataset.synthesize(self.spec.dataset_config()), path)

    def data(self):
        if "split" not in self._cache:
            ds = dataset.load(self._require(self.data_path, "dataset", self._build_data))
            self._cache["split"] = dataset.split(ds, self.spec.train_size, seed=self.spec.seeds.split)
        return self._cache["split"]

    def band(self) -> FrequencyBand:
        if "band" not in self._cache:
            train, _ = self.data()
            self._cache["band"] = estimate_band(train.X, self.spec.power_fraction)
        return self._cache["band"]

    def _build_model(self, path):
        train, _ = self.data()
        cfg = nn.TrainConfig(epochs=self.spec.epochs, seed=self.spec.seeds.train)
        params, _ = nn.train(train.X, train.y, cfg)
        nn.save_params(params, path, cfg)

    def model(self) -> nn.ModelParams:
        if "model" not in self._cache:
            self._cache["model"] = nn.load_params(self._require(self.model_path, "model", self._build_model))
        return self._cache["model"]

    def at_config(self) -> ATConfig:
        s = self.spec
        return ATConfig(epsilon=s.at_epsilon, step_size=s.at_step_size, iterations=s.at_iterations,
                        epochs=s.at_epochs, seed=s.seeds.train)

    def _build_at_model(self, path):
        train, _ = self.data()
        cfg = self.at_config()
        params, _ = adversarial_train(train.X, train.y, cfg)
        nn.save_params(params, path, cfg.train_config())
        with open(f"{path}.at.json", "w") as fh:
            json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)

    def at_model(self) -> nn.ModelParams:
        if "at_model" not in self._cache:
            path = self._require(self.at_model_path, "adversarially trained model", self._build_at_model)
            self._cache["at_model"] = nn.load_params(path)
        return self._cache["at_model"]

    def victim(self, name: str) -> nn.ModelParams:
        return self.at_model() if name == "at" else self.model()

    # -- patches -----------------------------------------------------------

    def patch_config(self, kind: str, eps: float, size: int | None, victim: str) -> dict:
        p = self.spec.patch
        return {
            "kind": kind, "epsilon": eps, "size": size, "victim": victim,
            "step_size": eps / p.step_divisor, "inner_iterations": p.inner_iterations,
            "outer_iterations": p.outer_iterations, "n_train": p.n_train, "seed": self.spec.seeds.attack,
            "band": self.band().to_dict() if kind in ("sfr", "arna") else None,
            "victim_sha256": self.consumed.get(
                (self.at_model_path if victim == "at" else self.model_path).name),
            "power_fraction": self.spec.power_fraction,
        }

    def patch(self, kind: str, eps: float, size: int | None = None, victim: str = "base") -> attacks.Patch:
        """Load or generate one universal patch; ``random`` patches are cheap and never cached."""
        params = self.victim(victim)
        train, _ = self.data()
        d = train.X.shape[1]
        seed = self.spec.seeds.attack
        if kind == "random":
            return attacks.random_patch(eps, size or d, seed=seed)
        cfg_dict = self.patch_config(kind, eps, size, victim)
        name = f"{kind}_e{_eps_tag(eps)}_s{size or d}_{victim}.bin"
        path = self.root / "patches" / name
        key = _key(cfg_dict)
        stamp = Path(f"{path}.key")
        if path.exists() and stamp.exists() and stamp.read_text().strip() == key:
            self._record(path)
            return attacks.load_patch(path)
        p = self.spec.patch
        cfg = attacks.AttackConfig(epsilon=eps, step_size=eps / p.step_divisor, inner_iterations=p.inner_iterations,
                                   outer_iterations=p.outer_iterations, seed=seed)
        X, y = train.X[: p.n_train], train.y[: p.n_train]
        self.log(f"generating {name}")
        if kind == "uap":
            patch = attacks.uap(params, X, y, cfg)
        elif kind == "srp":
            patch = attacks.srp(params, X, y, cfg)
        elif kind == "sfr":
            patch = attacks.sfr(params, X, y, cfg, self.band())
        elif kind == "arna":
            patch = attacks.arna(params, X, y, cfg, size or d, self.band())
        else:
            raise ValueError(f"unknown patch kind {kind!r}")
        tmp = path.with_suffix(".tmp")
        attacks.save_patch(patch, tmp)
        os.replace(tmp, path)
        os.replace(f"{tmp}.json", f"{path}.json")
        stamp.write_text(key + "\n")
        self._record(path)
        return patch

    def spec_echo(self) -> dict:
        return {**self.spec.to_dict(), "patch": asdict(self.spec.patch), "seeds": asdict(self.spec.seeds)}

    def eval_set(self):
        _, test = self.data()
        n = self.spec.n_eval
        if n is None or n >= len(test):
            return test.X, test.y
        return test.X[:n], test.y[:n]


def linf(x) -> float:
    return float(np.max(np.abs(x))) if np.size(x) else 0.0
