"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The heavy criteria share the artifact directory ``.acceptance/`` at the
repository root (override with ``UWBPATCH_ACCEPTANCE_DIR``). Missing
artifacts are built on first use: the dataset and model take a few
minutes, the full set of patches and the adversarially trained model take
roughly two hours on one CPU core. Later runs reuse them.
"""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from uwbpatch import attacks, dataset, nn
from uwbpatch.harness import experiments, report
from uwbpatch.harness.spec import EXPERIMENTS, ExperimentSpec
from uwbpatch.signal import FrequencyBand, dft, passband_filter

from .conftest import ACCEPTANCE_LINES
from .oracles import activation_pattern

pytestmark = pytest.mark.acceptance

ROOT = Path(os.environ.get("UWBPATCH_ACCEPTANCE_DIR", Path(__file__).resolve().parents[1] / ".acceptance"))

# grids evaluated for each experiment (default settings otherwise)
GRIDS = {
    "baseline_sync_desync": None,
    "srp_eval": (0.02, 0.05),
    "filter_impact": (0.05,),
    "sfr_eval": (0.05,),
    "random_baseline": (0.02,),
    "magnitude_table": None,
    "size_sweep": None,
    "at_eval": (0.01, 0.05),
}

_reports = {}


def experiment(name):
    if name not in _reports:
        spec = ExperimentSpec(name=name, epsilons=GRIDS.get(name))
        rep, timings = experiments.run(spec, ROOT, build=True)
        report.write_report(rep, timings, ROOT)
        _reports[name] = rep
    return _reports[name]


def cell(rep, **where):
    hits = [c for c in rep["cells"] if all(c[k] == v for k, v in where.items())]
    assert len(hits) == 1, f"expected one cell for {where}, got {len(hits)}"
    return hits[0]["success_rate"]


class Criterion:
    """Records ``[PASS]``/``[FAIL]`` for one criterion, whatever happens inside the block."""

    def __init__(self, number, title):
        self.number, self.title = number, title
        self.details = []
        self.t0 = time.perf_counter()

    def note(self, text):
        self.details.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        elapsed = time.perf_counter() - self.t0
        detail = "; ".join(self.details)
        if exc is not None and not detail:
            detail = str(exc).splitlines()[0] if str(exc) else exc_type.__name__
        ACCEPTANCE_LINES.append(f"[{status}] {self.number:>2}. {self.title} ({elapsed:.1f}s) {detail}")
        return False


# ---------------------------------------------------------------------------


TABLE_SHAPES = [
    ("conv", (16, 658)), ("pool", (16, 329)),
    ("conv", (32, 327)), ("pool", (32, 163)),
    ("conv", (64, 161)), ("pool", (64, 80)),
    ("flatten", (5120,)),
]


def test_c01_architecture():
    with Criterion(1, "architecture fidelity") as c:
        params = nn.init_params(seed=0)
        shapes = nn.intermediate_shapes(params, np.zeros(660))
        count = params.flat().size
        c.note(f"params={count}")
        assert count == 89_861
        assert shapes == TABLE_SHAPES
        assert nn.forward(params, np.zeros(660)).shape == (5,)
        assert time.perf_counter() - c.t0 < 1.0


def _naive_dft(x):
    n = x.size
    j = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(j, j) / n) @ x


def test_c02_numerical_core():
    with Criterion(2, "numerical core") as c:
        rng = np.random.default_rng(0)
        band = FrequencyBand(2.7e9, 3.4e9)
        worst = {"dft": 0.0, "parseval": 0.0, "idempotence": 0.0}
        for n in (7, 8, 660):
            for _ in range(100):
                x = rng.normal(size=n)
                ref = _naive_dft(x)
                spec = dft(x)
                worst["dft"] = max(worst["dft"], np.max(np.abs(spec - ref)) / np.max(np.abs(ref)))
                energy = np.sum(x**2)
                worst["parseval"] = max(worst["parseval"], abs(energy - np.sum(np.abs(spec) ** 2) / n) / energy)
                once = passband_filter(x, band)
                worst["idempotence"] = max(worst["idempotence"],
                                           np.max(np.abs(passband_filter(once, band) - once)) / max(1.0, np.abs(x).max()))
        c.note(", ".join(f"{k}={v:.1e}" for k, v in worst.items()))
        assert all(v <= 1e-9 for v in worst.values())
        assert time.perf_counter() - c.t0 < 10.0


def _batched_fd(params, x, y, h=1e-4):
    d = x.size
    eye = np.eye(d) * h
    up = -nn.forward(params, x + eye)[:, y]
    down = -nn.forward(params, x - eye)[:, y]
    return (up - down) / (2 * h)


def test_c03_gradients():
    with Criterion(3, "gradient correctness") as c:
        rng = np.random.default_rng(3)
        h = 1e-4
        worst, smooth_share = 0.0, 1.0
        for t in range(20):
            params = nn.init_params(seed=t)
            x = rng.uniform(-1, 1, 660)
            y = int(rng.integers(0, 4))
            _, grad = nn.loss_and_input_gradient(params, x, y)
            fd = _batched_fd(params, x, y, h)
            # central differences are only exact away from the LeakyReLU kinks and max-pool ties
            base = activation_pattern(params, x)[0]
            eye = np.eye(660) * h
            ok = (np.all(activation_pattern(params, x + eye) == base, axis=1)
                  & np.all(activation_pattern(params, x - eye) == base, axis=1))
            smooth_share = min(smooth_share, ok.mean())
            scale = max(np.abs(grad[ok]).max(), np.abs(fd[ok]).max())
            worst = max(worst, np.max(np.abs(grad[ok] - fd[ok])) / scale)
        c.note(f"max rel err={worst:.1e} over 20 triples, smooth coords>={smooth_share:.0%}")
        assert worst <= 1e-4
        assert smooth_share > 0.9
        assert time.perf_counter() - c.t0 < 120.0


def test_c04_clean_utility():
    with Criterion(4, "clean utility") as c:
        spec = ExperimentSpec(name="train_baseline")
        ds = dataset.synthesize(spec.dataset_config())
        train, test = dataset.split(ds, spec.train_size, seed=spec.seeds.split)
        t0 = time.perf_counter()
        params, _ = nn.train(train.X, train.y, nn.TrainConfig(epochs=100, seed=spec.seeds.train))
        elapsed = time.perf_counter() - t0
        acc = nn.accuracy(params, test.X, test.y)
        c.note(f"test accuracy={acc:.4f}, training {elapsed:.0f}s")
        assert acc >= 0.95
        assert elapsed < 20 * 60


def test_c05_desynchronization_collapse():
    with Criterion(5, "desynchronization collapse") as c:
        rep = experiment("baseline_sync_desync")
        assert rep["summary"]["n_eval"] >= 200 and rep["spec"]["n_shifts"] >= 50
        effective = rep["summary"]["smallest_effective"]
        for name in ("fgsm", "pgd"):
            if name not in effective:
                c.note(f"{name}: no effective epsilon on the grid")
                raise AssertionError(f"{name} never reaches 50% synchronized success")
            e = effective[name]
            c.note(f"{name} eps={e['epsilon']:g} sync={e['sync']:.3f} desync={e['desync']:.3f} "
                   f"loss={1 - e['retained']:.0%}")
        assert all(effective[n]["retained"] <= 0.2 for n in ("fgsm", "pgd"))


def test_c06_srp_recovery():
    with Criterion(6, "SRP recovery") as c:
        rep = experiment("srp_eval")
        gaps = {}
        for eps in (0.02, 0.05):
            srp = cell(rep, attack="srp", epsilon=eps, mode="shift")
            uap = cell(rep, attack="uap", epsilon=eps, mode="shift")
            gaps[eps] = srp - uap
            c.note(f"eps={eps:g} srp={srp:.3f} uap={uap:.3f}")
        assert all(g >= 0.10 for g in gaps.values())


def test_c07_filter_and_sfr():
    with Criterion(7, "filter defense and SFR") as c:
        imp = experiment("filter_impact")
        clean = 1 - cell(imp, attack="none", defense="none")
        filtered = 1 - cell(imp, attack="none", defense="filter")
        srp = cell(imp, attack="srp", epsilon=0.05, defense="none")
        srp_f = cell(imp, attack="srp", epsilon=0.05, defense="filter")
        sfr_rep = experiment("sfr_eval")
        sfr_f = cell(sfr_rep, attack="sfr", epsilon=0.05, defense="filter")
        c.note(f"clean {clean:.3f}->{filtered:.3f}; srp {srp:.3f}->{srp_f:.3f}; sfr filtered={sfr_f:.3f}")
        assert clean - filtered <= 0.02
        assert srp - srp_f >= 0.10
        assert sfr_f - srp_f >= 0.10


def test_c08_arna_structure():
    with Criterion(8, "a-RNA structure") as c:
        # exact support of the placement and of the masked inner attack
        rng = np.random.default_rng(8)
        d = 660
        for _ in range(200):
            s = int(rng.integers(1, d + 1))
            k = int(rng.integers(0, d))
            frame = attacks.place_batch(rng.uniform(0.1, 1.0, s), [k], d, attacks.ONE_SHOT)[0]
            nz = np.flatnonzero(frame)
            assert nz.min() == k and nz.max() == min(k + s, d) - 1 and nz.size == min(s, d - k)
        params = nn.init_params(seed=0)
        x = rng.uniform(-0.5, 0.5, d)
        support = attacks.place_batch(np.ones(50), [600], d, attacks.ONE_SHOT)[0]
        changed = np.flatnonzero(attacks.pgd(params, x, 0, 0.05, 0.01, 5, support) != x)
        assert changed.size and changed.min() >= 600
        # monotone in size, continuous at least one-shot
        rep = experiment("size_sweep")
        bad = []
        for eps in rep["spec"]["epsilons"]:
            one = [cell(rep, epsilon=eps, size=s, mode="one_shot") for s in rep["spec"]["sizes"]]
            cont = [cell(rep, epsilon=eps, size=s, mode="continuous") for s in rep["spec"]["sizes"]]
            c.note(f"eps={eps:g} one-shot " + "/".join(f"{v:.2f}" for v in one))
            if any(b < a for a, b in zip(one, one[1:])):
                bad.append(f"one-shot not monotone at eps={eps:g}")
            if any(ct < o for o, ct in zip(one, cont)):
                bad.append(f"continuous below one-shot at eps={eps:g}")
        if bad:
            c.note("; ".join(bad))
        assert not bad


def test_c09_detectability():
    with Criterion(9, "detectability") as c:
        rep = experiment("magnitude_table")
        rows = rep["summary"]["detectability"][repr(0.03)]
        sizes = [r[0] for r in rows]
        avg = [r[1] for r in rows]
        assert sizes[0] == 30 and sizes[-1] == 600 and sizes == sorted(sizes)
        # an all-zero smallest patch makes any positive growth an infinite ratio
        ratio = avg[-1] / avg[0] if avg[0] > 0 else (math.inf if avg[-1] > 0 else 0.0)
        c.note("avg " + "/".join(f"{v:.3f}" for v in avg) + f"; ratio={ratio:.2f}")
        assert all(b >= a for a, b in zip(avg, avg[1:]))
        assert ratio >= 3


def test_c10_random_noise_gap():
    with Criterion(10, "random-noise gap") as c:
        rep = experiment("random_baseline")
        arna = cell(rep, attack="arna", epsilon=0.02)
        rand = cell(rep, attack="random", epsilon=0.02)
        c.note(f"a-RNA={arna:.3f} random={rand:.3f}")
        assert arna - rand >= 0.15


def test_c11_adversarial_training():
    with Criterion(11, "adversarial training") as c:
        rep = experiment("at_eval")
        at_clean = 1 - cell(rep, attack="none", victim="at")
        c.note(f"AT clean={at_clean:.3f}")
        ok = at_clean >= 0.95
        for mode in ("one_shot", "continuous"):
            gaps = {}
            for eps in rep["spec"]["epsilons"]:
                gaps[eps] = (cell(rep, attack="arna", epsilon=eps, mode=mode, victim="base")
                             - cell(rep, attack="arna", epsilon=eps, mode=mode, victim="at"))
            c.note(f"{mode} gap " + " ".join(f"{e:g}:{g:+.3f}" for e, g in gaps.items()))
            ok &= all(g > 0 for e, g in gaps.items() if e <= 0.01)
            ok &= gaps[0.05] < 0.10
        assert ok


SMALL = {
    "train_size": 40, "epochs": 2, "n_shifts": 3, "n_eval": 12, "at_epochs": 1,
    "patch": {"outer_iterations": 1, "n_train": 6, "inner_iterations": 5, "step_divisor": 20},
    "dataset": {"samples_per_class": [15, 15, 15, 15]},
}


def test_c12_determinism(tmp_path):
    with Criterion(12, "end-to-end determinism") as c:
        outputs = []
        for run in ("first", "second"):
            workdir = tmp_path / run
            for name in EXPERIMENTS:
                spec = ExperimentSpec.from_dict({**SMALL, "name": name})
                rep, timings = experiments.run(spec, workdir, build=True)
                report.write_report(rep, timings, workdir)
            files = sorted(p for p in workdir.rglob("*") if p.is_file() and not p.name.endswith(".timings.json")
                           and p.parts[len(workdir.parts)] in ("reports", "series"))
            outputs.append({p.relative_to(workdir).as_posix(): p.read_bytes() for p in files})
        c.note(f"{len(outputs[0])} report files compared")
        assert outputs[0].keys() == outputs[1].keys()
        assert all(outputs[0][k] == outputs[1][k] for k in outputs[0])


def test_uap_prefers_synchronisation():
    # a synchronised universal patch is stronger than the same patch at random shifts
    rep = experiment("srp_eval")
    for eps in (0.02, 0.05):
        assert cell(rep, attack="uap", epsilon=eps, mode="sync") > cell(rep, attack="uap", epsilon=eps, mode="shift")
