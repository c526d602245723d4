"""Acceptance criteria at their stated tolerances, one reported line each.

Each test appends ``criterion N: PASS|FAIL (details)`` to the summary printed
at the end of the run. Criteria that do not hold for this implementation are
marked ``xfail(strict=True)``: they still run in full at the stated tolerance
and print FAIL, and the suite reports an unexpected pass if they ever hold.
"""
from __future__ import annotations

import time

import numpy as np
import pytest

from distleak import cli, experiments as E
from distleak.attacks import BLACKBOX, REGRESS, WHITEBOX
from distleak.datagen import BINARY, INTERVAL
from distleak.game import ABSOLUTE, SQUARED, d_zero
from distleak.nets import random_init
from distleak.numerics import Dataset, SeededRng
from distleak.theory import TheoryConfig, check_reason1, check_reason2, check_reason2_control, check_reason3, \
    subsampling_gap

from .conftest import ACCEPTANCE_LINES
from .test_nets import finite_difference_check

pytestmark = pytest.mark.slow

MEMBERSHIP_BUDGET_S = 15 * 60


def report(label, passed, detail):
    line = f"criterion {label}: {'PASS' if passed else 'FAIL'} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def _series(result, mode, metric):
    values = result.config.sweep_values
    return ([result.value(v, mode, metric) for v in values],
            [result.reports[(v, mode)].ci95_halfwidth for v in values])


@pytest.fixture(scope="module")
def expa_eps():
    return E.run_experiment(E.ExperimentConfig(E.EXPA_EPS))


@pytest.fixture(scope="module")
def expa_mse():
    return E.run_experiment(E.ExperimentConfig(E.EXPA_MSE))


@pytest.fixture(scope="module")
def expb():
    return E.run_experiment(E.ExperimentConfig(E.EXPB_MSE))


@pytest.fixture(scope="module")
def expc():
    return E.run_experiment(E.ExperimentConfig(E.EXPC_SIZE, task=REGRESS))


@pytest.fixture(scope="module")
def membership():
    start = time.perf_counter()
    result = E.run_experiment(E.ExperimentConfig(E.MEMBERSHIP))
    return result, time.perf_counter() - start


def test_criterion_01_variance_ratio():
    start = time.perf_counter()
    rep = check_reason3(2.0, TheoryConfig(n=100, trials=20_000, noise_variance=1.0), SeededRng(0))
    elapsed = time.perf_counter() - start
    ok = abs(rep.estimate - 0.25) <= 0.1 * 0.25 and elapsed <= 30.0
    assert report("1", ok, f"Var ratio {rep.estimate:.4f} vs 0.25 +/- 10%, {elapsed:.1f}s single-threaded")


def test_criterion_02_reason1():
    rep = check_reason1((1.0, 1.0), (1.0, 1.5), TheoryConfig(trials=10_000), SeededRng(0))
    e0, e1 = rep.details["estimates"]
    detail = (f"slopes {e0.slope:.4f}+/-{e0.slope_ci:.4f} and {e1.slope:.4f}+/-{e1.slope_ci:.4f}, "
              f"separation {rep.estimate:.4f} > {rep.tolerance:.4f}")
    assert report("2", rep.passed, detail)


def test_criterion_03_reason2():
    rep = check_reason2(2.0, TheoryConfig(trials=20_000), SeededRng(0), tolerance=0.15)
    control = check_reason2_control(2.0, TheoryConfig(trials=20_000, feature_sampler=_symmetric()), SeededRng(1))
    d, c = rep.details["reason2"], control.details["reason2"]
    detail = (f"shift {d.shift:.4f}+/-{d.shift_ci:.4f}, oracle (1/c-1)tau {d.oracle_shift:.4f} "
              f"(ratio {d.ratio_to_oracle:.3f}; printed (c-1)tau ratio {d.ratio_to_printed:.3f}); "
              f"control shift {c.shift:.4f}+/-{c.shift_ci:.4f}")
    assert report("3", rep.passed and control.passed, detail)


def _symmetric():
    from distleak.datagen import NormalFeatures

    return NormalFeatures(0.0, 1.0)


def test_criterion_04_d_zero():
    got = (d_zero(INTERVAL, ABSOLUTE), d_zero(BINARY, ABSOLUTE), d_zero(INTERVAL, SQUARED))
    want = (0.25, 0.5, 1.0 / 12.0)
    err = max(abs(g - w) for g, w in zip(got, want))
    assert report("4", err <= 1e-12, f"d0 = {got}, max abs error {err:.2e}")


def test_criterion_05_null_attack():
    res = E.run_experiment(E.ExperimentConfig(E.EXPA_EPS, sweep_values=(0.0,), trials=400))
    accs = {m: res.value(0.0, m, "accuracy") for m in (WHITEBOX, BLACKBOX)}
    ok = all(0.45 <= a <= 0.55 for a in accs.values())
    assert report("5", ok, f"eps=0 accuracy over 400 trials: whitebox {accs[WHITEBOX]:.4f}, "
                           f"blackbox {accs[BLACKBOX]:.4f}")


def _monotone(values, cis):
    inversions = [i for i in range(len(values) - 1) if values[i + 1] < values[i]]
    if len(inversions) > 1:
        return False
    return all(values[i] - cis[i] <= values[i + 1] + cis[i + 1] for i in inversions)


def test_criterion_06_eps_monotonicity(expa_eps):
    acc, ci = _series(expa_eps, BLACKBOX, "accuracy")
    white, _ = _series(expa_eps, WHITEBOX, "accuracy")
    ok = _monotone(acc, ci) and acc[-1] - acc[0] >= 0.15
    assert report("6", ok, f"black-box accuracy over eps {expa_eps.config.sweep_values}: "
                           f"{[round(a, 3) for a in acc]}, gain {acc[-1] - acc[0]:.3f}; "
                           f"white-box (not bound) {[round(a, 3) for a in white]}")


def test_criterion_07a_fit_leakage_expA(expa_mse):
    acc, ci = _series(expa_mse, BLACKBOX, "accuracy")
    white, _ = _series(expa_mse, WHITEBOX, "accuracy")
    grid = expa_mse.config.sweep_values
    tight, loose = acc[grid.index(min(grid))], acc[grid.index(max(grid))]
    assert report("7a", tight > loose, f"black-box accuracy at target MSE {min(grid)}: {tight:.3f} vs "
                                       f"{max(grid)}: {loose:.3f}; white-box (not bound) "
                                       f"{[round(a, 3) for a in white]}")


@pytest.mark.xfail(strict=True, reason="black-box MAE falls as fit tightens here; see decisions ledger")
def test_criterion_07b_fit_leakage_expB(expb):
    mae, ci = _series(expb, BLACKBOX, "mae")
    grid = expb.config.sweep_values
    tight, loose = mae[grid.index(min(grid))], mae[grid.index(max(grid))]
    assert report("7b", loose < tight, f"black-box MAE at target MSE {max(grid)}: {loose:.4f} vs "
                                       f"{min(grid)}: {tight:.4f} (all {[round(m, 4) for m in mae]})")


@pytest.mark.xfail(strict=True, reason="MAE falls with dataset size here; see decisions ledger")
def test_criterion_08_dataset_size(expc):
    lines, ok = [], False
    for mode in (BLACKBOX, WHITEBOX):
        mae, ci = _series(expc, mode, "mae")
        grid = list(expc.config.sweep_values)
        i512, i2048 = grid.index(512), grid.index(2048)
        holds = mae[i2048] - mae[i512] > ci[i2048] + ci[i512]
        ok = ok or holds
        lines.append(f"{mode} MAE n=512 {mae[i512]:.4f}+/-{ci[i512]:.4f}, n=2048 {mae[i2048]:.4f}+/-{ci[i2048]:.4f}")
    assert report("8", ok, "; ".join(lines))


def test_criterion_09a_membership_mse(membership):
    result, _ = membership
    val = {k: result.value(k, "none", "validation_mse_median") for k in ("erm_full", "irm", "erm_causal")}
    test = {k: result.value(k, "none", "test_mse_median") for k in ("erm_full", "irm", "erm_causal")}
    count = min(len(result.extras[k]["validation_mse"]) for k in val)
    ok = (val["erm_full"] < val["irm"] < val["erm_causal"] and test["erm_causal"] < test["irm"] < test["erm_full"]
          and count >= 256)
    detail = ("validation medians " + ", ".join(f"{k} {v:.4f}" for k, v in val.items())
              + "; inverted-test medians " + ", ".join(f"{k} {v:.4f}" for k, v in test.items())
              + f"; {count} models each")
    assert report("9a", ok, detail)


def test_criterion_09b_membership_attack(membership):
    result, elapsed = membership
    acc = {k: result.value(k, BLACKBOX, "accuracy") for k in ("erm_full", "irm", "erm_causal")}
    white = {k: result.value(k, WHITEBOX, "accuracy") for k in acc}
    ok = (acc["erm_full"] - acc["irm"] >= 0.05 and acc["erm_full"] - acc["erm_causal"] >= 0.05
          and all(a > 0.5 for a in acc.values()) and elapsed <= MEMBERSHIP_BUDGET_S)
    detail = ("black-box accuracy " + ", ".join(f"{k} {v:.4f}" for k, v in acc.items())
              + "; white-box (not bound) " + ", ".join(f"{k} {v:.4f}" for k, v in white.items())
              + f"; 256 targets x 100 attacks in {elapsed:.0f}s on one core")
    assert report("9b", ok, detail)


def test_criterion_10_subsampling_gap():
    hidden = subsampling_gap(0.8, 0.2, n=100_000, rng=SeededRng(0))
    feature = subsampling_gap(0.8, 0.2, t_is_feature=True, n=100_000, rng=SeededRng(1))
    ok = hidden.passed and feature.passed and hidden.analytic_gap == pytest.approx(0.36)
    assert report("10", ok, f"T hidden gap {hidden.empirical_gap:.4f} vs 0.36 (3 SE = {3 * hidden.standard_error:.4f}); "
                            f"T feature gap {feature.empirical_gap:.4f} (3 SE = {3 * feature.standard_error:.4f})")


def test_criterion_11_gradients():
    worst = 0.0
    for k in range(50):
        rng = SeededRng(11, k)
        gen = rng.spawn("shape").generator
        dims = (int(gen.integers(1, 6)),) + tuple(int(h) for h in gen.integers(1, 9, gen.integers(1, 3))) + (1,)
        model = random_init(dims, 1.0, rng.spawn("init"))
        size = int(gen.integers(1, 33))
        batch = Dataset(gen.normal(size=(size, dims[0])), gen.normal(size=size))
        worst = max(worst, finite_difference_check(model, batch))
    assert report("11", worst <= 1e-5, f"max relative error {worst:.2e} over 50 random nets")


DETERMINISM_CONFIG = """
[expA]
eps = 0, 0.1
shadows = 8
trials = 6
n = 64
max_epochs = 2
hidden = 4
[expA-earlystop]
target_mse = 2, 5
shadows = 8
trials = 6
n = 64
max_epochs = 3
[expB]
target_mse = 2, 5
shadows = 8
trials = 6
n = 64
max_epochs = 3
[expC]
sizes = 32, 64
shadows = 8
trials = 6
max_epochs = 2
[membership]
variants = erm_full, erm_causal, irm
shadows = 8
trials = 6
n_attacks = 3
records_per_party = 32
max_epochs = 3
warmup_epochs = 1
[theory]
trials = 1000
subsample_n = 10000
[subsampling]
n = 10000
[game]
shadows = 8
trials = 6
n = 64
max_epochs = 2
"""


def test_criterion_12_determinism(tmp_path):
    config = tmp_path / "all.ini"
    config.write_text(DETERMINISM_CONFIG)
    mismatched = []
    for command in cli.SUBCOMMANDS:
        runs = []
        for k, threads in enumerate((1, 2, 1)):
            out = tmp_path / f"{command}-{k}"
            status = cli.run([command, "--config", str(config), "--seed", "5", "--threads", str(threads),
                              "--out", str(out)])
            assert status in (0, 1)
            runs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
        if not runs[0] or not runs[0] == runs[1] == runs[2]:
            mismatched.append(command)
    assert report("12", not mismatched, f"{len(cli.SUBCOMMANDS)} subcommands re-run at --threads 1, 2, 1; "
                                        f"mismatches: {mismatched or 'none'}")
