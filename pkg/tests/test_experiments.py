from __future__ import annotations

import io

import numpy as np
import pytest

from distleak import experiments as E
from distleak.attacks import BLACKBOX, REGRESS, WHITEBOX
from distleak.errors import InvalidParameterError


def _tiny(name, **kw):
    base = dict(shadows=8, trials=6, n=64, max_epochs=2, hidden=4)
    base.update(kw)
    return E.ExperimentConfig(name, **base)


def _csv(result):
    buf = io.StringIO()
    E.write_results(result.rows, buf)
    return buf.getvalue()


def test_defaults_per_experiment():
    c = E.ExperimentConfig(E.EXPA_EPS)
    assert c.sweep_values == E.EPS_GRID and c.shadows == 256 and c.trials == 200 and c.hidden == 16
    m = E.ExperimentConfig(E.MEMBERSHIP)
    assert m.sweep_values == ("erm_full", "erm_causal", "irm") and m.trials == 256 and m.hidden == 2
    assert E.ExperimentConfig(E.EXPC_SIZE).sweep_values == E.SIZE_GRID
    assert E.ExperimentConfig(E.EXPB_MSE).task == REGRESS


@pytest.mark.parametrize("kw, key", [
    (dict(name=E.EXPA_EPS, sweep_values=(-1.0,)), "eps"),
    (dict(name=E.EXPB_MSE, sweep_values=(0.0,)), "target_mse"),
    (dict(name=E.MEMBERSHIP, sweep_values=("svm",)), "variant"),
    (dict(name=E.EXPA_EPS, shadows=1), "shadows"),
    (dict(name=E.EXPA_EPS, task=REGRESS), "classify"),
    (dict(name="expZ"), "unknown experiment"),
])
def test_validation_names_the_key(kw, key):
    with pytest.raises(InvalidParameterError, match=key):
        E.ExperimentConfig(**kw)


def test_variants():
    kinds = {v.kind: v for v in E.VARIANTS}
    assert kinds["erm_causal"].inputs == (0,)
    t = kinds["irm"].trainer(_tiny(E.MEMBERSHIP).trainer(), 2)
    assert t.method == "irm" and t.layer_dims == (2, 2, 1)


def test_expA_rows_and_determinism():
    cfg = _tiny(E.EXPA_EPS, sweep_values=(0.0, 0.1))
    a = E.run_experiment(cfg)
    b = E.run_experiment(_tiny(E.EXPA_EPS, sweep_values=(0.0, 0.1)))
    assert _csv(a) == _csv(b)
    text = _csv(a).splitlines()
    assert text[0] == ",".join(E.RESULT_COLUMNS)
    # per sweep value: (accuracy, advantage) per mode and one fit row
    assert len(a.rows) == 2 * (2 * 2 + 1)
    acc = a.value(0.1, WHITEBOX, "accuracy")
    assert a.value(0.1, WHITEBOX, "advantage") == pytest.approx(acc - 0.5)


def test_expA_early_stopping_sweep():
    res = E.run_experiment(_tiny(E.EXPA_MSE, sweep_values=(5.0,), modes=(BLACKBOX,), max_epochs=20))
    fit = res.value(5.0, "none", "train_mse_median")
    assert fit < 5.0


def test_expB_and_expC_are_regression():
    b = E.run_experiment(_tiny(E.EXPB_MSE, sweep_values=(2.0,), modes=(BLACKBOX,)))
    mae = b.value(2.0, BLACKBOX, "mae")
    assert 0.0 <= mae <= 1.0
    c = E.run_experiment(_tiny(E.EXPC_SIZE, sweep_values=(32, 64), modes=(WHITEBOX,)))
    assert {r.sweep_value for r in c.rows} == {32, 64}


def test_membership_small():
    cfg = _tiny(E.MEMBERSHIP, sweep_values=("erm_full", "irm"), n_attacks=3, records_per_party=32,
                hidden=2, modes=(BLACKBOX,))
    res = E.run_experiment(cfg)
    assert len(res.extras["irm"]["validation_mse"]) == 6
    assert res.extras[("erm_full", BLACKBOX)].size == 3
    metrics = {(r.variant, r.metric) for r in res.rows}
    assert ("irm", "test_mse_median") in metrics and ("erm_full", "accuracy") in metrics


def test_median_with_ci():
    med, half = E.median_with_ci(np.arange(101.0))
    assert med == 50.0 and 0 < half < 20
    assert E.median_with_ci([3.0]) == (3.0, 0.0)


def test_game_config_and_run():
    with pytest.raises(InvalidParameterError, match="family"):
        E.GameConfig(family="expZ")
    trials, adv = E.run_game(E.GameConfig(shadows=8, trials=5, n=64, max_epochs=2))
    assert len(trials) == 5 and adv.d_zero == 0.5
