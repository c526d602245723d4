from __future__ import annotations

import numpy as np
import pytest

from distleak.datagen import (
    ExpAParams,
    ExpBFamily,
    PartySpec,
    SubsampleParams,
    binary_base,
    build_membership_datasets,
    default_parties,
    gen_linear,
    gen_teacher_pair,
    make_teacher,
    sample_expA,
    sample_expB,
    sample_party,
    subsample_by_attribute,
)
from distleak.errors import CapacityError, InvalidParameterError
from distleak.nets import flatten_params, forward
from distleak.numerics import Dataset, SeededRng, ols_fit


def test_teacher_pair_without_noise_is_identical():
    m0, m1 = gen_teacher_pair(ExpAParams(0.0, teacher_seed=3), SeededRng(1))
    assert np.array_equal(flatten_params(m0), flatten_params(m1))


def test_teacher_pair_noise_moment():
    diffs = []
    for k in range(10):
        m0, m1 = gen_teacher_pair(ExpAParams(0.05, teacher_seed=k, standardize=False), SeededRng(7, k))
        diffs.append(flatten_params(m1) - flatten_params(m0))
    d = np.concatenate(diffs)
    assert d.size >= 1000
    assert abs(np.mean(d ** 2) - 0.0025) <= 0.2 * 0.0025


def test_teacher_pair_is_deterministic():
    a = gen_teacher_pair(ExpAParams(0.1, teacher_seed=2), SeededRng(4))
    b = gen_teacher_pair(ExpAParams(0.1, teacher_seed=2), SeededRng(4))
    for x, y in zip(a, b):
        assert np.array_equal(flatten_params(x), flatten_params(y))


def test_standardized_teacher_has_unit_scale():
    teacher = make_teacher(0)
    x = SeededRng(9).generator.normal(0.0, np.sqrt(2.0), (50_000, 4))
    y = forward(teacher, x)[:, 0]
    assert abs(y.mean()) < 0.05 and abs(y.std() - 1.0) < 0.05


def test_negative_eps_rejected():
    with pytest.raises(InvalidParameterError, match="eps"):
        ExpAParams(-1.0)


def test_sample_expA_features_and_labels():
    teachers = gen_teacher_pair(ExpAParams(0.0), SeededRng(0))
    d = sample_expA(1, teachers, 2048, SeededRng(5))
    assert np.all(np.abs(d.features.var(axis=0) - 2.0) <= 0.15)
    assert np.array_equal(d.labels, forward(teachers[1], d.features)[:, 0])
    d0 = sample_expA(0, teachers, 64, SeededRng(6))
    d1 = sample_expA(1, teachers, 64, SeededRng(6))
    assert np.array_equal(d0.labels, d1.labels)
    with pytest.raises(InvalidParameterError):
        sample_expA(2, teachers, 8, SeededRng(0))


def test_sample_expB_means_and_shared_mechanism():
    teacher = make_teacher(1)
    mid = sample_expB(0.5, teacher, 2048, SeededRng(2))
    assert np.all(np.abs(mid.features.mean(axis=0)) <= 0.1)
    lo = sample_expB(0.0, teacher, 2048, SeededRng(3)).features.mean(axis=0)
    hi = sample_expB(1.0, teacher, 2048, SeededRng(3)).features.mean(axis=0)
    assert np.all(np.abs(lo + 1.0) <= 0.1) and np.all(np.abs(hi - 1.0) <= 0.1)
    with pytest.raises(InvalidParameterError):
        sample_expB(1.5, teacher, 8, SeededRng(0))


def test_expB_family_samples_are_seeded():
    fam = ExpBFamily(make_teacher(0), n=32)
    a = fam.sample(0.3, SeededRng(1, 2))
    b = fam.sample(0.3, SeededRng(1, 2))
    assert np.array_equal(a.features, b.features)


def test_party_chain_moments():
    d = sample_party(PartySpec(0, 100_000), SeededRng(1))
    y, x2 = d.labels, d.features[:, 1]
    assert abs(np.var(x2) - 2.5) <= 0.1
    for i, inverted in ((0, False), (3, True)):
        d = sample_party(PartySpec(i, 100_000, inverted), SeededRng(2, i))
        slope = ols_fit(Dataset(d.features[:, :1], d.labels)).beta_hat[1]
        assert abs(slope - 1.0) <= 0.03


def test_inverted_party_flips_correlation():
    plain = sample_party(PartySpec(1, 5000), SeededRng(3))
    flipped = sample_party(PartySpec(1, 5000, True), SeededRng(3))
    assert np.corrcoef(plain.features[:, 1], plain.labels)[0, 1] > 0
    assert np.corrcoef(flipped.features[:, 1], flipped.labels)[0, 1] < 0


def test_membership_datasets():
    d0, d1 = build_membership_datasets(default_parties(4, 512), 3, SeededRng(0))
    assert (d0.n, d1.n) == (2048, 1536)
    assert np.array_equal(d0.features[:1536], d1.features)
    single0, single1 = build_membership_datasets([PartySpec(0, 10)], 0, SeededRng(0))
    assert single0.n == 10 and single1.n == 0
    with pytest.raises(InvalidParameterError):
        build_membership_datasets([PartySpec(0), PartySpec(0)], 0, SeededRng(0))


def test_gen_linear_examples():
    exact = gen_linear(1.0, 2.0, 0.0, n=50, rng=SeededRng(0))
    assert np.allclose(exact.labels, 1.0 + 2.0 * exact.features[:, 0])
    v1 = gen_linear(1.0, 2.0, 1.0, c=1.0, n=100_000, rng=SeededRng(1)).features.var()
    v2 = gen_linear(1.0, 2.0, 1.0, c=2.0, n=100_000, rng=SeededRng(1)).features.var()
    assert v2 / v1 == pytest.approx(4.0, rel=1e-9)
    fit = ols_fit(gen_linear(1.0, 2.0, 1.0, n=100_000, rng=SeededRng(2)))
    assert np.all(np.abs(fit.beta_hat - [1.0, 2.0]) <= 0.02)


def test_subsample_ratios_and_capacity():
    base = binary_base(0.8, 0.2, 20_000, SeededRng(1))
    out = subsample_by_attribute(SubsampleParams(base, 1.0, 500, t_is_feature=True), SeededRng(2))
    assert np.all(out.features[:, -1] == 0.0)
    out = subsample_by_attribute(SubsampleParams(base, 0.3, 1001, t_is_feature=True), SeededRng(3))
    assert int(np.sum(out.features[:, -1] == 0.0)) == int(np.floor(0.3 * 1001))
    hidden = subsample_by_attribute(SubsampleParams(base, 0.3, 100), SeededRng(3))
    assert hidden.d == base.d - 1
    small = Dataset(np.column_stack([np.zeros(200), np.r_[np.zeros(100), np.ones(100)]]), np.zeros(200))
    with pytest.raises(CapacityError, match="T=0"):
        subsample_by_attribute(SubsampleParams(small, 0.8, 200), SeededRng(0))
