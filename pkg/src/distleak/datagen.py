"""Training distributions D^r for every experiment family.

A family maps an index ``r`` (binary {0, 1} or the interval [0, 1]) and a
random stream to a training set. Families are plain picklable objects so that
worker processes can sample from them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CapacityError, InvalidParameterError
from .nets import MlpModel, forward, random_init
from .numerics import Dataset, SeededRng, stable_hash

BINARY = "binary"
INTERVAL = "interval"

TEACHER_DIMS = (4, 8, 8, 1)
FEATURE_VARIANCE = 2.0
_REFERENCE_SIZE = 1 << 15


def check_index(r, index_set: str) -> float:
    if index_set == BINARY:
        if r not in (0, 1):
            raise InvalidParameterError(f"binary index must be 0 or 1, got {r}")
    elif index_set == INTERVAL:
        if not 0.0 <= r <= 1.0:
            raise InvalidParameterError(f"index must lie in [0, 1], got {r}")
    else:
        raise InvalidParameterError(f"unknown index set {index_set!r}")
    return float(r)


class DistributionFamily:
    """Base class. Subclasses implement :meth:`sample_environments`."""

    kind = "abstract"
    index_set = BINARY

    def sample_environments(self, r, rng: SeededRng) -> list:
        raise NotImplementedError

    def sample(self, r, rng: SeededRng) -> Dataset:
        envs = self.sample_environments(r, rng)
        return envs[0] if len(envs) == 1 else Dataset.concat(envs)

    def sample_features(self, r, count: int, rng: SeededRng) -> np.ndarray:
        data = self.sample(r, rng)
        rows = rng.spawn("probe-rows").generator.choice(data.n, size=count, replace=count > data.n)
        return data.features[rows]

    def fingerprint(self) -> str:
        return format(stable_hash(self.kind, self.index_set, self._identity()), "016x")

    def _identity(self) -> str:
        return repr(self.__dict__)


# -- teachers ---------------------------------------------------------------

def _output_affine(teacher: MlpModel, rng: SeededRng):
    ref = rng.generator.normal(0.0, math.sqrt(FEATURE_VARIANCE), (_REFERENCE_SIZE, teacher.input_dim))
    out = forward(teacher, ref)[:, 0]
    return float(out.mean()), float(out.std())


def rescale_output(model: MlpModel, shift: float, scale: float) -> MlpModel:
    """Copy of ``model`` computing ``(model(x) - shift) / scale``."""
    out = model.copy()
    out.weights[-1] = out.weights[-1] / scale
    out.biases[-1] = (out.biases[-1] - shift) / scale
    return out


def make_teacher(seed: int, dims=TEACHER_DIMS, weight_variance: float = 1.0,
                 standardize: bool = True) -> MlpModel:
    """Random ReLU teacher. With ``standardize``, the output layer is affinely
    rescaled so that the output has zero mean and unit variance under
    N(0, 2 I) inputs (estimated on a fixed reference sample)."""
    raw, affine = _raw_teacher(seed, dims, weight_variance)
    return rescale_output(raw, *affine) if standardize else raw


def _raw_teacher(seed, dims, weight_variance):
    rng = SeededRng.for_task(seed, "teacher")
    raw = random_init(dims, weight_variance, rng.spawn("weights"))
    mu, sd = _output_affine(raw, rng.spawn("reference"))
    return raw, (mu, sd if sd > 0 else 1.0)


@dataclass
class ExpAParams:
    weight_noise_std: float
    teacher_seed: int = 0
    n: int = 2048
    teacher_dims: tuple = TEACHER_DIMS
    teacher_variance: float = 1.0
    standardize: bool = True

    def __post_init__(self):
        if self.weight_noise_std < 0:
            raise InvalidParameterError(f"eps must be non-negative, got {self.weight_noise_std}")


def gen_teacher_pair(params: ExpAParams, rng: SeededRng):
    """Teacher M0 and a copy M1 with N(0, eps^2) noise on every weight and bias.

    The noise is added to the raw random network. Both networks then share the
    same output rescaling (the one standardising M0), which fixes the label
    scale without changing the relative size of the perturbation.
    """
    raw0, affine = _raw_teacher(params.teacher_seed, params.teacher_dims, params.teacher_variance)
    raw1 = raw0.copy()
    eps = params.weight_noise_std
    if eps > 0:
        gen = rng.generator
        for k in range(raw1.n_layers):
            raw1.weights[k] = raw1.weights[k] + gen.normal(0.0, eps, raw1.weights[k].shape)
            raw1.biases[k] = raw1.biases[k] + gen.normal(0.0, eps, raw1.biases[k].shape)
    if not params.standardize:
        return raw0, raw1
    return rescale_output(raw0, *affine), rescale_output(raw1, *affine)


def _normal_features(gen, mean, n, d=4):
    return gen.normal(mean, math.sqrt(FEATURE_VARIANCE), (n, d))


def sample_expA(b, teachers, n: int, rng: SeededRng) -> Dataset:
    """Features from N4(0, 2 I), noiseless labels from teacher ``b``."""
    check_index(b, BINARY)
    teacher = teachers[int(b)]
    x = _normal_features(rng.generator, 0.0, n, teacher.input_dim)
    return Dataset(x, forward(teacher, x)[:, 0])


def sample_expB(r, teacher: MlpModel, n: int, rng: SeededRng) -> Dataset:
    """Features from N4((2r - 1) 1, 2 I), noiseless labels from the shared teacher."""
    r = check_index(r, INTERVAL)
    x = _normal_features(rng.generator, -1.0 + 2.0 * r, n, teacher.input_dim)
    return Dataset(x, forward(teacher, x)[:, 0])


class ExpAFamily(DistributionFamily):
    kind = "expA"
    index_set = BINARY

    def __init__(self, params: ExpAParams, rng: SeededRng):
        self.params = params
        self.teachers = gen_teacher_pair(params, rng)

    def sample_environments(self, r, rng):
        return [sample_expA(r, self.teachers, self.params.n, rng)]

    def sample_features(self, r, count, rng):
        return _normal_features(rng.generator, 0.0, count, self.teachers[0].input_dim)

    def _identity(self):
        from .nets import dumps

        return repr(self.params) + dumps(self.teachers[0]) + dumps(self.teachers[1])


class ExpBFamily(DistributionFamily):
    kind = "expB"

    def __init__(self, teacher: MlpModel, n: int = 2048, index_set: str = INTERVAL):
        if index_set not in (BINARY, INTERVAL):
            raise InvalidParameterError(f"unknown index set {index_set!r}")
        self.teacher = teacher
        self.n = int(n)
        self.index_set = index_set

    def sample_environments(self, r, rng):
        check_index(r, self.index_set)
        return [sample_expB(r, self.teacher, self.n, rng)]

    def sample_features(self, r, count, rng):
        r = check_index(r, self.index_set)
        return _normal_features(rng.generator, -1.0 + 2.0 * r, count, self.teacher.input_dim)

    def _identity(self):
        from .nets import dumps

        return f"{self.n}|{self.index_set}|" + dumps(self.teacher)


# -- parties for distributional membership inference ------------------------

@dataclass(frozen=True)
class PartySpec:
    party_index: int
    records_per_party: int = 512
    inverted_correlation: bool = False

    @property
    def spurious_noise_variance(self) -> float:
        return 0.5 + self.party_index


def sample_party(spec: PartySpec, rng: SeededRng) -> Dataset:
    """Causal chain X1 -> Y -> X2 with X2 = +/-Y + N(0, 0.5 + i)."""
    gen = rng.generator
    n = spec.records_per_party
    x1 = gen.normal(0.0, 1.0, n)
    y = x1 + gen.normal(0.0, 1.0, n)
    sign = -1.0 if spec.inverted_correlation else 1.0
    x2 = sign * y + gen.normal(0.0, math.sqrt(spec.spurious_noise_variance), n)
    return Dataset(np.column_stack([x1, x2]), y)


def _check_parties(parties, i0):
    indices = [p.party_index for p in parties]
    if len(set(indices)) != len(indices):
        raise InvalidParameterError(f"duplicate party indices in {indices}")
    if i0 not in indices:
        raise InvalidParameterError(f"party {i0} is not among {indices}")


def membership_environments(parties, i0: int, rng: SeededRng):
    """Per-party datasets for D0 (all parties) and D1 (all but ``i0``).

    The datasets of parties other than ``i0`` are the same objects in both lists.
    """
    _check_parties(parties, i0)
    envs0 = [sample_party(p, rng.spawn("party", p.party_index)) for p in parties]
    envs1 = [e for p, e in zip(parties, envs0) if p.party_index != i0]
    return envs0, envs1


def build_membership_datasets(parties, i0: int, rng: SeededRng):
    """D0 = union of all parties' records, D1 = the same union without party ``i0``."""
    envs0, envs1 = membership_environments(parties, i0, rng)
    d = envs0[0].d
    d0 = Dataset.concat(envs0)
    d1 = Dataset.concat(envs1) if envs1 else Dataset.empty(d)
    return d0, d1


class MembershipFamily(DistributionFamily):
    """r = 0: every party contributes; r = 1: party ``i0`` is absent."""

    kind = "membership"
    index_set = BINARY

    def __init__(self, parties, i0: int):
        _check_parties(parties, i0)
        self.parties = tuple(parties)
        self.i0 = int(i0)

    def sample_environments(self, r, rng):
        check_index(r, BINARY)
        present = [p for p in self.parties if not (r == 1 and p.party_index == self.i0)]
        return [sample_party(p, rng.spawn("party", p.party_index)) for p in present]

    def inverted(self) -> "MembershipFamily":
        return MembershipFamily([replace(p, inverted_correlation=True) for p in self.parties], self.i0)

    def _identity(self):
        return repr(self.parties) + f"|{self.i0}"


def default_parties(count: int = 4, records: int = 512, inverted: bool = False):
    return [PartySpec(i, records, inverted) for i in range(count)]


# -- linear-regression theory distributions -------------------------------

@dataclass(frozen=True)
class NormalFeatures:
    """Feature law N(mean, variance); callable as ``law(generator, shape)``."""

    mean: float = 1.0
    variance: float = 1.0

    def __call__(self, gen: np.random.Generator, shape):
        return gen.normal(self.mean, math.sqrt(self.variance), shape)


@dataclass(frozen=True)
class LinearParams:
    beta0: float = 1.0
    beta1: float = 2.0
    noise_variance: float = 1.0
    feature_sampler: object = field(default_factory=NormalFeatures)
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise InvalidParameterError(f"scale c must be positive, got {self.scale}")
        if self.noise_variance < 0:
            raise InvalidParameterError(f"noise variance must be non-negative, got {self.noise_variance}")


def linear_arrays(params: LinearParams, shape, gen: np.random.Generator):
    """Features (``shape``) and labels of the linear model, as raw arrays."""
    x = params.scale * np.asarray(params.feature_sampler(gen, shape), dtype=np.float64)
    noise = gen.normal(0.0, math.sqrt(params.noise_variance), shape)
    return x, params.beta0 + params.beta1 * x + noise


def gen_linear(beta0, beta1, noise_variance, feature_sampler=None, c: float = 1.0, n: int = 100,
               rng: SeededRng | None = None) -> Dataset:
    """Y = beta0 + beta1 * X + N(0, noise_variance) with X = c * (feature draw)."""
    params = LinearParams(beta0, beta1, noise_variance, feature_sampler or NormalFeatures(), c)
    rng = rng or SeededRng(0)
    x, y = linear_arrays(params, n, rng.generator)
    return Dataset(x.reshape(-1, 1), y)


class LinearTheoryFamily(DistributionFamily):
    """D^r scales the features by 1 + r (c - 1): r = 0 gives c = 1, r = 1 gives c."""

    kind = "linear_theory"

    def __init__(self, params: LinearParams, c: float, n: int, index_set: str = BINARY):
        self.params = params
        self.c = float(c)
        self.n = int(n)
        self.index_set = index_set

    def params_for(self, r) -> LinearParams:
        r = check_index(r, self.index_set)
        return replace(self.params, scale=self.params.scale * (1.0 + r * (self.c - 1.0)))

    def sample_environments(self, r, rng):
        x, y = linear_arrays(self.params_for(r), self.n, rng.generator)
        return [Dataset(x.reshape(-1, 1), y)]


# -- conditional subsampling ------------------------------------------------

@dataclass
class SubsampleParams:
    base: Dataset
    ratio: float
    n: int
    t_column: int = -1
    t_is_feature: bool = False

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise InvalidParameterError(f"ratio must lie in [0, 1], got {self.ratio}")


def subsample_by_attribute(params: SubsampleParams, rng: SeededRng) -> Dataset:
    """Draw exactly floor(ratio * n) records with T = 0 and the rest with T = 1.

    Draws are uniform without replacement inside each stratum; the output rows
    are shuffled. Unless ``t_is_feature``, the T column is removed.
    """
    base = params.base
    t_col = params.t_column % base.d
    t = base.features[:, t_col]
    k0 = int(math.floor(params.ratio * params.n))
    k1 = params.n - k0
    gen = rng.generator
    picks = []
    for value, k in ((0.0, k0), (1.0, k1)):
        pool = np.flatnonzero(t == value)
        if pool.size < k:
            raise CapacityError(f"stratum T={int(value)} holds {pool.size} records, {k} requested")
        picks.append(gen.choice(pool, size=k, replace=False))
    rows = np.concatenate(picks)
    rows = rows[gen.permutation(rows.size)]
    out = base.take(rows)
    if not params.t_is_feature:
        keep = [j for j in range(base.d) if j != t_col]
        out = out.columns(keep)
    return out


def binary_base(p0: float, p1: float, size: int, rng: SeededRng, p_y0_given_x1: float = 0.5) -> Dataset:
    """Binary (X, T) features and label Y with Pr(Y=0 | X=0, T=t) = p_t.

    X and T are independent fair coins; T is stored as the last feature column.
    """
    gen = rng.generator
    x = gen.integers(0, 2, size)
    t = gen.integers(0, 2, size)
    p_zero = np.where(x == 0, np.where(t == 0, p0, p1), p_y0_given_x1)
    y = (gen.random(size) >= p_zero).astype(np.float64)
    return Dataset(np.column_stack([x, t]).astype(np.float64), y)


class SubsampledFamily(DistributionFamily):
    """D^b subsamples a fixed base so that Pr(T = 0) equals ``ratios[b]``."""

    kind = "subsampled"
    index_set = BINARY

    def __init__(self, base: Dataset, ratios, n: int, t_column: int = -1, t_is_feature: bool = False):
        self.base = base
        self.ratios = tuple(float(v) for v in ratios)
        self.n = int(n)
        self.t_column = t_column
        self.t_is_feature = t_is_feature

    def sample_environments(self, r, rng):
        check_index(r, BINARY)
        params = SubsampleParams(self.base, self.ratios[int(r)], self.n, self.t_column, self.t_is_feature)
        return [subsample_by_attribute(params, rng)]

    def _identity(self):
        return f"{self.ratios}|{self.n}|{self.t_column}|{self.t_is_feature}|{self.base.n}"
