"""Monte Carlo verifiers for the linear-regression leakage arguments and the
conditional-subsampling gap.

Every Monte Carlo estimate draws its trials in fixed-size blocks, each block
from its own random stream, and aggregates with compensated summation, so the
result does not depend on how blocks are scheduled.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .datagen import LinearParams, NormalFeatures, SubsampleParams, binary_base, linear_arrays, subsample_by_attribute
from .errors import DegenerateConfigurationError, InvalidParameterError
from .game import Z95
from .numerics import SeededRng, ols_fit_batch

# Trials per random-stream block.
BLOCK = 1000
# Share of singular fits above which a Monte Carlo run is rejected.
MAX_SINGULAR_SHARE = 0.01

INTERCEPT = "intercept"
NO_INTERCEPT = "no_intercept"

THEORY_CSV_COLUMNS = ("check", "estimate", "target", "tolerance", "pass")


@dataclass(frozen=True)
class BetaDistributionEstimate:
    """Empirical mean and variance of the OLS coefficients over repeated samples.

    Coefficients are ordered intercept first when an intercept is fitted.
    """

    mean: np.ndarray
    variance: np.ndarray
    n_trials: int
    ci95_halfwidth: np.ndarray
    singular_count: int = 0

    def __post_init__(self):
        if self.n_trials < 2:
            raise InvalidParameterError(f"need at least 2 trials, got {self.n_trials}")
        if np.any(self.variance < 0):
            raise InvalidParameterError("variances must be non-negative")

    @property
    def slope(self) -> float:
        return float(self.mean[-1])

    @property
    def slope_ci(self) -> float:
        return float(self.ci95_halfwidth[-1])


def _block_sizes(trials: int):
    full, rest = divmod(trials, BLOCK)
    return [BLOCK] * full + ([rest] if rest else [])


def _column_moments(samples: np.ndarray):
    """Mean, unbiased variance and 95% half-width per column, with fsum."""
    m = samples.shape[0]
    means = np.array([math.fsum(col) / m for col in samples.T])
    var = np.array([math.fsum((col - mu) ** 2) / (m - 1) for col, mu in zip(samples.T, means)])
    return means, var, Z95 * np.sqrt(var / m)


def beta_samples(params: LinearParams, fit: str, n: int, trials: int, rng: SeededRng):
    """OLS estimates for ``trials`` independent datasets of size ``n``.

    Returns ``(betas, singular_count)``; singular fits are dropped from ``betas``.
    """
    if fit not in (INTERCEPT, NO_INTERCEPT):
        raise InvalidParameterError(f"unknown fit {fit!r}")
    chunks, singular = [], 0
    for b, size in enumerate(_block_sizes(trials)):
        gen = rng.spawn("mc-block", b).generator
        x, y = linear_arrays(params, (size, n), gen)
        beta, bad = ols_fit_batch(x, y, intercept=fit == INTERCEPT)
        singular += int(bad.sum())
        chunks.append(beta[~bad])
    return np.concatenate(chunks), singular


def mc_beta(params: LinearParams, fit: str = INTERCEPT, n: int = 100, trials: int = 10_000,
            rng: SeededRng | None = None) -> BetaDistributionEstimate:
    """Sample datasets from ``params``, fit OLS and summarise the coefficient law."""
    if trials < 100:
        raise InvalidParameterError(f"trials must be at least 100, got {trials}")
    if n < 1:
        raise InvalidParameterError(f"sample size must be positive, got {n}")
    rng = rng or SeededRng(0)
    betas, singular = beta_samples(params, fit, n, trials, rng)
    if singular > MAX_SINGULAR_SHARE * trials:
        raise DegenerateConfigurationError(
            f"{singular} of {trials} fits were singular (more than {MAX_SINGULAR_SHARE:.0%})")
    if betas.shape[0] < 2:
        raise DegenerateConfigurationError("fewer than two non-singular fits")
    mean, var, half = _column_moments(betas)
    return BetaDistributionEstimate(mean, var, betas.shape[0], half, singular)


def mc_tau(feature_sampler, n: int, trials: int, rng: SeededRng, scale: float = 1.0):
    """Monte Carlo mean and 95% half-width of sum(X) / sum(X^2) over datasets of size ``n``."""
    chunks = []
    for b, size in enumerate(_block_sizes(trials)):
        gen = rng.spawn("tau-block", b).generator
        x = scale * np.asarray(feature_sampler(gen, (size, n)), dtype=np.float64)
        chunks.append(x.sum(axis=1) / (x * x).sum(axis=1))
    mean, _, half = _column_moments(np.concatenate(chunks)[:, None])
    return float(mean[0]), float(half[0])


# -- reports ----------------------------------------------------------------

@dataclass
class CheckReport:
    """One verifier outcome, rendered as one row of the theory CSV."""

    check: str
    estimate: float
    target: float
    tolerance: float
    passed: bool
    details: dict = field(default_factory=dict)

    def row(self) -> dict:
        return {"check": self.check, "estimate": repr(float(self.estimate)),
                "target": repr(float(self.target)), "tolerance": repr(float(self.tolerance)),
                "pass": "pass" if self.passed else "fail"}


@dataclass
class TheoryConfig:
    """Budgets and feature law shared by the verifiers."""

    n: int = 100
    trials: int = 20_000
    noise_variance: float = 1.0
    feature_sampler: object = field(default_factory=NormalFeatures)
    relative_tolerance: float = 0.10


def check_reason1(beta0=(1.0, 1.0), beta1=(1.0, 1.5), config: TheoryConfig | None = None,
                  rng: SeededRng | None = None) -> CheckReport:
    """Different E[Y|X]: the two fitted slopes centre on their planted values and separate.

    With equal planted vectors the separation condition fails, which makes the
    call a negative control.
    """
    config = config or TheoryConfig(trials=10_000)
    rng = rng or SeededRng(0)
    est = []
    for b, beta in enumerate((beta0, beta1)):
        params = LinearParams(beta[0], beta[1], config.noise_variance, config.feature_sampler)
        est.append(mc_beta(params, INTERCEPT, config.n, config.trials, rng.spawn("reason1", b)))
    separation = abs(est[1].slope - est[0].slope)
    summed_ci = est[0].slope_ci + est[1].slope_ci
    centred = [abs(e.slope - beta[1]) <= e.slope_ci for e, beta in zip(est, (beta0, beta1))]
    passed = separation > summed_ci and all(centred)
    return CheckReport("reason1", separation, abs(beta1[1] - beta0[1]), summed_ci, passed,
                       {"estimates": est, "centred": centred})


@dataclass
class Reason2Details:
    mean0: float
    mean1: float
    shift: float
    shift_ci: float
    tau: float
    tau_ci: float
    oracle_shift: float
    printed_shift: float
    nonzero: bool
    consistent: bool

    @property
    def ratio_to_oracle(self) -> float:
        return self.shift / self.oracle_shift if self.oracle_shift else math.nan

    @property
    def ratio_to_printed(self) -> float:
        return self.shift / self.printed_shift if self.printed_shift else math.nan


def reason2_details(c: float, config: TheoryConfig, rng: SeededRng, tolerance: float) -> Reason2Details:
    if not c > 0:
        raise InvalidParameterError(f"scale c must be positive, got {c}")
    base = LinearParams(1.0, 1.0, config.noise_variance, config.feature_sampler)
    est = [mc_beta(replace(base, scale=s), NO_INTERCEPT, config.n, config.trials, rng.spawn("reason2", b))
           for b, s in enumerate((1.0, c))]
    tau, tau_ci = mc_tau(config.feature_sampler, config.n, config.trials, rng.spawn("reason2-tau"))
    shift = est[1].slope - est[0].slope
    shift_ci = est[0].slope_ci + est[1].slope_ci
    oracle = (1.0 / c - 1.0) * tau
    printed = (c - 1.0) * tau
    consistent = oracle != 0 and abs(shift - oracle) <= tolerance * abs(oracle)
    return Reason2Details(est[0].slope, est[1].slope, shift, shift_ci, tau, tau_ci, oracle, printed,
                          abs(shift) > shift_ci, consistent)


def check_reason2(c: float = 2.0, config: TheoryConfig | None = None, rng: SeededRng | None = None,
                  tolerance: float = 0.15) -> CheckReport:
    """Missing intercept: Y = X + 1 + noise fitted through the origin.

    Scaling the features by ``c`` moves the mean slope by (1/c - 1) tau with
    tau = E[sum X / sum X^2], estimated by Monte Carlo. Passes when the shift is
    nonzero beyond the summed confidence half-widths and within ``tolerance``
    relative error of that oracle. The ratio to the alternative (c - 1) tau is
    kept in the details.
    """
    config = config or TheoryConfig()
    d = reason2_details(c, config, rng or SeededRng(0), tolerance)
    return CheckReport("reason2", d.shift, d.oracle_shift, tolerance * abs(d.oracle_shift),
                       d.nonzero and d.consistent, {"reason2": d})


def check_reason2_control(c: float = 2.0, config: TheoryConfig | None = None,
                          rng: SeededRng | None = None) -> CheckReport:
    """Negative control: zero-mean symmetric features give tau = 0 and no shift."""
    config = config or TheoryConfig(feature_sampler=NormalFeatures(0.0, 1.0))
    d = reason2_details(c, config, rng or SeededRng(0), 0.15)
    return CheckReport("reason2-control", d.shift, 0.0, d.shift_ci, abs(d.shift) <= d.shift_ci,
                       {"reason2": d})


def check_reason3(c: float = 2.0, config: TheoryConfig | None = None,
                  rng: SeededRng | None = None, beta=(1.0, 2.0)) -> CheckReport:
    """Finite data: scaling the features by ``c`` divides Var[slope] by c^2."""
    config = config or TheoryConfig()
    rng = rng or SeededRng(0)
    base = LinearParams(beta[0], beta[1], config.noise_variance, config.feature_sampler)
    est = [mc_beta(replace(base, scale=s), INTERCEPT, config.n, config.trials, rng.spawn("reason3", b))
           for b, s in enumerate((1.0, c))]
    ratio = float(est[1].variance[-1] / est[0].variance[-1])
    target = 1.0 / (c * c)
    tol = config.relative_tolerance * target
    return CheckReport("reason3", ratio, target, tol, abs(ratio - target) <= tol, {"estimates": est})


# -- conditional subsampling ------------------------------------------------

@dataclass(frozen=True)
class SubsamplingGapReport:
    p0: float
    p1: float
    analytic_gap: float
    empirical_gap: float
    t_is_feature: bool
    standard_error: float = 0.0
    counts: tuple = (0, 0)

    def __post_init__(self):
        for p in (self.p0, self.p1):
            if not 0.0 <= p <= 1.0:
                raise InvalidParameterError(f"probabilities must lie in [0, 1], got {p}")

    @property
    def passed(self) -> bool:
        return abs(self.empirical_gap - self.analytic_gap) <= 3.0 * self.standard_error

    def to_check(self) -> CheckReport:
        name = "subsampling-gap-t-feature" if self.t_is_feature else "subsampling-gap"
        return CheckReport(name, self.empirical_gap, self.analytic_gap, 3.0 * self.standard_error,
                           self.passed, {"report": self})


def _conditional_zero_rate(data, t_is_feature: bool, t_value: int):
    rows = data.features[:, 0] == 0.0
    if t_is_feature:
        rows &= data.features[:, -1] == float(t_value)
    count = int(rows.sum())
    if count == 0:
        raise DegenerateConfigurationError("no records with X = 0 in a subsample")
    return float(np.mean(data.labels[rows] == 0.0)), count


def subsampling_gap(p0: float = 0.8, p1: float = 0.2, ratios=None, base=None, t_is_feature: bool = False,
                    n: int = 100_000, rng: SeededRng | None = None, t_value: int = 0) -> SubsamplingGapReport:
    """Gap in Pr(Y = 0 | X = 0) between two subsamples that differ in Pr(T = 0).

    The base has binary X, T and Y with Pr(Y = 0 | X = 0, T = t) = p_t, and by
    default D^b keeps Pr(T = 0) = p_b. With T hidden the gap is
    (rho0 - rho1)(p0 - p1), i.e. (p0 - p1)^2 under that default. With T as a
    feature the probabilities are conditioned on T = ``t_value`` as well and
    the gap is 0.
    """
    rng = rng or SeededRng(0)
    ratios = (p0, p1) if ratios is None else tuple(ratios)
    if base is None:
        base = binary_base(p0, p1, 4 * n, rng.spawn("subsampling-base"))
    rates, counts = [], []
    for b, rho in enumerate(ratios):
        params = SubsampleParams(base, rho, n, t_column=-1, t_is_feature=t_is_feature)
        data = subsample_by_attribute(params, rng.spawn("subsample", b))
        q, m = _conditional_zero_rate(data, t_is_feature, t_value)
        rates.append(q)
        counts.append(m)
    if t_is_feature:
        analytic = 0.0
    elif ratios == (p0, p1):
        analytic = (p0 - p1) ** 2
    else:
        analytic = (ratios[0] - ratios[1]) * (p0 - p1)
    se = math.sqrt(sum(q * (1.0 - q) / m for q, m in zip(rates, counts)))
    return SubsamplingGapReport(p0, p1, analytic, rates[0] - rates[1], t_is_feature, se, tuple(counts))


def run_theory_checks(rng: SeededRng, config: TheoryConfig | None = None, c: float = 2.0,
                      p0: float = 0.8, p1: float = 0.2, subsample_n: int = 100_000) -> list:
    """Every verifier with its default budget, in CSV order."""
    config = config or TheoryConfig()
    reason1_config = replace(config, trials=max(100, config.trials // 2))
    control = replace(config, feature_sampler=NormalFeatures(0.0, 1.0))
    return [
        check_reason1(config=reason1_config, rng=rng.spawn("check", 1)),
        check_reason2(c, config, rng.spawn("check", 2)),
        check_reason2_control(c, control, rng.spawn("check", 3)),
        check_reason3(c, config, rng.spawn("check", 4)),
        subsampling_gap(p0, p1, n=subsample_n, rng=rng.spawn("check", 5)).to_check(),
        subsampling_gap(p0, p1, t_is_feature=True, n=subsample_n, rng=rng.spawn("check", 6)).to_check(),
    ]
