"""Seeded random streams, the Dataset container and closed-form regression kernels."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidParameterError, SingularSystemError

__all__ = [
    "SeededRng",
    "stable_hash",
    "Dataset",
    "OlsFit",
    "gaussian",
    "ols_fit",
    "ols_fit_batch",
    "sample_variance",
    "MAX_CONDITION",
]

_U64 = (1 << 64) - 1

# Design matrices with a larger 2-norm condition number are treated as singular.
MAX_CONDITION = 1e12


def stable_hash(*parts) -> int:
    """64-bit hash of ``parts`` that does not depend on the interpreter session."""
    text = "\x1f".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


@dataclass(eq=False)
class SeededRng:
    """A reproducible random stream identified by ``(master_seed, stream_index)``.

    Instances own mutable generator state and must not be shared between
    concurrent tasks; derive a child stream with :meth:`spawn` instead.
    """

    master_seed: int
    stream_index: int = 0
    _gen: np.random.Generator | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if not (0 <= int(self.master_seed) <= _U64):
            raise InvalidParameterError(f"master_seed must fit in 64 unsigned bits, got {self.master_seed}")
        if not (0 <= int(self.stream_index) <= _U64):
            raise InvalidParameterError(f"stream_index must fit in 64 unsigned bits, got {self.stream_index}")
        self.master_seed = int(self.master_seed)
        self.stream_index = int(self.stream_index)

    @classmethod
    def for_task(cls, master_seed: int, kind: str, ordinal: int = 0) -> "SeededRng":
        return cls(master_seed, stable_hash(kind, ordinal))

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=(self.stream_index,))
            self._gen = np.random.Generator(np.random.PCG64(seq))
        return self._gen

    def spawn(self, kind: str, ordinal: int = 0) -> "SeededRng":
        """Child stream keyed by this stream, a task kind and an ordinal."""
        return SeededRng(self.master_seed, stable_hash(self.stream_index, kind, ordinal))

    def fresh(self) -> "SeededRng":
        """A new handle on the same stream, rewound to its start."""
        return SeededRng(self.master_seed, self.stream_index)

    def __getstate__(self):
        return {"master_seed": self.master_seed, "stream_index": self.stream_index,
                "state": None if self._gen is None else self._gen.bit_generator.state}

    def __setstate__(self, state):
        self.master_seed = state["master_seed"]
        self.stream_index = state["stream_index"]
        self._gen = None
        if state["state"] is not None:
            self.generator.bit_generator.state = state["state"]


@dataclass
class Dataset:
    """Feature matrix ``features`` (n x d) and label vector ``labels`` (n,)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.ndim != 2:
            raise InvalidParameterError(f"features must be a matrix, got shape {x.shape}")
        if x.shape[0] != y.shape[0]:
            raise InvalidParameterError(
                f"labels length {y.shape[0]} does not match feature rows {x.shape[0]}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise InvalidParameterError("dataset entries must be finite")
        self.features = x
        self.labels = y

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def __len__(self):
        return self.n

    def take(self, rows) -> "Dataset":
        return Dataset(self.features[rows], self.labels[rows])

    def columns(self, cols) -> "Dataset":
        return Dataset(self.features[:, list(cols)], self.labels)

    @staticmethod
    def concat(parts) -> "Dataset":
        parts = list(parts)
        if not parts:
            raise InvalidParameterError("cannot concatenate zero datasets")
        return Dataset(np.concatenate([p.features for p in parts], axis=0),
                       np.concatenate([p.labels for p in parts]))

    @staticmethod
    def empty(d: int) -> "Dataset":
        return Dataset(np.zeros((0, d)), np.zeros(0))

    def to_csv(self, path_or_buf) -> None:
        """Write ``x1,...,xd,y`` with one row per record, in storage order."""
        header = ",".join([f"x{j + 1}" for j in range(self.d)] + ["y"])
        lines = [header]
        for row, y in zip(self.features, self.labels):
            lines.append(",".join(repr(float(v)) for v in (*row, y)))
        text = "\n".join(lines) + "\n"
        if hasattr(path_or_buf, "write"):
            path_or_buf.write(text)
        else:
            with open(path_or_buf, "w", newline="") as fh:
                fh.write(text)

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(raw[:, :-1], raw[:, -1])


@dataclass
class OlsFit:
    """Least-squares coefficients (intercept first when fitted) and the residual MSE."""

    beta_hat: np.ndarray
    residual_mse: float
    intercept: bool = True


def gaussian(rng: SeededRng, mean: float, variance: float, count) -> np.ndarray:
    """``count`` independent draws from N(mean, variance).

    The second parameter is a variance, never a standard deviation.
    """
    if not variance >= 0:
        raise InvalidParameterError(f"variance must be non-negative, got {variance}")
    return rng.generator.normal(mean, math.sqrt(variance), count)


def _design(x: np.ndarray, intercept: bool) -> np.ndarray:
    if intercept:
        ones = np.ones(x.shape[:-1] + (1,))
        return np.concatenate([ones, x], axis=-1)
    return x


def ols_fit(data: Dataset, intercept: bool = True) -> OlsFit:
    """Minimise ``||X b - y||^2`` through a QR factorisation of the design matrix."""
    design = _design(data.features, intercept)
    n, p = design.shape
    if n < p:
        raise InvalidParameterError(f"need at least {p} records for {p} coefficients, got {n}")
    q, r = np.linalg.qr(design)
    cond = np.linalg.cond(r) if p else 1.0
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise SingularSystemError(
            f"design matrix is rank deficient (condition number {cond:.3g} > {MAX_CONDITION:.0e})", cond)
    beta = _solve_upper(r, q.T @ data.labels)
    resid = data.labels - design @ beta
    return OlsFit(beta_hat=beta, residual_mse=float(np.mean(resid ** 2)), intercept=intercept)


def _solve_upper(r, rhs):
    from scipy.linalg import solve_triangular

    return solve_triangular(r, rhs, lower=False)


def ols_fit_batch(features: np.ndarray, labels: np.ndarray, intercept: bool = True):
    """Fit many independent regressions at once.

    ``features`` has shape (trials, n) or (trials, n, d), ``labels`` (trials, n).
    Returns ``(beta_hat, singular)`` where ``beta_hat`` is (trials, p) and
    ``singular`` flags fits whose condition number exceeds ``MAX_CONDITION``
    (their coefficients are NaN).
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 2:
        x = x[..., None]
    y = np.asarray(labels, dtype=np.float64)
    design = _design(x, intercept)
    q, r = np.linalg.qr(design)
    cond = np.linalg.cond(r)
    singular = ~np.isfinite(cond) | (cond > MAX_CONDITION)
    qty = np.einsum("tnp,tn->tp", q, y)
    r_safe = r.copy()
    if singular.any():
        r_safe[singular] = np.eye(r.shape[-1])
    beta = np.linalg.solve(r_safe, qty[..., None])[..., 0]
    beta[singular] = np.nan
    return beta, singular


def sample_variance(values) -> float:
    """Mean-centred second moment with the 1/n divisor."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size == 0:
        raise InvalidParameterError("sample variance of an empty vector is undefined")
    return float(np.mean((v - v.mean()) ** 2))
