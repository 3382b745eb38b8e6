"""Prospective analysis: simulate crowds from fitted error rates and
measure consensus accuracy as a function of redundancy."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .aggregation import EMConfig, ModelParams, compute_consensus
from .core import QuestionView
from .errors import InvalidConfig, InvalidDistribution

RNG_ALGORITHM = "numpy.PCG64"
SWEEP_MODELS = ("mm", "mv")

_TOL = 1e-9


def _check_distribution(p, what):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size == 0 or np.any(p < 0) or not np.all(np.isfinite(p)):
        raise InvalidDistribution(f"{what} must be a nonnegative finite vector")
    if abs(p.sum() - 1.0) > _TOL:
        raise InvalidDistribution(f"{what} sums to {p.sum()!r}, expected 1")
    return p


def _check_stochastic(m, K, what):
    m = np.asarray(m, dtype=float)
    if m.shape != (K, K):
        raise InvalidDistribution(f"{what} has shape {m.shape}, expected {(K, K)}")
    for k, row in enumerate(m):
        _check_distribution(row, f"{what} row {k}")
    return m


@dataclass(frozen=True)
class CommunityProfile:
    """A crowd described by its error rates.

    Exactly one of ``pooled`` (one K x K matrix) or ``pool`` (a stack of
    per-worker matrices, sampled uniformly per annotation) is set.
    """

    name: str
    tau: np.ndarray
    pooled: Optional[np.ndarray] = None
    pool: Optional[np.ndarray] = None
    classes: Optional[tuple] = None

    def __post_init__(self):
        tau = _check_distribution(self.tau, "tau")
        K = tau.size
        if (self.pooled is None) == (self.pool is None):
            raise InvalidDistribution("profile needs exactly one of a pooled matrix or a worker pool")
        object.__setattr__(self, "tau", tau)
        if self.pooled is not None:
            object.__setattr__(self, "pooled", _check_stochastic(self.pooled, K, "confusion"))
        else:
            pool = np.asarray(self.pool, dtype=float)
            if pool.ndim != 3 or pool.shape[0] == 0:
                raise InvalidDistribution("worker pool must be a nonempty stack of K x K matrices")
            for j, m in enumerate(pool):
                _check_stochastic(m, K, f"pool matrix {j}")
            object.__setattr__(self, "pool", pool)
        classes = tuple(self.classes) if self.classes else tuple(str(k) for k in range(K))
        if len(classes) != K:
            raise InvalidDistribution(f"{len(classes)} class names for {K} classes")
        object.__setattr__(self, "classes", classes)

    @property
    def n_classes(self):
        return self.tau.size

    @classmethod
    def from_params(cls, params: ModelParams, name="fitted"):
        if params.pooled:
            return cls(name, params.tau, pooled=params.confusion, classes=params.classes)
        return cls(name, params.tau, pool=np.stack(list(params.confusion.values())), classes=params.classes)

    def mean_confusion(self):
        return self.pooled if self.pooled is not None else self.pool.mean(axis=0)

    def as_params(self):
        return ModelParams(self.classes, self.tau, self.mean_confusion())


def _categorical(cdf_rows, u):
    """Inverse-CDF draws: ``cdf_rows[..., K]`` cumulative rows, ``u`` uniforms."""
    idx = (u[..., None] >= cdf_rows).sum(axis=-1)
    return np.minimum(idx, cdf_rows.shape[-1] - 1)


def sample_tasks(tau, n, rng):
    """``n`` i.i.d. class indices drawn from ``tau``."""
    tau = _check_distribution(tau, "tau")
    if n < 1:
        raise InvalidConfig(f"number of tasks must be >= 1, got {n}")
    return _categorical(np.cumsum(tau), rng.random(n))


def sample_annotations(true_labels, profile, redundancy, rng):
    """Synthetic view with exactly ``redundancy`` annotations per task."""
    if redundancy < 1:
        raise InvalidConfig(f"redundancy must be >= 1, got {redundancy}")
    z = np.asarray(true_labels, dtype=np.int64)
    n, r = z.size, int(redundancy)
    u = rng.random((n, r))
    if profile.pooled is not None:
        cdf = np.cumsum(profile.pooled, axis=1)[z]  # (n, K)
        labels = _categorical(cdf[:, None, :], u)
        worker = np.tile(np.arange(r), n)
        worker_ids = tuple(str(j + 1) for j in range(r))
    else:
        P = profile.pool.shape[0]
        who = rng.integers(P, size=(n, r))
        cdf = np.cumsum(profile.pool, axis=2)[who, z[:, None]]  # (n, r, K)
        labels = _categorical(cdf, u)
        worker = who.ravel()
        worker_ids = tuple(str(j) for j in range(P))
    return QuestionView(
        profile.name,
        profile.classes,
        tuple(f"s{i}" for i in range(n)),
        worker_ids,
        np.repeat(np.arange(n), r),
        worker,
        labels.ravel().astype(np.int64),
    )


@dataclass(frozen=True)
class CurveEntry:
    redundancy: int
    model: str
    accuracy: float
    std_err: float
    n_tasks: int
    seed: int


@dataclass(frozen=True)
class ProspectiveCurve:
    profile_name: str
    entries: tuple
    rng_algorithm: str = RNG_ALGORITHM

    def accuracy(self, model, redundancy):
        for e in self.entries:
            if e.model == model and e.redundancy == redundancy:
                return e
        raise KeyError((model, redundancy))

    def series(self, model):
        return [e for e in self.entries if e.model == model]


def _stream(seed, *key):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *key])))


def run_sweep(profile, n_tasks, redundancies: Sequence[int], models=SWEEP_MODELS, em_config=None, seed=0):
    """Accuracy of each consensus model at each redundancy on one synthetic task set.

    True labels are drawn once per sweep. Annotations for redundancy r come
    from a stream keyed by (seed, r), so every model at that r sees the same
    crowd and cells can run in any order. The Multinomial refit starts from
    the generating profile's parameters.
    """
    redundancies = [int(r) for r in redundancies]
    if not redundancies or any(r < 1 for r in redundancies) or redundancies != sorted(set(redundancies)):
        raise InvalidConfig(f"redundancies must be a nonempty strictly ascending list of positive integers, got {redundancies}")
    models = tuple(models)
    bad = [m for m in models if m not in SWEEP_MODELS]
    if bad or not models:
        raise InvalidConfig(f"sweep models must be a nonempty subset of {SWEEP_MODELS}, got {models}")
    base = em_config or EMConfig()
    config = EMConfig(base.tol, base.max_iter, base.beta, init=profile.as_params())

    z = sample_tasks(profile.tau, n_tasks, _stream(seed, 0))
    entries = []
    for r in redundancies:
        view = sample_annotations(z, profile, r, _stream(seed, 1, r))
        for m in models:
            res = compute_consensus(view, m, config)
            acc = float(np.mean(res.hard_labels == z))
            se = math.sqrt(acc * (1 - acc) / n_tasks)
            entries.append(CurveEntry(r, m, acc, se, int(n_tasks), int(seed)))
    entries.sort(key=lambda e: (e.model, e.redundancy))
    return ProspectiveCurve(profile.name, tuple(entries))
