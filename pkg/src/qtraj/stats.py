"""Streaming trajectory statistics: running sums, merge, standard errors.

Memory stays O(times x observables) regardless of ensemble size: per cell we
keep the count, the sum, and the sums of squared real/imaginary parts.  The
standard error uses the N-1 population-variance estimator divided by
sqrt(N); negative variances from catastrophic cancellation (constant
observables) are clamped to zero with a warning.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import VarianceClampWarning


@dataclass(eq=False)
class EnsembleAccumulator:
    """Per-(time, observable) running sums, mergeable across workers."""

    n_times: int
    n_observables: int
    count: int = 0
    sum: np.ndarray = field(default=None)
    sumsq_re: np.ndarray = field(default=None)
    sumsq_im: np.ndarray = field(default=None)

    def __post_init__(self):
        shape = (self.n_times, self.n_observables)
        if self.sum is None:
            self.sum = np.zeros(shape, dtype=np.complex128)
        if self.sumsq_re is None:
            self.sumsq_re = np.zeros(shape, dtype=np.float64)
        if self.sumsq_im is None:
            self.sumsq_im = np.zeros(shape, dtype=np.float64)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_times, self.n_observables)

    def add_sample(self, samples: np.ndarray) -> None:
        """Accumulate one trajectory's full (n_times, n_observables) sample."""
        s = np.asarray(samples, dtype=np.complex128)
        if s.shape != self.shape:
            raise ValueError(f"sample shape {s.shape} != accumulator shape {self.shape}")
        self.count += 1
        self.sum += s
        self.sumsq_re += s.real**2
        self.sumsq_im += s.imag**2

    def accumulate(self, time_index: int, observable_index: int, x: complex) -> None:
        """Accumulate a single cell (count advances with full add_sample calls)."""
        self.sum[time_index, observable_index] += x
        self.sumsq_re[time_index, observable_index] += np.real(x) ** 2
        self.sumsq_im[time_index, observable_index] += np.imag(x) ** 2


def merge(a: EnsembleAccumulator, b: EnsembleAccumulator) -> EnsembleAccumulator:
    """Cell-wise combination; associative up to float rounding."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return EnsembleAccumulator(
        n_times=a.n_times,
        n_observables=a.n_observables,
        count=a.count + b.count,
        sum=a.sum + b.sum,
        sumsq_re=a.sumsq_re + b.sumsq_re,
        sumsq_im=a.sumsq_im + b.sumsq_im,
    )


@dataclass(frozen=True, eq=False)
class EnsembleResult:
    """Finalized ensemble statistics plus reproducibility metadata."""

    times: np.ndarray
    observable_names: tuple[str, ...]
    mean: np.ndarray          # complex (n_times, n_observables)
    stderr_re: np.ndarray     # float, NaN where n < 2
    stderr_im: np.ndarray
    n: int
    metadata: dict = field(default_factory=dict)

    @property
    def stderr(self) -> np.ndarray:
        """Combined standard error; for real observables equals stderr_re."""
        return np.hypot(self.stderr_re, self.stderr_im)

    def column(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """(mean, stderr) time series for one named observable."""
        j = self.observable_names.index(name)
        return self.mean[:, j], self.stderr[:, j]


def finalize(acc: EnsembleAccumulator, times, observable_names, metadata=None) -> EnsembleResult:
    """Means and standard errors from the running sums.

    With a single sample the mean is defined but the standard error is
    unavailable and reported as NaN (never as zero).
    """
    n = acc.count
    if n < 1:
        raise ValueError("cannot finalize an empty accumulator")
    mean = acc.sum / n
    if n >= 2:
        var_re = (acc.sumsq_re - acc.sum.real**2 / n) / (n - 1)
        var_im = (acc.sumsq_im - acc.sum.imag**2 / n) / (n - 1)
        if np.any(var_re < 0) or np.any(var_im < 0):
            warnings.warn(
                "negative sample variance clamped to zero (constant observable?)",
                VarianceClampWarning,
                stacklevel=2,
            )
        stderr_re = np.sqrt(np.clip(var_re, 0.0, None) / n)
        stderr_im = np.sqrt(np.clip(var_im, 0.0, None) / n)
    else:
        stderr_re = np.full(acc.shape, np.nan)
        stderr_im = np.full(acc.shape, np.nan)
    names = tuple(observable_names)
    if len(names) != acc.n_observables:
        raise ValueError("observable name count does not match accumulator")
    return EnsembleResult(
        times=np.asarray(times, dtype=float),
        observable_names=names,
        mean=mean,
        stderr_re=stderr_re,
        stderr_im=stderr_im,
        n=n,
        metadata=dict(metadata or {}),
    )


def two_pass_reference(samples: np.ndarray):
    """Plain two-pass mean/stderr over axis 0, for cross-checking streaming sums."""
    s = np.asarray(samples, dtype=np.complex128)
    n = s.shape[0]
    mean = s.mean(axis=0)
    if n < 2:
        return mean, np.full(mean.shape, np.nan)
    var = (np.abs(s.real - mean.real) ** 2).sum(axis=0) / (n - 1) + (
        np.abs(s.imag - mean.imag) ** 2
    ).sum(axis=0) / (n - 1)
    return mean, np.sqrt(var / n)
