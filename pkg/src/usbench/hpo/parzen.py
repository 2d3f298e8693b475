"""Per-parameter Parzen densities.

Numeric parameters get a mixture of truncated Gaussians, one centred on every
observation plus one uniform component over the whole range, all with equal
weight. Log-scaled floats are modelled in log space; integers are modelled
on ``[low - 0.5, high + 0.5]`` and rounded. Categorical parameters get
smoothed frequencies.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .space import Categorical, Float, Integer

_SQRT_2PI = math.sqrt(2 * math.pi)


def neighbour_bandwidths(mus: np.ndarray, low: float, high: float) -> np.ndarray:
    """Bandwidth = larger gap to the adjacent observation (or bound), clipped.

    Clip range is ``[(high - low) / min(100, n + 1), high - low]``.
    """
    span = high - low
    n = mus.size
    if n == 0:
        return np.empty(0)
    order = np.argsort(mus, kind="stable")
    srt = np.concatenate([[low], mus[order], [high]])
    gaps = np.maximum(srt[1:-1] - srt[:-2], srt[2:] - srt[1:-1])
    sig = np.clip(gaps, span / min(100, n + 1), span)
    out = np.empty(n)
    out[order] = sig
    return out


class NumericParzen:
    def __init__(self, values: Sequence[float], dist):
        self.dist = dist
        self.log = isinstance(dist, Float) and dist.log
        self.discrete = isinstance(dist, Integer)
        if self.discrete:
            self.low, self.high = dist.low - 0.5, dist.high + 0.5
        elif self.log:
            self.low, self.high = math.log(dist.low), math.log(dist.high)
        else:
            self.low, self.high = float(dist.low), float(dist.high)
        v = np.asarray(values, dtype=np.float64)
        self.mus = np.log(v) if self.log else v
        self.sigmas = neighbour_bandwidths(self.mus, self.low, self.high)
        self.weight = 1.0 / (self.mus.size + 1)
        self._a = ndtr((self.low - self.mus) / self.sigmas)
        self._z = ndtr((self.high - self.mus) / self.sigmas) - self._a

    def _pdf_internal(self, u: np.ndarray) -> np.ndarray:
        u = np.atleast_1d(np.asarray(u, dtype=np.float64))
        inside = (u >= self.low) & (u <= self.high)
        dens = np.full(u.shape, 1.0 / (self.high - self.low))
        if self.mus.size:
            z = (u[:, None] - self.mus) / self.sigmas
            comp = np.exp(-0.5 * z * z) / (_SQRT_2PI * self.sigmas * self._z)
            dens = dens + comp.sum(axis=1)
        return np.where(inside, dens * self.weight, 0.0)

    def _mass_internal(self, k: np.ndarray) -> np.ndarray:
        k = np.atleast_1d(np.asarray(k, dtype=np.float64))
        inside = (k >= self.low) & (k <= self.high)
        mass = np.full(k.shape, 1.0 / (self.high - self.low))
        if self.mus.size:
            hi = ndtr((k[:, None] + 0.5 - self.mus) / self.sigmas)
            lo = ndtr((k[:, None] - 0.5 - self.mus) / self.sigmas)
            mass = mass + ((hi - lo) / self._z).sum(axis=1)
        return np.where(inside, mass * self.weight, 0.0)

    def pdf(self, value):
        """Density in the parameter's own units (probability mass for integers)."""
        scalar = np.ndim(value) == 0
        x = np.asarray(value, dtype=np.float64)
        if self.discrete:
            out = self._mass_internal(x)
        elif self.log:
            xs = np.atleast_1d(x)
            with np.errstate(divide="ignore", invalid="ignore"):
                u = np.where(xs > 0, np.log(np.where(xs > 0, xs, 1.0)), -np.inf)
            out = np.where(xs > 0, self._pdf_internal(u) / np.where(xs > 0, xs, 1.0), 0.0)
        else:
            out = self._pdf_internal(x)
        return float(out[0]) if scalar else out

    def sample(self, rng, size: int = 1) -> list:
        comp = rng.integers(0, self.mus.size + 1, size=size)
        unif = rng.random(size)
        out = np.empty(size)
        prior = comp == self.mus.size
        out[prior] = self.low + unif[prior] * (self.high - self.low)
        j = comp[~prior]
        if j.size:
            p = self._a[j] + unif[~prior] * self._z[j]
            out[~prior] = self.mus[j] + self.sigmas[j] * ndtri(np.clip(p, 1e-300, 1 - 1e-16))
        out = np.clip(out, self.low, self.high)
        if self.discrete:
            return [int(v) for v in np.clip(np.rint(out), self.dist.low, self.dist.high)]
        if self.log:
            return [float(v) for v in np.clip(np.exp(out), self.dist.low, self.dist.high)]
        return [float(v) for v in out]


class CategoricalParzen:
    def __init__(self, values: Sequence, dist: Categorical, prior_count: float = 1.0):
        self.dist = dist
        counts = np.full(len(dist.choices), float(prior_count))
        for v in values:
            counts[dist.index(v)] += 1.0
        self.probs = counts / counts.sum()

    def pdf(self, value) -> float:
        try:
            return float(self.probs[self.dist.index(value)])
        except ValueError:
            return 0.0

    def sample(self, rng, size: int = 1) -> list:
        # inverse-CDF draw so the rng call pattern matches NumericParzen
        idx = np.searchsorted(np.cumsum(self.probs), rng.random(size) * self.probs.sum(), side="right")
        idx = np.minimum(idx, len(self.probs) - 1)
        return [self.dist.choices[i] for i in idx]


def build_parzen(values: Sequence, dist, prior_count: float = 1.0):
    """Density over ``dist`` fitted to the observed ``values`` (may be empty)."""
    if isinstance(dist, Categorical):
        return CategoricalParzen(values, dist, prior_count)
    return NumericParzen(values, dist)
