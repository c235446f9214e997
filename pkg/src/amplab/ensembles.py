"""Seeded sampling of sub-Gaussian Wigner noise, prior vectors, and spikes.

All built-in entry laws are normalized to mean 0 and variance 1 and are either
bounded or Gaussian, hence sub-Gaussian by construction. Randomness flows
exclusively through per-trial streams derived from (master_seed, trial_index),
so any trial is reproducible in isolation and trials may run concurrently.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import RejectedInputError
from .linalg import SymmetricMatrix, packed_diagonal_indices, packed_length, sym_matvec

ENSEMBLE_KINDS = ("gaussian", "rademacher", "uniform", "centered_bernoulli")
DIAGONAL_POLICIES = ("same_law", "zero")
PRIOR_KINDS = ("rademacher", "uniform_sqrt3", "three_point", "gaussian")

_SQRT3 = math.sqrt(3.0)
_MASK64 = (1 << 64) - 1

# role tags mixed into the per-trial seed derivation
_ROLE_SHARED = 0
_ROLE_NOISE_A = 1
_ROLE_NOISE_G = 2


@dataclass(frozen=True)
class EnsembleSpec:
    """Entry law for the symmetric noise matrix; unit variance in law for every kind."""

    kind: str
    param: float | None = None  # bernoulli success probability, unused otherwise
    diagonal_policy: str = "same_law"

    def __post_init__(self):
        if self.kind not in ENSEMBLE_KINDS:
            raise RejectedInputError(f"unknown ensemble kind {self.kind!r}")
        if self.diagonal_policy not in DIAGONAL_POLICIES:
            raise RejectedInputError(f"unknown diagonal policy {self.diagonal_policy!r}")
        if self.kind == "centered_bernoulli":
            if self.param is None or not (0.0 < self.param < 1.0):
                raise RejectedInputError(
                    f"centered_bernoulli requires p in (0, 1), got {self.param}"
                )


@dataclass(frozen=True)
class PriorSpec:
    """Law of the i.i.d. coordinates of the signal vector u0.

    All kinds are centered with unit variance. The discrete and uniform kinds
    have compact support; "gaussian" is provided for the covariance-recursion
    experiments, which are stated for a Gaussian prior.
    """

    kind: str
    values: tuple = ()
    probs: tuple = ()

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise RejectedInputError(f"unknown prior kind {self.kind!r}")
        if self.kind == "three_point":
            values = tuple(float(v) for v in self.values)
            probs = tuple(float(p) for p in self.probs)
            if len(values) != 3 or len(probs) != 3:
                raise RejectedInputError("three_point prior needs 3 values and 3 probabilities")
            if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-12:
                raise RejectedInputError(f"probabilities must sum to 1, got {probs}")
            mean = sum(v * p for v, p in zip(values, probs))
            var = sum(v * v * p for v, p in zip(values, probs)) - mean * mean
            if abs(mean) > 1e-9 or abs(var - 1.0) > 1e-9:
                raise RejectedInputError(
                    f"three_point prior must have mean 0 and variance 1, got "
                    f"mean={mean:.3g}, var={var:.3g}"
                )
            object.__setattr__(self, "values", values)
            object.__setattr__(self, "probs", probs)
        elif self.values or self.probs:
            raise RejectedInputError(f"{self.kind} prior takes no values/probs")


@dataclass(frozen=True, eq=False)
class SpikeComponent:
    """One rank-one term (gamma / n) z (x) z; vector=None means use the trial's u0."""

    gamma: float
    vector: np.ndarray | None = None

    def __post_init__(self):
        if self.gamma < 0:
            raise RejectedInputError(f"spike SNR must be >= 0, got {self.gamma}")
        if self.vector is not None:
            object.__setattr__(
                self, "vector", np.ascontiguousarray(self.vector, dtype=np.float64)
            )


@dataclass(frozen=True, eq=False)
class SpikeSpec:
    components: tuple = ()

    @staticmethod
    def rank_one(gamma):
        """The spiked model of a single SNR with z = u0."""
        if gamma == 0.0:
            return SpikeSpec(())
        return SpikeSpec((SpikeComponent(gamma, None),))


@dataclass
class TrialStreams:
    """Three independent deterministic substreams for one trial.

    The shared stream draws u0 and any spike data; the two noise streams never
    consume from it, so the noise stays independent of (u0, Z).
    """

    shared: np.random.Generator
    noise_a: np.random.Generator
    noise_g: np.random.Generator


def derive_streams(master_seed, trial_index):
    """Derive the three role streams for (master_seed, trial_index), deterministically."""
    if trial_index < 0:
        raise RejectedInputError(f"trial_index must be >= 0, got {trial_index}")
    return TrialStreams(
        shared=_role_rng(master_seed, trial_index, _ROLE_SHARED),
        noise_a=_role_rng(master_seed, trial_index, _ROLE_NOISE_A),
        noise_g=_role_rng(master_seed, trial_index, _ROLE_NOISE_G),
    )


def _role_rng(master_seed, trial_index, role):
    # SeedSequence hashes the (seed, trial, role) words through its 64-bit mixer
    seed = np.random.SeedSequence([int(master_seed) & _MASK64, int(trial_index), role])
    return np.random.default_rng(seed)


def _draw_entries(kind, param, size, rng):
    if kind == "gaussian":
        return rng.standard_normal(size)
    if kind == "rademacher":
        return rng.integers(0, 2, size=size).astype(np.float64) * 2.0 - 1.0
    if kind == "uniform":
        return rng.uniform(-_SQRT3, _SQRT3, size=size)
    if kind == "centered_bernoulli":
        p = float(param)
        b = (rng.random(size) < p).astype(np.float64)
        return (b - p) / math.sqrt(p * (1.0 - p))
    raise RejectedInputError(f"unknown ensemble kind {kind!r}")


def sample_wigner(n, ens, stream):
    """Symmetric matrix with i.i.d. upper-triangle entries from the ensemble law."""
    if n < 1:
        raise RejectedInputError(f"dimension must be >= 1, got {n}")
    entries = _draw_entries(ens.kind, ens.param, packed_length(n), stream)
    if ens.diagonal_policy == "zero":
        entries[packed_diagonal_indices(n)] = 0.0
    return SymmetricMatrix(n, entries)


def sample_prior(n, prior, stream):
    """Vector of n i.i.d. coordinates from the prior law."""
    if n < 1:
        raise RejectedInputError(f"dimension must be >= 1, got {n}")
    if prior.kind == "rademacher":
        return stream.integers(0, 2, size=n).astype(np.float64) * 2.0 - 1.0
    if prior.kind == "uniform_sqrt3":
        return stream.uniform(-_SQRT3, _SQRT3, size=n)
    if prior.kind == "three_point":
        return stream.choice(np.asarray(prior.values), size=n, p=np.asarray(prior.probs))
    if prior.kind == "gaussian":
        return stream.standard_normal(n)
    raise RejectedInputError(f"unknown prior kind {prior.kind!r}")


class SpikedOperator:
    """Lazy operator x -> X x / sqrt(n) + sum_l (gamma_l / n) <z_l, x> z_l.

    The low-rank part is never materialized; one application costs a packed
    matvec plus O(r n) for the spikes.
    """

    def __init__(self, noise, spikes=()):
        self.noise = noise
        self.n = noise.n
        self.spikes = tuple(spikes)  # (gamma, z) pairs with len(z) == n
        self._inv_sqrt_n = 1.0 / math.sqrt(self.n)

    def apply(self, x):
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.shape != (self.n,):
            raise RejectedInputError(f"vector length {x.shape} does not match n={self.n}")
        y = sym_matvec(self.noise, x) * self._inv_sqrt_n
        for gamma, z in self.spikes:
            y += (gamma / self.n) * np.dot(z, x) * z
        return y


def build_spiked(x, spike, prior_vector=None):
    """Assemble the spiked operator for noise matrix x and a SpikeSpec."""
    n = x.n
    resolved = []
    for comp in spike.components:
        if comp.vector is None:
            if prior_vector is None:
                raise RejectedInputError("spike sourced from the prior requires prior_vector")
            z = np.ascontiguousarray(prior_vector, dtype=np.float64)
            if z.shape != (n,):
                raise RejectedInputError(
                    f"prior vector length {z.shape} does not match n={n}"
                )
        else:
            z = comp.vector
            if z.shape != (n,):
                raise RejectedInputError(
                    f"spike vector length {z.shape} does not match n={n}"
                )
            norm = float(np.linalg.norm(z))
            target = math.sqrt(n)
            if abs(norm - target) > 1e-8 * target:
                raise RejectedInputError(
                    f"explicit spike vector must have norm sqrt(n)={target:.6g}, got {norm:.6g}"
                )
        resolved.append((float(comp.gamma), z))
    return SpikedOperator(x, resolved)
