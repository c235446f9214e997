"""Power-method eigenpair estimation, spectral initialization, and the gap check.

Any object with ``.n`` and ``.apply(x)`` works as an operator (SymmetricMatrix
and SpikedOperator both do). The power iterate is renormalized every step,
which leaves the direction identical to normalizing Y^d y once at the end.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegenerateInputError, RejectedInputError

_UNDERFLOW = 1e-290

# fixed seed for the deterministic start vector used when none is supplied
_DEFAULT_START_SEED = 0x9E3779B97F4A7C15

POWER_DEPTH_MAX = 300
POWER_DEPTH_MIN = 30
_PRE_PASS_DEPTH = 50
_DEPTH_EPS = 1e-6


@dataclass
class PowerResult:
    vector: np.ndarray  # unit norm
    rayleigh: float
    iterations_used: int
    bound: float | None = None  # geometric error bound when eigendata was supplied


class GapCheckResult(NamedTuple):
    lambda1: float
    lambda2_abs: float
    passed: bool


class _FnOperator:
    def __init__(self, n, fn):
        self.n = n
        self._fn = fn

    def apply(self, x):
        return self._fn(x)


def _default_start(n):
    rng = np.random.default_rng(_DEFAULT_START_SEED)
    y = rng.standard_normal(n)
    return y / np.linalg.norm(y)


def _power_iterate(op, y0, d):
    """d normalized applications; returns (unit vector, rayleigh, growth).

    growth = ||op y_final||_2 for the unit final iterate. Unlike the Rayleigh
    quotient it cannot cancel between eigenvalues of opposite sign, so it is
    the right magnitude estimate on a deflated bulk with near-symmetric edges;
    it also never exceeds the operator norm.
    """
    y = y0
    for _ in range(d):
        z = op.apply(y)
        nz = np.linalg.norm(z)
        if nz < _UNDERFLOW:
            raise DegenerateInputError(
                "power iterate vanished; start vector has no overlap with the spectrum"
            )
        y = z / nz
    z = op.apply(y)
    growth = float(np.linalg.norm(z))
    rayleigh = float(np.dot(y, z))
    return y, rayleigh, growth


def power_bound_rhs(eigen, y0, d):
    """Right side of the geometric power-method bound with exact eigendata:
    (1 / |<y1, y0>|) * max_{r>=2} |lambda_r / lambda_1|^d."""
    lam = np.asarray(eigen.eigenvalues, dtype=np.float64)
    lam1 = lam[0]
    if lam1 == 0.0:
        raise DegenerateInputError("top eigenvalue is zero; bound undefined")
    overlap = float(np.dot(eigen.eigenvectors[:, 0], y0))
    if overlap == 0.0:
        raise DegenerateInputError("start vector orthogonal to the top eigenvector")
    if lam.shape[0] == 1:
        return 0.0
    ratio = float(np.max(np.abs(lam[1:])) / abs(lam1))
    return (ratio**d) / abs(overlap)


def power_method(op, y0, d, eigen=None):
    """Normalized power iteration from a unit start vector.

    When ``eigen`` (exact eigendata of the same operator) is supplied, the
    result carries the geometric bound on the distance to the sign-aligned top
    eigenvector.
    """
    if d < 1:
        raise RejectedInputError(f"iteration count must be >= 1, got {d}")
    y0 = np.ascontiguousarray(y0, dtype=np.float64)
    if y0.shape != (op.n,):
        raise RejectedInputError(f"start vector has shape {y0.shape}, expected ({op.n},)")
    if abs(np.linalg.norm(y0) - 1.0) > 1e-10:
        raise RejectedInputError("start vector must have unit norm")
    y, rayleigh, _ = _power_iterate(op, y0, d)
    bound = power_bound_rhs(eigen, y0, d) if eigen is not None else None
    return PowerResult(vector=y, rayleigh=rayleigh, iterations_used=d, bound=bound)


def spectral_init(op, u0, d):
    """sqrt(n)-normalized top-eigenvector estimate, sign-aligned with u0."""
    u0 = np.ascontiguousarray(u0, dtype=np.float64)
    norm = np.linalg.norm(u0)
    if norm == 0.0:
        raise DegenerateInputError("prior vector is zero")
    result = power_method(op, u0 / norm, d)
    overlap = float(np.dot(result.vector, u0))
    if overlap == 0.0:
        raise DegenerateInputError(
            "top-eigenvector estimate is orthogonal to u0; sign undefined"
        )
    return math.copysign(1.0, overlap) * math.sqrt(op.n) * result.vector


def _estimate_top(op, start, d):
    """(unit eigenvector estimate, lambda1 estimate) for the algebraic top.

    A plain power run can oscillate when the spectrum has near-symmetric
    extremes (a deflated noise bulk does), so the magnitude m0 = ||op|| is
    estimated first from the growth factor and the iteration is rerun on the
    shifted operator op + m0*I, whose algebraic top dominates in magnitude.
    """
    _, _, m0 = _power_iterate(op, start, d)
    shifted = _FnOperator(op.n, lambda x, base=op, c=m0: base.apply(x) + c * x)
    vec, rayleigh, _ = _power_iterate(shifted, start, d)
    return vec, rayleigh - m0


def gap_check(op, d, deflation_rounds=1, margin=0.05, y0=None):
    """Estimate (lambda1, max |lambda_rest|) and test the separation condition.

    lambda1 comes from a shift-stabilized power run (see _estimate_top). The
    remaining spectral radius is measured after deflating the estimated top
    eigenpair(s), running the iteration on both the deflated operator and its
    negation and keeping the larger magnitude. Passes when
    lambda1 > max(lambda2_abs, 1) + margin.
    """
    if deflation_rounds < 1:
        raise RejectedInputError(f"deflation_rounds must be >= 1, got {deflation_rounds}")
    start = _default_start(op.n) if y0 is None else np.ascontiguousarray(y0, dtype=np.float64)
    current = op
    lambda1 = None
    for _ in range(deflation_rounds):
        vec, top = _estimate_top(current, start, d)
        if lambda1 is None:
            lambda1 = top
        current = _deflate(current, top, vec)
    _, _, grow_pos = _power_iterate(current, start, d)
    negated = _FnOperator(current.n, lambda x, c=current: -c.apply(x))
    _, _, grow_neg = _power_iterate(negated, start, d)
    lambda2_abs = max(grow_pos, grow_neg)
    passed = lambda1 > max(lambda2_abs, 1.0) + margin
    return GapCheckResult(lambda1=float(lambda1), lambda2_abs=float(lambda2_abs), passed=bool(passed))


def _deflate(op, value, unit_vector):
    def fn(x, base=op, lam=value, v=unit_vector):
        return base.apply(x) - lam * np.dot(v, x) * v

    return _FnOperator(op.n, fn)


def default_power_depth(op, eps=_DEPTH_EPS, d_max=POWER_DEPTH_MAX):
    """Depth making the geometric factor ~ eps/sqrt(n): ceil(log(n/eps^2)/log(ratio)).

    The ratio lambda1/lambda2_abs is bootstrapped from a coarse pre-pass. Below
    the transition the ratio degenerates to 1 and the depth is capped at d_max,
    which keeps refused runs finite.
    """
    start = _default_start(op.n)
    vec, lam1 = _estimate_top(op, start, _PRE_PASS_DEPTH)
    _, _, lam2 = _power_iterate(_deflate(op, lam1, vec), start, _PRE_PASS_DEPTH)
    if lam1 <= 0 or lam2 <= 0 or lam1 <= lam2 * (1.0 + 1e-9):
        return d_max
    depth = math.ceil(math.log(op.n / (eps * eps)) / math.log(lam1 / lam2))
    return int(min(max(depth, POWER_DEPTH_MIN), d_max))


def resolve_power_depth(op, power_depth):
    """Accepts an explicit depth or the string 'auto'."""
    if power_depth == "auto" or power_depth is None:
        return default_power_depth(op)
    depth = int(power_depth)
    if depth < 1:
        raise RejectedInputError(f"power depth must be >= 1, got {depth}")
    return depth
