"""Built-in oracle suite behind the `amplab selftest` subcommand.

Each check recomputes a quantity through an independent route (naive loops,
finite differences, the Jacobi eigensolver) and compares. These mirror the
oracle tests in the test suite, sized to run in a few seconds.
"""

import math

import numpy as np

from .ensembles import EnsembleSpec, derive_streams, sample_wigner
from .linalg import SymmetricMatrix, cholesky, jacobi_eigendecomp, packed_diagonal_indices, sym_matvec
from .nonlinear import Denoiser, denoiser_partial, fd_partial
from .spectral import power_method


def _check_matvec(rng):
    n = 8
    dense = rng.normal(size=(n, n))
    dense = (dense + dense.T) / 2.0
    m = SymmetricMatrix.from_dense(dense)
    x = rng.normal(size=n)
    naive = np.array([sum(dense[i, j] * x[j] for j in range(n)) for i in range(n)])
    return float(np.max(np.abs(sym_matvec(m, x) - naive))) < 1e-12


def _check_jacobi(rng):
    n = 24
    dense = rng.normal(size=(n, n))
    dense = (dense + dense.T) / 2.0
    m = SymmetricMatrix.from_dense(dense)
    eig = jacobi_eigendecomp(m, tol=1e-12)
    q, lam = eig.eigenvectors, eig.eigenvalues
    recon = float(np.linalg.norm(q @ np.diag(lam) @ q.T - dense))
    ortho = float(np.max(np.abs(q.T @ q - np.eye(n))))
    return recon <= 1e-10 * np.linalg.norm(dense) and ortho <= 1e-10


def _check_cholesky(rng):
    b = rng.normal(size=(6, 6))
    s = b @ b.T
    factor = cholesky(s, jitter=0.0)
    return float(np.max(np.abs(factor @ factor.T - s))) <= 1e-10 * np.max(np.abs(s))


def _check_partials(rng):
    denoisers = [
        Denoiser(kind="identity"),
        Denoiser(kind="scaled_tanh", schedule=(1.5, 0.7, 2.0)),
        Denoiser(kind="smooth_soft_threshold", schedule=(0.5, 1.0, 0.8)),
        Denoiser(kind="linear_combo", weights=(0.3, -0.4, 0.2), offset=0.1),
    ]
    k = 2
    rows = rng.normal(size=(k + 1, 50))
    for f in denoisers:
        for j in range(k + 1):
            analytic = denoiser_partial(f, k, j, rows)
            numeric = fd_partial(f, k, j, rows, h=1e-5)
            if float(np.max(np.abs(analytic - numeric))) > 1e-6:
                return False
    return True


def _check_power_bound(rng):
    ok = True
    for trial in range(10):
        streams = derive_streams(1234, trial)
        mat = sample_wigner(32, EnsembleSpec("gaussian"), streams.noise_a)
        entries = mat.entries / math.sqrt(32)
        entries[packed_diagonal_indices(32)] += 3.0
        instance = SymmetricMatrix(32, entries)
        y0 = streams.shared.standard_normal(32)
        y0 /= np.linalg.norm(y0)
        eig = jacobi_eigendecomp(instance, tol=1e-12)
        result = power_method(instance, y0, 15, eigen=eig)
        top = eig.eigenvectors[:, 0]
        aligned = math.copysign(1.0, float(np.dot(top, y0))) * top
        lhs = float(np.linalg.norm(result.vector - aligned))
        ok = ok and lhs <= result.bound + 1e-8
    return ok


def _check_streams(_rng):
    a = derive_streams(7, 0)
    b = derive_streams(7, 0)
    same = np.array_equal(a.shared.standard_normal(64), b.shared.standard_normal(64))
    c = derive_streams(7, 1)
    different = not np.array_equal(
        derive_streams(7, 0).noise_a.standard_normal(64), c.noise_a.standard_normal(64)
    )
    return same and different


CHECKS = (
    ("matvec vs naive two-loop multiply", _check_matvec),
    ("jacobi reconstruction and orthonormality", _check_jacobi),
    ("cholesky reconstruction", _check_cholesky),
    ("analytic partials vs finite differences", _check_partials),
    ("power-method bound vs jacobi eigendata", _check_power_bound),
    ("stream derivation determinism", _check_streams),
)


def run_selftest(out=print):
    rng = np.random.default_rng(20240810)
    failures = 0
    for name, check in CHECKS:
        ok = check(rng)
        out(f"{'PASS' if ok else 'FAIL'}  {name}")
        failures += 0 if ok else 1
    return failures
