"""Dense kernels for symmetric matrix pencils and Lyapunov inequalities.

Everything here works on small dense matrices (a few tens of rows).  The
threshold functions are the two halves of the classical pencil lemma: for a
symmetric ``Q1`` and a definite ``Q2``, ``Q1 - s Q2`` is negative definite for
every ``s`` beyond the extreme generalized eigenvalue of ``(Q1, Q2)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .errors import MatrixError, NotHurwitz, NotSND, NotSPD, NotSymmetric, SingularQ2

SYMMETRY_RTOL = 1e-12
DEFINITE_TOL = 1e-10
# a computed eigenvalue is "real" when |imag| <= COMPLEX_TOL * spectral scale
COMPLEX_TOL = 1e-8
# cond(Q2) above this is treated as singular
SINGULAR_COND = 1e12
HURWITZ_TOL = 1e-9


def _check_square(q, name):
    q = np.asarray(q, dtype=float)
    if q.ndim != 2 or q.shape[0] != q.shape[1]:
        raise MatrixError(f"{name} must be square, got shape {q.shape}")
    return q


def is_symmetric(q: np.ndarray, rtol: float = SYMMETRY_RTOL) -> bool:
    scale = max(1.0, np.linalg.norm(q))
    return np.linalg.norm(q - q.T) <= rtol * scale


def symmetrize(q: np.ndarray) -> np.ndarray:
    return 0.5 * (q + q.T)


@dataclass(frozen=True, eq=False)
class Pencil:
    """The matrix family ``q1 - s * q2`` for symmetric ``q1`` and ``q2``."""

    q1: np.ndarray
    q2: np.ndarray

    def __post_init__(self):
        q1 = _check_square(self.q1, "q1")
        q2 = _check_square(self.q2, "q2")
        if q1.shape != q2.shape:
            raise MatrixError(f"pencil blocks differ in shape: {q1.shape} vs {q2.shape}")
        for name, q in (("q1", q1), ("q2", q2)):
            if not is_symmetric(q):
                raise NotSymmetric(f"{name} is not symmetric")
        object.__setattr__(self, "q1", symmetrize(q1))
        object.__setattr__(self, "q2", symmetrize(q2))

    @property
    def size(self) -> int:
        return self.q1.shape[0]


class Definiteness(enum.Enum):
    SPD = "SPD"
    SND = "SND"
    INDEFINITE = "SymmetricIndefinite"


class DefinitenessClass(NamedTuple):
    tag: Definiteness
    min_eig: float
    max_eig: float


class GeneralizedSpectrum(NamedTuple):
    values: np.ndarray
    """Real generalized eigenvalues, ascending."""
    discarded: np.ndarray
    """Eigenvalues dropped because their imaginary part was not negligible."""


def classify_definiteness(q) -> DefinitenessClass:
    q = _check_square(q, "q")
    if not is_symmetric(q):
        raise NotSymmetric("cannot classify a nonsymmetric matrix")
    eigs = np.linalg.eigvalsh(symmetrize(q))
    lo, hi = float(eigs[0]), float(eigs[-1])
    scale = np.linalg.norm(q)
    if scale > 0 and lo / scale > DEFINITE_TOL:
        tag = Definiteness.SPD
    elif scale > 0 and hi / scale < -DEFINITE_TOL:
        tag = Definiteness.SND
    else:
        tag = Definiteness.INDEFINITE
    return DefinitenessClass(tag, lo, hi)


def lambda_max(q) -> float:
    return float(np.linalg.eigvalsh(symmetrize(np.asarray(q, dtype=float)))[-1])


def lambda_min(q) -> float:
    return float(np.linalg.eigvalsh(symmetrize(np.asarray(q, dtype=float)))[0])


def spectral_abscissa(a) -> float:
    return float(np.max(np.linalg.eigvals(np.asarray(a, dtype=float)).real))


def elementwise_abs(q) -> np.ndarray:
    """Matrix of entrywise magnitudes ``|Q|_e``."""
    return np.abs(np.asarray(q, dtype=float))


def generalized_spectrum(p: Pencil) -> GeneralizedSpectrum:
    """Roots of ``det(q1 - s q2) = 0`` for an invertible ``q2``.

    Definite ``q2`` goes through the Cholesky-reduced symmetric problem, which
    returns real values by construction; otherwise the standard eigenvalues of
    ``q2^{-1} q1`` are used and nonreal ones are split off into ``discarded``.
    """
    q1, q2 = p.q1, p.q2
    if p.size == 0:
        return GeneralizedSpectrum(np.empty(0), np.empty(0, dtype=complex))
    if not np.all(np.isfinite(q2)) or np.linalg.cond(q2) > SINGULAR_COND:
        raise SingularQ2("q2 is numerically singular; the pencil has infinite eigenvalues")
    cls = classify_definiteness(q2)
    if cls.tag is Definiteness.SPD:
        vals = scipy.linalg.eigh(q1, q2, eigvals_only=True)
        return GeneralizedSpectrum(np.sort(vals), np.empty(0, dtype=complex))
    if cls.tag is Definiteness.SND:
        vals = scipy.linalg.eigh(-q1, -q2, eigvals_only=True)
        return GeneralizedSpectrum(np.sort(vals), np.empty(0, dtype=complex))

    vals = np.linalg.eigvals(np.linalg.solve(q2, q1))
    scale = max(1.0, float(np.max(np.abs(vals))))
    real_mask = np.abs(vals.imag) <= COMPLEX_TOL * scale
    return GeneralizedSpectrum(np.sort(vals[real_mask].real), vals[~real_mask])


def generalized_eigenvalues(p: Pencil) -> np.ndarray:
    return generalized_spectrum(p).values


def pencil_threshold_max(p: Pencil) -> float:
    """``max sigma(q1, q2)`` for symmetric ``q1`` and SPD ``q2``.

    ``q1 - s q2`` is negative definite for every ``s`` above the result.
    """
    if classify_definiteness(p.q2).tag is not Definiteness.SPD:
        raise NotSPD("pencil_threshold_max needs an SPD q2")
    return float(generalized_eigenvalues(p)[-1])


def pencil_threshold_min(p: Pencil) -> float:
    """``min sigma(q1, q2)`` for SND ``q1`` and SND ``q2``.

    ``q1 - s q2`` is negative definite for every ``s`` below the result.
    """
    for name, q in (("q1", p.q1), ("q2", p.q2)):
        if classify_definiteness(q).tag is not Definiteness.SND:
            raise NotSND(f"pencil_threshold_min needs an SND {name}")
    return float(generalized_eigenvalues(p)[0])


def pencil_threshold_max_semidefinite(p: Pencil) -> float:
    """Largest finite generalized eigenvalue when ``q2`` is only PSD.

    ``q2`` may vanish on a subspace ``N`` (infinite eigenvalues).  Splitting
    along range/null space of ``q2``, ``q1 - s q2 <= 0`` holds iff the block
    ``q1_NN`` is negative definite and ``s`` dominates the Schur complement
    ``q1_RR - q1_RN q1_NN^{-1} q1_NR`` against ``q2_RR``.  The finite spectrum
    of the pencil is exactly the spectrum of that reduced pair.
    """
    w, u = np.linalg.eigh(p.q2)
    top = max(float(np.max(np.abs(w))), 0.0)
    if top == 0.0:
        raise NotSPD("q2 is zero; the pencil has no finite eigenvalues")
    if w[0] < -DEFINITE_TOL * top:
        raise NotSPD("q2 must be positive semidefinite")
    rng_mask = w > np.sqrt(np.finfo(float).eps) * top
    if rng_mask.all():
        return pencil_threshold_max(p)
    ur, un = u[:, rng_mask], u[:, ~rng_mask]
    q1 = p.q1
    q_rr = ur.T @ q1 @ ur
    q_rn = ur.T @ q1 @ un
    q_nn = symmetrize(un.T @ q1 @ un)
    if classify_definiteness(q_nn).tag is not Definiteness.SND:
        raise NotSND("q1 must be negative definite on the null space of q2")
    schur = symmetrize(q_rr - q_rn @ np.linalg.solve(q_nn, q_rn.T))
    return pencil_threshold_max(Pencil(schur, np.diag(w[rng_mask])))


def solve_lyapunov(a, q) -> np.ndarray:
    """Solve ``P a + a^T P = -q`` through the Kronecker-product linear system."""
    a = _check_square(a, "a")
    q = _check_square(q, "q")
    m = a.shape[0]
    eye = np.eye(m)
    # row-major vec: vec(P a) = (I kron a^T) vec(P), vec(a^T P) = (a^T kron I) vec(P)
    op = np.kron(eye, a.T) + np.kron(a.T, eye)
    p = np.linalg.solve(op, -q.reshape(-1)).reshape(m, m)
    return symmetrize(p)


def solve_lyapunov_pair(a, d=None, rhs_scale: float = 1.0) -> np.ndarray:
    """SPD ``P`` with ``P a + a^T P <= -rhs_scale I`` and ``P d + d P >= I``.

    ``P0`` solves the Lyapunov equation with right-hand side ``-rhs_scale I``
    exactly; the result is ``rho * P0`` with
    ``rho = max(1, 1 / lambda_min(P0 d + d P0))``.  Scaling up only tightens
    the first inequality.  With ``d=None`` the second inequality is dropped
    and ``P0`` is returned unscaled (the Loewner-minimal solution).

    Raises
    ------
    NotHurwitz
        ``a`` has an eigenvalue with real part above ``-1e-9``.
    """
    a = _check_square(a, "a")
    abscissa = spectral_abscissa(a)
    if abscissa >= -HURWITZ_TOL:
        raise NotHurwitz("a", abscissa)
    if rhs_scale <= 0:
        raise MatrixError("rhs_scale must be positive")
    p0 = solve_lyapunov(a, rhs_scale * np.eye(a.shape[0]))
    if d is None:
        return p0
    d = _check_square(d, "d")
    if np.any(d - np.diag(np.diag(d))) or np.any(np.diag(d) <= 0):
        raise MatrixError("d must be diagonal with positive entries")
    lam = lambda_min(p0 @ d + d @ p0)
    if lam <= 0:
        raise MatrixError(
            "P0 d + d P0 is not positive definite; scaling cannot enforce P d + d P >= I"
        )
    return max(1.0, 1.0 / lam) * p0
