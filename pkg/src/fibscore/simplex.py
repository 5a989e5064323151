"""Numerical check of the imbalance maxima on the probability simplex.

For shares ``c`` on the simplex the summed imbalances

    phi(c) = sum |c_i - 1/m|        psi(c) = sum (c_i - 1/m)**2

are convex, so their maximum sits at a vertex, where ``phi = 2(m-1)/m``
and ``psi = (m-1)/m``. These constants are what ``normalize_fii`` divides
by, so this module certifies them three ways: exact rational evaluation at
every vertex, dense uniform sampling of the interior, and a convexity
spot check along random chords.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np

from .errors import VerificationFailure

MAX_ENUMERATED_M = 16


def vertex_enumerate(m: int) -> np.ndarray:
    """The ``m`` standard basis vectors of R^m, one per row."""
    if not 2 <= m <= MAX_ENUMERATED_M:
        raise ValueError(f"m must be in [2, {MAX_ENUMERATED_M}], got {m}")
    return np.eye(m)


def sample_simplex(m: int, n: int, seed: int) -> np.ndarray:
    """``n`` points drawn uniformly from the (m-1)-simplex (normalized Exp(1) draws)."""
    if m < 2:
        raise ValueError("m must be >= 2")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    g = rng.exponential(scale=1.0, size=(n, m))
    return g / g.sum(axis=1, keepdims=True)


def phi(points) -> np.ndarray:
    c = np.asarray(points, dtype=np.float64)
    return np.abs(c - 1.0 / c.shape[-1]).sum(axis=-1)


def psi(points) -> np.ndarray:
    c = np.asarray(points, dtype=np.float64)
    d = c - 1.0 / c.shape[-1]
    return (d * d).sum(axis=-1)


def phi_bound(m: int) -> float:
    return 2.0 * (m - 1) / m


def psi_bound(m: int) -> float:
    return (m - 1) / m


def _exact_vertex_values(m: int, i: int) -> tuple[Fraction, Fraction]:
    inv = Fraction(1, m)
    coords = [Fraction(int(j == i)) for j in range(m)]
    return sum(abs(c - inv) for c in coords), sum((c - inv) ** 2 for c in coords)


@dataclass
class SimplexMaximaReport:
    m: int
    n_samples: int
    seed: int
    max_phi_observed: float
    max_psi_observed: float
    phi_bound: float
    psi_bound: float
    vertex_attains: bool
    vertex_exact: bool
    max_vertex_abs_error: float

    def to_dict(self) -> dict:
        return asdict(self)


def verify_simplex_maxima(m: int, n_samples: int, seed: int, tol: float = 1e-12) -> SimplexMaximaReport:
    """Check that phi/psi peak at the vertices with the closed-form values.

    Raises VerificationFailure carrying the offending point if a sample
    exceeds a bound or a vertex misses it.
    """
    vertices = vertex_enumerate(m)
    samples = sample_simplex(m, n_samples, seed)

    exact_phi, exact_psi = Fraction(2 * (m - 1), m), Fraction(m - 1, m)
    for i in range(m):
        vphi, vpsi = _exact_vertex_values(m, i)
        if vphi != exact_phi or vpsi != exact_psi:
            raise VerificationFailure(f"m={m}: vertex {i} misses the exact bound", vertices[i])

    pb, sb = phi_bound(m), psi_bound(m)
    vphi, vpsi = phi(vertices), psi(vertices)
    vertex_err = float(max(np.max(np.abs(vphi - pb)), np.max(np.abs(vpsi - sb))))
    if vertex_err > tol:
        bad = int(np.argmax(np.maximum(np.abs(vphi - pb), np.abs(vpsi - sb))))
        raise VerificationFailure(f"m={m}: vertex value off by {vertex_err:.3g}", vertices[bad])

    sphi, spsi = phi(samples), psi(samples)
    for name, values, bound in (("phi", sphi, pb), ("psi", spsi, sb)):
        worst = int(np.argmax(values))
        if values[worst] > bound + tol:
            raise VerificationFailure(
                f"m={m}: {name}={values[worst]!r} exceeds bound {bound!r}", samples[worst]
            )

    return SimplexMaximaReport(
        m=m,
        n_samples=n_samples,
        seed=seed,
        max_phi_observed=float(max(sphi.max(), vphi.max())),
        max_psi_observed=float(max(spsi.max(), vpsi.max())),
        phi_bound=pb,
        psi_bound=sb,
        vertex_attains=True,
        vertex_exact=True,
        max_vertex_abs_error=vertex_err,
    )


def convexity_gap(m: int, n: int, seed: int) -> float:
    """Largest ``psi(t p + (1-t) q) - (t psi(p) + (1-t) psi(q))`` over random chords.

    Nonpositive (up to rounding) when psi is convex on the simplex.
    """
    rng = np.random.default_rng(seed)
    p = sample_simplex(m, n, int(rng.integers(2**32)))
    q = sample_simplex(m, n, int(rng.integers(2**32)))
    t = rng.uniform(0.0, 1.0, size=(n, 1))
    lhs = psi(t * p + (1 - t) * q)
    rhs = t[:, 0] * psi(p) + (1 - t[:, 0]) * psi(q)
    return float(np.max(lhs - rhs))


def verify_range(m_max: int, n_samples: int, seed: int, tol: float = 1e-12) -> list[SimplexMaximaReport]:
    """Run ``verify_simplex_maxima`` for every m in ``[2, m_max]`` with per-m seeds."""
    seeds = np.random.SeedSequence(seed).spawn(m_max - 1)
    return [
        verify_simplex_maxima(m, n_samples, int(s.generate_state(1)[0]), tol)
        for m, s in zip(range(2, m_max + 1), seeds)
    ]
