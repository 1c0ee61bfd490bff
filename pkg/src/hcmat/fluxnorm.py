"""Discrete flux norms on a subdomain pair K in D, and the interior estimates around them.

All norms use the element Gram matrices of the same Q1 space, so
``a(.,.)``, the Laplace form and the H1-type norms are mutually consistent.
Grid functions on D are vectors over ``Subdomain.vertices`` (increasing
global vertex numbers).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial.distance import cdist

from .errors import ConfigError, DegenerateDomainError
from .geometry_fem import Mesh, _alpha, mass_matrix, neumann_stiffness
from .rng import PhiloxStream

SOLVE_RTOL = 1e-10
NULL_WIDTH = 1e-12


def _elements_diam(mesh: Mesh, elem_mask) -> float:
    pts = mesh.vertices[mesh.element_vertex_mask(elem_mask)]
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


@dataclass(eq=False)
class SubdomainPair:
    """Element masks ``K`` within ``D`` on a mesh, with sigma(K, D) and diameters."""

    mesh: Mesh
    D: np.ndarray
    K: np.ndarray

    def __post_init__(self):
        self.D = np.asarray(self.D, bool)
        self.K = np.asarray(self.K, bool)
        if not self.D.any() or not self.K.any():
            raise ConfigError("empty subdomain")
        if np.any(self.K & ~self.D):
            raise ConfigError("K must be contained in D")

    @cached_property
    def vertices(self) -> np.ndarray:
        return np.flatnonzero(self.mesh.element_vertex_mask(self.D))

    @cached_property
    def interior(self) -> np.ndarray:
        """Positions (into ``vertices``) of the interior vertices of D."""
        return np.flatnonzero(self.mesh.subdomain_interior(self.D)[self.vertices])

    @cached_property
    def boundary(self) -> np.ndarray:
        mask = np.ones(self.vertices.size, bool)
        mask[self.interior] = False
        return np.flatnonzero(mask)

    @cached_property
    def interface(self) -> np.ndarray:
        """Positions of the vertices on the part of dD inside the global domain."""
        b = self.boundary
        return b[~self.mesh.dirichlet_mask[self.vertices[b]]]

    @cached_property
    def outer(self) -> np.ndarray:
        """Positions of the vertices on dD intersected with the global boundary."""
        b = self.boundary
        return b[self.mesh.dirichlet_mask[self.vertices[b]]]

    @cached_property
    def sigma(self) -> float:
        """dist(K, dD within the domain), measured between vertex sets."""
        if self.interface.size == 0:
            return np.inf
        kpts = self.mesh.vertices[self.mesh.element_vertex_mask(self.K)]
        gpts = self.mesh.vertices[self.vertices[self.interface]]
        return float(cdist(kpts, gpts).min())

    @cached_property
    def diam_K(self) -> float:
        return _elements_diam(self.mesh, self.K)

    @cached_property
    def diam_D(self) -> float:
        return _elements_diam(self.mesh, self.D)

    def restrict(self, matrix) -> sp.csr_matrix:
        v = self.vertices
        return matrix[v][:, v].tocsr()

    def from_global(self, values) -> np.ndarray:
        return np.asarray(values)[self.vertices]


class FluxContext:
    """Matrices and the factorized Dirichlet Laplacian needed for flux norms on (K, D)."""

    def __init__(self, pair: SubdomainPair, coeff=None):
        self.pair = pair
        mesh = pair.mesh
        self.alpha = _alpha(mesh, coeff)
        self.stiffness_D = pair.restrict(neumann_stiffness(mesh, self.alpha, pair.D))
        self.laplace_D = pair.restrict(neumann_stiffness(mesh, None, pair.D))
        self.mass_D = pair.restrict(mass_matrix(mesh, None, pair.D))
        self.laplace_K = pair.restrict(neumann_stiffness(mesh, None, pair.K))
        self.mass_K = pair.restrict(mass_matrix(mesh, None, pair.K))
        self.gram_D = (self.mass_D + pair.diam_D ** 2 * self.laplace_D).tocsr()
        self.gram_K = (self.mass_K + pair.diam_K ** 2 * self.laplace_K).tocsr()
        I = pair.interior
        if I.size == 0:
            self._lu = None
        else:
            self._lap_II = self.laplace_D[I][:, I].tocsc()
            self._lu = spla.splu(self._lap_II)
            probe = PhiloxStream(12345).uniform(I.size) - 0.5
            res = self._lap_II @ self._lu.solve(probe) - probe
            if np.linalg.norm(res) > SOLVE_RTOL * np.linalg.norm(probe):
                raise DegenerateDomainError("Laplace factorization fails residual gate")

    @property
    def size(self) -> int:
        return self.pair.vertices.size

    def gram(self, on: str) -> sp.csr_matrix:
        if on == "K":
            return self.gram_K
        if on == "D":
            return self.gram_D
        raise ConfigError(f"norm domain must be 'K' or 'D', got {on!r}")


def harmonic_transfer(ctx: FluxContext, v) -> np.ndarray:
    """``phi = v + z`` with ``a_lap(z, w) = a(v, w) - a_lap(v, w)`` for interior w.

    Accepts one grid function (vector) or several as columns.
    """
    if ctx._lu is None:
        raise DegenerateDomainError("subdomain D has no interior vertices")
    v = np.asarray(v, float)
    if v.shape[0] != ctx.size:
        raise ConfigError(f"grid function has {v.shape[0]} values, D has {ctx.size} vertices")
    I = ctx.pair.interior
    rhs = ((ctx.stiffness_D - ctx.laplace_D) @ v)[I]
    phi = v.copy()
    if not np.any(rhs):
        return phi
    z = ctx._lu.solve(rhs)
    res = np.linalg.norm(ctx._lap_II @ z - rhs)
    if res > SOLVE_RTOL * max(np.linalg.norm(rhs), np.finfo(float).tiny):
        raise DegenerateDomainError(f"transfer solve residual {res:.3e} too large")
    phi[I] += z
    return phi


def h1_norm(ctx: FluxContext, v, on="K") -> float:
    """``(||v||^2 + diam^2 ||grad v||^2)^(1/2)`` over K or D, no transfer."""
    v = np.asarray(v, float)
    return float(np.sqrt(max(v @ (ctx.gram(on) @ v), 0.0)))


def flux_inner(ctx: FluxContext, v, w, on="K") -> float:
    """The (semi-)inner product ``(phi_v, phi_w)`` in the H1-type norm over K or D."""
    pv, pw = harmonic_transfer(ctx, v), harmonic_transfer(ctx, w)
    return float(pv @ (ctx.gram(on) @ pw))


def flux_norm(ctx: FluxContext, v, on="K") -> float:
    """The A-dependent norm of ``v``: H1-type norm of its harmonic transfer over K or D."""
    phi = harmonic_transfer(ctx, v)
    return float(np.sqrt(max(phi @ (ctx.gram(on) @ phi), 0.0)))


def interior_residual(ctx: FluxContext, u) -> float:
    """Relative residual of the discrete L-harmonic condition at interior vertices of D."""
    u = np.asarray(u, float)
    I = ctx.pair.interior
    res = (ctx.stiffness_D @ u)[I]
    scale = (abs(ctx.stiffness_D) @ np.abs(u))[I]
    denom = np.linalg.norm(scale)
    return float(np.linalg.norm(res) / denom) if denom > 0 else 0.0


def _harmonic_check(ctx: FluxContext, u, tol=SOLVE_RTOL):
    u = np.asarray(u, float)
    cols = u.reshape(u.shape[0], -1)
    for j in range(cols.shape[1]):
        r = interior_residual(ctx, cols[:, j])
        if r > tol:
            raise ConfigError(f"function is not discretely L-harmonic in D (residual {r:.3e})")
    outer = ctx.pair.outer
    if outer.size and np.any(cols[outer] != 0.0):
        big = float(np.abs(cols[outer]).max())
        if big > tol * max(float(np.abs(cols).max()), 1.0):
            raise ConfigError(f"function does not vanish on the global boundary ({big:.3e})")


def _weighted_forms(ctx: FluxContext):
    pair, mesh = ctx.pair, ctx.pair.mesh
    energy_K = pair.restrict(neumann_stiffness(mesh, ctx.alpha, pair.K))
    mass_alpha_D = pair.restrict(mass_matrix(mesh, ctx.alpha, pair.D))
    return energy_K, mass_alpha_D


def caccioppoli_ratio(ctx: FluxContext, u) -> float:
    """``sigma * ||alpha^(1/2) grad u||_K / (2 ||alpha^(1/2) u||_D)`` for L-harmonic u.

    The interior estimate asserts this is at most 1.
    """
    sigma = ctx.pair.sigma
    if not np.isfinite(sigma) or sigma <= 0:
        raise ConfigError(f"need sigma(K, D) > 0, got {sigma}")
    _harmonic_check(ctx, u)
    u = np.asarray(u, float)
    energy_K, mass_alpha_D = _weighted_forms(ctx)
    den = float(u @ (mass_alpha_D @ u))
    if den == 0.0:
        return 0.0
    return sigma * float(np.sqrt(max(u @ (energy_K @ u), 0.0) / den)) / 2.0


def caccioppoli_sup(ctx: FluxContext, basis) -> float:
    """Largest normalized Caccioppoli ratio over the span of ``basis`` (columns)."""
    sigma = ctx.pair.sigma
    if not np.isfinite(sigma) or sigma <= 0:
        raise ConfigError(f"need sigma(K, D) > 0, got {sigma}")
    _harmonic_check(ctx, basis)
    energy_K, mass_alpha_D = _weighted_forms(ctx)
    A = basis.T @ (energy_K @ basis)
    B = basis.T @ (mass_alpha_D @ basis)
    lam = sla.eigh(0.5 * (A + A.T), 0.5 * (B + B.T), eigvals_only=True)
    return sigma * float(np.sqrt(max(lam[-1], 0.0))) / 2.0


def weighted_poincare_constant(mesh: Mesh, K, alpha) -> float:
    """``sup_u inf_mu ||u - mu||_{alpha,K} / ||grad u||_{alpha,K}`` on the Q1 space over K.

    Equals ``lambda_1 ** -0.5`` for the smallest nonzero eigenvalue of the
    weighted stiffness/mass pencil on K (the weighted mean is the optimal mu).
    Returns ``inf`` when K is disconnected.
    """
    K = np.asarray(K, bool)
    if not K.any():
        raise ConfigError("empty K")
    alpha = _alpha(mesh, alpha)
    if np.any(alpha[K] <= 0):
        raise ConfigError("weight must be positive on K")
    v = np.flatnonzero(mesh.element_vertex_mask(K))
    S = neumann_stiffness(mesh, alpha, K)[v][:, v].tocsc()
    M = mass_matrix(mesh, alpha, K)[v][:, v].tocsc()
    if v.size <= 400:
        lam = sla.eigh(S.toarray(), M.toarray(), eigvals_only=True, subset_by_index=[0, 2]
                       if v.size > 2 else None)
    else:
        scale = float((S.diagonal() / M.diagonal()).max())
        shift = -1e-9 * scale
        # fixed start vector: ARPACK's default one is random and breaks bitwise reproducibility
        v0 = PhiloxStream(0).uniform(v.size) + 0.5
        lam = spla.eigsh(S, k=3, M=M, sigma=shift, which="LM", v0=v0,
                         return_eigenvectors=False)
        lam = np.sort(lam)
    scale = float((S.diagonal() / M.diagonal()).max())
    nonzero = lam[lam > 1e-11 * scale]
    if nonzero.size == 0 or lam.size - nonzero.size > 1:
        return np.inf
    return float(1.0 / np.sqrt(nonzero[0]))


def norm_equivalence_constants(ctx: FluxContext, sample_count=100, seed=0):
    """Empirical (c1_hat, c2_hat) from random grid functions on D.

    ``c2_hat = max |||v|||_{D,D} / ||v||_{1,D}`` and ``c1_hat`` is the
    largest inverse ratio; both are lower bounds for the true constants.
    Half the samples are white noise on the vertices of D (these drive
    ``c2_hat``), the other half random elements of X(D) with normal
    interface data (their transfer is small, which drives ``c1_hat``).
    """
    if sample_count < 10:
        raise ConfigError("sample_count must be at least 10")
    from .kwidth import harmonic_basis

    stream = PhiloxStream(seed)
    n_harm = sample_count // 2 if ctx.pair.interface.size else 0
    n_noise = sample_count - n_harm
    V = stream.normal(ctx.size * n_noise).reshape(n_noise, ctx.size).T
    if n_harm:
        U = harmonic_basis(ctx)
        C = stream.normal(U.shape[1] * n_harm).reshape(n_harm, U.shape[1]).T
        V = np.concatenate((V, U @ C), axis=1)
    Phi = harmonic_transfer(ctx, V)
    G = ctx.gram_D
    num = np.sqrt(np.einsum("ij,ij->j", Phi, G @ Phi))
    den = np.sqrt(np.einsum("ij,ij->j", V, G @ V))
    ratio = num / den
    return float((1.0 / ratio).max()), float(ratio.max())


def interior_recovery_ratio(ctx: FluxContext, basis=None) -> float:
    """``max |||v|||_{D,D} / |||v|||_{D,K}`` over the discrete L-harmonic space X(D).

    Computed exactly as the extreme generalized singular value of the
    pencil on a basis of X(D) (the harmonic basis by default).
    """
    from .kwidth import harmonic_basis, kolmogorov_widths

    if not ctx.pair.mesh.subdomain_interior(ctx.pair.K).any():
        raise DegenerateDomainError("K has no interior vertices")
    if basis is None:
        basis = harmonic_basis(ctx)
    Phi = harmonic_transfer(ctx, basis)
    # widths of the K-norm measured against the D-norm; the ratio is 1/smallest
    curve = kolmogorov_widths(Phi, ctx.gram_K, ctx.gram_D)
    smallest = curve.widths[-1]
    # a width at round-off level means the K-seminorm vanishes on part of X(D)
    if smallest <= NULL_WIDTH * curve.widths[0]:
        return np.inf
    return float(1.0 / smallest)


def example_geometry(m=96, delta=1e-4):
    """Square K = (-3, 3)^2 with two bars of weight 1/delta, background weight 1.

    The bars are (-2, -1) x (-1, 1) and (1, 2) x (-1, 1).  Returns
    ``(mesh, K mask, alpha)``; ``m`` should be a multiple of 6 so that the
    bars are resolved exactly.
    """
    if m % 6:
        raise ConfigError(f"m must be a multiple of 6, got {m}")
    if not delta > 0:
        raise ConfigError(f"delta must be positive, got {delta}")
    mesh = Mesh(2, m, origin=-3.0, length=6.0)
    x = mesh.midpoints
    bars = (np.abs(x[:, 1]) < 1) & (np.abs(np.abs(x[:, 0]) - 1.5) < 0.5)
    alpha = np.where(bars, 1.0 / delta, 1.0)
    return mesh, np.ones(mesh.n_elements, bool), alpha
