"""Kolmogorov widths of discrete L-harmonic spaces and ranks of Green's-operator blocks."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .cluster import Block, BlockPartition, mesh_partition
from .errors import ConfigError, DegenerateDomainError
from .fluxnorm import FluxContext, SubdomainPair, harmonic_transfer
from .geometry_fem import Mesh, _alpha, assemble_stiffness, mass_matrix, neumann_stiffness

GEOMETRIES = ("G1", "G2")


@dataclass
class WidthCurve:
    widths: np.ndarray
    norm_pair: tuple = ("K", "D")
    geometry: str = ""
    contrast: float = 1.0
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        w = np.asarray(self.widths, float)
        if np.any(w < 0) or np.any(np.diff(w) > 1e-12 * max(w[0] if w.size else 0.0, 1.0)):
            raise ValueError("widths must be nonnegative and nonincreasing")
        self.widths = w

    def __len__(self):
        return self.widths.size

    def normalized(self) -> np.ndarray:
        if self.widths.size == 0 or self.widths[0] == 0:
            return self.widths.copy()
        return self.widths / self.widths[0]


def standard_geometry(mesh: Mesh, name: str):
    """Element masks ``(D, K)`` of the fixed test geometries.

    G1: D = [1/4, 3/4]^d, K = [3/8, 5/8]^d (dD away from the global boundary).
    G2: D = [0, 1/2]^d, K = [0, 1/4]^d (corner patch touching the boundary).
    """
    o, L = mesh.origin, mesh.length
    if name == "G1":
        D = mesh.box_mask(o + 0.25 * L, o + 0.75 * L)
        K = mesh.box_mask(o + 0.375 * L, o + 0.625 * L)
    elif name == "G2":
        D = mesh.box_mask(o, o + 0.5 * L)
        K = mesh.box_mask(o, o + 0.25 * L)
    else:
        raise ConfigError(f"unknown geometry {name!r}; expected one of {GEOMETRIES}")
    if not K.any():
        raise ConfigError(f"mesh too coarse for geometry {name}")
    return D, K


def contrast_field(mesh: Mesh, kappa: float, kind: str = "checker") -> np.ndarray:
    """Per-element coefficient with contrast ``kappa`` used by the width studies.

    ``checker`` (the default) alternates 1 and kappa on blocks of side 1/8.
    ``strips`` puts kappa on disjoint element rows along axis 0, and
    ``channels`` on three thin strips across the unit square.
    """
    if not kappa >= 1:
        raise ConfigError(f"contrast must be >= 1, got {kappa}")
    x = (mesh.midpoints - mesh.origin) / mesh.length
    alpha = np.ones(mesh.n_elements)
    if kind == "channels":
        # strips of width 1/16 at x0 in {3/16, 7/16, 11/16}, every second one bent along x1
        for j, c in enumerate((3 / 16, 7 / 16, 11 / 16)):
            on = np.abs(x[:, 0] - c - 1 / 32) < 1 / 32
            if mesh.dim > 1 and j == 1:
                on |= (np.abs(x[:, 1] - 9 / 16 - 1 / 32) < 1 / 32) & (x[:, 0] > c)
            alpha[on] = kappa
    elif kind == "strips":
        # disjoint strips along axis 0: element rows with floor(32 x1) = 1 mod 3
        alpha[np.floor(x[:, -1] * 32).astype(int) % 3 == 1] = kappa
    elif kind == "checker":
        cells = np.floor(x * 8).astype(int).sum(axis=1)
        alpha[cells % 2 == 1] = kappa
    else:
        raise ConfigError(f"unknown contrast pattern {kind!r}")
    return alpha


def harmonic_basis(ctx_or_mesh, coeff=None, D=None) -> np.ndarray:
    """Exact basis of the discrete L-harmonic space X(D), one column per interface vertex.

    Call as ``harmonic_basis(ctx)`` with a :class:`FluxContext` or as
    ``harmonic_basis(mesh, coeff, D)``.  Rows follow the vertex list of D.
    """
    if isinstance(ctx_or_mesh, FluxContext):
        ctx = ctx_or_mesh
        pair, S = ctx.pair, ctx.stiffness_D
    else:
        mesh = ctx_or_mesh
        pair = SubdomainPair(mesh, D, D)
        S = pair.restrict(neumann_stiffness(mesh, coeff, pair.D))
    gamma, I = pair.interface, pair.interior
    if gamma.size == 0:
        raise DegenerateDomainError("dD within the domain is empty: X(D) is trivial")
    U = np.zeros((pair.vertices.size, gamma.size))
    U[gamma, np.arange(gamma.size)] = 1.0
    if I.size:
        S_II = S[I][:, I].tocsc()
        rhs = -S[I][:, gamma].toarray()
        U[I] = spla.splu(S_II).solve(rhs)
    return U


def _psd_root(G, tol=1e-10):
    """``F`` with ``F.T @ F == G`` for a symmetric PSD matrix (rows on its support)."""
    G = G.toarray() if sp.issparse(G) else np.asarray(G, float)
    if not np.allclose(G, G.T, rtol=0, atol=1e-12 * max(np.abs(G).max(), 1e-300)):
        raise ConfigError("Gram matrix is not symmetric")
    support = np.flatnonzero(np.abs(G).sum(axis=1) > 0)
    Gs = G[np.ix_(support, support)]
    w, Q = np.linalg.eigh(0.5 * (Gs + Gs.T))
    top = max(w[-1], 0.0) if w.size else 0.0
    if w.size and w[0] < -tol * top:
        raise ConfigError(f"indefinite Gram matrix (eigenvalue {w[0]:.3e})")
    F = np.sqrt(np.clip(w, 0.0, None))[:, None] * Q.T
    return F, support


def kolmogorov_widths(basis, gram_K, gram_D, geometry="", contrast=1.0,
                      norm_pair=("K", "D")) -> WidthCurve:
    """Generalized singular values of the pencil ``(U' G_K U, U' G_D U)``.

    ``sigma_{k+1}`` is the best sup-inf error of approximating the unit
    ball of span(U) in the D-norm by k-dimensional subspaces in the K-norm.
    """
    U = np.asarray(basis, float)
    if U.ndim == 1:
        U = U[:, None]
    FD, supD = _psd_root(gram_D)
    FK, supK = _psd_root(gram_K)
    AD = FD @ U[supD]
    _, R = np.linalg.qr(AD)
    d = np.abs(np.diag(R))
    if d.size == 0 or d.min() <= 1e-13 * d.max():
        raise ConfigError("D-norm Gram is not positive definite on the basis span")
    AK = FK @ U[supK]
    C = sla.solve_triangular(R, AK.T, trans="T", lower=False).T
    s = np.linalg.svd(C, compute_uv=False)
    return WidthCurve(np.sort(s)[::-1], norm_pair, geometry, contrast)


def rank_at_tolerance(curve, eps: float) -> int:
    """Smallest k with ``sigma_{k+1} <= eps * sigma_1`` (full length if never reached)."""
    s = curve.widths if isinstance(curve, WidthCurve) else np.asarray(curve, float)
    if s.size == 0 or s[0] == 0:
        return 0
    above = np.flatnonzero(s > eps * s[0])
    if above.size == s.size:
        return int(s.size)
    return int(np.flatnonzero(s <= eps * s[0])[0])


def width_study(mesh: Mesh, alpha, geometry: str, kappa=1.0):
    """Width curves of X(D) for one geometry: flux pairing and L2 pairing.

    Returns ``{"flux": WidthCurve, "l2": WidthCurve}``.  The flux pairing
    measures ``|||.|||_{D,K}`` against ``|||.|||_{D,D}``; the L2 pairing
    measures ``||.||_{L2(K)}`` against ``||.||_{L2(D)}``.
    """
    D, K = standard_geometry(mesh, geometry)
    ctx = FluxContext(SubdomainPair(mesh, D, K), alpha)
    U = harmonic_basis(ctx)
    Phi = harmonic_transfer(ctx, U)
    flux = kolmogorov_widths(Phi, ctx.gram_K, ctx.gram_D, geometry, kappa, ("flux_K", "flux_D"))
    l2 = kolmogorov_widths(U, ctx.mass_K, ctx.mass_D, geometry, kappa, ("L2_K", "L2_D"))
    return {"flux": flux, "l2": l2}


def exp_decay_fit(curve, dim: int, floor=1e-8):
    """Least-squares fit ``log sigma_k = log C + k^(1/d) log q`` over the resolved range.

    Returns ``(C, q, r2)``.  Widths below ``floor * sigma_1`` are dropped;
    the transfer loses about ``kappa * 1e-16`` relative accuracy, so the
    tail beyond 1e-8 is round-off at the largest contrasts studied.
    """
    s = curve.normalized() if isinstance(curve, WidthCurve) else np.asarray(curve, float)
    s = s / s[0]
    keep = s > floor
    k = np.arange(1, s.size + 1)[keep] ** (1.0 / dim)
    y = np.log(s[keep])
    if y.size < 3:
        raise ConfigError("too few resolved widths to fit")
    slope, icpt = np.polyfit(k, y, 1)
    pred = icpt + slope * k
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(np.exp(icpt)), float(np.exp(slope)), r2


def _block_elements(mesh: Mesh, vertices) -> np.ndarray:
    """Elements touching any of the given global vertices."""
    mark = np.zeros(mesh.n_vertices, bool)
    mark[vertices] = True
    return mark[mesh.elements].any(axis=1)


def _box_gaps(mesh: Mesh, target):
    """Distance from each element box to the union of the ``target`` element boxes."""
    h = mesh.h
    lo = mesh.midpoints - 0.5 * h
    tlo = lo[target]
    out = np.empty(mesh.n_elements)
    for a in range(0, mesh.n_elements, 4096):
        blo = lo[a:a + 4096, None, :]
        gap = np.maximum(0.0, np.maximum(tlo[None] - (blo + h), blo - (tlo[None] + h)))
        out[a:a + 4096] = np.sqrt((gap * gap).sum(axis=2)).min(axis=1)
    return out


def inflate(mesh: Mesh, D2, eta: float) -> np.ndarray:
    """``{y : 2 eta dist(y, D2) <= diam D2}`` rounded outward to whole elements."""
    pts = mesh.vertices[mesh.element_vertex_mask(D2)]
    diam = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    return _box_gaps(mesh, D2) * 2.0 * eta <= diam * (1 + 1e-12)


def pick_block(partition: BlockPartition) -> Block:
    """Admissible leaf with the largest ``min(|t|, |s|)`` (first in leaf order on ties)."""
    best = None
    for b in partition.leaves:
        if b.admissible and (best is None or min(b.shape) > min(best.shape)):
            best = b
    if best is None:
        raise ConfigError("partition has no admissible block")
    return best


def greens_block_widths(mesh: Mesh, alpha, block: Block = None, weighting="none",
                        partition: BlockPartition = None, eta=2.0, n_min=32,
                        kappa=1.0) -> WidthCurve:
    """Singular values of the discrete Green's operator on an admissible block ``t x s``.

    ``weighting`` selects how the column side is measured: ``none`` uses
    plain entries, ``l2`` weights by the square root of the L2 mass on the
    support D2 of ``s``, ``flux`` applies the harmonic transfer on the
    inflated domain and measures in the H1-type norm over D2.
    """
    if weighting not in ("none", "l2", "flux"):
        raise ConfigError(f"unknown weighting {weighting!r}")
    n = mesh.interior.size
    if n > 8192:
        raise ConfigError(f"n={n} too large to densify (limit 8192)")
    alpha = _alpha(mesh, alpha)
    if partition is None:
        partition = mesh_partition(mesh, eta, n_min)
    if block is None:
        block = pick_block(partition)
    info = {"block_rows": block.t.size, "block_cols": block.s.size}
    if not block.admissible:
        warnings.warn("block is not admissible", stacklevel=2)
        info["admissible"] = 0
    else:
        info["admissible"] = 1
    S = assemble_stiffness(mesh, alpha)
    G = np.linalg.inv(S.toarray())
    G = 0.5 * (G + G.T)
    rows = partition.row_tree.indices(block.t)
    cols = partition.col_tree.indices(block.s)
    gv_rows = mesh.interior[rows]
    gv_cols = mesh.interior[cols]
    if weighting == "none":
        W = G[np.ix_(rows, cols)]
    elif weighting == "l2":
        D2 = _block_elements(mesh, gv_cols)
        dverts = np.flatnonzero(mesh.element_vertex_mask(D2))
        M = mass_matrix(mesh, None, D2)[dverts][:, dverts]
        F, sup = _psd_root(M)
        pos = np.full(mesh.n_vertices, -1)
        pos[mesh.interior] = np.arange(n)
        g = np.zeros((rows.size, dverts.size))
        inside = pos[dverts] >= 0
        g[:, inside] = G[np.ix_(rows, pos[dverts[inside]])]
        W = g[:, sup] @ F.T
    else:
        D2 = _block_elements(mesh, gv_cols)
        Dhat = inflate(mesh, D2, eta)
        pair = SubdomainPair(mesh, Dhat, D2)
        ctx = FluxContext(pair, alpha)
        dverts = pair.vertices
        sources = np.isin(gv_rows, dverts[pair.interior])
        info["harmonic_violations"] = int(sources.sum())
        pos = np.full(mesh.n_vertices, -1)
        pos[mesh.interior] = np.arange(n)
        g = np.zeros((dverts.size, rows.size))
        inside = pos[dverts] >= 0
        g[inside] = G[np.ix_(pos[dverts[inside]], rows)]
        Phi = harmonic_transfer(ctx, g)
        F, sup = _psd_root(ctx.gram_K)
        W = (F @ Phi[sup]).T
    s = np.linalg.svd(W, compute_uv=False)
    curve = WidthCurve(np.sort(s)[::-1], ("block", weighting), "", kappa)
    curve.info = info
    return curve
