"""Tensor-product meshes, ball-inclusion coefficients and multilinear FE assembly.

Everything here discretizes ``L = -div(alpha grad)`` on a box with
multilinear (Q1) elements of uniform width.  Vertices and elements are
numbered lexicographically with axis 0 running fastest.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, reduce
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from .errors import ConfigError
from .rng import PhiloxStream

ALPHA_FLOOR = 1e-8
DEFAULT_RADIUS_RANGE = (0.02, 0.10)


@dataclass(frozen=True)
class Mesh:
    """Uniform grid of ``m**dim`` cubes covering ``[origin, origin+length]**dim``."""

    dim: int
    m: int
    origin: float = 0.0
    length: float = 1.0

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ConfigError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.m < 1:
            raise ConfigError(f"cells_per_axis must be positive, got {self.m}")
        if not self.length > 0:
            raise ConfigError("length must be positive")

    @property
    def h(self) -> float:
        return self.length / self.m

    @property
    def n_vertices(self) -> int:
        return (self.m + 1) ** self.dim

    @property
    def n_elements(self) -> int:
        return self.m ** self.dim

    @cached_property
    def vertex_grid(self) -> np.ndarray:
        """Integer lattice coordinates, shape (n_vertices, dim)."""
        axes = np.indices((self.m + 1,) * self.dim).reshape(self.dim, -1)[::-1]
        return np.ascontiguousarray(axes.T)

    @cached_property
    def vertices(self) -> np.ndarray:
        return self.origin + self.h * self.vertex_grid

    @cached_property
    def element_grid(self) -> np.ndarray:
        axes = np.indices((self.m,) * self.dim).reshape(self.dim, -1)[::-1]
        return np.ascontiguousarray(axes.T)

    @cached_property
    def elements(self) -> np.ndarray:
        """Vertex indices of every cell, shape (n_elements, 2**dim).

        Local corner ``c`` (bit k set = upper side along axis k) sits in column c.
        """
        strides = (self.m + 1) ** np.arange(self.dim)
        base = self.element_grid @ strides
        corners = np.array([sum(((c >> k) & 1) * strides[k] for k in range(self.dim))
                            for c in range(2 ** self.dim)])
        return base[:, None] + corners[None, :]

    @cached_property
    def midpoints(self) -> np.ndarray:
        return self.origin + self.h * (self.element_grid + 0.5)

    @cached_property
    def dirichlet_mask(self) -> np.ndarray:
        g = self.vertex_grid
        return np.any((g == 0) | (g == self.m), axis=1)

    @cached_property
    def interior(self) -> np.ndarray:
        """Global indices of the vertices off the boundary, increasing."""
        return np.flatnonzero(~self.dirichlet_mask)

    def box_mask(self, lo, hi) -> np.ndarray:
        """Elements whose midpoint lies in the axis-aligned box [lo, hi]."""
        lo = np.broadcast_to(np.asarray(lo, float), (self.dim,))
        hi = np.broadcast_to(np.asarray(hi, float), (self.dim,))
        mid = self.midpoints
        return np.all((mid >= lo) & (mid <= hi), axis=1)

    def element_vertex_mask(self, elem_mask) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.elements[np.asarray(elem_mask, bool)].ravel()] = True
        return mask

    def subdomain_interior(self, elem_mask) -> np.ndarray:
        """Vertex mask of the interior of a union of elements.

        A vertex is interior when it is off the global boundary and every
        cell touching it belongs to the subdomain.
        """
        elem_mask = np.asarray(elem_mask, bool)
        outside = np.zeros(self.n_vertices, dtype=bool)
        outside[self.elements[~elem_mask].ravel()] = True
        return self.element_vertex_mask(elem_mask) & ~outside & ~self.dirichlet_mask


@dataclass(frozen=True)
class CoefficientField:
    """Scalar coefficient: background 1, ball inclusions with constant values.

    ``inclusions`` has rows ``(center_0, ..., center_{d-1}, radius, value)``.
    Later rows win where balls overlap.
    """

    dim: int
    inclusions: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    background: float = 1.0
    alpha_floor: float = ALPHA_FLOOR
    radius_range: tuple = DEFAULT_RADIUS_RANGE
    seed: int | None = None
    amplitude: float | None = None

    def __post_init__(self):
        inc = np.asarray(self.inclusions, dtype=float).reshape(-1, self.dim + 2)
        object.__setattr__(self, "inclusions", inc)

    @property
    def count(self) -> int:
        return self.inclusions.shape[0]

    def coefficient_at(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, float))
        alpha = np.full(pts.shape[0], float(self.background))
        for row in self.inclusions:
            c, s, val = row[:self.dim], row[self.dim], row[self.dim + 1]
            inside = np.sum((pts - c) ** 2, axis=1) <= s * s
            alpha[inside] = val
        return np.maximum(alpha, self.alpha_floor)

    def element_values(self, mesh: Mesh) -> np.ndarray:
        """Midpoint sample of the coefficient on every cell."""
        if mesh.dim != self.dim:
            raise ConfigError(f"field is {self.dim}-d but mesh is {mesh.dim}-d")
        return self.coefficient_at(mesh.midpoints)

    def bounds(self, mesh: Mesh) -> tuple[float, float, float]:
        """(lambda_min, lambda_max, contrast) of the sampled field."""
        a = self.element_values(mesh)
        lo, hi = float(a.min()), float(a.max())
        return lo, hi, hi / lo


def sample_inclusions(r, amplitude, seed, radius_range=DEFAULT_RADIUS_RANGE, dim=3,
                      alpha_floor=ALPHA_FLOOR) -> CoefficientField:
    """Draw ``r`` random balls in the unit cube with values uniform in [0, amplitude].

    Per inclusion the stream yields ``dim`` center coordinates, then the
    radius, then the value, all from one Philox stream keyed by ``seed``.
    """
    lo, hi = (float(v) for v in radius_range)
    if r < 0:
        raise ConfigError(f"inclusion count must be >= 0, got {r}")
    if not amplitude >= 1:
        raise ConfigError(f"amplitude M must be >= 1, got {amplitude}")
    if not (0 < lo <= hi < 0.5):
        raise ConfigError(f"radius_range must satisfy 0 < lo <= hi < 0.5, got {radius_range}")
    u = PhiloxStream(seed).uniform(r * (dim + 2)).reshape(r, dim + 2)
    inc = u.copy()
    inc[:, dim] = lo + (hi - lo) * u[:, dim]
    inc[:, dim + 1] = amplitude * u[:, dim + 1]
    return CoefficientField(dim, inc, alpha_floor=alpha_floor,
                            radius_range=(lo, hi), seed=int(seed), amplitude=float(amplitude))


def constant_field(dim, value=1.0) -> CoefficientField:
    return CoefficientField(dim, background=value)


# -- element matrices ---------------------------------------------------------

def _kron_all(mats):
    # local index bit k <-> axis k, so axis 0 must be the innermost factor
    return reduce(np.kron, mats[::-1])


def element_matrices(dim: int, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact Q1 stiffness and mass matrices of one cube of width ``h``."""
    k1 = np.array([[1.0, -1.0], [-1.0, 1.0]]) / h
    m1 = np.array([[2.0, 1.0], [1.0, 2.0]]) * h / 6.0
    stiff = sum(_kron_all([k1 if a == b else m1 for b in range(dim)]) for a in range(dim))
    mass = _kron_all([m1] * dim)
    return stiff, mass


def _assemble(mesh: Mesh, local: np.ndarray, weights, elem_mask=None) -> sp.csr_matrix:
    weights = np.broadcast_to(np.asarray(weights, float), (mesh.n_elements,))
    elems = mesh.elements
    if elem_mask is not None:
        elem_mask = np.asarray(elem_mask, bool)
        elems, weights = elems[elem_mask], weights[elem_mask]
    nloc = local.shape[0]
    rows = np.repeat(elems, nloc, axis=1).ravel()
    cols = np.tile(elems, (1, nloc)).ravel()
    vals = (weights[:, None] * local.ravel()[None, :]).ravel()
    n = mesh.n_vertices
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def _alpha(mesh, coeff):
    if coeff is None:
        return np.ones(mesh.n_elements)
    if isinstance(coeff, CoefficientField):
        return coeff.element_values(mesh)
    alpha = np.asarray(coeff, float)
    if alpha.ndim == 0:
        return np.full(mesh.n_elements, float(alpha))
    if alpha.shape != (mesh.n_elements,):
        raise ConfigError(f"need {mesh.n_elements} element values, got {alpha.shape}")
    return alpha


def neumann_stiffness(mesh: Mesh, coeff=None, elem_mask=None) -> sp.csr_matrix:
    """Stiffness over all vertices, no boundary conditions applied."""
    stiff, _ = element_matrices(mesh.dim, mesh.h)
    return _assemble(mesh, stiff, _alpha(mesh, coeff), elem_mask)


def mass_matrix(mesh: Mesh, coeff=None, elem_mask=None) -> sp.csr_matrix:
    """(Optionally weighted) mass matrix over all vertices."""
    _, mass = element_matrices(mesh.dim, mesh.h)
    return _assemble(mesh, mass, _alpha(mesh, coeff), elem_mask)


def assemble_stiffness(mesh: Mesh, coeff=None) -> sp.csr_matrix:
    """Galerkin matrix of ``a(v, w)`` on the interior vertices of ``mesh``.

    ``coeff`` is a :class:`CoefficientField`, an array of per-element values,
    a scalar, or ``None`` for the Laplacian.
    """
    full = neumann_stiffness(mesh, coeff)
    idx = mesh.interior
    return full[idx][:, idx].tocsr()


def assemble_laplace(mesh: Mesh, subdomain) -> sp.csr_matrix:
    """Laplace stiffness on a union of elements, Dirichlet on its boundary.

    Rows/columns follow the increasing global numbering of the subdomain's
    interior vertices (see :meth:`Mesh.subdomain_interior`).
    """
    subdomain = np.asarray(subdomain, bool)
    if not subdomain.any():
        raise ConfigError("empty subdomain")
    full = neumann_stiffness(mesh, None, subdomain)
    idx = np.flatnonzero(mesh.subdomain_interior(subdomain))
    return full[idx][:, idx].tocsr()


def export_matrix_market(matrix, path) -> Path:
    """Write a MatrixMarket coordinate file; returns the path actually written."""
    path = Path(path)
    if path.suffix != ".mtx":
        path = path.with_name(path.name + ".mtx")
    scipy.io.mmwrite(str(path), sp.coo_matrix(matrix), field="real", symmetry="general")
    return path


# -- flat key = value configuration ------------------------------------------

CONFIG_KEYS = {
    "dim": int, "m": int, "inclusions": int, "amplitude": float, "seed": int,
    "radius_min": float, "radius_max": float, "alpha_floor": float,
}


def read_config(path) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            out[key] = CONFIG_KEYS[key](value)
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return out


def field_from_config(cfg: dict) -> tuple[Mesh, CoefficientField]:
    dim = cfg.get("dim", 2)
    mesh = Mesh(dim, cfg.get("m", 32))
    coeff = sample_inclusions(cfg.get("inclusions", 0), cfg.get("amplitude", 1.0),
                              cfg.get("seed", 0),
                              (cfg.get("radius_min", DEFAULT_RADIUS_RANGE[0]),
                               cfg.get("radius_max", DEFAULT_RADIUS_RANGE[1])),
                              dim=dim, alpha_floor=cfg.get("alpha_floor", ALPHA_FLOOR))
    return mesh, coeff
