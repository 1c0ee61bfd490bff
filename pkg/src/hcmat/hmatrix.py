"""Hierarchical matrices over a :class:`~hcmat.cluster.BlockPartition` and their algebra.

Blocks live in the cluster-permuted ordering; :class:`HMatrix` wraps the
root block and translates to the original ordering at the boundary
(``matvec``, ``densify``, ``solve``).  Arithmetic is 2x2-recursive along the
cluster tree with recompression after every low-rank accumulation.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .cluster import Block, BlockPartition
from .errors import ConfigError, FactorizationError
from .lowrank import RkMatrix, compress_dense, truncate, truncate_factors

DENSE, RK, BRANCH = "dense", "rk", "branch"
COND_LIMIT = 1e14


@dataclass(frozen=True)
class Accuracy:
    """Truncation target: relative Frobenius ``eps`` and/or a rank cap ``k_max``."""

    eps: float | None = None
    k_max: int | None = None

    @classmethod
    def of(cls, value):
        if isinstance(value, Accuracy):
            return value
        return cls(eps=float(value))


class HNode:
    """One block (t, s) of an H-matrix: dense, low-rank, or a 2x2 branch."""

    __slots__ = ("block", "kind", "D", "X", "Y", "children")

    def __init__(self, block: Block, kind, D=None, X=None, Y=None, children=None):
        self.block = block
        self.kind = kind
        self.D = D
        self.X = X
        self.Y = Y
        self.children = children

    @property
    def t(self):
        return self.block.t

    @property
    def s(self):
        return self.block.s

    @property
    def shape(self):
        return self.block.t.size, self.block.s.size

    @property
    def rank(self) -> int:
        return self.X.shape[1] if self.kind == RK else min(self.shape)

    def leaves(self):
        if self.kind == BRANCH:
            for c in self.children:
                yield from c.leaves()
        else:
            yield self


# -- construction -------------------------------------------------------------

def zeros(block: Block) -> HNode:
    if block.children:
        return HNode(block, BRANCH, children=[zeros(b) for b in block.children])
    m, n = block.shape
    if block.admissible:
        return HNode(block, RK, X=np.zeros((m, 0)), Y=np.zeros((n, 0)))
    return HNode(block, DENSE, D=np.zeros((m, n)))


def _set_rk(node: HNode, X, Y):
    """Store X @ Y.T in an admissible leaf, falling back to dense for high rank."""
    m, n = node.shape
    if 2 * X.shape[1] > min(m, n):
        node.kind, node.D, node.X, node.Y = DENSE, X @ Y.T, None, None
    else:
        node.kind, node.D, node.X, node.Y = RK, None, X, Y


def _sparse_block_rk(sub: sp.csr_matrix):
    """Exact factorization of a sparse block through its nonzero rows or columns."""
    sub = sub.tocsr()
    sub.eliminate_zeros()
    m, n = sub.shape
    rows = np.flatnonzero(np.diff(sub.indptr))
    cols = np.unique(sub.indices)
    if rows.size <= cols.size:
        X = np.zeros((m, rows.size))
        X[rows, np.arange(rows.size)] = 1.0
        Y = sub[rows].toarray().T
    else:
        Y = np.zeros((n, cols.size))
        Y[cols, np.arange(cols.size)] = 1.0
        X = sub[:, cols].toarray()
    return X, Y


def _from_block(block: Block, S: sp.csr_matrix) -> HNode:
    if block.children:
        return HNode(block, BRANCH, children=[_from_block(b, S) for b in block.children])
    t, s = block.t, block.s
    sub = S[t.lo:t.hi, s.lo:s.hi]
    node = HNode(block, DENSE)
    if block.admissible:
        _set_rk(node, *_sparse_block_rk(sub))
    else:
        node.D = sub.toarray()
    return node


# -- products with dense matrices ---------------------------------------------

def mm(node: HNode, V: np.ndarray) -> np.ndarray:
    """``node @ V`` for V of shape (|s|, p)."""
    if node.kind == DENSE:
        return node.D @ V
    if node.kind == RK:
        if node.X.shape[1] == 0:
            return np.zeros((node.X.shape[0], V.shape[1]))
        return node.X @ (node.Y.T @ V)
    t, s = node.t, node.s
    out = np.zeros((t.size, V.shape[1]))
    for c in node.children:
        r0, r1 = c.t.lo - t.lo, c.t.hi - t.lo
        c0, c1 = c.s.lo - s.lo, c.s.hi - s.lo
        out[r0:r1] += mm(c, V[c0:c1])
    return out


def mmT(node: HNode, V: np.ndarray) -> np.ndarray:
    """``node.T @ V`` for V of shape (|t|, p)."""
    if node.kind == DENSE:
        return node.D.T @ V
    if node.kind == RK:
        if node.X.shape[1] == 0:
            return np.zeros((node.Y.shape[0], V.shape[1]))
        return node.Y @ (node.X.T @ V)
    t, s = node.t, node.s
    out = np.zeros((s.size, V.shape[1]))
    for c in node.children:
        r0, r1 = c.t.lo - t.lo, c.t.hi - t.lo
        c0, c1 = c.s.lo - s.lo, c.s.hi - s.lo
        out[c0:c1] += mmT(c, V[r0:r1])
    return out


def densify_node(node: HNode) -> np.ndarray:
    if node.kind == DENSE:
        return node.D.copy()
    if node.kind == RK:
        return node.X @ node.Y.T
    t, s = node.t, node.s
    out = np.zeros(node.shape)
    for c in node.children:
        out[c.t.lo - t.lo:c.t.hi - t.lo, c.s.lo - s.lo:c.s.hi - s.lo] = densify_node(c)
    return out


def copy_node(node: HNode) -> HNode:
    if node.kind == BRANCH:
        return HNode(node.block, BRANCH, children=[copy_node(c) for c in node.children])
    if node.kind == RK:
        return HNode(node.block, RK, X=node.X.copy(), Y=node.Y.copy())
    return HNode(node.block, DENSE, D=node.D.copy())


def scale_node(node: HNode, alpha: float):
    for leaf in node.leaves():
        if leaf.kind == DENSE:
            leaf.D *= alpha
        else:
            leaf.X *= alpha


def transpose_node(node: HNode, part: BlockPartition) -> HNode:
    """Transposed view (factors shared, not copied)."""
    block = part.block(node.s, node.t)
    if node.kind == DENSE:
        return HNode(block, DENSE, D=node.D.T)
    if node.kind == RK:
        return HNode(block, RK, X=node.Y, Y=node.X)
    if block.children:
        # children of (s, t) are (s_i, t_j) = transpose of (t_j, s_i)
        ch = node.children
        order = [0, 2, 1, 3]
        return HNode(block, BRANCH, children=[transpose_node(ch[i], part) for i in order])
    return HNode(block, DENSE, D=densify_node(node).T)


# -- truncated accumulation ---------------------------------------------------

def add_rk(node: HNode, X, Y, acc: Accuracy):
    """node += X @ Y.T with recompression in low-rank leaves."""
    if X.shape[1] == 0:
        return
    if node.kind == DENSE:
        node.D += X @ Y.T
    elif node.kind == RK:
        _set_rk(node, *truncate_factors(np.concatenate((node.X, X), axis=1),
                                        np.concatenate((node.Y, Y), axis=1),
                                        acc.eps, acc.k_max))
    else:
        t, s = node.t, node.s
        for c in node.children:
            add_rk(c, X[c.t.lo - t.lo:c.t.hi - t.lo], Y[c.s.lo - s.lo:c.s.hi - s.lo], acc)


def add_dense(node: HNode, D, acc: Accuracy):
    """node += D (D a dense array of the node's shape)."""
    if node.kind == DENSE:
        node.D += D
    elif node.kind == RK:
        R = compress_dense(node.X @ node.Y.T + D, acc.eps, acc.k_max)
        _set_rk(node, R.X, R.Y)
    else:
        t, s = node.t, node.s
        for c in node.children:
            add_dense(c, D[c.t.lo - t.lo:c.t.hi - t.lo, c.s.lo - s.lo:c.s.hi - s.lo], acc)


def to_rk(node: HNode, acc: Accuracy):
    """Low-rank factors (X, Y) approximating the node at accuracy ``acc``."""
    if node.kind == RK:
        return node.X, node.Y
    if node.kind == DENSE:
        R = compress_dense(node.D, acc.eps, acc.k_max)
        return R.X, R.Y
    t, s = node.t, node.s
    Xs, Ys = [], []
    for c in node.children:
        cx, cy = to_rk(c, acc)
        X = np.zeros((t.size, cx.shape[1]))
        Y = np.zeros((s.size, cy.shape[1]))
        X[c.t.lo - t.lo:c.t.hi - t.lo] = cx
        Y[c.s.lo - s.lo:c.s.hi - s.lo] = cy
        Xs.append(X)
        Ys.append(Y)
    return truncate_factors(np.concatenate(Xs, axis=1), np.concatenate(Ys, axis=1),
                            acc.eps, acc.k_max)


def add_node(node: HNode, other: HNode, acc: Accuracy, alpha=1.0):
    """node += alpha * other for blocks over the same (t, s)."""
    if other.kind == RK:
        add_rk(node, alpha * other.X, other.Y, acc)
    elif other.kind == DENSE:
        add_dense(node, alpha * other.D, acc)
    elif node.kind == BRANCH:
        for c, o in zip(node.children, other.children):
            add_node(c, o, acc, alpha)
    elif node.kind == DENSE:
        node.D += alpha * densify_node(other)
    else:
        X, Y = to_rk(other, acc)
        add_rk(node, alpha * X, Y, acc)


# -- multiplication -----------------------------------------------------------

def _leaf_product(A: HNode, B: HNode):
    """Factors (X, Y) with A @ B = X @ Y.T when A or B is a leaf."""
    if A.kind == RK:
        return A.X, mmT(B, A.Y)
    if B.kind == RK:
        return mm(A, B.X), B.Y
    m, k, n = A.shape[0], A.shape[1], B.shape[1]
    if A.kind == DENSE and B.kind == DENSE:
        if m <= n:
            return np.eye(m), B.D.T @ A.D.T
        return A.D @ B.D, np.eye(n)
    if A.kind == DENSE:
        if m <= k:
            return np.eye(m), mmT(B, A.D.T)
        return A.D, mmT(B, np.eye(k))
    if n <= k:
        return mm(A, B.D), np.eye(n)
    return mm(A, np.eye(k)), B.D.T


def muladd(C: HNode, A: HNode, B: HNode, acc: Accuracy, part: BlockPartition, alpha=1.0):
    """C += alpha * A @ B, recompressing at ``acc``."""
    if A.kind != BRANCH or B.kind != BRANCH:
        X, Y = _leaf_product(A, B)
        if X.shape[1] == 0:
            return
        if C.kind == DENSE:
            C.D += alpha * (X @ Y.T)
        elif X.shape[1] > min(C.shape) and C.kind == BRANCH:
            add_dense(C, alpha * (X @ Y.T), acc)
        else:
            add_rk(C, alpha * X, Y, acc)
        return
    if C.kind == BRANCH:
        a, b, c = A.children, B.children, C.children
        for i in range(2):
            for j in range(2):
                for k in range(2):
                    muladd(c[2 * i + j], a[2 * i + k], b[2 * k + j], acc, part, alpha)
        return
    m, n = C.shape
    if C.kind == DENSE:
        if n <= m:
            C.D += alpha * mm(A, mm(B, np.eye(n)))
        else:
            C.D += alpha * mmT(B, mmT(A, np.eye(m))).T
        return
    # low-rank target, finer factors: accumulate in scratch structure, then agglomerate
    tmp = HNode(C.block, BRANCH, children=[
        zeros(part.block(ti, sj)) for ti in C.t.children for sj in C.s.children])
    muladd(tmp, A, B, acc, part, 1.0)
    X, Y = to_rk(tmp, acc)
    add_rk(C, alpha * X, Y, acc)


def multiply_nodes(A: HNode, B: HNode, acc: Accuracy, part: BlockPartition) -> HNode:
    C = zeros(part.block(A.t, B.s))
    muladd(C, A, B, acc, part)
    return C


# -- inversion ----------------------------------------------------------------

def _check_pivot(D, block):
    cond = np.linalg.cond(D) if D.size else 1.0
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise FactorizationError(
            f"near-singular pivot block {block.id} (t={block.t.lo}:{block.t.hi}), "
            f"condition {cond:.3e}", block.id, cond)


def symmetrize_node(node: HNode, part: BlockPartition):
    """Make a diagonal block exactly symmetric: mirror the upper triangle of blocks."""
    if node.kind == DENSE:
        node.D[...] = 0.5 * (node.D + node.D.T)
    elif node.kind == BRANCH:
        symmetrize_node(node.children[0], part)
        symmetrize_node(node.children[3], part)
        node.children[2] = copy_node(transpose_node(node.children[1], part))


def invert_node(A: HNode, acc: Accuracy, part: BlockPartition, symmetric=False) -> HNode:
    """Approximate inverse of a diagonal block by Schur-complement recursion.

    With ``symmetric`` the lower off-diagonal blocks are taken as transposes
    of the upper ones, so the result is symmetric to round-off.
    """
    if A.kind == DENSE:
        _check_pivot(A.D, A.block)
        X = np.linalg.inv(A.D)
        if symmetric:
            X = 0.5 * (X + X.T)
        return HNode(A.block, DENSE, D=X)
    if A.kind != BRANCH:
        raise FactorizationError(f"diagonal block {A.block.id} is low-rank", A.block.id)
    a11, a12, a21, a22 = A.children
    X11 = invert_node(a11, acc, part, symmetric)
    T12 = multiply_nodes(X11, a12, acc, part)            # A11^-1 A12
    if symmetric:
        U21 = transpose_node(T12, part)
    else:
        U21 = multiply_nodes(a21, X11, acc, part)        # A21 A11^-1
    S = copy_node(a22)
    muladd(S, a21, T12, acc, part, -1.0)
    X22 = invert_node(S, acc, part, symmetric)
    X12 = zeros(a12.block)
    muladd(X12, T12, X22, acc, part, -1.0)
    if symmetric:
        X21 = copy_node(transpose_node(X12, part))
    else:
        X21 = zeros(a21.block)
        muladd(X21, X22, U21, acc, part, -1.0)
    muladd(X11, X12, U21, acc, part, -1.0)
    if symmetric:
        symmetrize_node(X11, part)
    return HNode(A.block, BRANCH, children=[X11, X12, X21, X22])


# -- LU -----------------------------------------------------------------------

def _dense_lu(D, block, symmetric=False):
    """Unpivoted LU (L unit lower); LDL^T-based when ``symmetric``."""
    _check_pivot(D, block)
    n = D.shape[0]
    if symmetric:
        try:
            C = np.linalg.cholesky(D)
        except np.linalg.LinAlgError:
            symmetric = False
        else:
            d = np.diag(C)
            L = C / d
            return L, (d * d)[:, None] * L.T
    A = D.copy()
    for k in range(n - 1):
        piv = A[k, k]
        if piv == 0.0:
            raise FactorizationError(f"zero pivot in block {block.id}", block.id)
        A[k + 1:, k] /= piv
        A[k + 1:, k + 1:] -= np.outer(A[k + 1:, k], A[k, k + 1:])
    return np.tril(A, -1) + np.eye(n), np.triu(A)


def solve_lower_vec(L: HNode, V, unit=True):
    """Solve L X = V (L lower triangular H-block) for dense V."""
    if L.kind == DENSE:
        return sla.solve_triangular(L.D, V, lower=True, unit_diagonal=unit)
    l11, _, l21, l22 = L.children
    n1 = l11.t.size
    X1 = solve_lower_vec(l11, V[:n1], unit)
    X2 = solve_lower_vec(l22, V[n1:] - mm(l21, X1), unit)
    return np.vstack([X1, X2])


def solve_upper_vec(U: HNode, V, unit=False):
    """Solve U X = V (U upper triangular H-block) for dense V."""
    if U.kind == DENSE:
        return sla.solve_triangular(U.D, V, lower=False, unit_diagonal=unit)
    u11, u12, _, u22 = U.children
    n1 = u11.t.size
    X2 = solve_upper_vec(u22, V[n1:], unit)
    X1 = solve_upper_vec(u11, V[:n1] - mm(u12, X2), unit)
    return np.vstack([X1, X2])


def solve_lower(L: HNode, B: HNode, acc: Accuracy, part: BlockPartition, unit=True) -> HNode:
    """H-matrix X with L X = B; B is left untouched."""
    if B.kind == RK:
        return HNode(B.block, RK, X=solve_lower_vec(L, B.X, unit), Y=B.Y.copy())
    if B.kind == DENSE:
        return HNode(B.block, DENSE, D=solve_lower_vec(L, B.D, unit))
    if L.kind != BRANCH:
        return HNode(B.block, DENSE, D=solve_lower_vec(L, densify_node(B), unit))
    l11, _, l21, l22 = L.children
    b = B.children
    x0 = [solve_lower(l11, b[j], acc, part, unit) for j in range(2)]
    x1 = []
    for j in range(2):
        rhs = copy_node(b[2 + j])
        muladd(rhs, l21, x0[j], acc, part, -1.0)
        x1.append(solve_lower(l22, rhs, acc, part, unit))
    return HNode(B.block, BRANCH, children=[x0[0], x0[1], x1[0], x1[1]])


def solve_upper_right(U: HNode, B: HNode, acc: Accuracy, part: BlockPartition) -> HNode:
    """H-matrix X with X U = B (U upper, non-unit diagonal)."""
    Ut = transpose_node(U, part)
    Bt = transpose_node(B, part)
    Xt = solve_lower(Ut, Bt, acc, part, unit=False)
    return transpose_node(Xt, part)


def lu_node(A: HNode, acc: Accuracy, part: BlockPartition, symmetric=False):
    if A.kind == DENSE:
        L, U = _dense_lu(A.D, A.block, symmetric)
        return HNode(A.block, DENSE, D=L), HNode(A.block, DENSE, D=U)
    if A.kind != BRANCH:
        raise FactorizationError(f"diagonal block {A.block.id} is low-rank", A.block.id)
    a11, a12, a21, a22 = A.children
    L11, U11 = lu_node(a11, acc, part, symmetric)
    U12 = solve_lower(L11, a12, acc, part, unit=True)
    L21 = solve_upper_right(U11, a21, acc, part)
    S = copy_node(a22)
    muladd(S, L21, U12, acc, part, -1.0)
    L22, U22 = lu_node(S, acc, part, symmetric)
    L = HNode(A.block, BRANCH, children=[L11, zeros(a12.block), L21, L22])
    U = HNode(A.block, BRANCH, children=[U11, U12, zeros(a21.block), U22])
    return L, U


# -- public wrapper -----------------------------------------------------------

class HMatrix:
    """Square or rectangular H-matrix in the original index ordering."""

    def __init__(self, root: HNode, partition: BlockPartition, accuracy: Accuracy | None = None):
        self.root = root
        self.partition = partition
        self.accuracy = accuracy
        self.row_perm = partition.row_tree.perm
        self.col_perm = partition.col_tree.perm

    @property
    def shape(self):
        return self.root.shape

    @property
    def n(self) -> int:
        return self.shape[0]

    def leaves(self):
        return list(self.root.leaves())

    def matvec(self, x):
        x = np.asarray(x, float)
        if x.shape[0] != self.shape[1]:
            raise ValueError(f"size mismatch: H is {self.shape}, x has {x.shape[0]} rows")
        vec = x.ndim == 1
        xp = x[self.col_perm].reshape(self.shape[1], -1)
        yp = mm(self.root, xp)
        y = np.empty_like(yp)
        y[self.row_perm] = yp
        return y[:, 0] if vec else y

    __matmul__ = matvec

    def rmatvec(self, x):
        x = np.asarray(x, float)
        vec = x.ndim == 1
        yp = mmT(self.root, x[self.row_perm].reshape(self.shape[0], -1))
        y = np.empty_like(yp)
        y[self.col_perm] = yp
        return y[:, 0] if vec else y

    def densify(self) -> np.ndarray:
        Dp = densify_node(self.root)
        out = np.empty_like(Dp)
        out[np.ix_(self.row_perm, self.col_perm)] = Dp
        return out

    def copy(self) -> "HMatrix":
        return HMatrix(copy_node(self.root), self.partition, self.accuracy)

    def storage_bytes(self) -> int:
        return storage_bytes(self)

    def storage_kb_per_dof(self) -> float:
        return storage_kb_per_dof(self)

    def max_rank(self) -> int:
        ranks = [leaf.X.shape[1] for leaf in self.root.leaves() if leaf.kind == RK]
        return max(ranks, default=0)

    def dump_structure(self, path) -> Path:
        """CSV ``block_id,type,rank,rows,cols,bytes`` with ``rows``/``cols`` as ``lo:hi``."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["block_id", "type", "rank", "rows", "cols", "bytes"])
            for i, leaf in enumerate(self.root.leaves()):
                w.writerow([i, leaf.kind, leaf.rank, f"{leaf.t.lo}:{leaf.t.hi}",
                            f"{leaf.s.lo}:{leaf.s.hi}", _leaf_bytes(leaf)])
        return path


def _leaf_bytes(leaf: HNode) -> int:
    if leaf.kind == DENSE:
        return 8 * leaf.D.size
    return 8 * leaf.X.shape[1] * (leaf.X.shape[0] + leaf.Y.shape[0])


def storage_bytes(H: HMatrix) -> int:
    """Payload bytes: 8 per stored dense entry or factor entry; tree overhead excluded."""
    return sum(_leaf_bytes(leaf) for leaf in H.root.leaves())


def storage_kb_per_dof(H: HMatrix) -> float:
    return storage_bytes(H) / 1024.0 / H.n


def from_sparse(S, partition: BlockPartition) -> HMatrix:
    """Exact H-representation of a sparse matrix (original ordering)."""
    S = sp.csr_matrix(S)
    if S.shape != (partition.row_tree.n, partition.col_tree.n):
        raise ConfigError(f"matrix {S.shape} does not match partition "
                          f"({partition.row_tree.n}, {partition.col_tree.n})")
    Sp = S[partition.row_tree.perm][:, partition.col_tree.perm].tocsr()
    return HMatrix(_from_block(partition.root, Sp), partition)


def from_dense(A, partition: BlockPartition, eps=None) -> HMatrix:
    """H-approximation of a dense matrix; admissible blocks compressed at ``eps``.

    ``eps=None`` keeps admissible blocks exact (full-rank factors).
    """
    A = np.asarray(A, float)
    Ap = A[np.ix_(partition.row_tree.perm, partition.col_tree.perm)]
    acc = Accuracy(eps) if eps is not None else None

    def build(block):
        if block.children:
            return HNode(block, BRANCH, children=[build(b) for b in block.children])
        t, s = block.t, block.s
        sub = Ap[t.lo:t.hi, s.lo:s.hi]
        node = HNode(block, DENSE, D=sub.copy())
        if block.admissible:
            R = compress_dense(sub, acc.eps if acc else 1e-16)
            _set_rk(node, R.X, R.Y)
        return node

    return HMatrix(build(partition.root), partition, acc)


def _same_structure(H1: HMatrix, H2: HMatrix):
    if H1.partition is not H2.partition:
        raise ConfigError("H-matrices are built over different partitions")


def add(H1: HMatrix, H2: HMatrix, eps_rel, alpha=1.0) -> HMatrix:
    _same_structure(H1, H2)
    acc = Accuracy.of(eps_rel)
    out = H1.copy()
    add_node(out.root, H2.root, acc, alpha)
    out.accuracy = acc
    return out


def multiply(H1: HMatrix, H2: HMatrix, eps_rel) -> HMatrix:
    """Truncated product H1 @ H2 on the common partition."""
    _same_structure(H1, H2)
    if H1.shape[1] != H2.shape[0]:
        raise ConfigError(f"cannot multiply {H1.shape} by {H2.shape}")
    acc = Accuracy.of(eps_rel)
    part = H1.partition
    return HMatrix(multiply_nodes(H1.root, H2.root, acc, part), part, acc)


def hinvert(H: HMatrix, eps_rel, symmetric=False) -> HMatrix:
    """Approximate inverse by recursive block (Schur-complement) inversion.

    ``symmetric`` asserts a symmetric input on a symmetric partition and
    returns an exactly symmetric inverse at roughly half the cost.
    """
    if H.shape[0] != H.shape[1]:
        raise ConfigError("inverse of a non-square H-matrix")
    acc = Accuracy.of(eps_rel)
    part = H.partition
    if symmetric and part.row_tree is not part.col_tree:
        raise ConfigError("symmetric inverse needs a symmetric partition")
    return HMatrix(invert_node(H.root, acc, part, symmetric), part, acc)


@dataclass
class HLU:
    L: HMatrix
    U: HMatrix

    def solve(self, b):
        b = np.asarray(b, float)
        vec = b.ndim == 1
        perm = self.L.row_perm
        y = solve_lower_vec(self.L.root, b[perm].reshape(b.shape[0], -1), unit=True)
        x = solve_upper_vec(self.U.root, y, unit=False)
        out = np.empty_like(x)
        out[perm] = x
        return out[:, 0] if vec else out

    def storage_bytes(self) -> int:
        return storage_bytes(self.L) + storage_bytes(self.U)

    def storage_kb_per_dof(self) -> float:
        return self.storage_bytes() / 1024.0 / self.L.n

    def max_rank(self) -> int:
        return max(self.L.max_rank(), self.U.max_rank())


def hlu(H: HMatrix, eps_rel, symmetric=False) -> HLU:
    """Block LU without pivoting along the cluster tree; L has unit diagonal."""
    if H.shape[0] != H.shape[1]:
        raise ConfigError("LU of a non-square H-matrix")
    acc = Accuracy.of(eps_rel)
    part = H.partition
    L, U = lu_node(H.root, acc, part, symmetric)
    return HLU(HMatrix(L, part, acc), HMatrix(U, part, acc))


def identity(partition: BlockPartition) -> HMatrix:
    root = zeros(partition.root)
    for leaf in root.leaves():
        if leaf.kind == DENSE and leaf.t is leaf.s:
            leaf.D[...] = np.eye(leaf.t.size)
    return HMatrix(root, partition)
