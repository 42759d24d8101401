"""Symmetric-definite generalized eigenproblems and layer-to-layer connections.

A layer decomposition solves the finite pencil (R D R^T + X) v = lambda R R^T v
of a Sturm-Liouville operator in the Cholesky-transformed basis and returns
the connection columns U = R^T v of the source family in the target family.
"""
import logging
import os
import time
from typing import List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy.linalg import LinAlgError, cholesky, solve_triangular

from banded_operators import (
    BandedSymmetric,
    BandedUpper,
    banded_cholesky,
    condition_estimate,
    jac_D,
    jac_mult_ops,
    jac_RSRinv,
    sh_cholesky_R,
    sh_D,
)
from connection_givens import compose_steps, jacobi_chain_sequences, jacobi_step_chain, sh_chain_sequences
from dc_eigensolver import (
    DEFAULT_LEAF_SIZE,
    Arrowhead,
    DCLeaf,
    DCNode,
    DCTree,
    SymTridiagonal,
    conquer,
    divide,
    edge_rows,
    jacobi_eigh,
)
from errors import BufferInsufficientError, DomainError, NotPositiveDefiniteError, StructureError
from kernel_sums import CauchyKernel, get_kernel
from models import GeometryKind, JacobiParams

logger = logging.getLogger(__name__)

HPT_ORACLE_CAP = int(os.getenv("HPT_ORACLE_CAP", "64"))
HPT_VALIDATION_THRESHOLD = float(os.getenv("HPT_VALIDATION_THRESHOLD", "1e-8"))

SHUFFLE_TOLERANCE = 1e-12
MIN_BUFFER = 16

LayerIndex = Union[int, JacobiParams]


class SymDefPencil(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    A: BandedSymmetric
    B: BandedSymmetric

    @model_validator(mode="after")
    def _check_pencil(self) -> "SymDefPencil":
        if self.A.size != self.B.size:
            raise ValueError(f"pencil sizes differ: {self.A.size} != {self.B.size}")
        if np.any(self.B.diagonal(0) <= 0):
            raise ValueError("B must have a positive diagonal")
        return self

    @property
    def size(self) -> int:
        return self.A.size

    @property
    def half_bandwidths(self) -> Tuple[int, int]:
        return self.A.half_bandwidth, self.B.half_bandwidth


class GeneralizedDecomposition(BaseModel):
    """Eigenvalues ascending; V is held as a D&C tree or as a dense matrix.

    A tree solves the equilibrated pencil; `scaling` maps its vectors back.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    eigenvalues: np.ndarray
    tree: Optional[DCTree] = None
    vectors: Optional[np.ndarray] = None
    scaling: Optional[np.ndarray] = None
    b_residual: float = 0.0

    @property
    def size(self) -> int:
        return self.eigenvalues.size

    def _scaled(self, x: np.ndarray) -> np.ndarray:
        if self.scaling is None:
            return x
        return x * self.scaling.reshape((-1,) + (1,) * (x.ndim - 1))

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.tree is None:
            return self.vectors @ x
        return self._scaled(self.tree.apply(x))

    def apply_transpose(self, y: np.ndarray) -> np.ndarray:
        if self.tree is None:
            return self.vectors.T @ y
        return self.tree.apply_transpose(self._scaled(np.asarray(y, dtype=float)))

    def dense(self) -> np.ndarray:
        if self.tree is None:
            return self.vectors
        return self._scaled(self.tree.dense())


class LayerDecomposition(BaseModel):
    """Orthonormal connection columns from a source layer to a target layer."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    kind: str
    target: LayerIndex
    source: LayerIndex
    section: int
    buffer: int
    shift: int
    eigenvalues: np.ndarray
    U: np.ndarray
    residual: float
    b_residual: float = 0.0
    condition: float = 0.0
    solver: Literal["shuffle-dc", "dense"] = "dense"
    seconds: float = 0.0

    @property
    def rows(self) -> int:
        return self.U.shape[0]

    @property
    def storage_bytes(self) -> int:
        return int(self.U.nbytes + self.eigenvalues.nbytes)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.U @ x

    def apply_transpose(self, y: np.ndarray) -> np.ndarray:
        return self.U.T @ y


# ── parity splitting ──


def _shuffle_permutation(size: int) -> np.ndarray:
    return np.concatenate([np.arange(0, size, 2), np.arange(1, size, 2)])


def unshuffle(x: np.ndarray, permutation: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    out[permutation] = x
    return out


def perfect_shuffle(pencil: SymDefPencil) -> Tuple[SymDefPencil, SymDefPencil, np.ndarray]:
    """Split a pentadiagonal pencil with vanishing odd bands into even and odd tridiagonal pencils."""
    halves = []
    for M in (pencil.A, pencil.B):
        if M.half_bandwidth > 2:
            raise StructureError(f"perfect shuffle needs half bandwidth <= 2, got {M.half_bandwidth}")
        scale = max(float(np.max(np.abs(M.diagonals), initial=0.0)), np.finfo(float).tiny)
        odd = np.max(np.abs(M.diagonal(1)), initial=0.0)
        if odd > SHUFFLE_TOLERANCE * scale:
            raise StructureError(f"first superdiagonal is not zero ({odd:.3e}); the pencil has no even/odd splitting")
        second = M.diagonal(2)
        main = M.diagonal(0)
        halves.append((
            BandedSymmetric.from_diagonals(main[0::2], second[0::2], size=main[0::2].size),
            BandedSymmetric.from_diagonals(main[1::2], second[1::2], size=main[1::2].size),
        ))
    (a_even, a_odd), (b_even, b_odd) = halves
    return (
        SymDefPencil(A=a_even, B=b_even),
        SymDefPencil(A=a_odd, B=b_odd),
        _shuffle_permutation(pencil.size),
    )


def _tridiagonal(M: BandedSymmetric) -> SymTridiagonal:
    return SymTridiagonal.from_arrays(M.diagonal(0), M.diagonal(1))


# ── solvers ──


def dense_reference_gevp(A: np.ndarray, B: np.ndarray) -> GeneralizedDecomposition:
    """Cholesky of B, two-sided reduction, cyclic Jacobi, back substitution."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape or A.shape[0] != A.shape[1]:
        raise DomainError(f"pencil matrices must be square and equal in shape, got {A.shape} and {B.shape}")
    try:
        L = cholesky(B, lower=True)
    except LinAlgError as exc:
        raise NotPositiveDefiniteError(f"B is not positive definite: {exc}", node="dense") from None
    half = solve_triangular(L, A, lower=True)
    C = solve_triangular(L, half.T, lower=True)
    C = 0.5 * (C + C.T)
    values, Z = jacobi_eigh(C)
    V = solve_triangular(L.T, Z, lower=False)
    residual = float(np.max(np.abs(V.T @ B @ V - np.eye(V.shape[1])), initial=0.0))
    return GeneralizedDecomposition(eigenvalues=values, vectors=V, b_residual=residual)


def sd_tridiag_gevp(
    T: SymTridiagonal,
    S: SymTridiagonal,
    leaf_size: int = DEFAULT_LEAF_SIZE,
    kernel: Optional[CauchyKernel] = None,
) -> GeneralizedDecomposition:
    """Divide and conquer for a tridiagonal pencil (T, S) with S positive definite.

    The pencil is first equilibrated to unit S-diagonal. Both matrices are
    split at the same row; every merge reduces the arrowhead pencil to a
    regular arrowhead with the arrowhead Cholesky factor of the S-part and
    conquers it.
    """
    if T.size != S.size:
        raise DomainError(f"pencil sizes differ: {T.size} != {S.size}")
    if np.any(S.diagonal <= 0):
        raise NotPositiveDefiniteError("S has a non-positive diagonal entry", node="diagonal")
    kernel = kernel or get_kernel()
    leaf_size = max(leaf_size, 2)
    original_T, original_S = T, S
    scaling = 1.0 / np.sqrt(S.diagonal)
    pair = scaling[:-1] * scaling[1:]
    T = SymTridiagonal(diagonal=T.diagonal * scaling**2, offdiagonal=T.offdiagonal * pair)
    S = SymTridiagonal(diagonal=np.ones(S.size), offdiagonal=S.offdiagonal * pair)

    def build(t: SymTridiagonal, s: SymTridiagonal, level: int, offset: int):
        if t.size <= leaf_size:
            dec = dense_reference_gevp(t.to_dense(), s.to_dense())
            return DCLeaf(eigenvalues=dec.eigenvalues, vectors=dec.vectors)
        k = t.size // 2
        pt, ps = divide(t, k), divide(s, k)
        left = build(pt.first, ps.first, level + 1, offset)
        right = build(pt.second, ps.second, level + 1, offset + k + 1)
        _, last_left = edge_rows(left)
        first_right, _ = edge_rows(right)
        s_vec = np.concatenate([ps.coupling_first * last_left, ps.coupling_second * first_right])
        t_vec = np.concatenate([pt.coupling_first * last_left, pt.coupling_second * first_right])
        rho2 = ps.tip - float(s_vec @ s_vec)
        if not rho2 > 0:
            node = f"level {level}, rows {offset}..{offset + t.size - 1}"
            raise NotPositiveDefiniteError(f"arrowhead Cholesky lost positivity at {node}", node=node)
        rho = float(np.sqrt(rho2))
        lam = np.concatenate([left.eigenvalues, right.eigenvalues])
        arrow = Arrowhead(
            shaft=lam,
            spike=(t_vec - lam * s_vec) / rho,
            tip=(pt.tip - 2 * float(s_vec @ t_vec) + float(s_vec @ (lam * s_vec))) / rho2,
        )
        return DCNode(split=k, level=level, left=left, right=right, decomposition=conquer(arrow, kernel), coupling=s_vec, rho=rho)

    tree = DCTree(root=build(T, S, 0, 0))
    dec = GeneralizedDecomposition(eigenvalues=tree.eigenvalues, tree=tree, scaling=scaling)
    V = dec.dense()
    residual = float(np.max(np.abs(V.T @ original_S.to_dense() @ V - np.eye(original_T.size)), initial=0.0))
    return dec.model_copy(update={"b_residual": residual})


def solve_pencil(pencil: SymDefPencil, method: Literal["auto", "shuffle-dc", "dense"] = "auto") -> Tuple[np.ndarray, np.ndarray, float, str]:
    """Eigenvalues (ascending) and dense B-orthonormal eigenvectors of a banded pencil."""
    if method == "auto":
        odd = max(np.max(np.abs(M.diagonal(1)), initial=0.0) for M in (pencil.A, pencil.B))
        method = "shuffle-dc" if odd == 0.0 and max(pencil.half_bandwidths) <= 2 else "dense"
    if method == "dense":
        dec = dense_reference_gevp(pencil.A.to_dense(), pencil.B.to_dense())
        return dec.eigenvalues, dec.vectors, dec.b_residual, "dense"

    even, odd_pencil, perm = perfect_shuffle(pencil)
    values: List[np.ndarray] = []
    blocks: List[np.ndarray] = []
    residual = 0.0
    for part in (even, odd_pencil):
        if part.size == 0:
            continue
        dec = sd_tridiag_gevp(_tridiagonal(part.A), _tridiagonal(part.B))
        values.append(dec.eigenvalues)
        blocks.append(dec.dense())
        residual = max(residual, dec.b_residual)
    size = pencil.size
    V = np.zeros((size, size))
    col = 0
    row = 0
    for block in blocks:
        n = block.shape[0]
        V[perm[row : row + n], col : col + n] = block
        row += n
        col += n
    lam = np.concatenate(values)
    order = np.argsort(lam, kind="stable")
    return lam[order], V[:, order], residual, "shuffle-dc"


# ── layer decompositions ──


def default_buffer(N: int) -> int:
    return max(MIN_BUFFER, -(-N // 4))


def _sphere_pencil(m: int, mu: int, K: int) -> Tuple[SymDefPencil, BandedUpper, int, int]:
    if mu <= m or (mu - m) % 2:
        raise DomainError(f"sphere order step must be a positive even integer, got {m} <- {mu}")
    R = sh_cholesky_R(m, K)
    A = R.outer(sh_D(m, K).entries).shifted(float(mu * mu - m * m))
    return SymDefPencil(A=A, B=R.outer()), R, mu - m, (mu - m) // 2


def _jacobi_pencil(low: JacobiParams, high: JacobiParams, K: int, node: str) -> Tuple[SymDefPencil, BandedUpper, int, int]:
    steps = jacobi_step_chain(low, high)
    if not steps:
        raise DomainError(f"layer decomposition needs at least one parameter step, got {low} <- {high}")
    R = banded_cholesky(jac_mult_ops(low, K, "section").M, node=node)
    X = jac_RSRinv(low, high, K, "section", R=R)
    A = R.outer(jac_D(low, K).entries) + X
    alpha_steps = sum(1 for _, which in steps if which == "alpha_step")
    return SymDefPencil(A=A, B=R.outer()), R, len(steps), alpha_steps


def _select(values: np.ndarray, expected: np.ndarray) -> np.ndarray:
    return np.argmin(np.abs(values[:, None] - expected[None, :]), axis=0)


def _structural_fill(U: np.ndarray, shift: int, stride: int) -> float:
    rows, cols = U.shape
    l = np.arange(rows)[:, None]
    k = np.arange(cols)[None, :]
    allowed = l <= k + shift
    if stride == 2:
        allowed &= (k + shift - l) % 2 == 0
    return float(np.max(np.abs(np.where(allowed, 0.0, U)), initial=0.0))


class _Section(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    pencil: SymDefPencil
    R: BandedUpper
    shift: int
    flips: int
    expected: np.ndarray
    stride: int
    method: Literal["shuffle-dc", "dense"]


def _section(kind: GeometryKind, target: LayerIndex, source: LayerIndex, N: int, p: int) -> _Section:
    """Finite pencil of one layer pair, with the spectrum its kept columns must carry."""
    node = f"{kind.kind} {target} <- {source}"
    if kind.kind == "sphere":
        m, mu = int(target), int(source)
        pencil, R, shift, flips = _sphere_pencil(m, mu, N + (mu - m) + p)
        degrees = mu + np.arange(N, dtype=float)
        return _Section(pencil=pencil, R=R, shift=shift, flips=flips, expected=degrees * (degrees + 1), stride=2, method="shuffle-dc")
    if not isinstance(target, JacobiParams) or not isinstance(source, JacobiParams):
        raise DomainError(f"{kind.kind} layers are indexed by Jacobi parameters")
    steps = len(jacobi_step_chain(target, source))
    pencil, R, shift, flips = _jacobi_pencil(target, source, N + steps + p, node)
    k = np.arange(N, dtype=float)
    symmetric = target.alpha == target.beta and source.alpha == source.beta
    return _Section(
        pencil=pencil,
        R=R,
        shift=shift,
        flips=flips,
        expected=k * (k + source.alpha + source.beta + 1),
        stride=1,
        method="shuffle-dc" if symmetric else "dense",
    )


def _spectral_error(values: np.ndarray, expected: np.ndarray) -> float:
    return float(np.max(np.abs(values - expected) / np.maximum(np.abs(expected), 1.0), initial=0.0))


def layer_decomposition(
    kind: GeometryKind,
    target: LayerIndex,
    source: LayerIndex,
    N: int,
    p: Optional[int] = None,
    method: Literal["auto", "shuffle-dc", "dense"] = "auto",
) -> LayerDecomposition:
    """Connection from N source functions to the N + shift target functions they expand into.

    Sphere layers are indexed by order (target m, source mu); disk and
    triangle layers by their one-dimensional Jacobi parameters.
    """
    if N < 1:
        raise DomainError(f"section size must be >= 1, got {N}")
    started = time.perf_counter()
    p = default_buffer(N) if p is None else p
    if p < 0:
        raise DomainError(f"buffer must be non-negative, got {p}")
    node = f"{kind.kind} {target} <- {source}"
    section = _section(kind, target, source, N, p)
    shift, expected = section.shift, section.expected
    method = section.method if method == "auto" else method

    values, V, b_residual, used = solve_pencil(section.pencil, method)
    picks = _select(values, expected)
    if np.unique(picks).size != picks.size:
        raise BufferInsufficientError(
            f"{node}: the section spectrum does not resolve every source degree; increase the buffer beyond p={p}",
            target=target, source=source, section=N, buffer=p,
        )
    spectral = _spectral_error(values[picks], expected)
    U_full = section.R.to_dense().T @ V[:, picks]

    # trailing structural entry of column k sits in row k + shift
    trailing = U_full[np.arange(N) + shift, np.arange(N)]
    wanted = -1.0 if section.flips % 2 else 1.0
    U_full = U_full * np.where(np.sign(trailing) == wanted, 1.0, -1.0)

    kept = N + shift
    U = U_full[:kept].copy()
    trimmed = float(np.max(np.abs(U_full[kept:]), initial=0.0))
    fill = _structural_fill(U, shift, section.stride)
    ortho = float(np.max(np.abs(U.T @ U - np.eye(N))))
    checks = {"spectrum": spectral, "trimmed": trimmed, "fill": fill, "orthogonality": ortho}
    if N <= HPT_ORACLE_CAP:
        if kind.kind == "sphere":
            oracle = compose_steps(sh_chain_sequences(int(target), int(source), N))
        else:
            oracle = compose_steps(jacobi_chain_sequences(target, source, N))
        checks["oracle"] = float(np.max(np.abs(U - oracle)))
    residual = max(checks.values())
    logger.debug("layer %s: N=%d p=%d solver=%s checks=%s", node, N, p, used, checks)
    if residual > HPT_VALIDATION_THRESHOLD:
        worst = max(checks, key=checks.get)
        raise BufferInsufficientError(
            f"{node}: validation residual {residual:.3e} ({worst}) exceeds {HPT_VALIDATION_THRESHOLD:.1e} "
            f"with N={N}, p={p}; retry with a larger buffer",
            target=target, source=source, section=N, buffer=p,
        )
    return LayerDecomposition(
        kind=kind.kind,
        target=target,
        source=source,
        section=N,
        buffer=p,
        shift=shift,
        eigenvalues=values[picks],
        U=U,
        residual=residual,
        b_residual=b_residual,
        condition=condition_estimate(section.R),
        solver=used,
        seconds=time.perf_counter() - started,
    )


def layer_residual(kind: GeometryKind, dec: LayerDecomposition) -> Tuple[float, float]:
    """Eigen-equation residual and spectrum error of a stored layer, recomputed from its pencil.

    The kept columns are pulled back through R^T into the section and
    checked against A v = lambda B v with the stored eigenvalues, which in
    turn are compared with the analytic spectrum of the source layer.
    """
    section = _section(kind, dec.target, dec.source, dec.section, dec.buffer)
    K = section.pencil.size
    if dec.U.shape != (dec.section + section.shift, dec.section) or dec.eigenvalues.shape != (dec.section,):
        raise StructureError(f"{kind.kind} {dec.target} <- {dec.source}: stored shapes do not match the section")
    U = np.zeros((K, dec.section))
    U[: dec.rows] = dec.U
    V = solve_triangular(section.R.to_dense(), U, trans="T", lower=False)
    BV = section.pencil.B.to_dense() @ V
    gap = section.pencil.A.to_dense() @ V - BV * dec.eigenvalues
    scale = max(float(np.max(np.abs(dec.eigenvalues), initial=0.0)), 1.0) * max(float(np.max(np.abs(BV), initial=0.0)), np.finfo(float).tiny)
    return float(np.max(np.abs(gap), initial=0.0)) / scale, _spectral_error(dec.eigenvalues, section.expected)
