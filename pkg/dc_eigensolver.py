"""Divide-and-conquer eigensolver for symmetric tridiagonal matrices.

Each merge forms a symmetric arrowhead matrix, deflates it, solves the secular
equation with safeguarded rational fits, rebuilds a nearby arrowhead whose
eigenvalues are exactly the computed roots, and keeps its eigenvectors in the
structured (shaft, spike) form that the Cauchy kernel applies.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import Future, ThreadPoolExecutor
from typing import List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from errors import DomainError, InterlacingError
from kernel_sums import CauchyKernel, CauchyPoints, get_kernel

logger = logging.getLogger(__name__)

EPS = np.finfo(float).eps
TINY = np.finfo(float).tiny
MAX_MODEL_ITERATIONS = 40
MAX_BISECTIONS = 2200
DEFAULT_LEAF_SIZE = 32
LEDGER_TOLERANCE = 1e-10


class SymTridiagonal(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    diagonal: np.ndarray
    offdiagonal: np.ndarray

    @classmethod
    def from_arrays(cls, diagonal, offdiagonal) -> "SymTridiagonal":
        d = np.asarray(diagonal, dtype=float)
        e = np.asarray(offdiagonal, dtype=float)
        if e.size != max(d.size - 1, 0):
            raise DomainError(f"tridiagonal of size {d.size} needs {max(d.size - 1, 0)} off-diagonal entries, got {e.size}")
        if not (np.all(np.isfinite(d)) and np.all(np.isfinite(e))):
            raise DomainError("tridiagonal entries must be finite")
        return cls(diagonal=d, offdiagonal=e)

    @classmethod
    def from_dense(cls, dense: np.ndarray) -> "SymTridiagonal":
        return cls.from_arrays(np.diagonal(dense).copy(), np.diagonal(dense, 1).copy())

    @property
    def size(self) -> int:
        return self.diagonal.size

    def to_dense(self) -> np.ndarray:
        return np.diag(self.diagonal) + np.diag(self.offdiagonal, 1) + np.diag(self.offdiagonal, -1)


class Arrowhead(BaseModel):
    """Shaft entries first, tip last; the shaft need not be sorted."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    shaft: np.ndarray
    spike: np.ndarray
    tip: float

    @property
    def size(self) -> int:
        return self.shaft.size + 1

    def to_dense(self) -> np.ndarray:
        n = self.size
        out = np.zeros((n, n))
        out[np.arange(n - 1), np.arange(n - 1)] = self.shaft
        out[:-1, -1] = self.spike
        out[-1, :-1] = self.spike
        out[-1, -1] = self.tip
        return out

    @property
    def scale(self) -> float:
        return max(np.max(np.abs(self.shaft), initial=0.0), abs(self.tip)) + float(np.linalg.norm(self.spike))


class Divided(BaseModel):
    first: SymTridiagonal
    second: SymTridiagonal
    split: int
    coupling_first: float
    coupling_second: float
    tip: float


class Deflation(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    order: np.ndarray
    shaft: np.ndarray
    spike: np.ndarray
    active: np.ndarray
    deflated: np.ndarray
    rotations: np.ndarray
    tolerance: float


class SecularRoots(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    origin: np.ndarray
    offset: np.ndarray
    values: np.ndarray
    iterations: int = 0
    bisections: int = 0


class ArrowheadDecomposition(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    size: int
    eigenvalues: np.ndarray
    deflation: Deflation
    roots: SecularRoots
    spike_hat: np.ndarray
    tip_hat: float
    norms: np.ndarray
    root_positions: np.ndarray
    deflated_positions: np.ndarray
    backward_error: float
    scale: float
    kernel_name: str = "direct"

    @property
    def shaft(self) -> np.ndarray:
        return self.deflation.shaft[self.deflation.active]

    def points(self) -> CauchyPoints:
        a = self.shaft
        return CauchyPoints(shaft=a, base=a[self.roots.origin], offset=self.roots.offset)


class NodeLedger(BaseModel):
    level: int
    size: int
    deflated: int
    backward_error: float
    relative_error: float
    flagged: bool


# ── dense leaf solver ──


def _round_robin(n: int) -> List[Tuple[np.ndarray, np.ndarray]]:
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p < n and q < n]
        if pairs:
            rounds.append((np.array([p for p, _ in pairs]), np.array([q for _, q in pairs])))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(A: np.ndarray, max_sweeps: int = 60) -> Tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi with round-robin ordering; disjoint rotations are applied together."""
    A = np.array(A, dtype=float, copy=True)
    n = A.shape[0]
    V = np.eye(n)
    if n <= 1:
        return np.diagonal(A).copy(), V
    rounds = _round_robin(n)
    norm = np.linalg.norm(A)
    for sweep in range(max_sweeps):
        off = float(np.linalg.norm(A - np.diag(np.diagonal(A))))
        if off <= EPS * norm or off == 0.0:
            break
        rotated = False
        for P, Q in rounds:
            apq = A[P, Q]
            # classical threshold: smaller rotations leave app and aqq unchanged
            live = np.abs(apq) > np.maximum(EPS * np.sqrt(np.abs(A[P, P] * A[Q, Q])), TINY)
            if not np.any(live):
                continue
            rotated = True
            P, Q, apq = P[live], Q[live], apq[live]
            with np.errstate(over="ignore"):
                tau = (A[Q, Q] - A[P, P]) / (2 * apq)
                t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.hypot(1.0, tau))
            c = 1 / np.hypot(1.0, t)
            s = t * c
            cols_p, cols_q = A[:, P].copy(), A[:, Q].copy()
            A[:, P], A[:, Q] = c * cols_p - s * cols_q, s * cols_p + c * cols_q
            rows_p, rows_q = A[P, :].copy(), A[Q, :].copy()
            A[P, :], A[Q, :] = c[:, None] * rows_p - s[:, None] * rows_q, s[:, None] * rows_p + c[:, None] * rows_q
            A[P, Q] = A[Q, P] = 0.0
            vp, vq = V[:, P].copy(), V[:, Q].copy()
            V[:, P], V[:, Q] = c * vp - s * vq, s * vp + c * vq
        if not rotated:
            break
    else:
        logger.warning("cyclic Jacobi stopped after %d sweeps on a %dx%d matrix", max_sweeps, n, n)
    values = np.diagonal(A).copy()
    order = np.argsort(values, kind="stable")
    return values[order], V[:, order]


# ── divide ──


def divide(T: SymTridiagonal, split: int) -> Divided:
    """Partition T around row `split` into two tridiagonals, their couplings and the tip."""
    if T.size < 3:
        raise DomainError(f"cannot divide a {T.size}x{T.size} tridiagonal; use a dense leaf solver")
    if not 1 <= split <= T.size - 2:
        raise DomainError(f"split must lie in [1, {T.size - 2}], got {split}")
    d, e = T.diagonal, T.offdiagonal
    return Divided(
        first=SymTridiagonal(diagonal=d[:split], offdiagonal=e[: split - 1]),
        second=SymTridiagonal(diagonal=d[split + 1 :], offdiagonal=e[split + 1 :]),
        split=split,
        coupling_first=float(e[split - 1]),
        coupling_second=float(e[split]),
        tip=float(d[split]),
    )


# ── conquer ──


def pick_evaluate(A: Arrowhead, points, derivative_order: int = 0, kernel: Optional[CauchyKernel] = None) -> List[np.ndarray]:
    """f(x) = x - c + sum b_i^2 / (a_i - x) and up to two derivatives."""
    kernel = kernel or get_kernel()
    pts = CauchyPoints.absolute(A.shaft, points)
    w = A.spike**2
    out = [pts.values - A.tip + kernel.point_sums(pts, w, 1)]
    if derivative_order >= 1:
        out.append(1.0 + kernel.point_sums(pts, w, 2))
    if derivative_order >= 2:
        out.append(2.0 * kernel.point_sums(pts, w, 3))
    return out


def deflate(A: Arrowhead) -> Deflation:
    """Sort the shaft, drop negligible spike entries and rotate out near-equal shaft pairs."""
    order = np.argsort(A.shaft, kind="stable")
    a = A.shaft[order].astype(float)
    b = A.spike[order].astype(float)
    tol = 8 * EPS * A.scale
    small = np.abs(b) <= tol
    b[small] = 0.0
    deflated = list(np.flatnonzero(small))
    rotations = []
    prev = None
    for i in np.flatnonzero(~small):
        if prev is not None and a[i] - a[prev] <= tol:
            r = math.hypot(b[prev], b[i])
            cg, sg = b[i] / r, b[prev] / r
            ap, ai = a[prev], a[i]
            a[prev] = cg * cg * ap + sg * sg * ai
            a[i] = sg * sg * ap + cg * cg * ai
            b[prev], b[i] = 0.0, r
            rotations.append((prev, i, cg, sg))
            deflated.append(prev)
        prev = i
    deflated_idx = np.array(sorted(deflated), dtype=int)
    active = np.setdiff1d(np.arange(a.size), deflated_idx)
    return Deflation(
        order=order,
        shaft=a,
        spike=b,
        active=active,
        deflated=deflated_idx,
        rotations=np.array(rotations, dtype=float).reshape(-1, 4),
        tolerance=tol,
    )


def _interior_step(f, left_d, right_d, dl, dr):
    s = dl * dl * left_d
    S = dr * dr * (right_d + 1.0)
    c0 = f - s / dl - S / dr
    B = c0 * (dl + dr) + s + S
    C = f * dl * dr
    disc = np.sqrt(np.abs(B * B - 4 * c0 * C))
    with np.errstate(divide="ignore", invalid="ignore"):
        eta = np.where(B <= 0, (B - disc) / (2 * c0), 2 * C / (B + disc))
        eta = np.where(c0 == 0, C / B, eta)
    return eta


def _exterior_step(f, deriv, delta, smaller: bool):
    S = delta * delta * (deriv - 1.0)
    B = delta - f + S / delta
    disc = B * B + 4 * f * delta
    root = np.sqrt(np.abs(disc))
    with np.errstate(divide="ignore", invalid="ignore"):
        if smaller:
            eta = np.where(B <= 0, (B - root) / 2, -2 * f * delta / (B + root))
        else:
            eta = np.where(B >= 0, (B + root) / 2, -2 * f * delta / (B - root))
    return np.where(disc < 0, np.nan, eta)


def _secular_terms(kernel: CauchyKernel, a: np.ndarray, w: np.ndarray, tip: float, base: np.ndarray, tau: np.ndarray, split: np.ndarray):
    """f, the left and right halves of f' and a bound on the rounding error of f at base + tau."""
    pts = CauchyPoints(shaft=a, base=base, offset=tau)
    left1, right1 = kernel.split_point_sums(pts, w, 1, split)
    left2, right2 = kernel.split_point_sums(pts, w, 2, split)
    shift = base - tip
    f = shift + tau + left1 + right1
    # poles left of the root give negative terms, poles right of it positive ones
    bound = 8 * EPS * (np.abs(shift) + np.abs(tau) + right1 - left1) + EPS * np.abs(tau) * (1.0 + left2 + right2)
    return f, left2, right2, bound


def _bisect(lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Midpoint of each bracket, geometric when its ends differ by more than a factor 4."""
    mid = 0.5 * (lower + upper)
    small, large = np.minimum(np.abs(lower), np.abs(upper)), np.maximum(np.abs(lower), np.abs(upper))
    wide = (np.sign(lower) == np.sign(upper)) & (small > 0) & (large > 4 * small)
    return np.where(wide, np.sign(upper) * np.sqrt(small) * np.sqrt(large), mid)


def solve_secular(A: Arrowhead, kernel: Optional[CauchyKernel] = None) -> SecularRoots:
    """Roots of the Pick function of an arrowhead with sorted, distinct shaft and nonzero spike.

    Root i lies between poles i-1 and i and is stored as (origin pole, offset).
    Offsets are resolved to relative accuracy, so roots next to a pole keep
    their distance to it.
    """
    kernel = kernel or get_kernel()
    a = np.asarray(A.shaft, dtype=float)
    w = np.asarray(A.spike, dtype=float) ** 2
    tip = float(A.tip)
    k = a.size
    if k == 0:
        return SecularRoots(origin=np.zeros(0, dtype=int), offset=np.zeros(0), values=np.array([float(tip)]))
    m = k + 1
    norm_b = math.sqrt(float(np.sum(w)))
    origin = np.empty(m, dtype=int)
    lower, upper = np.empty(m), np.empty(m)
    origin[0], lower[0], upper[0] = 0, min(0.0, tip - a[0]) - norm_b - TINY, 0.0
    origin[k], lower[k], upper[k] = k - 1, 0.0, max(0.0, tip - a[k - 1]) + norm_b + TINY
    if k > 1:
        mid = 0.5 * (a[:-1] + a[1:])
        gap = a[1:] - a[:-1]
        f_mid = pick_evaluate(A, mid, kernel=kernel)[0]
        left = f_mid >= 0
        j = np.arange(1, k)
        origin[1:k] = np.where(left, j - 1, j)
        lower[1:k] = np.where(left, 0.0, -gap / 2)
        upper[1:k] = np.where(left, gap / 2, 0.0)

    split = np.arange(m) - 1
    base = a[origin]
    tau = 0.5 * (lower + upper)
    live = np.ones(m, dtype=bool)
    iterations = 0
    for iterations in range(1, MAX_MODEL_ITERATIONS + 1):
        idx = np.flatnonzero(live)
        t = tau[idx]
        f, left_d, right_d, bound = _secular_terms(kernel, a, w, tip, base[idx], t, split[idx])
        lower[idx] = np.where(f < 0, t, lower[idx])
        upper[idx] = np.where(f > 0, t, upper[idx])
        converged = np.abs(f) <= bound

        eta = np.empty(idx.size)
        interior = (idx > 0) & (idx < k)
        if np.any(interior):
            ii = idx[interior]
            dl = (a[ii - 1] - base[ii]) - t[interior]
            dr = (a[ii] - base[ii]) - t[interior]
            eta[interior] = _interior_step(f[interior], left_d[interior], right_d[interior], dl, dr)
        first = idx == 0
        if np.any(first):
            eta[first] = _exterior_step(f[first], 1 + left_d[first] + right_d[first], -t[first], smaller=True)
        last = idx == k
        if np.any(last):
            eta[last] = _exterior_step(f[last], 1 + left_d[last] + right_d[last], -t[last], smaller=False)

        lo, up = lower[idx], upper[idx]
        candidate = t + eta
        bad = ~np.isfinite(candidate) | (candidate <= lo) | (candidate >= up)
        candidate = np.where(bad, _bisect(lo, up), candidate)
        new = np.where(converged, t, candidate)
        tau[idx] = new
        done = converged | (np.abs(new - t) <= 2 * EPS * np.abs(new))
        done |= (up - lo) <= 2 * EPS * np.maximum(np.abs(lo), np.abs(up))
        live[idx[done]] = False
        if not np.any(live):
            break

    bisections = 0
    if np.any(live):
        logger.warning("secular solver fell back to bisection for %d of %d roots", int(live.sum()), m)
        for i in np.flatnonzero(live):
            at = slice(i, i + 1)
            point = _bisect(lower[at], upper[at])
            for _ in range(MAX_BISECTIONS):
                if upper[i] - lower[i] <= 2 * EPS * max(abs(lower[i]), abs(upper[i])):
                    break
                bisections += 1
                f, _, _, bound = _secular_terms(kernel, a, w, tip, base[at], point, split[at])
                if abs(f[0]) <= bound[0]:
                    break
                if f[0] < 0:
                    lower[i] = point[0]
                else:
                    upper[i] = point[0]
                point = _bisect(lower[at], upper[at])
            tau[i] = point[0]

    # roots measured from their left pole are positive, from their right pole negative
    positive = origin == np.arange(m) - 1
    tau = np.where(positive, np.maximum(tau, TINY), np.minimum(tau, -TINY))
    logger.debug("secular solve: %d roots, %d model iterations, %d bisection steps", m, iterations, bisections)
    return SecularRoots(origin=origin, offset=tau, values=base + tau, iterations=iterations, bisections=bisections)


def roots_from_values(shaft: np.ndarray, values) -> SecularRoots:
    """Express plain eigenvalues relative to their nearest bracketing pole."""
    a = np.asarray(shaft, dtype=float)
    lam = np.sort(np.asarray(values, dtype=float))
    k = a.size
    if lam.size != k + 1:
        raise DomainError(f"an arrowhead with {k} shaft entries has {k + 1} eigenvalues, got {lam.size}")
    if k == 0:
        return SecularRoots(origin=np.zeros(0, dtype=int), offset=np.zeros(0), values=lam)
    idx = np.arange(k + 1)
    left = a[np.maximum(idx - 1, 0)]
    right = a[np.minimum(idx, k - 1)]
    use_left = (idx == k) | ((idx > 0) & (lam - left <= right - lam))
    origin = np.where(use_left, idx - 1, idx)
    offset = lam - a[origin]
    return SecularRoots(origin=origin, offset=offset, values=lam)


def _check_interlacing(shaft: np.ndarray, roots: SecularRoots) -> None:
    k = shaft.size
    idx = np.arange(k + 1)
    base = shaft[roots.origin]
    left = idx > 0
    right = idx < k
    d_left = (shaft[np.maximum(idx - 1, 0)] - base) - roots.offset
    d_right = (shaft[np.minimum(idx, k - 1)] - base) - roots.offset
    if np.any(d_left[left] >= 0) or np.any(d_right[right] <= 0):
        raise InterlacingError("computed roots do not strictly interlace the shaft")


def reconstruct(A: Arrowhead, roots, kernel: Optional[CauchyKernel] = None) -> Tuple[np.ndarray, float]:
    """Spike and tip of the nearby arrowhead whose eigenvalues are exactly the roots."""
    kernel = kernel or get_kernel()
    a = np.asarray(A.shaft, dtype=float)
    if not isinstance(roots, SecularRoots):
        roots = roots_from_values(a, roots)
    k = a.size
    if k == 0:
        return np.zeros(0), float(roots.values[0])
    _check_interlacing(a, roots)
    pts = CauchyPoints(shaft=a, base=a[roots.origin], offset=roots.offset)
    log_sq = kernel.log_shaft_sums(pts) - kernel.log_gap_sums(a)
    sign = np.where(np.asarray(A.spike) < 0, -1.0, 1.0)
    spike_hat = sign * np.exp(0.5 * log_sq)
    gaps = (a[roots.origin[:k]] - a) + roots.offset[:k]
    tip_hat = math.fsum([float(roots.values[k])] + gaps.tolist())
    return spike_hat, tip_hat


def conquer(A: Arrowhead, kernel: Optional[CauchyKernel] = None) -> ArrowheadDecomposition:
    """Deflate, solve and reconstruct one arrowhead."""
    kernel = kernel or get_kernel()
    defl = deflate(A)
    a = defl.shaft[defl.active]
    b = defl.spike[defl.active]
    reduced = Arrowhead(shaft=a, spike=b, tip=A.tip)
    roots = solve_secular(reduced, kernel)
    spike_hat, tip_hat = reconstruct(reduced, roots, kernel)
    if a.size:
        pts = CauchyPoints(shaft=a, base=a[roots.origin], offset=roots.offset)
        norms = np.sqrt(1.0 + kernel.point_sums(pts, spike_hat**2, 2))
    else:
        norms = np.ones(1)
    backward = float(np.linalg.norm(b - spike_hat) + abs(A.tip - tip_hat))
    values = np.concatenate([roots.values, defl.shaft[defl.deflated]])
    eig_order = np.argsort(values, kind="stable")
    positions = np.empty_like(eig_order)
    positions[eig_order] = np.arange(values.size)
    m = roots.values.size
    if backward > LEDGER_TOLERANCE * A.scale:
        logger.warning("arrowhead of size %d: backward error %.3e exceeds %.1e relative", A.size, backward, LEDGER_TOLERANCE)
    return ArrowheadDecomposition(
        size=A.size,
        eigenvalues=values[eig_order],
        deflation=defl,
        roots=roots,
        spike_hat=spike_hat,
        tip_hat=tip_hat,
        norms=norms,
        root_positions=positions[:m],
        deflated_positions=positions[m:],
        backward_error=backward,
        scale=A.scale,
        kernel_name=getattr(kernel, "name", "direct"),
    )


def _column(v: np.ndarray, like: np.ndarray) -> np.ndarray:
    return v.reshape(v.shape + (1,) * (like.ndim - 1))


def eigvec_apply(dec: ArrowheadDecomposition, x: np.ndarray, transpose: bool = False, kernel: Optional[CauchyKernel] = None) -> np.ndarray:
    """Q x (eigen coordinates to arrowhead coordinates) or Q^T x."""
    kernel = kernel or get_kernel(dec.kernel_name)
    x = np.asarray(x, dtype=float)
    n = dec.size
    defl = dec.deflation
    active = defl.active
    tip = n - 1
    if not transpose:
        xr = x[dec.root_positions] / _column(dec.norms, x)
        z = np.zeros_like(x)
        if active.size:
            z[active] = -_column(dec.spike_hat, x) * kernel.shaft_sums(dec.points(), xr, 1)
        z[tip] = xr.sum(axis=0)
        z[defl.deflated] = x[dec.deflated_positions]
        for p, i, cg, sg in defl.rotations[::-1]:
            p, i = int(p), int(i)
            zp, zi = z[p].copy(), z[i].copy()
            z[p], z[i] = cg * zp + sg * zi, cg * zi - sg * zp
        out = np.empty_like(z)
        out[defl.order] = z[:tip]
        out[tip] = z[tip]
        return out

    z = np.empty_like(x)
    z[:tip] = x[defl.order]
    z[tip] = x[tip]
    for p, i, cg, sg in defl.rotations:
        p, i = int(p), int(i)
        zp, zi = z[p].copy(), z[i].copy()
        z[p], z[i] = cg * zp - sg * zi, sg * zp + cg * zi
    out = np.zeros_like(x)
    if active.size:
        weights = -_column(dec.spike_hat, x) * z[active]
        root = kernel.point_sums(dec.points(), weights, 1) + z[tip]
    else:
        root = z[tip][None, ...]
    out[dec.root_positions] = root / _column(dec.norms, x)
    out[dec.deflated_positions] = z[defl.deflated]
    return out


# ── recursion tree ──


class DCLeaf(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    eigenvalues: np.ndarray
    vectors: np.ndarray

    @property
    def size(self) -> int:
        return self.eigenvalues.size


class DCNode(BaseModel):
    """Merged node; `coupling`/`rho` are set for pencil merges (arrowhead Cholesky)."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    split: int
    level: int
    left: Union["DCNode", DCLeaf]
    right: Union["DCNode", DCLeaf]
    decomposition: ArrowheadDecomposition
    coupling: Optional[np.ndarray] = None
    rho: float = 1.0

    @property
    def size(self) -> int:
        return self.decomposition.size

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.decomposition.eigenvalues


DCNode.model_rebuild()


def node_apply(node: Union[DCNode, DCLeaf], x: np.ndarray) -> np.ndarray:
    if isinstance(node, DCLeaf):
        return node.vectors @ x
    z = eigvec_apply(node.decomposition, x)
    if node.coupling is not None:
        z[-1] = z[-1] / node.rho
        z[:-1] = z[:-1] - _column(node.coupling, z[:-1]) * z[-1]
    k = node.split
    out = np.empty_like(z)
    out[:k] = node_apply(node.left, z[:k])
    out[k] = z[-1]
    out[k + 1 :] = node_apply(node.right, z[k:-1])
    return out


def node_apply_transpose(node: Union[DCNode, DCLeaf], y: np.ndarray) -> np.ndarray:
    if isinstance(node, DCLeaf):
        return node.vectors.T @ y
    k = node.split
    w = np.concatenate([node_apply_transpose(node.left, y[:k]), node_apply_transpose(node.right, y[k + 1 :]), y[k : k + 1]])
    if node.coupling is not None:
        w[-1] = (w[-1] - np.tensordot(node.coupling, w[:-1], axes=1)) / node.rho
    return eigvec_apply(node.decomposition, w, transpose=True)


def edge_rows(node: Union[DCNode, DCLeaf]) -> Tuple[np.ndarray, np.ndarray]:
    """First and last rows of the node's eigenvector matrix."""
    n = node.size
    unit = np.zeros((n, 2))
    unit[0, 0] = 1.0
    unit[n - 1, 1] = 1.0
    rows = node_apply_transpose(node, unit)
    return rows[:, 0], rows[:, 1]


class DCTree(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    root: Union[DCNode, DCLeaf]

    @property
    def size(self) -> int:
        return self.root.size

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.root.eigenvalues

    def apply(self, x: np.ndarray) -> np.ndarray:
        return node_apply(self.root, np.asarray(x, dtype=float))

    def apply_transpose(self, y: np.ndarray) -> np.ndarray:
        return node_apply_transpose(self.root, np.asarray(y, dtype=float))

    def dense(self) -> np.ndarray:
        return self.apply(np.eye(self.size))

    def ledger(self) -> List[NodeLedger]:
        entries: List[NodeLedger] = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if isinstance(node, DCLeaf):
                continue
            dec = node.decomposition
            relative = dec.backward_error / max(dec.scale, TINY)
            entries.append(NodeLedger(
                level=node.level,
                size=node.size,
                deflated=int(dec.deflation.deflated.size),
                backward_error=dec.backward_error,
                relative_error=relative,
                flagged=relative > LEDGER_TOLERANCE,
            ))
            stack.extend([node.right, node.left])
        return entries


def _leaf(T: SymTridiagonal) -> DCLeaf:
    values, vectors = jacobi_eigh(T.to_dense())
    return DCLeaf(eigenvalues=values, vectors=vectors)


def _merge(parts: Divided, left, right, level: int, kernel: CauchyKernel) -> DCNode:
    _, last_left = edge_rows(left)
    first_right, _ = edge_rows(right)
    arrow = Arrowhead(
        shaft=np.concatenate([left.eigenvalues, right.eigenvalues]),
        spike=np.concatenate([parts.coupling_first * last_left, parts.coupling_second * first_right]),
        tip=parts.tip,
    )
    return DCNode(split=parts.split, level=level, left=left, right=right, decomposition=conquer(arrow, kernel))


def eigen(
    T: SymTridiagonal,
    leaf_size: int = DEFAULT_LEAF_SIZE,
    kernel: Optional[CauchyKernel] = None,
    threads: int = 1,
) -> DCTree:
    """Full spectral decomposition of T by divide and conquer."""
    if T.size < 1:
        raise DomainError("eigen needs a non-empty matrix")
    kernel = kernel or get_kernel()
    leaf_size = max(leaf_size, 2)
    parallel_depth = max(int(math.log2(threads)), 0) if threads > 1 else 0

    def build(sub: SymTridiagonal, level: int, futures: Optional[dict] = None, path: str = ""):
        if futures is not None and path in futures:
            return futures[path].result()
        if sub.size <= leaf_size:
            return _leaf(sub)
        parts = divide(sub, sub.size // 2)
        left = build(parts.first, level + 1, futures, path + "0")
        right = build(parts.second, level + 1, futures, path + "1")
        return _merge(parts, left, right, level, kernel)

    if parallel_depth == 0:
        return DCTree(root=build(T, 0))

    # independent subtrees at the parallel depth run in the pool; merges stay on this thread
    segments = {}

    def collect(sub: SymTridiagonal, level: int, path: str) -> None:
        if level == parallel_depth or sub.size <= leaf_size:
            segments[path] = (sub, level)
            return
        parts = divide(sub, sub.size // 2)
        collect(parts.first, level + 1, path + "0")
        collect(parts.second, level + 1, path + "1")

    collect(T, 0, "")
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures: dict = {path: pool.submit(build, sub, level) for path, (sub, level) in segments.items()}
        root = build(T, 0, futures)
    return DCTree(root=root)
