"""Banded multiplication operators, their Cholesky factors and derived products.

Storage is row-indexed: diagonals[d, i] holds entry (i, i+d) and the tail of
each superdiagonal is zero padding. Closed-form constructors take 0-based
sizes; the closed forms themselves are written with a 1-based index n, where
basis element n is local degree n-1.
"""
import logging
from typing import Dict, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.linalg import solve_triangular
from scipy.special import gammaln

from errors import DomainError, NotPositiveDefiniteError, StructureError
from models import JacobiParams
from special_functions import jacobi_recurrence

logger = logging.getLogger(__name__)

Closure = Literal["operator", "section"]

STRUCTURE_TOLERANCE = 1e-8


class BandedSymmetric(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    size: int
    half_bandwidth: int
    diagonals: np.ndarray

    @classmethod
    def from_diagonals(cls, *diags: np.ndarray, size: Optional[int] = None) -> "BandedSymmetric":
        size = len(diags[0]) if size is None else size
        return cls(size=size, half_bandwidth=len(diags) - 1, diagonals=_pack(diags, size))

    @classmethod
    def from_dense(cls, dense: np.ndarray, half_bandwidth: int) -> "BandedSymmetric":
        n = dense.shape[0]
        diags = [np.diagonal(dense, d).copy() for d in range(half_bandwidth + 1)]
        return cls(size=n, half_bandwidth=half_bandwidth, diagonals=_pack(diags, n))

    def diagonal(self, d: int) -> np.ndarray:
        if abs(d) > self.half_bandwidth:
            return np.zeros(max(self.size - abs(d), 0))
        return self.diagonals[abs(d), : max(self.size - abs(d), 0)]

    def to_dense(self) -> np.ndarray:
        out = np.diag(self.diagonal(0)).astype(float)
        for d in range(1, self.half_bandwidth + 1):
            if d < self.size:
                band = np.diag(self.diagonal(d), d)
                out += band + band.T
        return out

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.to_dense() @ x

    def section(self, k: int) -> "BandedSymmetric":
        return BandedSymmetric(size=k, half_bandwidth=self.half_bandwidth, diagonals=_pack(
            [self.diagonal(d)[: max(k - d, 0)] for d in range(self.half_bandwidth + 1)], k))

    def full_bands(self) -> Dict[int, np.ndarray]:
        bands = {}
        for d in range(-self.half_bandwidth, self.half_bandwidth + 1):
            band = np.zeros(self.size)
            if abs(d) < self.size:
                values = self.diagonal(abs(d))
                if d >= 0:
                    band[: self.size - d] = values
                else:
                    band[-d:] = values
            bands[d] = band
        return bands

    def __add__(self, other: "BandedSymmetric") -> "BandedSymmetric":
        w = max(self.half_bandwidth, other.half_bandwidth)
        return BandedSymmetric(size=self.size, half_bandwidth=w, diagonals=_widen(self, w) + _widen(other, w))

    def scaled(self, factor: float) -> "BandedSymmetric":
        return BandedSymmetric(size=self.size, half_bandwidth=self.half_bandwidth, diagonals=factor * self.diagonals)

    def shifted(self, shift: float) -> "BandedSymmetric":
        diags = self.diagonals.copy()
        diags[0, : self.size] += shift
        return BandedSymmetric(size=self.size, half_bandwidth=self.half_bandwidth, diagonals=diags)


class BandedUpper(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    size: int
    bandwidth: int
    diagonals: np.ndarray

    @classmethod
    def from_diagonals(cls, *diags: np.ndarray, size: Optional[int] = None) -> "BandedUpper":
        size = len(diags[0]) if size is None else size
        return cls(size=size, bandwidth=len(diags) - 1, diagonals=_pack(diags, size))

    def diagonal(self, d: int) -> np.ndarray:
        if d > self.bandwidth:
            return np.zeros(max(self.size - d, 0))
        return self.diagonals[d, : max(self.size - d, 0)]

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.size, self.size))
        for d in range(min(self.bandwidth + 1, self.size)):
            out += np.diag(self.diagonal(d), d)
        return out

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.to_dense() @ x

    def section(self, k: int) -> "BandedUpper":
        return BandedUpper(size=k, bandwidth=self.bandwidth, diagonals=_pack(
            [self.diagonal(d)[: max(k - d, 0)] for d in range(self.bandwidth + 1)], k))

    def full_bands(self) -> Dict[int, np.ndarray]:
        return {d: self.diagonals[d].copy() for d in range(self.bandwidth + 1)}

    def transpose_bands(self) -> Dict[int, np.ndarray]:
        bands = {}
        for d in range(self.bandwidth + 1):
            band = np.zeros(self.size)
            if d < self.size:
                band[d:] = self.diagonal(d)
            bands[-d] = band
        return bands

    def gram(self) -> BandedSymmetric:
        """R^T R."""
        return _symmetric_from_bands(
            _band_product(self.transpose_bands(), self.full_bands(), self.size), self.size, self.bandwidth
        )

    def outer(self, scaling: Optional[np.ndarray] = None) -> BandedSymmetric:
        """R diag(scaling) R^T (R R^T when scaling is omitted)."""
        left = self.full_bands()
        if scaling is not None:
            left = {d: band * _shift(scaling, d) for d, band in left.items()}
        return _symmetric_from_bands(_band_product(left, self.transpose_bands(), self.size), self.size, self.bandwidth)


class DiagonalOp(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    size: int
    entries: np.ndarray


class SemiseparableSym(BaseModel):
    """Symmetric semiseparable matrix u_min(l,n) v_max(l,n) on entries with l+n even."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    size: int
    log_u: np.ndarray
    log_v: np.ndarray
    sign_u: np.ndarray
    sign_v: np.ndarray

    def entry(self, l: int, n: int) -> float:
        if (l + n) % 2:
            return 0.0
        lo, hi = min(l, n), max(l, n)
        with np.errstate(over="ignore"):
            return float(self.sign_u[lo] * self.sign_v[hi] * np.exp(self.log_u[lo] + self.log_v[hi]))

    def to_dense(self) -> np.ndarray:
        idx = np.arange(self.size)
        lo = np.minimum.outer(idx, idx)
        hi = np.maximum.outer(idx, idx)
        with np.errstate(over="ignore"):
            values = self.sign_u[lo] * self.sign_v[hi] * np.exp(self.log_u[lo] + self.log_v[hi])
        return np.where((idx[:, None] + idx[None, :]) % 2 == 0, values, 0.0)


class MinvEntry(BaseModel):
    value: float
    sign: int
    log_magnitude: float
    overflow: bool = False


class JacobiMultOps(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    M1: BandedSymmetric
    M2: BandedSymmetric
    M: BandedSymmetric
    Mplus: BandedSymmetric
    Mminus: BandedSymmetric


# ── band arithmetic ──


def _pack(diags, size: int) -> np.ndarray:
    out = np.zeros((len(diags), size))
    for d, values in enumerate(diags):
        values = np.asarray(values, dtype=float)[: max(size - d, 0)]
        out[d, : len(values)] = values
    return out


def _widen(A: BandedSymmetric, w: int) -> np.ndarray:
    out = np.zeros((w + 1, A.size))
    out[: A.half_bandwidth + 1] = A.diagonals
    return out


def _shift(values: np.ndarray, offset: int) -> np.ndarray:
    n = len(values)
    out = np.zeros(n)
    if offset >= 0:
        out[: n - offset] = values[offset:]
    else:
        out[-offset:] = values[: n + offset]
    return out


def _band_product(left: Dict[int, np.ndarray], right: Dict[int, np.ndarray], size: int) -> Dict[int, np.ndarray]:
    out: Dict[int, np.ndarray] = {}
    for o1, a in left.items():
        for o2, b in right.items():
            d = o1 + o2
            if abs(d) >= size:
                continue
            out[d] = out.get(d, np.zeros(size)) + a * _shift(b, o1)
    return out


def _symmetric_from_bands(bands: Dict[int, np.ndarray], size: int, half_bandwidth: int) -> BandedSymmetric:
    diags = [bands.get(d, np.zeros(size))[: max(size - d, 0)] for d in range(half_bandwidth + 1)]
    return BandedSymmetric(size=size, half_bandwidth=half_bandwidth, diagonals=_pack(diags, size))


def banded_product(A: BandedSymmetric, B: BandedSymmetric) -> BandedSymmetric:
    """A B for symmetric band matrices that commute (the result is returned symmetric)."""
    if A.size != B.size:
        raise DomainError(f"size mismatch {A.size} != {B.size}")
    w = A.half_bandwidth + B.half_bandwidth
    return _symmetric_from_bands(_band_product(A.full_bands(), B.full_bands(), A.size), A.size, w)


def banded_cholesky(A: BandedSymmetric, node: Optional[str] = None) -> BandedUpper:
    """Upper R with A = R^T R, by the banded Cholesky recurrence."""
    n, w = A.size, A.half_bandwidth
    R = np.zeros((w + 1, n))
    for j in range(n):
        pivot = A.diagonals[0, j] - sum(R[j - k, k] ** 2 for k in range(max(0, j - w), j))
        if not pivot > 0:
            raise NotPositiveDefiniteError(f"banded Cholesky lost positivity at row {j}", node=node or f"row {j}")
        R[0, j] = np.sqrt(pivot)
        for d in range(1, w + 1):
            if j + d >= n:
                break
            acc = A.diagonals[d, j]
            for k in range(max(0, j + d - w), j):
                acc -= R[j - k, k] * R[j + d - k, k]
            R[d, j] = acc / R[0, j]
    return BandedUpper(size=n, bandwidth=w, diagonals=R)


def upper_inverse_diagonals(R: BandedUpper, k: int) -> np.ndarray:
    """Leading k diagonals of R^{-1} by back substitution, row-indexed like the band storage."""
    n, w = R.size, R.bandwidth
    inv = np.zeros((k, n))
    inv[0] = 1.0 / R.diagonals[0]
    for d in range(1, k):
        acc = np.zeros(n)
        for t in range(1, min(w, d) + 1):
            acc += R.diagonals[t] * _shift(inv[d - t], t)
        inv[d] = -acc * inv[0]
        inv[d, max(n - d, 0):] = 0.0
    return inv


def _dense_upper(diags: np.ndarray, size: int) -> np.ndarray:
    out = np.zeros((size, size))
    for d in range(min(diags.shape[0], size)):
        out += np.diag(diags[d, : size - d], d)
    return out


# ── spherical harmonic operators ──


def _one_based(N: int) -> np.ndarray:
    return np.arange(1, N + 1, dtype=float)


def sh_mult_M(m: int, N: int) -> BandedSymmetric:
    """Multiplication by 1-x^2 on normalized associated Legendre functions of order m."""
    n = _one_based(N)
    a = 2 * (n * n + 2 * m * n + 2 * m * m - n - m - 1) / ((2 * n + 2 * m - 3) * (2 * n + 2 * m + 1))
    b = -np.sqrt(n * (n + 1) * (n + 2 * m) * (n + 2 * m + 1) / ((2 * n + 2 * m - 1) * (2 * n + 2 * m + 1) ** 2 * (2 * n + 2 * m + 3)))
    return BandedSymmetric.from_diagonals(a, np.zeros(N), b, size=N)


def _sh_cd(m: int, N: int) -> Tuple[np.ndarray, np.ndarray]:
    n = _one_based(N)
    c = np.sqrt((n + 2 * m) * (n + 2 * m + 1) / ((2 * n + 2 * m - 1) * (2 * n + 2 * m + 1)))
    d = -np.sqrt(n * (n + 1) / ((2 * n + 2 * m + 1) * (2 * n + 2 * m + 3)))
    return c, d


def sh_cholesky_R(m: int, N: int) -> BandedUpper:
    c, d = _sh_cd(m, N)
    return BandedUpper.from_diagonals(c, np.zeros(N), d, size=N)


def sh_RRt(m: int, N: int) -> BandedSymmetric:
    n = _one_based(N)
    e = 2 * (2 * m * m + (2 * n + 3) * m + n * (n + 1)) / ((2 * n + 2 * m - 1) * (2 * n + 2 * m + 3))
    f = -np.sqrt(n * (n + 1) * (n + 2 * m + 2) * (n + 2 * m + 3) / ((2 * n + 2 * m + 1) * (2 * n + 2 * m + 3) ** 2 * (2 * n + 2 * m + 5)))
    return BandedSymmetric.from_diagonals(e, np.zeros(N), f, size=N)


def sh_RDRt(m: int, N: int) -> BandedSymmetric:
    n = _one_based(N)
    g = (
        4 * m**4 + (12 * n + 2) * m**3 + (14 * n * n + 6 * n - 6) * m * m
        + (8 * n**3 + 8 * n * n - 4 * n) * m + 2 * n * (n + 1) * (n * n + n - 1)
    ) / ((2 * n + 2 * m - 1) * (2 * n + 2 * m + 3))
    h = -(n + m + 1) * (n + m + 2) * np.sqrt(
        n * (n + 1) * (n + 2 * m + 2) * (n + 2 * m + 3) / ((2 * n + 2 * m + 1) * (2 * n + 2 * m + 3) ** 2 * (2 * n + 2 * m + 5))
    )
    return BandedSymmetric.from_diagonals(g, np.zeros(N), h, size=N)


def sh_cholesky_recurrence(m: int, N: int) -> BandedUpper:
    """Cholesky factor of sh_mult_M from c_n = sqrt(a_n - d_{n-2}^2), d_n = b_n / c_n."""
    M = sh_mult_M(m, N + 2)
    a, b = M.diagonals[0], M.diagonals[2]
    c, d = np.zeros(N + 2), np.zeros(N + 2)
    for i in range(N + 2):
        pivot = a[i] - (d[i - 2] ** 2 if i >= 2 else 0.0)
        if not pivot > 0:
            raise NotPositiveDefiniteError(f"order {m} multiplication operator lost positivity at n={i + 1}", node=f"m={m}")
        c[i] = np.sqrt(pivot)
        d[i] = b[i] / c[i]
    return BandedUpper.from_diagonals(c[:N], np.zeros(N), d[:N], size=N)


def sh_products_recurrence(m: int, N: int) -> Tuple[BandedSymmetric, BandedSymmetric]:
    """R R^T and R D R^T assembled entrywise from the recurrence-path c_n, d_n."""
    R = sh_cholesky_recurrence(m, N + 2)
    c, d = R.diagonals[0], R.diagonals[2]
    n = _one_based(N)
    c_next = c[2 : N + 2]
    e = c[:N] ** 2 + d[:N] ** 2
    f = d[:N] * c_next
    g = (m + n - 1) * (m + n) * c[:N] ** 2 + (m + n + 1) * (m + n + 2) * d[:N] ** 2
    h = (m + n + 1) * (m + n + 2) * d[:N] * c_next
    return (
        BandedSymmetric.from_diagonals(e, np.zeros(N), f, size=N),
        BandedSymmetric.from_diagonals(g, np.zeros(N), h, size=N),
    )


def sh_D(m: int, N: int) -> DiagonalOp:
    degree = m + np.arange(N, dtype=float)
    return DiagonalOp(size=N, entries=degree * (degree + 1))


def _sh_minv_generators(m: int, N: int) -> Tuple[np.ndarray, np.ndarray]:
    if m < 1:
        raise DomainError("the inverse multiplication operator diverges for order 0")
    l = np.arange(N, dtype=float)
    half = 0.5 * np.log(2 * l + 2 * m + 1)
    ratio = 0.5 * (gammaln(l + 2 * m + 1) - gammaln(l + 1))
    return half + ratio - np.log(2 * m), half - ratio


def sh_minv_entry(l: int, n: int, m: int) -> MinvEntry:
    """Entry (l, n) of the inverse of sh_mult_M, evaluated in log space."""
    if (l + n) % 2:
        if m < 1:
            raise DomainError("the inverse multiplication operator diverges for order 0")
        return MinvEntry(value=0.0, sign=0, log_magnitude=-np.inf)
    log_u, log_v = _sh_minv_generators(m, max(l, n) + 1)
    lo, hi = min(l, n), max(l, n)
    log_mag = float(log_u[lo] + log_v[hi])
    overflow = log_mag > np.log(np.finfo(float).max)
    with np.errstate(over="ignore"):
        value = float(np.exp(log_mag))
    return MinvEntry(value=value, sign=1, log_magnitude=log_mag, overflow=overflow)


def sh_minv_section(m: int, N: int) -> SemiseparableSym:
    log_u, log_v = _sh_minv_generators(m, N)
    ones = np.ones(N)
    return SemiseparableSym(size=N, log_u=log_u, log_v=log_v, sign_u=ones, sign_v=ones)


# ── weighted Jacobi operators ──


def jacobi_matrix(p: JacobiParams, N: int) -> BandedSymmetric:
    """Tridiagonal x-multiplication operator of the orthonormal Jacobi basis."""
    diag, off = jacobi_recurrence(p, N)
    return BandedSymmetric.from_diagonals(diag, off[: N - 1], size=N)


def _identity(N: int) -> BandedSymmetric:
    return BandedSymmetric.from_diagonals(np.ones(N), size=N)


def jac_mult_ops(p: JacobiParams, N: int, closure: Closure = "operator") -> JacobiMultOps:
    """M1 = 1+x, M2 = 1-x and the products M = M1 M2, M+ = M1^2, M- = M2^2.

    closure="operator" returns N-sections of the infinite operators;
    closure="section" returns exact products of N-sections, which commute.
    """
    size = N + 1 if closure == "operator" else N
    J = jacobi_matrix(p, size)
    M1 = _identity(size) + J
    M2 = _identity(size) + J.scaled(-1.0)
    ops = [M1, M2, banded_product(M1, M2), banded_product(M1, M1), banded_product(M2, M2)]
    if closure == "operator":
        ops = [op.section(N) for op in ops]
    return JacobiMultOps(M1=ops[0], M2=ops[1], M=ops[2], Mplus=ops[3], Mminus=ops[4])


def _removable(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    # both factors vanish together only at n = 1 with alpha + beta = -1
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = numerator / denominator
    return np.where(np.abs(denominator) < 1e-300, 1.0, ratio)


def jac_mult_closed_forms(p: JacobiParams, N: int) -> Tuple[BandedSymmetric, BandedSymmetric]:
    """M1 and M2 from their entrywise closed forms."""
    a_, b_ = p.alpha, p.beta
    s = a_ + b_
    n = _one_based(N)
    with np.errstate(divide="ignore", invalid="ignore"):
        a = (2 * n * (2 * n - 2) + (4 * n + 2 * b_ - 2) * s) / ((2 * n + s) * (2 * n + s - 2))
        c = (2 * n * (2 * n - 2) + (4 * n + 2 * a_ - 2) * s) / ((2 * n + s) * (2 * n + s - 2))
    a[0] = 2 * (b_ + 1) / (s + 2)
    c[0] = 2 * (a_ + 1) / (s + 2)
    ratio = _removable(n + s, 2 * n + s - 1)
    b = 2 * np.sqrt(n * (n + a_) * (n + b_) * ratio / ((2 * n + s) ** 2 * (2 * n + s + 1)))
    off = b[: N - 1]
    return BandedSymmetric.from_diagonals(a, off, size=N), BandedSymmetric.from_diagonals(c, -off, size=N)


def jac_D(p: JacobiParams, N: int) -> DiagonalOp:
    n = np.arange(N, dtype=float)
    return DiagonalOp(size=N, entries=n * (n + p.alpha + p.beta + 1))


def _check_jump(low: JacobiParams, high: JacobiParams) -> None:
    da, db = high.alpha - low.alpha, high.beta - low.beta
    for jump in (da, db):
        if jump < 0 or not float(jump / 2).is_integer():
            raise DomainError(f"parameter jumps must be non-negative even integers, got ({da:g}, {db:g})")


def jac_S(low: JacobiParams, high: JacobiParams, N: int, closure: Closure = "operator") -> BandedSymmetric:
    """Potential term of the weighted Jacobi Sturm-Liouville pencil."""
    _check_jump(low, high)
    a, b, g, d = low.alpha, low.beta, high.alpha, high.beta
    ops = jac_mult_ops(low, N, closure)
    plus = (g / 2) ** 2 - (a / 2) ** 2
    minus = (d / 2) ** 2 - (b / 2) ** 2
    cross = (g * d + g + d - a * b - a - b) / 2
    return ops.Mplus.scaled(plus) + ops.Mminus.scaled(minus) + ops.M.scaled(-cross)


def jac_cholesky(p: JacobiParams, N: int) -> BandedUpper:
    """Closed-form upper Cholesky factor of M = R^T R (tridiagonal-times-tridiagonal M)."""
    a, b = p.alpha, p.beta
    s = a + b
    n = _one_based(N)
    ratio = _removable(n + s, 2 * n + s - 1)
    e = 2 * np.sqrt((n + a) * (n + b) * ratio * (n + s + 1) / ((2 * n + s) ** 2 * (2 * n + s + 1)))
    f = 2 * (a - b) * np.sqrt(n * (n + s + 1)) / ((2 * n + s) * (2 * n + s + 2))
    g = -2 * np.sqrt(n * (n + 1) * (n + a + 1) * (n + b + 1) / ((2 * n + s + 1) * (2 * n + s + 2) ** 2 * (2 * n + s + 3)))
    return BandedUpper.from_diagonals(e, f[: N - 1], g[: N - 2], size=N)


def jac_Rinv_rows(p: JacobiParams, N: int) -> np.ndarray:
    """Closed forms of the main and first two superdiagonals of R^{-1}, shape (3, N)."""
    a, b = p.alpha, p.beta
    s = a + b
    n = _one_based(N)
    ratio = _removable(2 * n + s - 1, n + s)
    main = 0.5 * np.sqrt(ratio * (2 * n + s) ** 2 * (2 * n + s + 1) / ((n + a) * (n + b) * (n + s + 1)))
    first = (b - a) / 2 * np.sqrt(
        n * ratio * (2 * n + s + 1) ** 2 * (2 * n + s + 3)
        / ((n + a) * (n + a + 1) * (n + b) * (n + b + 1) * (n + s + 1) * (n + s + 2))
    )
    second = np.sqrt(
        n * (n + 1) * ratio * (2 * n + s + 2) ** 2 * (2 * n + s + 5)
        / (
            (n + a) * (n + a + 1) * (n + a + 2) * (n + b) * (n + b + 1) * (n + b + 2)
            * (n + s + 1) * (n + s + 2) * (n + s + 3)
        )
    ) / 8 * ((2 * n + s) * (2 * n + s + 4) + 3 * (a - b) ** 2)
    out = np.vstack([main, first, second])
    out[1, N - 1 :] = 0.0
    out[2, max(N - 2, 0) :] = 0.0
    return out


def jac_RSRinv(
    low: JacobiParams,
    high: JacobiParams,
    N: int,
    closure: Closure = "section",
    R: Optional[BandedUpper] = None,
) -> BandedSymmetric:
    """R S R^{-1} (equal to R^{-T} S R^T), symmetric pentadiagonal.

    The lower triangle is formed from three diagonals of R^{-1} and mirrored;
    with the closed-form factor of the operator closure those diagonals come
    from jac_Rinv_rows.
    A wider product on interior rows checks symmetry and bandedness; a
    violation above 1e-8 ||S|| raises StructureError.
    """
    closed = closure == "operator" and R is None
    if closure == "operator":
        S = jac_S(low, high, N + 2, "operator")
        R = jac_cholesky(low, N + 2) if R is None else R
        size = N + 2
    else:
        S = jac_S(low, high, N, "section")
        R = banded_cholesky(jac_mult_ops(low, N, "section").M) if R is None else R
        size = N
    inv = upper_inverse_diagonals(R, 7)
    if closed:
        inv[:3] = jac_Rinv_rows(low, size)
    RS = R.to_dense() @ S.to_dense()
    full = RS @ _dense_upper(inv, size)
    lower = RS @ _dense_upper(inv[:3], size)

    scale = max(np.max(np.abs(S.diagonals)), np.finfo(float).tiny)
    interior = max(size - 6, 0) if closure == "section" else max(size - 8, 0)
    violation = 0.0
    for d in (1, 2):
        upper_band = np.diagonal(full, d)[:interior]
        lower_band = np.diagonal(lower, -d)[:interior]
        if upper_band.size:
            violation = max(violation, np.max(np.abs(upper_band - lower_band)))
    for d in (3, 4):
        band = np.diagonal(full, d)[:interior]
        if band.size:
            violation = max(violation, np.max(np.abs(band)))
    if violation > STRUCTURE_TOLERANCE * scale:
        raise StructureError(
            f"R S R^-1 is not symmetric pentadiagonal for {low} <- {high}: violation {violation:.3e}"
        )
    logger.debug("R S R^-1 structure violation %.3e for %s <- %s", violation, low, high)
    diags = [np.diagonal(lower, -d).copy() for d in range(3)]
    out = BandedSymmetric.from_diagonals(*diags, size=size)
    return out.section(N) if closure == "operator" else out


def commutator_norm(A: BandedSymmetric, B: BandedSymmetric, interior: int) -> float:
    """max |(AB - BA)_{ij}| over the leading interior x interior block."""
    a, b = A.to_dense(), B.to_dense()
    return float(np.max(np.abs((a @ b - b @ a)[:interior, :interior]))) if interior else 0.0


def condition_estimate(R: BandedUpper) -> float:
    """||R||_1 ||R^{-1}||_1 from the dense triangular inverse."""
    dense = R.to_dense()
    inverse = solve_triangular(dense, np.eye(R.size))
    return float(np.linalg.norm(dense, 1) * np.linalg.norm(inverse, 1))
