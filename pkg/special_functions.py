"""Orthonormal Jacobi polynomials, associated Legendre functions, 2-D harmonics
and Gauss-Jacobi rules.

Every evaluator is vectorized over points. Normalization constants are formed
with log-gamma so degrees in the thousands do not overflow.
"""
import logging
import warnings
from typing import Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict
from scipy.linalg import eigh_tridiagonal
from scipy.special import gammaln

from errors import DomainError, IndexPairError
from models import GeometryKind, JacobiFamily, JacobiParams

logger = logging.getLogger(__name__)

EPS = np.finfo(float).eps
ArrayLike = Union[float, Sequence[float], np.ndarray]


class QuadratureRule(BaseModel):
    """Gauss rule for the weight (1-x)^alpha (1+x)^beta."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    nodes: np.ndarray
    weights: np.ndarray
    params: JacobiParams

    def integrate(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values) @ self.weights


def _points(x: ArrayLike) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    return np.atleast_1d(arr).ravel(), arr.ndim == 0


def _check_degree(n: int) -> None:
    if n < 0:
        raise DomainError(f"degree must be non-negative, got {n}")


def jacobi_mass(p: JacobiParams) -> float:
    """Total mass of (1-x)^alpha (1+x)^beta on [-1, 1]."""
    a, b = p.alpha, p.beta
    return float(np.exp((a + b + 1) * np.log(2.0) + gammaln(a + 1) + gammaln(b + 1) - gammaln(a + b + 2)))


def jacobi_log_norm(n: ArrayLike, p: JacobiParams) -> np.ndarray:
    """log of <P_n, P_n> for the classical (unnormalized) Jacobi polynomials."""
    k = np.asarray(n, dtype=float)
    a, b = p.alpha, p.beta
    s = a + b
    # (2n+s+1) Gamma(n+s+1) -> Gamma(s+2) at n = 0 (removable when s = -1)
    head = np.where(
        k == 0,
        gammaln(s + 2),
        np.log(np.abs(2 * k + s + 1)) + gammaln(np.where(k == 0, 1.0, k + s + 1)),
    )
    return (s + 1) * np.log(2.0) + gammaln(k + a + 1) + gammaln(k + b + 1) - head - gammaln(k + 1)


def jacobi_recurrence(p: JacobiParams, N: int) -> Tuple[np.ndarray, np.ndarray]:
    """Coefficients of x P_k = b_k P_{k+1} + a_k P_k + b_{k-1} P_{k-1}, k = 0..N-1.

    The diagonal entry at k = 0 uses the analytic limit (beta-alpha)/(alpha+beta+2),
    which removes the 0/0 when alpha + beta is 0 or -1.
    """
    a_, b_ = p.alpha, p.beta
    s = a_ + b_
    k = np.arange(N, dtype=float)
    two = 2 * k + s
    with np.errstate(divide="ignore", invalid="ignore"):
        diag = (b_ * b_ - a_ * a_) / (two * (two + 2))
        ratio = (k + s + 1) / (two + 1)
    if N:
        diag[0] = (b_ - a_) / (s + 2)
        ratio[0] = 1.0
    off = 2 * np.sqrt((k + 1) * (k + a_ + 1) * (k + b_ + 1) * ratio / ((two + 2) ** 2 * (two + 3)))
    return diag, off


def jacobi_table(n: int, p: JacobiParams, x: ArrayLike) -> np.ndarray:
    """Orthonormal P_0..P_n at the points x, shape (n+1, len(x))."""
    _check_degree(n)
    pts, _ = _points(x)
    if np.any(np.abs(pts) > 1.0):
        raise DomainError("Jacobi polynomials are evaluated on [-1, 1]")
    diag, off = jacobi_recurrence(p, n + 1)
    table = np.empty((n + 1, pts.size))
    table[0] = 1.0 / np.sqrt(jacobi_mass(p))
    if n >= 1:
        table[1] = (pts - diag[0]) * table[0] / off[0]
    for k in range(1, n):
        table[k + 1] = ((pts - diag[k]) * table[k] - off[k - 1] * table[k - 1]) / off[k]
    return table


def _jacobi_derivative_last(n: int, p: JacobiParams, pts: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    diag, off = jacobi_recurrence(p, n + 1)
    prev, cur = np.zeros_like(pts), np.full_like(pts, 1.0 / np.sqrt(jacobi_mass(p)))
    dprev, dcur = np.zeros_like(pts), np.zeros_like(pts)
    for k in range(n):
        below = off[k - 1] if k else 0.0
        nxt = ((pts - diag[k]) * cur - below * prev) / off[k]
        dnxt = ((pts - diag[k]) * dcur + cur - below * dprev) / off[k]
        prev, cur, dprev, dcur = cur, nxt, dcur, dnxt
    return cur, dcur


def eval_jacobi_orthonormal(n: int, p: JacobiParams, x: ArrayLike) -> Union[float, np.ndarray]:
    values = jacobi_table(n, p, x)[n]
    return float(values[0]) if np.ndim(x) == 0 else values.reshape(np.shape(x))


def eval_jacobi_classical(n: int, p: JacobiParams, x: ArrayLike) -> Union[float, np.ndarray]:
    """Classical Jacobi polynomial P_n^{(alpha,beta)} (leading coefficient of A&S 22.3)."""
    scale = np.exp(0.5 * jacobi_log_norm(n, p))
    values = scale * jacobi_table(n, p, x)[n]
    return float(values[0]) if np.ndim(x) == 0 else values.reshape(np.shape(x))


def eval_jacobi_alpha_raised(n: int, p: JacobiParams, x: ArrayLike) -> Union[float, np.ndarray]:
    """(1-x) times the orthonormal P_n^{(alpha+1,beta)}, from P_n and P_{n+1} of (alpha, beta).

    Classical form: (1-x) P_n^{(a+1,b)} = 2/(2n+a+b+2) [(n+a+1) P_n^{(a,b)} - (n+1) P_{n+1}^{(a,b)}].
    """
    _check_degree(n)
    raised = p.shifted(d_alpha=1.0)
    log_raised = jacobi_log_norm(n, raised)
    scale = 2.0 / (2 * n + p.alpha + p.beta + 2)
    u = scale * (n + p.alpha + 1) * np.exp(0.5 * (jacobi_log_norm(n, p) - log_raised))
    v = scale * (n + 1) * np.exp(0.5 * (jacobi_log_norm(n + 1, p) - log_raised))
    table = jacobi_table(n + 1, p, x)
    values = u * table[n] - v * table[n + 1]
    return float(values[0]) if np.ndim(x) == 0 else values.reshape(np.shape(x))


def jacobi_half_weight(p: JacobiParams, x: ArrayLike) -> np.ndarray:
    pts, _ = _points(x)
    with np.errstate(divide="ignore"):
        return np.power(1.0 - pts, p.alpha / 2) * np.power(1.0 + pts, p.beta / 2)


def eval_weighted_jacobi(n: int, p: JacobiParams, x: ArrayLike) -> Union[float, np.ndarray]:
    """(1-x)^{alpha/2} (1+x)^{beta/2} times the orthonormal polynomial; orthonormal in L^2."""
    values = jacobi_half_weight(p, x) * jacobi_table(n, p, x)[n]
    return float(values[0]) if np.ndim(x) == 0 else values.reshape(np.shape(x))


def gauss_jacobi_rule(N: int, p: JacobiParams) -> QuadratureRule:
    """Golub-Welsch nodes, Newton-polished to 4 eps, with Christoffel weights."""
    if N < 1:
        raise DomainError(f"quadrature needs at least one node, got {N}")
    diag, off = jacobi_recurrence(p, N)
    if N == 1:
        nodes = diag[:1].copy()
    else:
        nodes = eigh_tridiagonal(diag, off[: N - 1], eigvals_only=True)
        for _ in range(10):
            value, slope = _jacobi_derivative_last(N, p, nodes)
            step = value / slope
            nodes = nodes - step
            if np.max(np.abs(step)) <= 4 * EPS:
                break
        nodes = np.clip(np.sort(nodes), -1.0, 1.0)
    table = jacobi_table(N - 1, p, nodes)
    weights = 1.0 / np.sum(table * table, axis=0)
    return QuadratureRule(nodes=nodes, weights=weights, params=p)


def _family_exponents(family: JacobiFamily) -> Tuple[float, float]:
    a = family.left_power + (family.params.alpha / 2 if family.half_weight else 0.0)
    b = family.right_power + (family.params.beta / 2 if family.half_weight else 0.0)
    return a, b


def _family_degree_shift(family: JacobiFamily) -> int:
    return family.left_power + family.right_power


def connection_oracle(
    N: int,
    family_from: JacobiFamily,
    family_to: JacobiFamily,
    mode: Literal["jacobi", "lebesgue"] = "jacobi",
    rows: Optional[int] = None,
    order: Optional[int] = None,
) -> np.ndarray:
    """Connection coefficients c[l, n] = <to_l, from_n> by Gauss-Jacobi quadrature.

    mode="jacobi" integrates against the Jacobi weight of the target family;
    mode="lebesgue" integrates against dx (use it with half-weighted families).
    """
    rows = N if rows is None else rows
    if N == 0 or rows == 0:
        return np.zeros((rows, N))
    fa, fb = _family_exponents(family_from)
    ta, tb = _family_exponents(family_to)
    wa, wb = fa + ta, fb + tb
    if mode == "jacobi":
        wa += family_to.params.alpha
        wb += family_to.params.beta
    # integer powers go into the rule so the integrand stays a polynomial
    degree = (N - 1) + (rows - 1)
    required = degree // 2 + 1
    points = required if order is None else order
    if points < required:
        warnings.warn(
            f"quadrature order {points} is below the {required} points needed for degree {degree}",
            RuntimeWarning,
            stacklevel=2,
        )
    rule = gauss_jacobi_rule(points, JacobiParams(alpha=wa, beta=wb))
    source = jacobi_table(N - 1, family_from.params, rule.nodes)
    target = jacobi_table(rows - 1, family_to.params, rule.nodes)
    return (target * rule.weights) @ source.T


def eval_assoc_legendre_norm(l: int, m: int, x: ArrayLike, phased: bool = True) -> Union[float, np.ndarray]:
    """Normalized associated Legendre function with unit L^2 norm on [-1, 1].

    phased=True folds the i^{m+|m|} factor of the sphere harmonic into the value,
    which makes it equal to the weighted Jacobi function P^(m,m)_{l-m} (positive
    leading coefficient). phased=False returns the Condon-Shortley convention.
    Negative orders reuse |m|.
    """
    order = abs(m)
    if order > l or l < 0:
        raise IndexPairError(f"associated Legendre function needs |m| <= l, got l={l}, m={m}")
    value = eval_weighted_jacobi(l - order, JacobiParams(alpha=order, beta=order), x)
    if not phased and order % 2:
        value = -value
    return value


def layer_params(kind: GeometryKind, m: int) -> JacobiParams:
    """One-dimensional Jacobi family carrying layer m of the geometry."""
    if kind.kind == "sphere":
        return JacobiParams(alpha=m, beta=m)
    if kind.kind == "disk":
        return JacobiParams(alpha=0.0, beta=m)
    return JacobiParams(alpha=2 * m + kind.beta + kind.gamma + 1, beta=kind.alpha)


def _check_harmonic_indices(kind: GeometryKind, l: int, m: int) -> None:
    if kind.kind == "sphere":
        ok = 0 <= abs(m) <= l
    elif kind.kind == "disk":
        ok = abs(m) <= l and (l - abs(m)) % 2 == 0
    else:
        ok = 0 <= m <= l
    if not ok:
        raise IndexPairError(f"invalid {kind.kind} harmonic indices l={l}, m={m}")


def eval_geometry_harmonic(kind: GeometryKind, indices: Tuple[int, int], point: Tuple[ArrayLike, ArrayLike]):
    """Evaluate the orthonormal harmonic (l, m) of the geometry.

    sphere: point = (theta, phi); disk: point = (r, theta); triangle: point = (x, y).
    Sphere and disk harmonics are complex (e^{i m angle}); triangle harmonics are real.
    """
    l, m = indices
    _check_harmonic_indices(kind, l, m)
    u, v = (np.asarray(c, dtype=float) for c in point)
    shape = np.broadcast(u, v).shape
    u, v = (np.broadcast_to(c, shape).ravel() for c in (u, v))
    order = abs(m)

    if kind.kind == "sphere":
        radial = eval_assoc_legendre_norm(l, m, np.cos(u))
        value = np.exp(1j * m * v) / np.sqrt(2 * np.pi) * radial
    elif kind.kind == "disk":
        k = (l - order) // 2
        if np.any((u < 0) | (u > 1)):
            raise DomainError("disk radius must lie in [0, 1]")
        radial = 2.0 ** ((order + 2) / 2) * u**order * eval_jacobi_orthonormal(k, JacobiParams(alpha=0, beta=order), 2 * u * u - 1)
        value = np.exp(1j * m * v) / np.sqrt(2 * np.pi) * radial
    else:
        if np.any((u < 0) | (v < 0) | (u + v > 1 + 4 * EPS)):
            raise DomainError("triangle points must satisfy x, y >= 0 and x + y <= 1")
        outer = eval_jacobi_orthonormal(l - m, layer_params(kind, m), np.clip(2 * u - 1, -1, 1))
        gap = 1.0 - u
        inner = np.zeros_like(u)
        safe = gap > 0
        t = np.clip(2 * v[safe] / gap[safe] - 1, -1.0, 1.0)
        inner[safe] = (2 * gap[safe]) ** m * eval_jacobi_orthonormal(m, JacobiParams(alpha=kind.gamma, beta=kind.beta), t)
        if m == 0:
            inner[~safe] = 1.0 / np.sqrt(jacobi_mass(JacobiParams(alpha=kind.gamma, beta=kind.beta)))
        value = np.sqrt(2.0) * outer * inner

    value = np.asarray(value).reshape(shape)
    return value[()] if value.ndim == 0 else value
