"""Givens-rotation representations of neighbour connection matrices.

A sequence of size n stands for G_0 G_1 ... G_{n-1} applied to the
(n+stride) x n rectangular identity, with G_k rotating rows k and k+stride.
"""
import logging
from functools import cached_property
from typing import List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.special import gammaln, poch

from errors import DomainError, LengthMismatchError
from models import JacobiParams

logger = logging.getLogger(__name__)

StepKind = Literal["alpha_step", "beta_step"]

# below this degree the entry formulas use Pochhammer products
DIRECT_DEGREE_LIMIT = 30


class GivensSequence(BaseModel):
    """Closed-form rotation sequence; sines and cosines are regenerated on demand."""

    model_config = ConfigDict(frozen=True)

    family_tag: Literal["sh", "alpha_step", "beta_step"]
    size: int = Field(ge=0)
    order: int = 0
    params: Optional[JacobiParams] = None

    @property
    def stride(self) -> int:
        return 2 if self.family_tag == "sh" else 1

    @property
    def cols(self) -> int:
        return self.size

    @property
    def rows(self) -> int:
        return self.size + self.stride

    def coefficients(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.rotation(np.arange(self.size, dtype=float))

    def rotation(self, k):
        """Sine and cosine of rotation k; k may be an index or an array of them."""
        if self.family_tag == "sh":
            m = self.order
            denom = (k + 2 * m + 3) * (k + 2 * m + 4)
            return np.sqrt((k + 1) * (k + 2) / denom), np.sqrt((2 * m + 2) * (2 * k + 2 * m + 5) / denom)
        a, b = self.params.alpha, self.params.beta
        if self.family_tag == "beta_step":
            a, b = b, a
        s = a + b
        denom = (k + a + 2) * (k + s + 2)
        sines = np.sqrt((k + 1) * (k + b + 1) / denom)
        cosines = np.sqrt((a + 1) * (2 * k + s + 3) / denom)
        if self.family_tag == "beta_step":
            sines = -sines
        return sines, cosines

    @cached_property
    def _cached(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.coefficients()

    @property
    def sines(self) -> np.ndarray:
        return self._cached[0]

    @property
    def cosines(self) -> np.ndarray:
        return self._cached[1]


def sh_givens_sequence(m: int, n: int) -> GivensSequence:
    """Rotations connecting order m+2 associated Legendre functions to order m."""
    if m < 0 or n < 0:
        raise DomainError(f"order and size must be non-negative, got m={m}, n={n}")
    return GivensSequence(family_tag="sh", size=n, order=m)


def jacobi_givens_sequence(p: JacobiParams, which: StepKind, n: int) -> GivensSequence:
    """alpha_step: (1-x) P^(a+2,b) -> P^(a,b); beta_step: (1+x) P^(a,b+2) -> P^(a,b)."""
    if n < 0:
        raise DomainError(f"size must be non-negative, got {n}")
    return GivensSequence(family_tag=which, size=n, params=p)


def rotation_count(seq: GivensSequence) -> int:
    return seq.size


def apply(
    seq: GivensSequence,
    vec: np.ndarray,
    direction: Literal["forward", "inverse"] = "forward",
    cache: bool = False,
) -> np.ndarray:
    """Multiply by the rotation product (forward) or by its transpose (inverse).

    vec may be a vector or a matrix whose columns are transformed together.
    """
    x = np.asarray(vec, dtype=float)
    expected = seq.cols if direction == "forward" else seq.rows
    if x.shape[0] != expected:
        raise LengthMismatchError(
            f"{direction} application of a size-{seq.size} {seq.family_tag} sequence needs "
            f"{expected} rows, got {x.shape[0]}"
        )
    rotation = (lambda k: (seq.sines[k], seq.cosines[k])) if cache else (lambda k: seq.rotation(float(k)))
    st = seq.stride
    if direction == "forward":
        y = np.zeros((seq.rows,) + x.shape[1:])
        y[: seq.cols] = x
        for k in range(seq.size - 1, -1, -1):
            s, c = rotation(k)
            top, bottom = y[k].copy(), y[k + st]
            y[k] = c * top + s * bottom
            y[k + st] = c * bottom - s * top
        return y
    y = x.copy()
    for k in range(seq.size):
        s, c = rotation(k)
        top, bottom = y[k].copy(), y[k + st]
        y[k] = c * top - s * bottom
        y[k + st] = s * top + c * bottom
    return y[: seq.cols]


def dense_from_givens(seq: GivensSequence) -> np.ndarray:
    return apply(seq, np.eye(seq.cols), "forward", cache=True)


def compose_steps(sequences: Sequence[GivensSequence]) -> np.ndarray:
    """Dense product of consecutive steps, listed in the order they are applied."""
    if not sequences:
        raise DomainError("compose_steps needs at least one sequence")
    result = dense_from_givens(sequences[0])
    for seq in sequences[1:]:
        if seq.cols != result.shape[0]:
            raise LengthMismatchError(
                f"cannot chain a {seq.cols}-column step after a {result.shape[0]}-row step"
            )
        result = apply(seq, result, "forward", cache=True)
    return result


def _grid(rows: int, cols: int) -> Tuple[np.ndarray, np.ndarray]:
    l, n = np.meshgrid(np.arange(rows, dtype=float), np.arange(cols, dtype=float), indexing="ij")
    return l, n


def sh_connection_entries(m: int, rows: int, cols: int) -> np.ndarray:
    """Entry matrix c[l, n] connecting P^{m+2}_{n+m+2} to P^m_{l+m}."""
    if m < 0:
        raise DomainError(f"order must be non-negative, got {m}")
    l, n = _grid(rows, cols)
    upper = (l <= n) & ((l + n) % 2 == 0)
    with np.errstate(all="ignore"):
        log_mag = 0.5 * (
            gammaln(l + 2 * m + 1) - gammaln(l + 1) - np.log(l + m + 0.5)
            + np.log(n + m + 2.5) + gammaln(n + 1) - gammaln(n + 2 * m + 5)
        )
        direct = np.sqrt(poch(l + 1, 2 * m) / ((l + m + 0.5) * poch(n + 1, 2 * m + 4)) * (n + m + 2.5))
    small = np.maximum(l, n) < DIRECT_DEGREE_LIMIT
    magnitude = np.where(small, direct, np.exp(log_mag))
    out = np.where(upper, (2 * l + 2 * m + 1) * (2 * m + 2) * magnitude, 0.0)
    sub = l == n + 2
    out = np.where(sub, -np.sqrt((n + 1) * (n + 2) / ((n + 2 * m + 3) * (n + 2 * m + 4))), out)
    return out


def _alpha_step_entries(a: float, b: float, rows: int, cols: int) -> np.ndarray:
    s = a + b
    l, n = _grid(rows, cols)
    d = n - l
    with np.errstate(all="ignore"):
        # (2l+s+1) Gamma(l+s+1) -> Gamma(s+2) at l = 0
        head_log = np.where(l == 0, gammaln(s + 2), np.log(np.abs(2 * l + s + 1)) + gammaln(np.where(l == 0, 1.0, l + s + 1)))
        log_mag = 0.5 * (
            head_log + gammaln(l + a + 1) - gammaln(l + b + 1) - gammaln(l + 1)
            + np.log(2 * n + s + 3) + gammaln(n + b + 1) + gammaln(n + 1) - gammaln(n + s + 3) - gammaln(n + a + 3)
        )
        head_direct = np.where(
            l == 0,
            1.0 / poch(s + 2, d + 1),
            (2 * l + s + 1) / poch(l + s + 1, d + 2),
        )
        direct = np.sqrt(
            head_direct / poch(l + a + 1, d + 2) * poch(l + b + 1, d) * poch(l + 1, d) * (2 * n + s + 3)
        )
    small = np.maximum(l, n) < DIRECT_DEGREE_LIMIT
    magnitude = np.where(small, direct, np.exp(log_mag))
    out = np.where(l <= n, (a + 1) * magnitude, 0.0)
    sub = l == n + 1
    return np.where(sub, -np.sqrt((n + 1) * (n + b + 1) / ((n + a + 2) * (n + s + 2))), out)


def jacobi_connection_entries(p: JacobiParams, which: StepKind, rows: int, cols: int) -> np.ndarray:
    """Entry matrix of an alpha_step or beta_step connection."""
    if which == "alpha_step":
        return _alpha_step_entries(p.alpha, p.beta, rows, cols)
    swapped = _alpha_step_entries(p.beta, p.alpha, rows, cols)
    l, n = _grid(rows, cols)
    return np.where((n - l) % 2 == 0, swapped, -swapped)


def jacobi_step_chain(target: JacobiParams, source: JacobiParams) -> List[Tuple[JacobiParams, StepKind]]:
    """One-parameter steps from source down to target, in application order.

    beta steps come first, then alpha steps; each entry names the target
    parameters of that step.
    """
    da, db = source.alpha - target.alpha, source.beta - target.beta
    if da < 0 or db < 0 or not float(da / 2).is_integer() or not float(db / 2).is_integer():
        raise DomainError(
            f"parameter jumps must be non-negative even integers, got ({da:g}, {db:g})"
        )
    steps: List[Tuple[JacobiParams, StepKind]] = []
    alpha, beta = source.alpha, source.beta
    for _ in range(int(db // 2)):
        beta -= 2
        steps.append((JacobiParams(alpha=alpha, beta=beta), "beta_step"))
    for _ in range(int(da // 2)):
        alpha -= 2
        steps.append((JacobiParams(alpha=alpha, beta=beta), "alpha_step"))
    return steps


def jacobi_chain_sequences(target: JacobiParams, source: JacobiParams, n: int) -> List[GivensSequence]:
    """Givens sequences realizing source -> target on n source columns."""
    sequences = []
    size = n
    for params, which in jacobi_step_chain(target, source):
        sequences.append(jacobi_givens_sequence(params, which, size))
        size += 1
    return sequences


def sh_chain_sequences(m: int, mu: int, n: int) -> List[GivensSequence]:
    """Givens sequences carrying order mu down to order m (mu - m even) on n columns."""
    if mu < m or (mu - m) % 2:
        raise DomainError(f"order step must be a non-negative even integer, got {m} <- {mu}")
    sequences = []
    size = n
    for order in range(mu - 2, m - 1, -2):
        sequences.append(sh_givens_sequence(order, size))
        size += 2
    return sequences
