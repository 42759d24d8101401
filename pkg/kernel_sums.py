"""Cauchy-kernel summation contract used by the secular solver and the
structured eigenvector products.

Evaluation points are stored as (base, offset) pairs: the difference to a
shaft entry is formed as (shaft_j - base_i) - offset_i, so a root stored
relative to its nearest pole keeps its relative accuracy.
"""
import logging
import os
from typing import Dict, Optional, Protocol, Tuple, Type

import numpy as np
from pydantic import BaseModel, ConfigDict

from errors import DomainError, PoleError

logger = logging.getLogger(__name__)

HPT_KERNEL_BACKEND = os.getenv("HPT_KERNEL_BACKEND", "direct")


class CauchyPoints(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    shaft: np.ndarray
    base: np.ndarray
    offset: np.ndarray

    @classmethod
    def absolute(cls, shaft: np.ndarray, points: np.ndarray) -> "CauchyPoints":
        points = np.atleast_1d(np.asarray(points, dtype=float))
        return cls(shaft=np.asarray(shaft, dtype=float), base=points, offset=np.zeros_like(points))

    @property
    def values(self) -> np.ndarray:
        return self.base + self.offset


class CauchyKernel(Protocol):
    """Sums over the kernel 1 / (shaft_j - point_i)."""

    name: str

    def point_sums(self, points: CauchyPoints, weights: np.ndarray, power: int = 1) -> np.ndarray:
        """sum_j w_j / d_ij^power for every point i; weights may carry extra columns."""

    def split_point_sums(
        self, points: CauchyPoints, weights: np.ndarray, power: int, split: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Point sums restricted to j <= split_i and to j > split_i."""

    def shaft_sums(self, points: CauchyPoints, weights: np.ndarray, power: int = 1) -> np.ndarray:
        """sum_i w_i / d_ij^power for every shaft entry j."""

    def log_shaft_sums(self, points: CauchyPoints) -> np.ndarray:
        """sum_i log |d_ij| for every shaft entry j."""

    def log_gap_sums(self, shaft: np.ndarray) -> np.ndarray:
        """sum_{j != i} log |shaft_j - shaft_i| for every shaft entry i."""


class DirectCauchyKernel:
    """Exact O(mn) backend."""

    name = "direct"

    def differences(self, points: CauchyPoints) -> np.ndarray:
        diff = (points.shaft[None, :] - points.base[:, None]) - points.offset[:, None]
        if np.any(diff == 0):
            raise PoleError("kernel evaluated at a shaft entry")
        return diff

    def point_sums(self, points: CauchyPoints, weights: np.ndarray, power: int = 1) -> np.ndarray:
        return (self.differences(points) ** -float(power)) @ weights

    def split_point_sums(self, points, weights, power, split):
        kernel = self.differences(points) ** -float(power)
        left = np.arange(points.shaft.size)[None, :] <= np.asarray(split)[:, None]
        return (kernel * left) @ weights, (kernel * ~left) @ weights

    def shaft_sums(self, points: CauchyPoints, weights: np.ndarray, power: int = 1) -> np.ndarray:
        return (self.differences(points) ** -float(power)).T @ weights

    def log_shaft_sums(self, points: CauchyPoints) -> np.ndarray:
        return np.sum(np.log(np.abs(self.differences(points))), axis=0)

    def log_gap_sums(self, shaft: np.ndarray) -> np.ndarray:
        gaps = np.abs(shaft[None, :] - shaft[:, None])
        np.fill_diagonal(gaps, 1.0)
        return np.sum(np.log(gaps), axis=1)


KERNEL_BACKENDS: Dict[str, Type] = {"direct": DirectCauchyKernel}


def get_kernel(name: Optional[str] = None) -> CauchyKernel:
    name = name or HPT_KERNEL_BACKEND
    try:
        return KERNEL_BACKENDS[name]()
    except KeyError:
        raise DomainError(f"unknown kernel backend {name!r}; available: {sorted(KERNEL_BACKENDS)}") from None
