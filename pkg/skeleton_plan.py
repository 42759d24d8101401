"""Dyadic skeleton plans: layers are carried to their block base by Givens
rotations, then down a dyadic tree of precomputed layer decompositions.

Degree n is the bandlimit (degrees 0..n-1). Sphere and disk coefficient
blocks have 2n-1 columns ordered 0, -1, +1, -2, +2, ...; triangle blocks have
n columns, one per inner index. Rows are degrees.
"""
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy import stats

from connection_givens import GivensSequence, apply, jacobi_chain_sequences, sh_chain_sequences
from errors import DegreeMismatchError, DomainError, LengthMismatchError, PlanStateError
from gevp_solver import LayerDecomposition, default_buffer, layer_decomposition
from models import CostReport, GeometryKind, JacobiParams, NodeCost
from special_functions import layer_params

logger = logging.getLogger(__name__)

Direction = Literal["to_base", "from_base"]
Representation = Literal["native", "base"]


# ── layout ──


def column_orders(kind: GeometryKind, n: int) -> np.ndarray:
    """Signed order of every coefficient column."""
    if kind.kind == "triangle":
        return np.arange(n)
    cols = np.arange(2 * n - 1)
    magnitude = (cols + 1) // 2
    return np.where(cols % 2 == 1, -magnitude, magnitude)


def layer_length(kind: GeometryKind, n: int, order: int) -> int:
    if kind.kind == "disk":
        return max((n - order + 1) // 2, 0)
    return max(n - order, 0)


def layer_rows(kind: GeometryKind, n: int, order: int) -> np.ndarray:
    """Degrees carried by a layer expressed in the family of `order`."""
    return np.arange(order, n, 2) if kind.kind == "disk" else np.arange(order, n)


def layer_index(kind: GeometryKind, order: int) -> Union[int, JacobiParams]:
    return order if kind.kind == "sphere" else layer_params(kind, order)


def family_of(kind: GeometryKind, order: int) -> int:
    return 0 if kind.kind == "triangle" else order % 2


class CoefficientBlock(BaseModel):
    """Coefficient matrix of shape (n, columns).

    In the native representation column m holds the coefficients of layer m
    (rows with degree below |m|, and for the disk rows of the wrong parity,
    are exact zeros). In the base representation every column is expressed
    in the base layer of its family.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    kind: GeometryKind
    degree: int
    values: np.ndarray
    representation: Representation = "native"

    @model_validator(mode="after")
    def _check_shape(self) -> "CoefficientBlock":
        expected = (self.degree, column_orders(self.kind, self.degree).size)
        if self.values.shape != expected:
            raise ValueError(f"{self.kind.kind} block of degree {self.degree} needs shape {expected}, got {self.values.shape}")
        return self

    def support_mask(self) -> np.ndarray:
        mask = np.zeros(self.values.shape, dtype=bool)
        for col, order in enumerate(column_orders(self.kind, self.degree)):
            start = abs(int(order)) if self.representation == "native" else family_of(self.kind, abs(int(order)))
            mask[layer_rows(self.kind, self.degree, start), col] = True
        return mask

    @classmethod
    def zeros(cls, kind: GeometryKind, n: int, representation: Representation = "native") -> "CoefficientBlock":
        return cls(kind=kind, degree=n, values=np.zeros((n, column_orders(kind, n).size)), representation=representation)

    @classmethod
    def random(cls, kind: GeometryKind, n: int, seed: int = 0) -> "CoefficientBlock":
        empty = cls.zeros(kind, n)
        rng = np.random.default_rng(seed)
        values = np.where(empty.support_mask(), rng.standard_normal(empty.values.shape), 0.0)
        return cls(kind=kind, degree=n, values=values)


# ── plan structure ──


def lowbit(s: int) -> int:
    return s & -s


def block_count(n: int, b: int, family: int) -> int:
    return -(-(n - family) // b) if n > family else 0


def resolve_block(kind: GeometryKind, n: int, block: Union[str, int] = "auto") -> int:
    if n < 1:
        raise DomainError(f"degree must be >= 1, got {n}")
    if block == "auto":
        b = max(2, round(math.sqrt(n)))
        if kind.order_step == 2 and b % 2:
            b += 1
        return min(b, n)
    b = int(block)
    if b < 1 or b > n:
        raise DomainError(f"block size must lie in [1, {n}], got {b}")
    if kind.order_step == 2 and b % 2 and b < n:
        raise DomainError(f"{kind.kind} blocks must hold an even number of orders, got {b}")
    return b


class PlanNode(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    family: int
    level: int
    source_block: int
    target_block: int
    source_base: int
    target_base: int
    section: int
    buffer: int
    decomposition: Optional[LayerDecomposition] = None


class TransformPlan(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    kind: GeometryKind
    degree: int
    block: int
    nodes: List[PlanNode]

    @property
    def families(self) -> List[int]:
        return [f for f in self.kind.parity_families if f < self.degree]

    def block_counts(self) -> Dict[int, int]:
        return {f: block_count(self.degree, self.block, f) for f in self.families}

    @property
    def precomputed(self) -> bool:
        return all(node.decomposition is not None for node in self.nodes)

    def node_for(self, family: int, source_block: int) -> PlanNode:
        for node in self.nodes:
            if node.family == family and node.source_block == source_block:
                return node
        raise PlanStateError(f"plan has no arrow out of block {source_block} in family {family}")

    def path(self, order: int) -> List[int]:
        """Blocks visited by a layer on its way to the base block."""
        s = order // self.block
        blocks = [s]
        while s:
            s -= lowbit(s)
            blocks.append(s)
        return blocks

    def storage_bytes(self) -> int:
        return sum(node.decomposition.storage_bytes for node in self.nodes if node.decomposition is not None)


def build_plan(kind: GeometryKind, n: int, block: Union[str, int] = "auto", buffer: Optional[int] = None) -> TransformPlan:
    """Skeleton of the dyadic tree: one arrow s -> s - lowbit(s) per non-base block and family."""
    b = resolve_block(kind, n, block)
    nodes = []
    for family in (f for f in kind.parity_families if f < n):
        count = block_count(n, b, family)
        depth = max(count - 1, 0).bit_length()
        for s in range(1, count):
            t = s - lowbit(s)
            source_base, target_base = s * b + family, t * b + family
            N = layer_length(kind, n, source_base)
            nodes.append(PlanNode(
                family=family,
                level=depth - (lowbit(s).bit_length() - 1),
                source_block=s,
                target_block=t,
                source_base=source_base,
                target_base=target_base,
                section=N,
                buffer=default_buffer(N) if buffer is None else buffer,
            ))
    logger.debug("plan %s n=%d b=%d: %d arrows", kind.kind, n, b, len(nodes))
    return TransformPlan(kind=kind, degree=n, block=b, nodes=nodes)


def _solve_node(kind: GeometryKind, node: PlanNode) -> PlanNode:
    dec = layer_decomposition(
        kind,
        layer_index(kind, node.target_base),
        layer_index(kind, node.source_base),
        node.section,
        node.buffer,
    )
    logger.debug("node %d -> %d (family %d): %.3fs, residual %.2e", node.source_base, node.target_base, node.family, dec.seconds, dec.residual)
    return node.model_copy(update={"decomposition": dec})


def precompute(plan: TransformPlan, threads: int = 1) -> TransformPlan:
    """Attach validated layer decompositions to every arrow; precomputed plans are returned unchanged."""
    pending = [node for node in plan.nodes if node.decomposition is None]
    if not pending:
        return plan
    started = time.perf_counter()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            solved = list(pool.map(lambda node: _solve_node(plan.kind, node), pending))
    else:
        solved = [_solve_node(plan.kind, node) for node in pending]
    by_key = {(node.family, node.source_block): node for node in solved}
    nodes = [by_key.get((node.family, node.source_block), node) for node in plan.nodes]
    logger.info("precomputed %d decompositions in %.3fs", len(solved), time.perf_counter() - started)
    return plan.model_copy(update={"nodes": nodes})


# ── execution ──


def within_block_chain(kind: GeometryKind, n: int, order: int, base: int) -> List[GivensSequence]:
    """Rotation sequences carrying layer `order` down to layer `base`, in application order."""
    if order == base:
        return []
    N = layer_length(kind, n, order)
    if kind.kind == "sphere":
        return sh_chain_sequences(base, order, N)
    return jacobi_chain_sequences(layer_params(kind, base), layer_params(kind, order), N)


def _carry(chain: List[GivensSequence], x: np.ndarray, direction: Direction) -> np.ndarray:
    if direction == "to_base":
        for seq in chain:
            x = apply(seq, x, "forward")
        return x
    for seq in reversed(chain):
        x = apply(seq, x, "inverse")
    return x


def _layer_groups(plan: TransformPlan) -> Dict[int, List[Tuple[int, np.ndarray]]]:
    """Columns sharing an order, grouped per family."""
    orders = column_orders(plan.kind, plan.degree)
    groups: Dict[int, List[Tuple[int, np.ndarray]]] = {f: [] for f in plan.families}
    for order in range(plan.degree):
        cols = np.flatnonzero(np.abs(orders) == order)
        groups[family_of(plan.kind, order)].append((order, cols))
    return groups


def execute(
    plan: TransformPlan,
    coeffs: CoefficientBlock,
    direction: Direction = "to_base",
    threads: int = 1,
    timings: Optional[Dict[Tuple[int, int], float]] = None,
) -> CoefficientBlock:
    """to_base carries every layer to the base layer of its family; from_base is its exact transpose."""
    if not plan.precomputed:
        raise PlanStateError("plan must be precomputed before execution")
    if coeffs.degree != plan.degree or coeffs.kind != plan.kind:
        raise DegreeMismatchError(
            f"coefficients are {coeffs.kind.kind} degree {coeffs.degree}, plan is {plan.kind.kind} degree {plan.degree}"
        )
    expected = "native" if direction == "to_base" else "base"
    if coeffs.representation != expected:
        raise DomainError(f"{direction} expects {expected} coefficients, got {coeffs.representation}")

    out = np.zeros_like(coeffs.values)
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        for family, layers in _layer_groups(plan).items():
            if direction == "to_base":
                _to_base(plan, family, layers, coeffs.values, out, pool, timings)
            else:
                _from_base(plan, family, layers, coeffs.values, out, pool, timings)
    finally:
        if pool is not None:
            pool.shutdown()
    return CoefficientBlock(kind=plan.kind, degree=plan.degree, values=out, representation="base" if direction == "to_base" else "native")


def _map(pool: Optional[ThreadPoolExecutor], fn, items):
    return list(pool.map(fn, items)) if pool is not None else [fn(item) for item in items]


def _apply_node(node: PlanNode, X: np.ndarray, transpose: bool, timings) -> np.ndarray:
    started = time.perf_counter()
    dec = node.decomposition
    Y = dec.apply_transpose(X) if transpose else dec.apply(X)
    if timings is not None:
        key = (node.family, node.source_block)
        timings[key] = timings.get(key, 0.0) + time.perf_counter() - started
    return Y


def _to_base(plan, family, layers, values, out, pool, timings) -> None:
    kind, n, b = plan.kind, plan.degree, plan.block

    def carry(item):
        order, cols = item
        base = (order // b) * b + family
        x = values[np.ix_(layer_rows(kind, n, order), cols)]
        return order // b, cols, _carry(within_block_chain(kind, n, order, base), x, "to_base")

    blocks: Dict[int, List[Tuple[np.ndarray, np.ndarray]]] = {}
    for s, cols, x in _map(pool, carry, layers):
        blocks.setdefault(s, []).append((cols, x))
    # a block only feeds lower blocks, so descending order sees every input first
    for s in sorted(blocks, reverse=True):
        if s == 0:
            continue
        node = plan.node_for(family, s)
        cols = np.concatenate([c for c, _ in blocks[s]])
        Y = _apply_node(node, np.hstack([x for _, x in blocks[s]]), False, timings)
        blocks.setdefault(node.target_block, []).append((cols, Y))
    rows = layer_rows(kind, n, family)
    for cols, x in blocks.get(0, []):
        out[np.ix_(rows, cols)] = x


def _from_base(plan, family, layers, values, out, pool, timings) -> None:
    kind, n, b = plan.kind, plan.degree, plan.block
    rows = layer_rows(kind, n, family)
    # every layer starts at the base block and is routed along its path in reverse
    routes = {order: plan.path(order)[::-1] for order, _ in layers}
    cols_of = dict(layers)
    held: Dict[int, Dict[int, np.ndarray]] = {0: {order: values[np.ix_(rows, cols)] for order, cols in layers}}
    for s in range(1, block_count(n, b, family)):
        node = plan.node_for(family, s)
        parent = held.get(node.target_block, {})
        moving = [order for order in parent if s in routes[order]]
        if not moving:
            continue
        widths = [parent[order].shape[1] for order in moving]
        Y = _apply_node(node, np.hstack([parent.pop(order) for order in moving]), True, timings)
        pieces = np.split(Y, np.cumsum(widths)[:-1], axis=1)
        held.setdefault(s, {}).update(zip(moving, pieces))

    def carry(item):
        s, order, x = item
        base = s * b + family
        return order, _carry(within_block_chain(kind, n, order, base), x, "from_base")

    items = [(s, order, x) for s, group in held.items() for order, x in group.items()]
    for order, x in _map(pool, carry, items):
        out[np.ix_(layer_rows(kind, n, order), cols_of[order])] = x


def all_givens_transform(kind: GeometryKind, coeffs: CoefficientBlock) -> CoefficientBlock:
    """Reference to_base path that uses rotations only."""
    plan = build_plan(kind, coeffs.degree, block=coeffs.degree)
    return execute(plan, coeffs, "to_base")


# ── cost accounting ──


def _chain_rotations(kind: GeometryKind, n: int, order: int, base: int) -> int:
    return sum(seq.size for seq in within_block_chain(kind, n, order, base))


def _columns(kind: GeometryKind, order: int) -> int:
    return 1 if kind.kind == "triangle" or order == 0 else 2


def givens_rotation_count(kind: GeometryKind, n: int, b: int) -> int:
    """Rotations applied by one execution with block size b."""
    total = 0
    for order in range(n):
        base = (order // b) * b + family_of(kind, order)
        total += _columns(kind, order) * _chain_rotations(kind, n, order, base)
    return total


def all_givens_rotation_count(kind: GeometryKind, n: int) -> int:
    """Rotations applied when every layer is carried to its base by rotations alone."""
    return givens_rotation_count(kind, n, n)


def decomposition_count(kind: GeometryKind, n: int, b: int) -> int:
    return sum(max(block_count(n, b, f) - 1, 0) for f in kind.parity_families if f < n)


def cost_report(plan: TransformPlan, timings: Optional[Dict[Tuple[int, int], float]] = None) -> CostReport:
    if not plan.precomputed:
        raise PlanStateError("cost report needs a precomputed plan")
    timings = timings or {}
    counts = plan.block_counts()
    nodes = []
    for node in plan.nodes:
        dec = node.decomposition
        nodes.append(NodeCost(
            level=node.level,
            family=node.family,
            source_base=node.source_base,
            target_base=node.target_base,
            section=node.section,
            buffer=node.buffer,
            storage_bytes=dec.storage_bytes,
            precompute_seconds=dec.seconds,
            execute_seconds=timings.get((node.family, node.source_block), 0.0),
            residual=dec.residual,
            condition=dec.condition,
        ))
    max_path = max((len(plan.path(order)) - 1 for order in range(plan.degree)), default=0)
    return CostReport(
        kind=plan.kind.kind,
        degree=plan.degree,
        block=plan.block,
        decompositions=len(plan.nodes),
        decompositions_per_family=[sum(1 for node in plan.nodes if node.family == f) for f in plan.families],
        givens_rotations=givens_rotation_count(plan.kind, plan.degree, plan.block),
        all_givens_rotations=all_givens_rotation_count(plan.kind, plan.degree),
        storage_bytes=plan.storage_bytes(),
        max_path_length=max_path,
        path_bound=max((max(c, 1) - 1).bit_length() for c in counts.values()) if counts else 0,
        nodes=nodes,
    )


class GrowthFit(BaseModel):
    slope: float
    intercept: float
    low: float
    high: float
    points: int


def fit_growth(ns, seconds) -> GrowthFit:
    """Least-squares slope of log(seconds) against log(n) with a 95% confidence interval."""
    x = np.log(np.asarray(ns, dtype=float))
    y = np.log(np.maximum(np.asarray(seconds, dtype=float), np.finfo(float).tiny))
    if x.size != y.size:
        raise LengthMismatchError(f"{x.size} sizes against {y.size} timings")
    if x.size < 2:
        raise DomainError("a growth fit needs at least two sizes")
    fit = stats.linregress(x, y)
    if x.size > 2:
        half = stats.t.ppf(0.975, x.size - 2) * fit.stderr
    else:
        half = float("nan")
    return GrowthFit(slope=fit.slope, intercept=fit.intercept, low=fit.slope - half, high=fit.slope + half, points=int(x.size))
