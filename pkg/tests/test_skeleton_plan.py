"""Tests for dyadic skeleton plans and their execution."""
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

import numpy as np
import pytest
from numpy.testing import assert_allclose

from errors import DegreeMismatchError, DomainError, LengthMismatchError, PlanStateError
from models import GeometryKind
from skeleton_plan import (
    CoefficientBlock,
    all_givens_rotation_count,
    all_givens_transform,
    block_count,
    build_plan,
    column_orders,
    cost_report,
    decomposition_count,
    execute,
    fit_growth,
    givens_rotation_count,
    layer_length,
    lowbit,
    precompute,
    resolve_block,
    within_block_chain,
)

SPHERE = GeometryKind(kind="sphere")
DISK = GeometryKind(kind="disk")
TRIANGLE = GeometryKind(kind="triangle", alpha=0.5, beta=0.0, gamma=1.0)
KINDS = [SPHERE, DISK, TRIANGLE]


@pytest.fixture(scope="module")
def plans():
    """One precomputed plan per geometry, small enough for dense references."""
    return {kind.kind: precompute(build_plan(kind, 16, 4)) for kind in KINDS}


def _relative(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


# ── layout ──

def test_column_orders():
    """Sphere and disk columns run 0, -1, +1, -2, +2; triangle columns run 0..n-1."""
    assert column_orders(SPHERE, 3).tolist() == [0, -1, 1, -2, 2]
    assert column_orders(TRIANGLE, 3).tolist() == [0, 1, 2]


def test_layer_lengths():
    """Disk layers hold every other degree."""
    assert layer_length(SPHERE, 8, 3) == 5
    assert layer_length(DISK, 8, 3) == 3
    assert layer_length(DISK, 8, 8) == 0
    assert layer_length(TRIANGLE, 8, 0) == 8


def test_random_block_respects_support():
    """Random native blocks are zero outside their layer rows."""
    for kind in KINDS:
        block = CoefficientBlock.random(kind, 9, seed=1)
        assert np.all(block.values[~block.support_mask()] == 0.0)
        assert np.count_nonzero(block.values) == np.count_nonzero(block.support_mask())


def test_block_shape_is_validated():
    """A coefficient matrix of the wrong shape is rejected."""
    with pytest.raises(ValueError):
        CoefficientBlock(kind=SPHERE, degree=4, values=np.zeros((4, 4)))


# ── structure ──

def test_lowbit_and_block_count():
    """lowbit isolates the lowest set bit; families skip their first order."""
    assert [lowbit(s) for s in (1, 2, 6, 8, 12)] == [1, 2, 2, 8, 4]
    assert block_count(8, 2, 0) == 4
    assert block_count(8, 2, 1) == 4
    assert block_count(1, 2, 1) == 0


def test_resolve_block():
    """auto picks about sqrt(n), even on the sphere and the disk; bad sizes are rejected."""
    assert resolve_block(SPHERE, 100) == 10
    assert resolve_block(SPHERE, 49) == 8
    assert resolve_block(TRIANGLE, 49) == 7
    assert resolve_block(SPHERE, 2) == 2
    with pytest.raises(DomainError):
        resolve_block(SPHERE, 0)
    with pytest.raises(DomainError):
        resolve_block(SPHERE, 10, 3)
    with pytest.raises(DomainError):
        resolve_block(TRIANGLE, 10, 11)


def test_decomposition_count_small():
    """n = 8, b = 2: three arrows per family on the sphere."""
    plan = build_plan(SPHERE, 8, 2)
    assert len(plan.nodes) == 6
    assert decomposition_count(SPHERE, 8, 2) == 6
    assert sorted((node.source_base, node.target_base) for node in plan.nodes if node.family == 0) == [(2, 0), (4, 0), (6, 4)]
    assert sorted((node.source_base, node.target_base) for node in plan.nodes if node.family == 1) == [(3, 1), (5, 1), (7, 5)]


def test_ragged_last_block_keeps_its_own_arrow():
    """n = 10, b = 4: the short tail of each family is a block of its own."""
    assert block_count(10, 4, 0) == 3
    plan = build_plan(SPHERE, 10, 4)
    arrows = sorted((node.family, node.source_base, node.target_base, node.section) for node in plan.nodes)
    assert arrows == [(0, 4, 0, 6), (0, 8, 0, 2), (1, 5, 1, 5), (1, 9, 1, 1)]


def test_single_block_has_no_decompositions():
    """b = n leaves every layer to the rotations."""
    for kind in KINDS:
        assert build_plan(kind, 12, 12).nodes == []
        assert decomposition_count(kind, 12, 12) == 0


@pytest.mark.parametrize("blocks", [2, 4, 8, 16, 32])
def test_power_of_two_blocks(blocks):
    """B blocks in a family need B - 1 arrows."""
    plan = build_plan(TRIANGLE, 3 * blocks, 3)
    assert len(plan.nodes) == blocks - 1


@pytest.mark.parametrize("n,b", [(64, 4), (100, 6), (37, 3)])
def test_path_length_bound(n, b):
    """No layer crosses more than ceil(log2 B) arrows."""
    plan = build_plan(TRIANGLE, n, b)
    bound = (block_count(n, b, 0) - 1).bit_length()
    assert max(len(plan.path(order)) - 1 for order in range(n)) <= bound
    assert plan.path(0) == [0]
    assert plan.path(7 * b) == [7, 6, 4, 0]


def test_levels_count_down_to_the_root():
    """Arrows into block 0 from the largest power of two sit at level 1."""
    plan = build_plan(TRIANGLE, 32, 4)
    levels = {node.source_block: node.level for node in plan.nodes}
    assert levels[4] == 1
    assert levels[2] == 2
    assert levels[1] == 3
    assert levels[3] == 3


# ── precompute ──

def test_precompute_attaches_every_decomposition(plans):
    """Every arrow carries a validated decomposition."""
    for plan in plans.values():
        assert plan.precomputed
        for node in plan.nodes:
            assert node.decomposition.section == node.section
            assert node.decomposition.residual <= 1e-8


def test_precompute_is_idempotent(plans):
    """A precomputed plan comes back unchanged."""
    plan = plans["sphere"]
    assert precompute(plan) is plan


def test_precompute_threads_match_serial():
    """Parallel precomputation gives the same decompositions."""
    skeleton = build_plan(DISK, 12, 2)
    serial = precompute(skeleton)
    pooled = precompute(skeleton, threads=3)
    for a, b in zip(serial.nodes, pooled.nodes):
        assert (a.source_base, a.target_base) == (b.source_base, b.target_base)
        assert_allclose(a.decomposition.U, b.decomposition.U, rtol=0, atol=0)


def test_storage_is_sum_of_nodes(plans):
    """Plan storage adds up the node payloads."""
    plan = plans["disk"]
    assert plan.storage_bytes() == sum(node.decomposition.storage_bytes for node in plan.nodes)
    assert plan.storage_bytes() > 0


# ── execution ──

@pytest.mark.parametrize("name", ["sphere", "disk", "triangle"])
def test_round_trip(plans, name):
    """from_base(to_base(x)) recovers x."""
    plan = plans[name]
    x = CoefficientBlock.random(plan.kind, plan.degree, seed=3)
    y = execute(plan, x, "to_base")
    assert y.representation == "base"
    back = execute(plan, y, "from_base")
    assert back.representation == "native"
    assert _relative(back.values, x.values) <= 1e-10


@pytest.mark.parametrize("name", ["sphere", "disk", "triangle"])
def test_route_matches_all_givens(plans, name):
    """The skeleton route equals carrying every layer by rotations alone."""
    plan = plans[name]
    x = CoefficientBlock.random(plan.kind, plan.degree, seed=4)
    fast = execute(plan, x, "to_base")
    reference = all_givens_transform(plan.kind, x)
    assert _relative(fast.values, reference.values) <= 1e-9


@pytest.mark.parametrize("name", ["sphere", "disk", "triangle"])
def test_to_base_is_an_isometry(plans, name):
    """Norms are preserved and base blocks stay in their support."""
    plan = plans[name]
    x = CoefficientBlock.random(plan.kind, plan.degree, seed=5)
    y = execute(plan, x, "to_base")
    assert abs(np.linalg.norm(y.values) / np.linalg.norm(x.values) - 1) <= 1e-10
    assert np.all(y.values[~y.support_mask()] == 0.0)


def test_zero_in_zero_out(plans):
    """The zero block maps to the zero block."""
    plan = plans["triangle"]
    y = execute(plan, CoefficientBlock.zeros(plan.kind, plan.degree), "to_base")
    assert not np.any(y.values)


def test_single_layer_moves_to_its_base(plans):
    """A lone order-0 column is already in its base and passes through."""
    plan = plans["sphere"]
    values = np.zeros((plan.degree, 2 * plan.degree - 1))
    values[:, 0] = np.arange(1.0, plan.degree + 1)
    x = CoefficientBlock(kind=plan.kind, degree=plan.degree, values=values)
    y = execute(plan, x, "to_base")
    assert_allclose(y.values, values, rtol=0, atol=0)


def test_threads_and_timings(plans):
    """Threaded execution matches serial execution and timings cover each arrow."""
    plan = plans["disk"]
    x = CoefficientBlock.random(plan.kind, plan.degree, seed=6)
    timings = {}
    serial = execute(plan, x, "to_base", timings=timings)
    pooled = execute(plan, x, "to_base", threads=4)
    assert_allclose(pooled.values, serial.values, rtol=0, atol=1e-15)
    assert set(timings) == {(node.family, node.source_block) for node in plan.nodes}


def test_execute_requires_precompute():
    """Skeleton plans cannot run."""
    plan = build_plan(SPHERE, 8, 2)
    with pytest.raises(PlanStateError):
        execute(plan, CoefficientBlock.random(SPHERE, 8))
    with pytest.raises(PlanStateError):
        cost_report(plan)


def test_execute_checks_degree_and_representation(plans):
    """Mismatched degrees and wrong representations are rejected."""
    plan = plans["sphere"]
    with pytest.raises(DegreeMismatchError):
        execute(plan, CoefficientBlock.random(SPHERE, plan.degree - 2))
    with pytest.raises(DegreeMismatchError):
        execute(plan, CoefficientBlock.random(DISK, plan.degree))
    with pytest.raises(DomainError):
        execute(plan, CoefficientBlock.random(SPHERE, plan.degree), "from_base")


def test_within_block_chain():
    """A layer already at its base has no rotations; others step down to it."""
    assert within_block_chain(SPHERE, 10, 4, 4) == []
    chain = within_block_chain(SPHERE, 10, 7, 5)
    assert [seq.size for seq in chain] == [3]
    assert len(within_block_chain(TRIANGLE, 10, 3, 0)) == 3


# ── cost accounting ──

def test_cost_report(plans):
    """The report counts arrows, rotations and storage of the plan."""
    plan = plans["sphere"]
    report = cost_report(plan)
    assert report.decompositions == len(plan.nodes) == 6
    assert report.decompositions_per_family == [3, 3]
    assert report.max_path_length <= report.path_bound == 2
    assert report.storage_bytes == plan.storage_bytes()
    assert report.givens_rotations == givens_rotation_count(SPHERE, 16, 4)
    assert report.givens_rotations < report.all_givens_rotations == all_givens_rotation_count(SPHERE, 16)
    assert len(report.nodes) == 6


def test_fit_growth_recovers_exponent():
    """Cubic timings give slope 3 with a tight interval."""
    ns = [16, 32, 64, 128]
    fit = fit_growth(ns, [1e-6 * n**3 for n in ns])
    assert_allclose(fit.slope, 3.0, rtol=1e-12)
    assert fit.high - fit.low <= 1e-9
    assert fit.points == 4


def test_fit_growth_two_points_has_no_interval():
    """Two sizes give a slope but no confidence interval."""
    fit = fit_growth([10, 20], [1.0, 4.0])
    assert_allclose(fit.slope, 2.0, rtol=1e-12)
    assert np.isnan(fit.low) and np.isnan(fit.high)


def test_fit_growth_rejects_bad_input():
    """Length mismatches and single sizes are rejected."""
    with pytest.raises(LengthMismatchError):
        fit_growth([1, 2, 3], [1.0, 2.0])
    with pytest.raises(DomainError):
        fit_growth([4], [1.0])


# ── larger degrees ──

@pytest.fixture(scope="module")
def sphere_256():
    return precompute(build_plan(SPHERE, 256, 16), threads=4)


def test_sphere_256_round_trip(sphere_256):
    """Thirty arrows at n = 256 validate, preserve norms and invert each other."""
    assert len(sphere_256.nodes) == 30
    assert all(node.decomposition.residual <= 1e-9 for node in sphere_256.nodes)
    x = CoefficientBlock.random(SPHERE, 256, seed=7)
    y = execute(sphere_256, x, "to_base", threads=4)
    assert abs(np.linalg.norm(y.values) / np.linalg.norm(x.values) - 1) <= 1e-9
    back = execute(sphere_256, y, "from_base", threads=4)
    assert _relative(back.values, x.values) <= 1e-9


def test_sphere_128_route_matches_all_givens():
    """At n = 128, b = 16 the skeleton route agrees with the all-Givens route."""
    plan = precompute(build_plan(SPHERE, 128, 16), threads=4)
    x = CoefficientBlock.random(SPHERE, 128, seed=8)
    fast = execute(plan, x, "to_base")
    reference = all_givens_transform(SPHERE, x)
    assert _relative(fast.values, reference.values) <= 1e-9
