#!/usr/bin/env python3
"""
Tests for knapsack solvers, refinement and Pareto frontiers
"""

import itertools
import logging
import time

import numpy as np
import pytest

import knapsack
from errors import SolverGuardError, TableSizeError
from knapsack import (
    KnapsackInstance,
    SelectionResult,
    capacity,
    check_solver_guard,
    dominates,
    greedy_order,
    is_pareto_optimal,
    optimal_set,
    pareto_frontier,
    refine_pareto,
    select_prefix,
    solve_dp,
    solve_epsilon,
    solve_exhaustive,
    solve_greedy,
    solve_mitm,
)


def instance(values, weights):
    return KnapsackInstance.from_lists([f"g{i + 1}" for i in range(len(values))], values, weights)


def point(value, weight):
    return SelectionResult(mask=(), total_value=value, total_weight=weight, fraction=0.0)


def random_instance(rng, k, max_weight=100):
    values = 1.0 - rng.random(k)  # (0, 1]
    weights = rng.integers(1, max_weight + 1, size=k)
    return instance(values.tolist(), weights.tolist())


def all_selections(inst):
    for mask in itertools.product([False, True], repeat=len(inst)):
        yield SelectionResult.from_mask(inst, mask)


class TestInstance:
    def test_totals(self):
        inst = instance([10, 7, 5], [4, 3, 2])
        assert inst.total_weight == 9
        assert inst.names == ['g1', 'g2', 'g3']

    def test_negative_values_clamped(self, caplog):
        with caplog.at_level(logging.WARNING):
            inst = instance([-1.0, 2.0], [1, 1])
        assert inst.values.tolist() == [0.0, 2.0]
        assert 'negative value' in caplog.text

    @pytest.mark.parametrize('weights', [[0, 1], [1.5, 1]])
    def test_rejects_bad_weights(self, weights):
        with pytest.raises(ValueError):
            instance([1.0, 1.0], weights)

    def test_selection_totals_recomputable(self):
        inst = instance([10, 7, 5], [4, 3, 2])
        sel = SelectionResult.from_mask(inst, [True, False, True])
        assert sel.total_value == 15.0
        assert sel.total_weight == 6
        assert sel.fraction == pytest.approx(6 / 9)
        assert sel.selected_names(inst) == ['g1', 'g3']

    def test_capacity_floor(self):
        inst = instance([1, 1, 1], [4, 3, 2])
        assert capacity(inst, 0.56) == 5
        assert capacity(inst, 0.0) == 0
        assert capacity(inst, 1.0) == 9
        with pytest.raises(ValueError):
            capacity(inst, 1.5)

    def test_capacity_admits_exact_fraction(self):
        inst = instance([1.0] * 3, [7, 13, 29])
        for w in range(1, inst.total_weight + 1):
            assert capacity(inst, w / inst.total_weight) == w


class TestDominance:
    def test_examples(self):
        assert dominates(point(5, 2), point(5, 3))
        assert not dominates(point(5, 2), point(5, 2))
        assert not dominates(point(4, 2), point(5, 3))
        assert not dominates(point(5, 3), point(4, 2))


class TestExhaustive:
    def test_small_instance(self):
        inst = instance([10, 7, 5], [4, 3, 2])
        sel = solve_exhaustive(inst, 0.56)
        assert sel.mask == (False, True, True)
        assert sel.total_value == 12.0
        assert sel.total_weight == 5

    def test_zero_budget(self):
        sel = solve_exhaustive(instance([10, 7, 5], [4, 3, 2]), 0.0)
        assert sel.mask == (False, False, False)
        assert sel.total_value == 0.0

    def test_full_budget(self):
        sel = solve_exhaustive(instance([10, 7, 5], [4, 3, 2]), 1.0)
        assert sel.mask == (True, True, True)

    def test_guard(self):
        inst = instance([1.0] * 26, [1] * 26)
        with pytest.raises(SolverGuardError, match='dp or greedy'):
            solve_exhaustive(inst, 0.5)

    def test_refined_solution_undominated(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            inst = random_instance(rng, int(rng.integers(1, 13)))
            sel = solve_exhaustive(inst, float(rng.random()))
            assert is_pareto_optimal(inst, sel)


class TestRefinement:
    def test_value_optimal_set_contains_dominated_member(self):
        inst = instance([5, 5], [2, 3])
        optima = optimal_set(inst, 0.6)

        assert {s.mask for s in optima} == {(True, False), (False, True)}
        assert any(dominates(s1, s2) for s1 in optima for s2 in optima)
        assert not is_pareto_optimal(inst, SelectionResult.from_mask(inst, [False, True]))

        refined = refine_pareto(inst, 0.6, list(reversed(optima)))
        assert refined.mask == (True, False)
        assert is_pareto_optimal(inst, refined)

    def test_single_candidate(self):
        inst = instance([5, 5], [2, 3])
        only = SelectionResult.from_mask(inst, [False, True])
        assert refine_pareto(inst, 0.6, [only]) == only

    def test_plain_argmax(self):
        inst = instance([3, 5], [2, 3])
        cands = [SelectionResult.from_mask(inst, m) for m in ([True, False], [False, True])]
        assert refine_pareto(inst, 0.6, cands).mask == (False, True)

    def test_empty_candidates(self):
        with pytest.raises(ValueError):
            refine_pareto(instance([1], [1]), 1.0, [])

    def test_infeasible_candidate(self):
        inst = instance([5, 5], [2, 3])
        with pytest.raises(ValueError):
            refine_pareto(inst, 0.4, [SelectionResult.from_mask(inst, [False, True])])


class TestDynamicProgram:
    def test_matches_exhaustive_example(self):
        sel = solve_dp(instance([10, 7, 5], [4, 3, 2]), 0.56)
        assert sel.mask == (False, True, True)
        assert sel.total_value == 12.0
        assert sel.total_weight == 5

    def test_item_heavier_than_capacity(self):
        sel = solve_dp(instance([3.0], [10]), 0.5)
        assert sel.mask == (False,)

    def test_oracle_equivalence(self):
        rng = np.random.default_rng(1234)
        for _ in range(200):
            inst = random_instance(rng, int(rng.integers(1, 16)))
            eps = float(rng.random())
            exact = solve_exhaustive(inst, eps)
            assert solve_dp(inst, eps).total_value == pytest.approx(exact.total_value, abs=1e-12)
            assert solve_mitm(inst, eps).total_value == pytest.approx(exact.total_value, abs=1e-12)

    def test_mitm_up_to_twenty_items(self):
        rng = np.random.default_rng(99)
        for k in (16, 18, 20):
            inst = random_instance(rng, k)
            eps = float(rng.random())
            assert solve_mitm(inst, eps).total_value == pytest.approx(
                solve_exhaustive(inst, eps).total_value, abs=1e-12
            )

    def test_divisor_keeps_feasibility(self):
        inst = instance([1.0, 1.0], [101, 100])
        exact = solve_dp(inst, 1.0)
        coarse = solve_dp(inst, 1.0, divisor=100)
        assert exact.total_value == 2.0
        assert coarse.total_value == 1.0
        assert coarse.total_weight <= capacity(inst, 1.0)

    def test_table_size_error(self):
        inst = instance([1.0] * 4, [25] * 4)
        with pytest.raises(TableSizeError, match='divisor'):
            solve_dp(inst, 1.0, max_cells=10)
        with pytest.raises(SolverGuardError):
            solve_dp(inst, 1.0, max_cells=10)
        assert solve_dp(inst, 1.0, divisor=25, max_cells=20).total_value == 4.0

    def test_rejects_bad_divisor(self):
        with pytest.raises(ValueError):
            solve_dp(instance([1.0], [1]), 1.0, divisor=0)

    def test_mitm_guard(self):
        with pytest.raises(SolverGuardError):
            solve_mitm(instance([1.0] * 41, [1] * 41), 0.5)


class TestDeterminism:
    @pytest.mark.parametrize('solver', ['exhaustive', 'dp', 'mitm'])
    def test_ties_resolve_to_smallest_mask(self, solver):
        inst = instance([1.0, 1.0, 1.0], [1, 1, 1])
        sel = solve_epsilon(inst, 1 / 3, solver=solver)
        assert sel.mask == (False, False, True)

    def test_weight_tie_break(self):
        inst = instance([5, 5], [3, 2])
        for solver in ('exhaustive', 'dp', 'mitm'):
            assert solve_epsilon(inst, 0.6, solver=solver).mask == (False, True)

    def test_repeatable(self):
        inst = random_instance(np.random.default_rng(5), 12)
        first = [solve_epsilon(inst, 0.3, solver=s) for s in ('exhaustive', 'dp', 'mitm', 'greedy')]
        second = [solve_epsilon(inst, 0.3, solver=s) for s in ('exhaustive', 'dp', 'mitm', 'greedy')]
        assert first == second

    def test_unknown_solver(self):
        with pytest.raises(ValueError):
            solve_epsilon(instance([1.0], [1]), 0.5, solver='anneal')
        with pytest.raises(ValueError):
            check_solver_guard('anneal', 1)


class TestGreedy:
    def test_ratio_prefixes(self):
        inst = instance([8, 6, 3], [2, 3, 3])
        assert greedy_order(inst) == [0, 1, 2]
        prefixes = solve_greedy(inst)
        assert [(p.total_value, p.total_weight) for p in prefixes] == [(8, 2), (14, 5), (17, 8)]

    def test_single_item(self):
        inst = instance([2.0], [3])
        assert [p.mask for p in solve_greedy(inst)] == [(True,)]

    def test_equal_ratio_lighter_first(self):
        assert greedy_order(instance([2.0, 1.0], [2, 1])) == [1, 0]

    def test_prefixes_strictly_nested(self):
        inst = random_instance(np.random.default_rng(8), 10)
        prefixes = solve_greedy(inst)
        for smaller, larger in zip(prefixes, prefixes[1:]):
            assert all(b for a, b in zip(smaller.mask, larger.mask) if a)
            assert sum(larger.mask) == sum(smaller.mask) + 1

    def test_epsilon_interval_rule(self):
        inst = instance([8, 6, 3], [2, 3, 3])
        prefixes = solve_greedy(inst)
        assert select_prefix(inst, prefixes, 0.2).mask == (False, False, False)
        for k, prefix in enumerate(prefixes):
            upper = prefixes[k + 1].fraction if k + 1 < len(prefixes) else 1.0
            for eps in (prefix.fraction, (prefix.fraction + upper) / 2):
                if eps < upper or k + 1 == len(prefixes):
                    assert solve_epsilon(inst, eps, solver='greedy') == prefix

    def test_zero_value_tail_dropped(self):
        inst = instance([4.0, 0.0], [1, 1])
        assert solve_epsilon(inst, 1.0, solver='greedy').mask == (True, False)

    def test_never_beats_exhaustive(self):
        rng = np.random.default_rng(21)
        for _ in range(100):
            inst = random_instance(rng, int(rng.integers(1, 11)))
            eps = float(rng.random())
            greedy = solve_epsilon(inst, eps, solver='greedy')
            assert greedy.total_weight <= capacity(inst, eps)
            assert greedy.total_value <= solve_exhaustive(inst, eps).total_value + 1e-12


class TestFrontier:
    def test_two_items(self):
        inst = instance([5, 5], [2, 3])
        pts = [(p.selection.total_value, p.selection.total_weight) for p in pareto_frontier(inst)]
        assert pts == [(0.0, 0), (5.0, 2), (10.0, 5)]

    def test_one_item(self):
        pts = pareto_frontier(instance([2.0], [3]))
        assert [p.selection.mask for p in pts] == [(False,), (True,)]

    def test_strictly_monotone_and_covering(self):
        inst = instance([10, 7, 5], [4, 3, 2])
        frontier = pareto_frontier(inst)
        values = [p.selection.total_value for p in frontier]
        weights = [p.selection.total_weight for p in frontier]
        assert all(b > a for a, b in zip(values, values[1:]))
        assert all(b > a for a, b in zip(weights, weights[1:]))
        assert not any(p.dominated for p in frontier)

        for sel in all_selections(inst):
            assert any(
                p.selection.total_value >= sel.total_value and p.selection.total_weight <= sel.total_weight
                for p in frontier
            )
            assert not any(dominates(sel, p.selection) for p in frontier)

    def test_greedy_mode(self):
        inst = instance([8, 6, 3, 1], [2, 3, 3, 4])
        pts = pareto_frontier(inst, mode='greedy')
        assert len(pts) == len(inst) + 1
        assert pts[0].selection.total_weight == 0
        assert not any(p.dominated for p in pts)

        exact = pareto_frontier(inst, mode='exact')
        for g in pts:
            assert not any(dominates(g.selection, e.selection) for e in exact)

    def test_greedy_dominance_among_prefixes(self):
        inst = instance([4.0, 0.0], [1, 1])
        pts = pareto_frontier(inst, mode='greedy')
        assert [p.dominated for p in pts] == [False, False, True]

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            pareto_frontier(instance([1.0], [1]), mode='sampled')

    def test_guard(self):
        with pytest.raises(SolverGuardError):
            pareto_frontier(instance([1.0] * 26, [1] * 26))


class TestPerformance:
    def test_exhaustive_frontier_twenty_items(self):
        inst = random_instance(np.random.default_rng(0), 20)
        start = time.perf_counter()
        frontier = pareto_frontier(inst)
        assert time.perf_counter() - start < 5.0
        assert frontier[-1].selection.mask == (True,) * 20

    def test_dp_large_capacity(self):
        rng = np.random.default_rng(1)
        inst = random_instance(rng, 50, max_weight=80_000)
        eps = 1_000_000 / inst.total_weight
        start = time.perf_counter()
        sel = solve_dp(inst, eps)
        assert time.perf_counter() - start < 2.0
        assert sel.total_weight <= capacity(inst, eps)


class TestChunkedEnumeration:
    """Small chunks must give the same answers as a single pass"""

    @staticmethod
    def results(inst, eps):
        return (
            solve_exhaustive(inst, eps),
            optimal_set(inst, eps),
            [p.selection for p in pareto_frontier(inst)],
            [is_pareto_optimal(inst, s) for s in all_selections(inst)],
        )

    def test_chunks_match_single_pass(self, monkeypatch):
        rng = np.random.default_rng(23)
        for _ in range(20):
            k = int(rng.integers(4, 10))
            # small integer values force ties that straddle chunk boundaries
            inst = instance(rng.integers(0, 4, size=k).astype(float).tolist(), rng.integers(1, 5, size=k).tolist())
            eps = float(rng.random())
            whole = self.results(inst, eps)

            monkeypatch.setattr(knapsack, 'ENUMERATION_CHUNK_BITS', 2)
            chunked = self.results(inst, eps)
            monkeypatch.undo()
            assert chunked == whole

    def test_chunk_size_is_bounded(self, monkeypatch):
        monkeypatch.setattr(knapsack, 'ENUMERATION_CHUNK_BITS', 3)
        inst = instance([1.0] * 6, [1] * 6)
        chunks = list(knapsack._enumerate_subsets(inst.values, inst.weights))
        assert len(chunks) == 8
        assert all(len(codes) == 8 for codes, _, _ in chunks)
        assert np.concatenate([codes for codes, _, _ in chunks]).tolist() == list(range(64))
