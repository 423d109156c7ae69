#!/usr/bin/env python3
"""
0-1 Knapsack Selection of Parameter Groups
Items are parameter groups: value = estimated loss reduction, weight = parameter
count. Exact solvers (exhaustive, DP, meet-in-the-middle), the ratio-sorted
greedy prefix family, the refined Pareto-optimal epsilon-constraint solution and
Pareto frontier enumeration.

Every exact solver breaks ties the same way: maximum value, then minimum
weight, then the lexicographically smallest mask (item 0 first, False < True).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import SolverGuardError, TableSizeError

logger = logging.getLogger(__name__)

EXHAUSTIVE_MAX_ITEMS = 25
MITM_MAX_ITEMS = 40
DEFAULT_MAX_DP_CELLS = 100_000_000
SOLVERS = ('greedy', 'dp', 'exhaustive', 'mitm')
ENUMERATION_CHUNK_BITS = 20


# ============================================================================
# DOMAIN TYPES
# ============================================================================

@dataclass(frozen=True)
class KnapsackItem:
    name: str
    value: float
    weight: int


@dataclass(frozen=True)
class KnapsackInstance:
    """Values V_k and integer weights W_k of the binary maximization"""
    items: Tuple[KnapsackItem, ...]
    total_weight: int = field(init=False)

    def __post_init__(self):
        items = []
        for item in self.items:
            if int(item.weight) != item.weight or item.weight < 1:
                raise ValueError(f"item {item.name!r}: weight must be a positive integer, got {item.weight}")
            value = float(item.value)
            if math.isnan(value):
                raise ValueError(f"item {item.name!r}: value is NaN")
            if value < 0:
                logger.warning(f"⚠️ Item {item.name!r} has negative value {value}; clamped to 0")
                value = 0.0
            items.append(KnapsackItem(name=item.name, value=value, weight=int(item.weight)))

        names = [item.name for item in items]
        if len(set(names)) != len(names):
            raise ValueError(f"item names must be unique, got {names}")

        object.__setattr__(self, 'items', tuple(items))
        object.__setattr__(self, 'total_weight', sum(item.weight for item in items))

    @classmethod
    def from_lists(
        cls,
        names: Sequence[str],
        values: Sequence[float],
        weights: Sequence[int],
    ) -> "KnapsackInstance":
        if not len(names) == len(values) == len(weights):
            raise ValueError("names, values and weights must have equal length")
        return cls(items=tuple(
            KnapsackItem(name=n, value=v, weight=w) for n, v, w in zip(names, values, weights)
        ))

    def __len__(self) -> int:
        return len(self.items)

    @property
    def names(self) -> List[str]:
        return [item.name for item in self.items]

    @property
    def values(self) -> np.ndarray:
        return np.array([item.value for item in self.items], dtype=float)

    @property
    def weights(self) -> np.ndarray:
        return np.array([item.weight for item in self.items], dtype=np.int64)


@dataclass(frozen=True)
class SelectionResult:
    """Inclusion mask I_k with its recomputable totals"""
    mask: Tuple[bool, ...]
    total_value: float
    total_weight: int
    fraction: float

    @classmethod
    def from_mask(cls, inst: KnapsackInstance, mask: Sequence[bool]) -> "SelectionResult":
        mask = tuple(bool(m) for m in mask)
        if len(mask) != len(inst):
            raise ValueError(f"mask has {len(mask)} entries for {len(inst)} items")
        chosen = [item for item, on in zip(inst.items, mask) if on]
        total_weight = sum(item.weight for item in chosen)
        return cls(
            mask=mask,
            total_value=math.fsum(item.value for item in chosen),
            total_weight=total_weight,
            fraction=total_weight / inst.total_weight if inst.total_weight else 0.0,
        )

    @classmethod
    def empty(cls, inst: KnapsackInstance) -> "SelectionResult":
        return cls.from_mask(inst, [False] * len(inst))

    def selected_names(self, inst: KnapsackInstance) -> List[str]:
        return [item.name for item, on in zip(inst.items, self.mask) if on]

    def to_dict(self, inst: Optional[KnapsackInstance] = None) -> Dict[str, object]:
        result = {
            'mask': [int(m) for m in self.mask],
            'total_value': self.total_value,
            'total_weight': self.total_weight,
            'fraction': self.fraction,
        }
        if inst is not None:
            result['selected'] = self.selected_names(inst)
        return result


@dataclass(frozen=True)
class ParetoPoint:
    selection: SelectionResult
    dominated: bool


# ============================================================================
# HELPERS
# ============================================================================

def capacity(inst: KnapsackInstance, epsilon: float) -> int:
    """C = floor(epsilon * sum W_k); never exceeds the epsilon budget

    A weight whose fraction W / sum W_k compares <= epsilon is always
    affordable, even when epsilon * sum W_k rounds just below it.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    total = inst.total_weight
    cap = int(math.floor(epsilon * total))
    if cap < total and (cap + 1) / total <= epsilon:
        cap += 1
    return cap


def _check_guard(inst: KnapsackInstance, limit: int, solver: str) -> None:
    if len(inst) > limit:
        raise SolverGuardError(
            f"{solver} supports at most {limit} items, instance has {len(inst)}; "
            f"use the dp or greedy solver instead"
        )


def check_solver_guard(solver: str, n_items: int) -> None:
    """Reject an exact solver up front when the item count is over its guard"""
    if solver not in SOLVERS:
        raise ValueError(f"unknown solver {solver!r}; choose from {SOLVERS}")
    limit = {'exhaustive': EXHAUSTIVE_MAX_ITEMS, 'mitm': MITM_MAX_ITEMS}.get(solver)
    if limit is not None and n_items > limit:
        raise SolverGuardError(
            f"{solver} supports at most {limit} items, got {n_items}; use the dp or greedy solver instead"
        )


def _subset_totals(codes: np.ndarray, values: np.ndarray, weights: np.ndarray):
    """Value and weight totals of the given subset codes; code bit (n-1-i) holds item i"""
    n = len(values)
    totals_v = np.zeros(codes.shape, dtype=float)
    totals_w = np.zeros(codes.shape, dtype=np.int64)
    for i in range(n):
        bit = (codes >> (n - 1 - i)) & 1
        totals_v += bit * values[i]
        totals_w += bit * weights[i]
    return totals_v, totals_w


def _enumerate_subsets(values: np.ndarray, weights: np.ndarray):
    """Yield (codes, values, weights) over all 2^n subsets in code order

    At most 2^ENUMERATION_CHUNK_BITS subsets are held in memory at once.
    """
    n = len(values)
    step = 1 << min(n, ENUMERATION_CHUNK_BITS)
    for start in range(0, 1 << n, step):
        codes = np.arange(start, start + step, dtype=np.int64)
        totals_v, totals_w = _subset_totals(codes, values, weights)
        yield codes, totals_v, totals_w


def _frontier_indices(codes: np.ndarray, totals_v: np.ndarray, totals_w: np.ndarray) -> np.ndarray:
    """Undominated entries, weight ascending; equal points keep the smallest code"""
    order = np.lexsort((codes, -totals_v, totals_w))
    sorted_v = totals_v[order]
    running = np.maximum.accumulate(sorted_v)
    keep = np.ones(len(order), dtype=bool)
    keep[1:] = sorted_v[1:] > running[:-1]
    return order[keep]


def _mask_from_code(code: int, n: int) -> Tuple[bool, ...]:
    return tuple(bool((int(code) >> (n - 1 - i)) & 1) for i in range(n))


def _tie_break_key(selection: SelectionResult):
    return (-selection.total_value, selection.total_weight, selection.mask)


# ============================================================================
# PARETO RELATIONS
# ============================================================================

def dominates(s1: SelectionResult, s2: SelectionResult) -> bool:
    """s1 reduces loss at least as much with no more parameters, one strictly"""
    return (
        s1.total_value >= s2.total_value
        and s1.total_weight <= s2.total_weight
        and (s1.total_value > s2.total_value or s1.total_weight < s2.total_weight)
    )


def is_pareto_optimal(inst: KnapsackInstance, selection: SelectionResult) -> bool:
    """Full dominance scan against all 2^K subsets"""
    _check_guard(inst, EXHAUSTIVE_MAX_ITEMS, 'dominance scan')
    values, weights = inst.values, inst.weights
    n = len(inst)
    # compare against the enumerated totals of the same subset, not the fsum total
    code = sum(1 << (n - 1 - i) for i, on in enumerate(selection.mask) if on)
    own_v, own_w = _subset_totals(np.array([code], dtype=np.int64), values, weights)
    v, w = own_v[0], own_w[0]
    for _, totals_v, totals_w in _enumerate_subsets(values, weights):
        dominating = (totals_v >= v) & (totals_w <= w) & ((totals_v > v) | (totals_w < w))
        if dominating.any():
            return False
    return True


def refine_pareto(
    inst: KnapsackInstance,
    epsilon: float,
    candidates: Sequence[SelectionResult],
) -> SelectionResult:
    """Among the maximum-value candidates keep the one with fewest parameters"""
    if not candidates:
        raise ValueError("refine_pareto needs at least one candidate selection")
    cap = capacity(inst, epsilon)
    for candidate in candidates:
        if candidate.total_weight > cap:
            raise ValueError(
                f"candidate of weight {candidate.total_weight} exceeds capacity {cap} at epsilon={epsilon}"
            )
    return min(candidates, key=_tie_break_key)


# ============================================================================
# EXACT SOLVERS
# ============================================================================

def solve_exhaustive(inst: KnapsackInstance, epsilon: float) -> SelectionResult:
    """Enumerate all 2^K masks; already the refined solution by its tie-break"""
    _check_guard(inst, EXHAUSTIVE_MAX_ITEMS, 'exhaustive')
    cap = capacity(inst, epsilon)

    best = None
    for codes, totals_v, totals_w in _enumerate_subsets(inst.values, inst.weights):
        feasible = np.flatnonzero(totals_w <= cap)
        if not len(feasible):
            continue
        order = np.lexsort((codes[feasible], totals_w[feasible], -totals_v[feasible]))
        i = feasible[order[0]]
        key = (-float(totals_v[i]), int(totals_w[i]), int(codes[i]))
        if best is None or key < best:
            best = key
    return SelectionResult.from_mask(inst, _mask_from_code(best[2], len(inst)))


def optimal_set(inst: KnapsackInstance, epsilon: float) -> List[SelectionResult]:
    """Every feasible selection attaining the maximum value, unrefined"""
    _check_guard(inst, EXHAUSTIVE_MAX_ITEMS, 'exhaustive')
    cap = capacity(inst, epsilon)

    top, hits = -math.inf, []
    for codes, totals_v, totals_w in _enumerate_subsets(inst.values, inst.weights):
        feasible = totals_w <= cap
        if not feasible.any():
            continue
        chunk_top = float(totals_v[feasible].max())
        if chunk_top > top:
            top, hits = chunk_top, []
        if chunk_top == top:
            hits.extend(int(c) for c in codes[feasible & (totals_v == top)])
    selections = [SelectionResult.from_mask(inst, _mask_from_code(c, len(inst))) for c in hits]
    return sorted(selections, key=_tie_break_key)


def solve_dp(
    inst: KnapsackInstance,
    epsilon: float,
    divisor: int = 1,
    max_cells: int = DEFAULT_MAX_DP_CELLS,
) -> SelectionResult:
    """Exact-weight dynamic program over suffixes of the item list

    With divisor > 1 item weights are rounded up and the capacity down before
    solving, so the answer stays feasible but may miss the true optimum by
    the capacity lost to rounding.
    """
    if int(divisor) != divisor or divisor < 1:
        raise ValueError(f"divisor must be a positive integer, got {divisor}")

    cap = capacity(inst, epsilon)
    weights = inst.weights
    values = inst.values
    if divisor > 1:
        weights = -(-weights // divisor)
        cap = cap // divisor

    n = len(inst)
    cells = n * (cap + 1)
    if cells > max_cells:
        raise TableSizeError(
            f"DP table needs {cells} cells (limit {max_cells}) at divisor {divisor}; "
            f"pass a larger weight divisor"
        )

    # best[c]: max value of a subset of the current suffix weighing exactly c
    best = np.full(cap + 1, -np.inf)
    best[0] = 0.0
    take = np.zeros((n, cap + 1), dtype=bool)
    for k in range(n - 1, -1, -1):
        w = int(weights[k])
        if w > cap:
            continue
        with_item = np.full(cap + 1, -np.inf)
        with_item[w:] = best[:cap + 1 - w] + values[k]
        take[k] = with_item > best
        best = np.maximum(best, with_item)

    top = best.max()
    c = int(np.flatnonzero(best == top)[0])
    mask = []
    for k in range(n):
        if take[k, c]:
            mask.append(True)
            c -= int(weights[k])
        else:
            mask.append(False)
    return SelectionResult.from_mask(inst, mask)


def solve_mitm(inst: KnapsackInstance, epsilon: float) -> SelectionResult:
    """Meet in the middle: enumerate each half, pair with the best affordable other half"""
    _check_guard(inst, MITM_MAX_ITEMS, 'mitm')
    cap = capacity(inst, epsilon)
    n = len(inst)
    half = n // 2
    values, weights = inst.values, inst.weights

    # each half has at most MITM_MAX_ITEMS / 2 items and is enumerated whole
    codes_l = np.arange(1 << half, dtype=np.int64)
    codes_r = np.arange(1 << (n - half), dtype=np.int64)
    vals_l, wts_l = _subset_totals(codes_l, values[:half], weights[:half])
    vals_r, wts_r = _subset_totals(codes_r, values[half:], weights[half:])

    order = np.lexsort((codes_r, wts_r))
    codes_r, vals_r, wts_r = codes_r[order], vals_r[order], wts_r[order]

    # best_idx[i]: first position attaining the max value among positions <= i
    running = np.maximum.accumulate(vals_r)
    is_new = np.ones(len(vals_r), dtype=bool)
    is_new[1:] = vals_r[1:] > running[:-1]
    best_idx = np.maximum.accumulate(np.where(is_new, np.arange(len(vals_r)), 0))

    feasible = np.flatnonzero(wts_l <= cap)
    pos = np.searchsorted(wts_r, cap - wts_l[feasible], side='right') - 1
    partner = best_idx[pos]

    total_v = vals_l[feasible] + vals_r[partner]
    total_w = wts_l[feasible] + wts_r[partner]
    code = (codes_l[feasible] << (n - half)) | codes_r[partner]
    pick = np.lexsort((code, total_w, -total_v))[0]
    return SelectionResult.from_mask(inst, _mask_from_code(code[pick], n))


# ============================================================================
# GREEDY
# ============================================================================

def greedy_order(inst: KnapsackInstance) -> List[int]:
    """Item indices by value/weight (= PPI) descending, then lighter, then name"""
    return sorted(
        range(len(inst)),
        key=lambda i: (-inst.items[i].value / inst.items[i].weight, inst.items[i].weight, inst.items[i].name),
    )


def solve_greedy(inst: KnapsackInstance) -> List[SelectionResult]:
    """Nested prefixes A_1 < A_2 < ... < A_K of the ratio ordering"""
    mask = [False] * len(inst)
    prefixes = []
    for i in greedy_order(inst):
        mask[i] = True
        prefixes.append(SelectionResult.from_mask(inst, mask))
    return prefixes


def select_prefix(
    inst: KnapsackInstance,
    prefixes: Sequence[SelectionResult],
    epsilon: float,
) -> SelectionResult:
    """Epsilon-interval rule: the longest prefix with fraction <= epsilon

    The refinement step then drops a trailing run of zero-value groups, which
    cannot add loss reduction but would cost parameters.
    """
    cap = capacity(inst, epsilon)
    feasible = [p for p in prefixes if p.total_weight <= cap]
    return refine_pareto(inst, epsilon, [SelectionResult.empty(inst)] + feasible)


def solve_epsilon(
    inst: KnapsackInstance,
    epsilon: float,
    solver: str = 'exhaustive',
    divisor: int = 1,
    max_cells: int = DEFAULT_MAX_DP_CELLS,
) -> SelectionResult:
    """Epsilon-constraint problem: max value subject to fraction <= epsilon"""
    if solver == 'exhaustive':
        return solve_exhaustive(inst, epsilon)
    if solver == 'dp':
        return solve_dp(inst, epsilon, divisor=divisor, max_cells=max_cells)
    if solver == 'mitm':
        return solve_mitm(inst, epsilon)
    if solver == 'greedy':
        return select_prefix(inst, solve_greedy(inst), epsilon)
    raise ValueError(f"unknown solver {solver!r}; choose from {SOLVERS}")


# ============================================================================
# FRONTIER
# ============================================================================

def pareto_frontier(inst: KnapsackInstance, mode: str = 'exact') -> List[ParetoPoint]:
    """Undominated (value, weight) points, weight ascending

    exact: all undominated subsets (2^K enumeration).
    greedy: the K+1 prefix points including the empty set, with dominance
    judged only among themselves.
    """
    if mode == 'greedy':
        selections = [SelectionResult.empty(inst)] + solve_greedy(inst)
        return [
            ParetoPoint(
                selection=s,
                dominated=any(dominates(other, s) for other in selections if other is not s),
            )
            for s in selections
        ]
    if mode != 'exact':
        raise ValueError(f"unknown frontier mode {mode!r}; choose 'exact' or 'greedy'")

    _check_guard(inst, EXHAUSTIVE_MAX_ITEMS, 'exact frontier')
    n = len(inst)
    # a globally undominated subset is undominated within its chunk, so merging
    # the per-chunk frontiers and filtering once more gives the full frontier
    parts = []
    for codes, totals_v, totals_w in _enumerate_subsets(inst.values, inst.weights):
        keep = _frontier_indices(codes, totals_v, totals_w)
        parts.append((codes[keep], totals_v[keep], totals_w[keep]))
    codes, totals_v, totals_w = (np.concatenate(column) for column in zip(*parts))

    return [
        ParetoPoint(
            selection=SelectionResult.from_mask(inst, _mask_from_code(codes[i], n)),
            dominated=False,
        )
        for i in _frontier_indices(codes, totals_v, totals_w)
    ]
