#!/usr/bin/env python3
"""
Synthetic Training Simulator
Separable per-group quadratic models with known gradients and diagonal
curvature, the Hessian-informed training loop with lazy probing, and the
AdaPEFT transfer from a short run on a small model to a masked run on a large
one.
"""

import copy
import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from errors import CompatibilityError, FitFailureError
from influence import (
    DEFAULT_MULTIPLIERS,
    R2_THRESHOLD,
    InfluenceTrace,
    ParameterGroup,
    ProbeSet,
    QuadraticFit,
    accumulate_appi,
    accumulate_values,
    fit_quadratic,
    optimal_lr,
    rank_groups,
)
from knapsack import KnapsackInstance, SelectionResult, solve_epsilon

logger = logging.getLogger(__name__)

DEFAULT_FALLBACK_LR = 1e-2
UPDATE_MODES = ('simultaneous', 'sequential')


# ============================================================================
# DOMAIN TYPES
# ============================================================================

@dataclass
class GroupSpec:
    """One group of the synthetic loss: 1/2 c ||w_k - w*_k||^2 (+ 1/4 q ||.||^4)"""
    group: ParameterGroup
    dimension: int
    curvature: float
    target: np.ndarray

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=float)
        if self.dimension < 1:
            raise ValueError(f"group {self.group.name!r}: dimension must be >= 1")
        if not self.curvature > 0:
            raise ValueError(f"group {self.group.name!r}: curvature must be positive")
        if self.target.shape != (self.dimension,):
            raise ValueError(
                f"group {self.group.name!r}: target has shape {self.target.shape}, expected ({self.dimension},)"
            )


class SyntheticModel:
    """Grouped parameters with an analytically known loss, gradient and Hessian"""

    def __init__(
        self,
        specs: Sequence[GroupSpec],
        parameters: Mapping[str, np.ndarray],
        noise_sigma: float = 0.0,
        rng_seed: int = 0,
        quartic: float = 0.0,
        name: str = "synthetic",
    ):
        self.name = name
        self.specs: Dict[str, GroupSpec] = {}
        for spec in specs:
            if spec.group.name in self.specs:
                raise ValueError(f"duplicate group name {spec.group.name!r}")
            self.specs[spec.group.name] = spec

        missing = set(self.specs) - set(parameters)
        if missing:
            raise ValueError(f"no parameters for groups {sorted(missing)}")
        self.parameters: Dict[str, np.ndarray] = {}
        for group_name, spec in self.specs.items():
            values = np.array(parameters[group_name], dtype=float)
            if values.shape != (spec.dimension,):
                raise ValueError(f"group {group_name!r}: parameters have shape {values.shape}")
            self.parameters[group_name] = values

        if noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if quartic < 0:
            raise ValueError("quartic coefficient must be nonnegative")
        self.noise_sigma = float(noise_sigma)
        self.quartic = float(quartic)
        self.rng_seed = int(rng_seed)
        self.rng = np.random.default_rng(self.rng_seed)

    @classmethod
    def from_offsets(
        cls,
        groups: Iterable[Tuple[str, int, int, float, float]],
        rng_seed: int = 0,
        noise_sigma: float = 0.0,
        quartic: float = 0.0,
        name: str = "synthetic",
    ) -> "SyntheticModel":
        """Build from (name, size, dimension, curvature, offset_norm) tuples

        Targets and offset directions are drawn from a stream separate from
        the gradient noise, so the noise sequence depends on rng_seed alone.
        """
        layout_rng = np.random.default_rng([int(rng_seed), 0])
        specs, parameters = [], {}
        for group_name, size, dimension, curvature, offset_norm in groups:
            target = layout_rng.standard_normal(dimension)
            direction = layout_rng.standard_normal(dimension)
            direction /= np.linalg.norm(direction)
            specs.append(GroupSpec(
                group=ParameterGroup(group_name, int(size)),
                dimension=int(dimension),
                curvature=float(curvature),
                target=target,
            ))
            parameters[group_name] = target + float(offset_norm) * direction
        return cls(specs, parameters, noise_sigma=noise_sigma, rng_seed=rng_seed, quartic=quartic, name=name)

    # ------------------------------------------------------------------
    @property
    def group_names(self) -> List[str]:
        return list(self.specs)

    @property
    def groups(self) -> List[ParameterGroup]:
        return [spec.group for spec in self.specs.values()]

    def offset(self, group_name: str, values: Optional[np.ndarray] = None) -> np.ndarray:
        current = self.parameters[group_name] if values is None else values
        return current - self.specs[group_name].target

    def group_loss(self, group_name: str, values: Optional[np.ndarray] = None) -> float:
        delta = self.offset(group_name, values)
        sq = float(delta @ delta)
        return 0.5 * self.specs[group_name].curvature * sq + 0.25 * self.quartic * sq * sq

    def loss(self) -> float:
        return math.fsum(self.group_loss(n) for n in self.specs)

    def exact_gradient(self, group_name: str) -> np.ndarray:
        delta = self.offset(group_name)
        return (self.specs[group_name].curvature + self.quartic * float(delta @ delta)) * delta

    def gradient(self) -> Dict[str, np.ndarray]:
        """Exact gradient plus sigma * z_k, z_k drawn per group in group order"""
        grads = {}
        for group_name, spec in self.specs.items():
            g = self.exact_gradient(group_name)
            if self.noise_sigma > 0:
                g = g + self.noise_sigma * self.rng.standard_normal(spec.dimension)
            grads[group_name] = g
        return grads

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {n: v.copy() for n, v in self.parameters.items()}

    def clone(self) -> "SyntheticModel":
        return copy.deepcopy(self)


@dataclass(frozen=True)
class TrainingMask:
    """Active set: groups allowed to move; all others stay frozen"""
    active: FrozenSet[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, 'active', frozenset(self.active))

    @classmethod
    def full(cls, model: SyntheticModel) -> "TrainingMask":
        return cls(frozenset(model.group_names))

    def validate(self, model: SyntheticModel) -> None:
        unknown = self.active - set(model.group_names)
        if unknown:
            raise CompatibilityError(f"mask names groups not in model {model.name!r}: {sorted(unknown)}")

    def ordered(self, model: SyntheticModel) -> List[str]:
        return [n for n in model.group_names if n in self.active]


@dataclass
class TrainerSettings:
    fallback_lr: float = DEFAULT_FALLBACK_LR
    multipliers: Tuple[float, ...] = DEFAULT_MULTIPLIERS
    r2_threshold: float = R2_THRESHOLD
    doubled_value: bool = False
    mode: str = 'simultaneous'

    def __post_init__(self):
        if self.mode not in UPDATE_MODES:
            raise ValueError(f"unknown update mode {self.mode!r}; choose from {UPDATE_MODES}")
        if not self.fallback_lr > 0:
            raise ValueError("fallback_lr must be positive")


@dataclass
class RunRecord:
    losses: List[float]
    trace: InfluenceTrace
    final_parameters: Dict[str, np.ndarray]
    per_group_lrs: Dict[str, List[float]]
    mask: TrainingMask
    doubled_value: bool = False

    @property
    def iterations(self) -> int:
        return len(self.losses) - 1

    @property
    def cumulative_values(self) -> Dict[str, float]:
        return accumulate_values(self.trace, doubled_value=self.doubled_value)

    @property
    def appi(self) -> Dict[str, float]:
        return accumulate_appi(self.trace, doubled_value=self.doubled_value)

    def to_dict(self) -> Dict[str, object]:
        return {
            'losses': list(self.losses),
            'mask': sorted(self.mask.active),
            'iterations': list(self.trace.iterations),
            'records': {
                name: [None if fit is None else fit.to_dict() for fit in column]
                for name, column in self.trace.records.items()
            },
            'final_parameters': {n: v.tolist() for n, v in self.final_parameters.items()},
            'per_group_lrs': {n: list(v) for n, v in self.per_group_lrs.items()},
            'cumulative_values': self.cumulative_values,
        }


# ============================================================================
# OPERATIONS
# ============================================================================

def loss(model: SyntheticModel) -> float:
    return model.loss()


def gradient(model: SyntheticModel) -> Dict[str, np.ndarray]:
    return model.gradient()


def probe_losses(
    model: SyntheticModel,
    g: Mapping[str, np.ndarray],
    group: str,
    base_lr: float,
    multipliers: Sequence[float] = DEFAULT_MULTIPLIERS,
) -> ProbeSet:
    """Forward-pass probes moving only `group` along -eta * g

    The loss is separable, so the other groups cancel exactly in each delta
    and only the probed group's loss is re-evaluated. Model state is not
    touched.
    """
    if not base_lr > 0:
        raise ValueError(f"base_lr must be positive, got {base_lr}")
    current = model.parameters[group]
    direction = g[group]
    base = model.group_loss(group)
    deltas = [
        model.group_loss(group, current - m * base_lr * direction) - base
        for m in multipliers
    ]
    return ProbeSet(base_lr=base_lr, loss_deltas=tuple(deltas), multipliers=tuple(multipliers))


def run_algorithm1(
    model: SyntheticModel,
    iterations: int,
    lazy_period: Optional[int] = None,
    mask: Optional[TrainingMask] = None,
    settings: Optional[TrainerSettings] = None,
    on_column: Optional[Callable[[int, Mapping[str, Optional[QuadraticFit]]], None]] = None,
) -> RunRecord:
    """Hessian-informed masked gradient descent with lazy probing

    Runs on a clone; the caller's model is left untouched. A stepping group
    is probed and refitted on its first step and then once `lazy_period`
    iterations (default 4K) have passed since its last probe; its optimal
    learning rate b/a is refreshed and the fit recorded. Groups without a
    valid fit yet step with the fallback rate.

    on_column(iteration, fits) is called with each recorded column as soon
    as it is fitted, e.g. TraceWriter.write_column.
    """
    settings = settings or TrainerSettings()
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if lazy_period is None:
        lazy_period = 4 * len(model.group_names)
    if lazy_period < 1:
        raise ValueError("lazy_period must be >= 1")
    mask = TrainingMask.full(model) if mask is None else mask
    mask.validate(model)

    work = model.clone()
    active = mask.ordered(work)
    lrs: Dict[str, Optional[float]] = {n: None for n in active}
    lr_history: Dict[str, List[float]] = {n: [] for n in active}
    last_probe: Dict[str, Optional[int]] = {n: None for n in active}
    trace = InfluenceTrace(groups=tuple(work.groups))
    losses = [work.loss()]

    for t in range(iterations):
        g = work.gradient()
        if settings.mode == 'sequential':
            stepping = [active[t % len(active)]] if active else []
        else:
            stepping = active

        # a group is due once lazy_period iterations have passed since its last probe
        due = [n for n in stepping if last_probe[n] is None or t - last_probe[n] >= lazy_period]
        if due:
            fits = {}
            for name in due:
                last_probe[name] = t
                base_lr = lrs[name] if lrs[name] is not None else settings.fallback_lr
                probes = probe_losses(work, g, name, base_lr, settings.multipliers)
                try:
                    fit = fit_quadratic(probes, r2_threshold=settings.r2_threshold)
                except FitFailureError as e:
                    logger.debug(f"⚠️ Fit failed for {name} at iteration {t}: {e}")
                    fit = None
                fits[name] = fit
                if fit is not None and fit.valid:
                    lrs[name] = optimal_lr(fit)
            trace.record(t, fits)
            if on_column is not None:
                on_column(t, fits)

        for name in stepping:
            lr = lrs[name] if lrs[name] is not None else settings.fallback_lr
            work.parameters[name] = work.parameters[name] - lr * g[name]
            lr_history[name].append(lr)
        losses.append(work.loss())

    logger.info(f"✅ {work.name}: {iterations} iterations, loss {losses[0]:.6g} -> {losses[-1]:.6g}")
    return RunRecord(
        losses=losses,
        trace=trace,
        final_parameters=work.snapshot(),
        per_group_lrs=lr_history,
        mask=mask,
        doubled_value=settings.doubled_value,
    )


def select_mask(
    values: Mapping[str, float],
    sizes: Mapping[str, int],
    epsilon: float,
    solver: str = 'greedy',
) -> Tuple[TrainingMask, KnapsackInstance, SelectionResult]:
    """Knapsack over groups (value = loss reduction, weight = size) -> active set"""
    if set(values) != set(sizes):
        raise CompatibilityError(
            f"value groups {sorted(values)} do not match sized groups {sorted(sizes)}"
        )
    names = list(sizes)
    inst = KnapsackInstance.from_lists(names, [values[n] for n in names], [sizes[n] for n in names])
    selection = solve_epsilon(inst, epsilon, solver=solver)
    return TrainingMask(frozenset(selection.selected_names(inst))), inst, selection


def check_compatible(small: SyntheticModel, large: SyntheticModel) -> None:
    if set(small.group_names) != set(large.group_names):
        raise CompatibilityError(
            f"group names differ: {small.name} has {sorted(small.group_names)}, "
            f"{large.name} has {sorted(large.group_names)}"
        )


def run_adapeft(
    small: SyntheticModel,
    large: SyntheticModel,
    budget_fraction: float,
    epsilon: float,
    iterations: int,
    lazy_period: Optional[int] = None,
    settings: Optional[TrainerSettings] = None,
) -> Tuple[TrainingMask, RunRecord]:
    """Short full-model run on `small`, knapsack selection, masked run on `large`"""
    check_compatible(small, large)
    if not 0 < budget_fraction <= 1:
        raise ValueError(f"budget_fraction must lie in (0, 1], got {budget_fraction}")

    short = int(math.floor(budget_fraction * iterations))
    logger.info(f"🔍 Short run on {small.name}: {short} of {iterations} iterations")
    small_record = run_algorithm1(small, short, lazy_period, TrainingMask.full(small), settings)

    sizes = {g.name: g.size for g in large.groups}
    mask, _, selection = select_mask(small_record.cumulative_values, sizes, epsilon)
    logger.info(f"🎯 Selected {sorted(mask.active)} ({selection.fraction:.4%} of parameters)")

    record = run_algorithm1(large, iterations, lazy_period, mask, settings)
    return mask, record


@dataclass
class SweepResult:
    rankings: Dict[int, List[str]] = field(default_factory=dict)
    mean_kendall_tau: float = 1.0


def seed_sweep(
    build_model: Callable[[int], SyntheticModel],
    seeds: Sequence[int],
    iterations: int,
    lazy_period: Optional[int] = None,
    settings: Optional[TrainerSettings] = None,
) -> SweepResult:
    """APPI rankings of full-model runs across seeds and their mean pairwise Kendall tau"""
    result = SweepResult()
    for seed in seeds:
        record = run_algorithm1(build_model(seed), iterations, lazy_period, None, settings)
        result.rankings[seed] = rank_groups(record.appi)

    taus = []
    for first, second in itertools.combinations(result.rankings.values(), 2):
        position = {name: i for i, name in enumerate(first)}
        tau = stats.kendalltau([position[n] for n in second], list(range(len(second))))[0]
        taus.append(1.0 if math.isnan(tau) else float(tau))
    result.mean_kendall_tau = float(np.mean(taus)) if taus else 1.0
    return result
