#!/usr/bin/env python3
"""
Hessian-informed influence of parameter groups
Recovers G^T g and g^T H g from forward-pass loss probes by least squares on a
parabola through the origin, then turns them into loss-reduction values,
per-parameter influence (PPI) and its running sum (APPI).
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from errors import ContractViolationError, FitFailureError

logger = logging.getLogger(__name__)

DEFAULT_MULTIPLIERS: Tuple[float, ...] = (-2.0, -1.0, 1.0, 2.0)
R2_THRESHOLD = 0.99
CURVATURE_FLOOR = 1e-12


def curvature_gate(b: float, a: float, curvature_floor: float = CURVATURE_FLOOR) -> bool:
    """Descent direction with usable positive curvature: b > 0, a > 0, a > floor * |b|"""
    return bool(b > 0 and a > 0 and a > curvature_floor * abs(b))


# ============================================================================
# DOMAIN TYPES
# ============================================================================

@dataclass(frozen=True)
class ParameterGroup:
    """A named slice of model parameters, trained or frozen as a unit"""
    name: str
    size: int

    def __post_init__(self):
        if not self.name:
            raise ValueError("parameter group name must be non-empty")
        if int(self.size) != self.size or self.size < 1:
            raise ValueError(f"group {self.name!r}: size must be a positive integer, got {self.size}")

    def to_dict(self) -> Dict[str, object]:
        return {'name': self.name, 'size': int(self.size)}


@dataclass(frozen=True)
class ProbeSet:
    """Loss deltas L(w - eta_j * e_k (.) g) - L(w) sampled at eta_j = m_j * base_lr"""
    base_lr: float
    loss_deltas: Tuple[float, ...]
    multipliers: Tuple[float, ...] = DEFAULT_MULTIPLIERS

    def __post_init__(self):
        object.__setattr__(self, 'loss_deltas', tuple(float(d) for d in self.loss_deltas))
        object.__setattr__(self, 'multipliers', tuple(float(m) for m in self.multipliers))

        if not self.base_lr > 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if len(self.multipliers) < 3:
            raise ValueError("at least 3 probes are needed (2 fit parameters + 1 degree of freedom)")
        if len(self.multipliers) != len(self.loss_deltas):
            raise ValueError(
                f"{len(self.multipliers)} multipliers but {len(self.loss_deltas)} loss deltas"
            )
        if any(m == 0 for m in self.multipliers):
            raise ValueError("probe multipliers must be nonzero")
        if len(set(self.multipliers)) != len(self.multipliers):
            raise ValueError("probe multipliers must be pairwise distinct")

    @property
    def step_sizes(self) -> np.ndarray:
        return np.asarray(self.multipliers, dtype=float) * self.base_lr


@dataclass(frozen=True)
class QuadraticFit:
    """Directional derivatives b = G^T g and a = g^T H g with fit quality"""
    b: float
    a: float
    r2: float
    valid: bool

    @classmethod
    def gated(
        cls,
        b: float,
        a: float,
        r2: float,
        r2_threshold: float = R2_THRESHOLD,
        curvature_floor: float = CURVATURE_FLOOR,
    ) -> "QuadraticFit":
        """Build a fit and apply the b > 0, a > 0, R^2 gate"""
        valid = curvature_gate(b, a, curvature_floor) and r2 > r2_threshold
        return cls(b=float(b), a=float(a), r2=float(r2), valid=bool(valid))

    def to_dict(self) -> Dict[str, object]:
        return {'b': self.b, 'a': self.a, 'r2': self.r2, 'valid': self.valid}


@dataclass
class InfluenceTrace:
    """Per-group fits at each lazy-update iteration

    records[name][j] is the fit of group `name` at iterations[j], or None when
    the group was not probed there (or its probe could not be fitted).
    """
    groups: Tuple[ParameterGroup, ...]
    iterations: List[int] = field(default_factory=list)
    records: Dict[str, List[Optional[QuadraticFit]]] = field(default_factory=dict)

    def __post_init__(self):
        self.groups = tuple(self.groups)
        names = [g.name for g in self.groups]
        if len(set(names)) != len(names):
            raise ValueError(f"group names must be unique, got {names}")
        if any(b <= a for a, b in zip(self.iterations, self.iterations[1:])):
            raise ValueError("trace iterations must be strictly increasing")
        for name in names:
            column = self.records.setdefault(name, [None] * len(self.iterations))
            if len(column) != len(self.iterations):
                raise ValueError(f"group {name!r} has {len(column)} records for {len(self.iterations)} iterations")
        unknown = set(self.records) - set(names)
        if unknown:
            raise ValueError(f"records for unknown groups: {sorted(unknown)}")

    @property
    def group_names(self) -> List[str]:
        return [g.name for g in self.groups]

    def group(self, name: str) -> ParameterGroup:
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(name)

    def record(self, iteration: int, fits: Mapping[str, Optional[QuadraticFit]]) -> None:
        """Append one lazy-update column"""
        if self.iterations and iteration <= self.iterations[-1]:
            raise ValueError(
                f"iteration {iteration} does not follow last recorded iteration {self.iterations[-1]}"
            )
        unknown = set(fits) - set(self.records)
        if unknown:
            raise ValueError(f"fits for unknown groups: {sorted(unknown)}")

        self.iterations.append(int(iteration))
        for name, column in self.records.items():
            column.append(fits.get(name))

    def iter_fits(self, name: str, upto_iteration: Optional[int] = None):
        """Yield (iteration, fit) pairs of one group, skipping absent records"""
        for iteration, fit in zip(self.iterations, self.records[name]):
            if upto_iteration is not None and iteration > upto_iteration:
                break
            if fit is not None:
                yield iteration, fit


# ============================================================================
# OPERATIONS
# ============================================================================

def fit_quadratic(
    probes: ProbeSet,
    r2_threshold: float = R2_THRESHOLD,
    curvature_floor: float = CURVATURE_FLOOR,
) -> QuadraticFit:
    """Least squares of delta_j ~ -eta_j * b + (eta_j^2 / 2) * a

    The model passes through the origin, since L(w) - L(w) = 0 holds exactly.
    Solved in multiplier units (coefficients b*lr and a*lr^2) so both columns
    have comparable scale for any base_lr.
    """
    m = np.asarray(probes.multipliers, dtype=float)
    deltas = np.asarray(probes.loss_deltas, dtype=float)
    design = np.column_stack([-m, 0.5 * m * m])

    if not np.all(np.isfinite(deltas)):
        raise FitFailureError(f"non-finite loss deltas: {probes.loss_deltas}")

    coef, _, rank, _ = np.linalg.lstsq(design, deltas, rcond=None)
    if rank < 2:
        raise FitFailureError(
            f"singular probe design for step sizes {probes.step_sizes.tolist()}; use distinct nonzero multipliers"
        )

    lr = probes.base_lr
    b, a = float(coef[0]) / lr, float(coef[1]) / (lr * lr)
    residuals = deltas - design @ coef
    ss_res = float(residuals @ residuals)
    centered = deltas - deltas.mean()
    ss_tot = float(centered @ centered)
    if ss_tot > 0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 1.0 if ss_res == 0 else 0.0

    fit = QuadraticFit.gated(b, a, r2, r2_threshold=r2_threshold, curvature_floor=curvature_floor)
    if not fit.valid:
        logger.debug(f"Rejected fit b={b:.3e} a={a:.3e} r2={r2:.6f}")
    return fit


def optimal_lr(fit: QuadraticFit) -> float:
    """Minimizer b / a of the fitted parabola"""
    if not fit.valid:
        raise ContractViolationError(
            f"optimal_lr called on an invalid fit (b={fit.b}, a={fit.a}, r2={fit.r2})"
        )
    return fit.b / fit.a


def reduction_value(fit: QuadraticFit, doubled_value: bool = False) -> float:
    """Loss reduction b^2 / (2a) at eta = b / a, or b^2 / a with doubled_value"""
    if not fit.valid:
        return 0.0
    value = fit.b * fit.b / fit.a
    return value if doubled_value else 0.5 * value


def ppi(fit: QuadraticFit, group: ParameterGroup, doubled_value: bool = False) -> float:
    """Per-parameter influence: reduction value divided by group size"""
    return reduction_value(fit, doubled_value=doubled_value) / group.size


def accumulate_appi(
    trace: InfluenceTrace,
    upto_iteration: Optional[int] = None,
    doubled_value: bool = False,
) -> Dict[str, float]:
    """APPI_k: sum of PPI_k over recorded iterations <= upto_iteration"""
    if upto_iteration is not None and upto_iteration < 0:
        raise ValueError(f"upto_iteration must be >= 0, got {upto_iteration}")

    appi: Dict[str, float] = {}
    for group in trace.groups:
        terms = [
            ppi(fit, group, doubled_value=doubled_value)
            for _, fit in trace.iter_fits(group.name, upto_iteration)
        ]
        appi[group.name] = math.fsum(terms)
    return appi


def accumulate_values(
    trace: InfluenceTrace,
    upto_iteration: Optional[int] = None,
    doubled_value: bool = False,
) -> Dict[str, float]:
    """Sum of raw reduction values per group, comparable to the loss drop"""
    if upto_iteration is not None and upto_iteration < 0:
        raise ValueError(f"upto_iteration must be >= 0, got {upto_iteration}")

    return {
        group.name: math.fsum(
            reduction_value(fit, doubled_value=doubled_value)
            for _, fit in trace.iter_fits(group.name, upto_iteration)
        )
        for group in trace.groups
    }


def rank_groups(scores: Mapping[str, float]) -> List[str]:
    """Group names by descending score, ties by name"""
    return sorted(scores, key=lambda name: (-scores[name], name))


def probes_from_parabola(
    b: float,
    a: float,
    base_lr: float,
    multipliers: Sequence[float] = DEFAULT_MULTIPLIERS,
) -> ProbeSet:
    """Exact probe deltas of Delta L(eta) = -b*eta + a*eta^2/2"""
    eta = np.asarray(multipliers, dtype=float) * base_lr
    deltas = -b * eta + 0.5 * a * eta * eta
    return ProbeSet(base_lr=base_lr, loss_deltas=tuple(deltas.tolist()), multipliers=tuple(multipliers))
