#!/usr/bin/env python3
"""
Influence Trace Files and Post-Processing
Reads and writes .ppitrace files (JSON header line + one CSV row per
(iteration, group) fit) and turns them into heatmap and APPI datasets:
PPI series -> IQR outlier removal -> EMA smoothing -> row normalization -> log10.
"""

import io
import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from errors import TraceFormatError
from influence import (
    InfluenceTrace,
    ParameterGroup,
    QuadraticFit,
    accumulate_appi,
    accumulate_values,
    curvature_gate,
    ppi,
    reduction_value,
)
from svg_builder import SvgCanvas

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_ALPHA = 0.3
DEFAULT_IQR_K = 3.0
DEFAULT_FLOOR = 1e-30

# 9-step sequential scale, dark = weak influence, light = strong
PALETTE = (
    "#08306b", "#08519c", "#2171b5", "#4292c6", "#6baed6",
    "#9ecae1", "#c6dbef", "#deebf7", "#f7fbff",
)
MISSING_COLOR = "#bdbdbd"


# ============================================================================
# TRACE FILE
# ============================================================================

@dataclass(frozen=True)
class TraceRow:
    iteration: int
    group: str
    b: float
    a: float
    r2: float
    valid: bool

    @property
    def fit(self) -> QuadraticFit:
        return QuadraticFit(b=self.b, a=self.a, r2=self.r2, valid=self.valid)

    def to_line(self) -> str:
        return (
            f"{self.iteration},{self.group},{float(self.b)!r},{float(self.a)!r},"
            f"{float(self.r2)!r},{int(self.valid)}"
        )


@dataclass
class TraceFile:
    model_name: str
    groups: Tuple[ParameterGroup, ...]
    rows: List[TraceRow] = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        self.groups = tuple(self.groups)
        names = [g.name for g in self.groups]
        if len(set(names)) != len(names):
            raise TraceFormatError(f"duplicate group names in trace metadata: {names}")
        for name in names:
            if any(ch in name for ch in ',\n\r\t'):
                raise TraceFormatError(f"group name {name!r} contains a delimiter character")

        known = set(names)
        seen = set()
        for row in self.rows:
            if row.group not in known:
                raise TraceFormatError(f"row group {row.group!r} is not in the trace metadata")
            key = (row.iteration, row.group)
            if key in seen:
                raise TraceFormatError(f"duplicate row for iteration {row.iteration}, group {row.group!r}")
            seen.add(key)

    @property
    def group_names(self) -> List[str]:
        return [g.name for g in self.groups]

    @property
    def group_sizes(self) -> Dict[str, int]:
        return {g.name: g.size for g in self.groups}

    @property
    def iterations(self) -> List[int]:
        return sorted({row.iteration for row in self.rows})

    def group(self, name: str) -> ParameterGroup:
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(name)

    def rows_for(self, name: str) -> List[TraceRow]:
        return sorted((row for row in self.rows if row.group == name), key=lambda r: r.iteration)

    @classmethod
    def from_influence_trace(cls, trace: InfluenceTrace, model_name: str) -> "TraceFile":
        rows = []
        for j, iteration in enumerate(trace.iterations):
            for group in trace.groups:
                fit = trace.records[group.name][j]
                if fit is not None:
                    rows.append(TraceRow(iteration, group.name, fit.b, fit.a, fit.r2, fit.valid))
        return cls(model_name=model_name, groups=trace.groups, rows=rows)

    def to_influence_trace(self) -> InfluenceTrace:
        iterations = self.iterations
        column = {it: j for j, it in enumerate(iterations)}
        records: Dict[str, List[Optional[QuadraticFit]]] = {
            name: [None] * len(iterations) for name in self.group_names
        }
        for row in self.rows:
            records[row.group][column[row.iteration]] = row.fit
        return InfluenceTrace(groups=self.groups, iterations=list(iterations), records=records)

    def header(self) -> str:
        return json.dumps(
            {
                'schema': self.schema_version,
                'model': self.model_name,
                'groups': [g.to_dict() for g in self.groups],
            },
            separators=(',', ':'),
        )


class TraceWriter:
    """Append-only single-writer handle for a .ppitrace file"""

    def __init__(self, path, model_name: str, groups: Sequence[ParameterGroup]):
        self.path = Path(path)
        self.trace = TraceFile(model_name=model_name, groups=tuple(groups))
        self._handle = open(self.path, 'w', encoding='utf-8', newline='\n')
        self._handle.write(self.trace.header() + '\n')
        self._handle.flush()

    def write_column(self, iteration: int, fits: Mapping[str, Optional[QuadraticFit]]) -> None:
        for name in self.trace.group_names:
            fit = fits.get(name)
            if fit is not None:
                self.write_row(TraceRow(iteration, name, fit.b, fit.a, fit.r2, fit.valid))
        self._handle.flush()

    def write_row(self, row: TraceRow) -> None:
        self._handle.write(row.to_line() + '\n')

    def close(self) -> None:
        if not self._handle.closed:
            self._handle.close()

    def __enter__(self) -> "TraceWriter":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()


def serialize_trace(trace: TraceFile) -> str:
    lines = [trace.header()] + [row.to_line() for row in trace.rows]
    return '\n'.join(lines) + '\n'


def parse_trace(text: str) -> TraceFile:
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise TraceFormatError("trace is empty (no header line)")

    try:
        header = json.loads(lines[0])
        groups = tuple(ParameterGroup(g['name'], int(g['size'])) for g in header['groups'])
        schema = int(header['schema'])
        model_name = str(header['model'])
    except (ValueError, KeyError, TypeError) as e:
        raise TraceFormatError(f"invalid trace header: {e}") from e
    if schema != SCHEMA_VERSION:
        raise TraceFormatError(f"unsupported trace schema {schema}, expected {SCHEMA_VERSION}")

    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split(',')
        if len(fields) != 6:
            raise TraceFormatError(f"line {lineno}: expected 6 fields, got {len(fields)}")
        iteration, group, b, a, r2, valid = fields
        if valid not in ('0', '1'):
            raise TraceFormatError(f"line {lineno}: valid flag must be 0 or 1, got {valid!r}")
        try:
            row = TraceRow(int(iteration), group, float(b), float(a), float(r2), valid == '1')
        except ValueError as e:
            raise TraceFormatError(f"line {lineno}: {e}") from e
        # the R^2 threshold is a trainer setting and is not rechecked here
        if row.valid and not (math.isfinite(row.b) and math.isfinite(row.a) and curvature_gate(row.b, row.a)):
            raise TraceFormatError(
                f"line {lineno}: row marked valid but fails the fit gate (b={row.b!r}, a={row.a!r})"
            )
        rows.append(row)

    return TraceFile(model_name=model_name, groups=groups, rows=rows, schema_version=schema)


def write_trace(path, trace: TraceFile) -> None:
    with TraceWriter(path, trace.model_name, trace.groups) as writer:
        for row in trace.rows:
            writer.write_row(row)


def read_trace(path) -> TraceFile:
    try:
        text = Path(path).read_text(encoding='utf-8')
    except OSError as e:
        raise TraceFormatError(f"cannot read trace {path}: {e}") from e
    return parse_trace(text)


def group_values(trace: TraceFile, upto_iteration: Optional[int] = None, doubled_value: bool = False) -> Dict[str, float]:
    """Accumulated loss-reduction values per group, the knapsack V_k"""
    return accumulate_values(trace.to_influence_trace(), upto_iteration, doubled_value)


def group_appi(trace: TraceFile, upto_iteration: Optional[int] = None, doubled_value: bool = False) -> Dict[str, float]:
    return accumulate_appi(trace.to_influence_trace(), upto_iteration, doubled_value)


# ============================================================================
# SERIES PROCESSING
# ============================================================================

@dataclass
class ProcessedSeries:
    group: str
    iterations: List[int]
    values: List[float]

    def __post_init__(self):
        if len(self.iterations) != len(self.values):
            raise ValueError(f"series {self.group!r}: {len(self.iterations)} iterations, {len(self.values)} values")


def _iqr_keep(series: Sequence[float], k: float = DEFAULT_IQR_K) -> np.ndarray:
    values = np.asarray(series, dtype=float)
    if values.size == 0:
        raise ValueError("iqr_filter needs a nonempty series")
    q1, q3 = np.percentile(values, [25, 75])
    iqr = q3 - q1
    return (values >= q1 - k * iqr) & (values <= q3 + k * iqr)


def iqr_filter(series: Sequence[float], k: float = DEFAULT_IQR_K) -> List[float]:
    """Keep values inside [Q1 - k*iqr, Q3 + k*iqr], quartiles by linear interpolation"""
    keep = _iqr_keep(series, k)
    return [float(v) for v, ok in zip(series, keep) if ok]


def ema_smooth(series: Sequence[float], alpha: float = DEFAULT_ALPHA) -> List[float]:
    """s_0 = v_0, s_i = alpha * v_i + (1 - alpha) * s_{i-1}"""
    if not 0 < alpha <= 1:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if len(series) == 0:
        raise ValueError("ema_smooth needs a nonempty series")
    smoothed = [float(series[0])]
    for v in series[1:]:
        prev = smoothed[-1]
        smoothed.append(prev + alpha * (float(v) - prev))
    return smoothed


def normalize_rows(
    matrix: pd.DataFrame,
    reference_group: str,
    floor: float = DEFAULT_FLOOR,
) -> pd.DataFrame:
    """Divide every row by the reference row; reference becomes all ones

    Columns where the reference magnitude is below `floor` are dropped.
    """
    if reference_group not in matrix.index:
        raise KeyError(f"reference group {reference_group!r} not in matrix rows")
    reference = matrix.loc[reference_group]
    usable = reference.abs() >= floor
    if not usable.all():
        dropped = [c for c, ok in usable.items() if not ok]
        logger.warning(f"⚠️ Dropping iterations {dropped}: reference {reference_group!r} below {floor:g}")
    kept = matrix.loc[:, usable.to_numpy()]
    return kept.div(reference[usable], axis=1)


def ppi_series(trace: TraceFile, group: str, doubled_value: bool = False) -> ProcessedSeries:
    """Raw PPI at each iteration the group has a record (invalid fits give 0)"""
    meta = trace.group(group)
    rows = trace.rows_for(group)
    return ProcessedSeries(
        group=group,
        iterations=[r.iteration for r in rows],
        values=[ppi(r.fit, meta, doubled_value=doubled_value) for r in rows],
    )


def process_series(
    raw: ProcessedSeries,
    alpha: float = DEFAULT_ALPHA,
    iqr_k: float = DEFAULT_IQR_K,
    use_iqr: bool = True,
) -> ProcessedSeries:
    if not raw.values:
        return ProcessedSeries(raw.group, [], [])
    keep = _iqr_keep(raw.values, iqr_k) if use_iqr else np.ones(len(raw.values), dtype=bool)
    iterations = [it for it, ok in zip(raw.iterations, keep) if ok]
    values = [v for v, ok in zip(raw.values, keep) if ok]
    return ProcessedSeries(raw.group, iterations, ema_smooth(values, alpha))


# ============================================================================
# EXPORTS
# ============================================================================

@dataclass
class HeatmapOptions:
    alpha: float = DEFAULT_ALPHA
    iqr_k: float = DEFAULT_IQR_K
    reference_group: Optional[str] = None
    floor: float = DEFAULT_FLOOR
    doubled_value: bool = False


@dataclass
class AppiOptions:
    alpha: float = 1.0
    iqr_k: float = DEFAULT_IQR_K
    use_iqr: bool = True
    doubled_value: bool = False


def export_heatmap(trace: TraceFile, options: Optional[HeatmapOptions] = None) -> pd.DataFrame:
    """log10 of reference-normalized, filtered and smoothed PPI (groups x iterations)"""
    options = options or HeatmapOptions()
    if not trace.rows:
        raise TraceFormatError("cannot build a heatmap from a trace with no records")
    reference = options.reference_group or trace.group_names[0]
    if reference not in trace.group_names:
        raise TraceFormatError(f"reference group {reference!r} is not in the trace")

    rows = {}
    for name in trace.group_names:
        series = process_series(
            ppi_series(trace, name, options.doubled_value),
            alpha=options.alpha,
            iqr_k=options.iqr_k,
        )
        if not series.values:
            if name == reference:
                raise TraceFormatError(f"reference group {reference!r} has no records")
            logger.warning(f"⚠️ Group {name!r} has no records; left out of the heatmap")
            continue
        rows[name] = pd.Series(series.values, index=series.iterations, dtype=float)

    matrix = pd.DataFrame(rows).T
    matrix = matrix.reindex(index=[n for n in trace.group_names if n in rows])
    matrix = matrix.reindex(columns=sorted(matrix.columns)).dropna(axis=1, how='any')

    normalized = normalize_rows(matrix, reference, options.floor)
    with np.errstate(divide='ignore', invalid='ignore'):
        logged = np.log10(normalized.to_numpy(dtype=float))
    return pd.DataFrame(logged, index=normalized.index, columns=[int(c) for c in normalized.columns])


def heatmap_to_tsv(heatmap: pd.DataFrame) -> str:
    out = io.StringIO()
    out.write('\t'.join(['group'] + [str(int(c)) for c in heatmap.columns]) + '\n')
    for name, row in heatmap.iterrows():
        out.write('\t'.join([str(name)] + [f"{float(v):.6f}" for v in row]) + '\n')
    return out.getvalue()


def render_heatmap_svg(
    heatmap: pd.DataFrame,
    cell_width: int = 40,
    cell_height: int = 20,
    left: int = 100,
    top: int = 30,
) -> str:
    """Rectangles colored on the 9-step palette between the finite min and max"""
    n_rows, n_cols = heatmap.shape
    canvas = SvgCanvas(left + n_cols * cell_width + 10, top + n_rows * cell_height + 10)

    values = heatmap.to_numpy(dtype=float)
    finite = values[np.isfinite(values)]
    vmin = float(finite.min()) if finite.size else 0.0
    span = float(finite.max()) - vmin if finite.size else 0.0

    for j, iteration in enumerate(heatmap.columns):
        canvas.text(left + j * cell_width + cell_width // 2, top - 8, str(int(iteration)), anchor="middle")

    for i, name in enumerate(heatmap.index):
        y = top + i * cell_height
        canvas.text(left - 6, y + 14, str(name), anchor="end")
        for j, iteration in enumerate(heatmap.columns):
            v = float(values[i, j])
            if not math.isfinite(v):
                fill = MISSING_COLOR
            else:
                step = 0 if span == 0 else int(round((v - vmin) / span * (len(PALETTE) - 1)))
                fill = PALETTE[step]
            canvas.filled_rectangle(
                left + j * cell_width, y, cell_width, cell_height, fill,
                title=f"{name} @ {int(iteration)}: {v:.6f}",
            )
    return canvas.get_svg()


def export_appi(trace: TraceFile, options: Optional[AppiOptions] = None) -> pd.DataFrame:
    """Long-format running sums: iteration, group, appi (processed PPI), cum_value (raw)"""
    options = options or AppiOptions()
    records = []
    for name in trace.group_names:
        group_rows = trace.rows_for(name)
        if not group_rows:
            continue
        series = process_series(
            ppi_series(trace, name, options.doubled_value),
            alpha=options.alpha,
            iqr_k=options.iqr_k,
            use_iqr=options.use_iqr,
        )
        raw_iterations = [r.iteration for r in group_rows]
        raw_cumulative = list(itertools.accumulate(
            reduction_value(r.fit, doubled_value=options.doubled_value) for r in group_rows
        ))
        appi = list(itertools.accumulate(series.values))
        for iteration, total in zip(series.iterations, appi):
            cum_value = raw_cumulative[raw_iterations.index(iteration)]
            records.append({
                'iteration': int(iteration),
                'group': name,
                'appi': float(total),
                'cum_value': float(cum_value),
            })

    order = {name: i for i, name in enumerate(trace.group_names)}
    records.sort(key=lambda r: (r['iteration'], order[r['group']]))
    return pd.DataFrame(records, columns=['iteration', 'group', 'appi', 'cum_value'])


def appi_to_tsv(appi: pd.DataFrame) -> str:
    out = io.StringIO()
    out.write('iteration\tgroup\tappi\tcum_value\n')
    for record in appi.itertuples(index=False):
        out.write(f"{int(record.iteration)}\t{record.group}\t{float(record.appi)!r}\t{float(record.cum_value)!r}\n")
    return out.getvalue()
