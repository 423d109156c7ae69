#!/usr/bin/env python3
"""
AdaPEFT command line
Simulate Hessian-informed training runs, select parameter groups under a
parameter budget, compare greedy and exact Pareto frontiers, transfer a
selection from a small model to a large one, and render trace exports.

Exit codes: 0 success, 2 config/usage, 3 solver guard, 4 compatibility.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from tabulate import tabulate

from errors import AdaPeftError, CompatibilityError, ConfigError
from influence import rank_groups
from knapsack import (
    EXHAUSTIVE_MAX_ITEMS,
    SOLVERS,
    KnapsackInstance,
    check_solver_guard,
    is_pareto_optimal,
    pareto_frontier,
    solve_epsilon,
)
from logging_setup import setup_logging
from run_config import PRESETS, RunConfig, Settings, load_preset, load_run_config
from simulator import (
    TrainingMask,
    check_compatible,
    run_adapeft,
    run_algorithm1,
    seed_sweep,
    select_mask,
)
from traces import (
    TraceFile,
    TraceWriter,
    appi_to_tsv,
    export_appi,
    export_heatmap,
    group_values,
    heatmap_to_tsv,
    read_trace,
    render_heatmap_svg,
)

logger = logging.getLogger(__name__)


# ============================================================================
# HELPER FUNCTIONS
# ============================================================================

def _check_epsilon(epsilon: float) -> float:
    if not 0.0 <= epsilon <= 1.0:
        raise ConfigError(f"--epsilon must lie in [0, 1], got {epsilon}")
    return epsilon


def _load_config_or_preset(ref: str, settings: Settings) -> RunConfig:
    """A path to a JSON run config, or the name of a built-in preset"""
    if Path(ref).is_file():
        return load_run_config(ref, settings)
    if ref in PRESETS:
        return load_preset(ref, settings)
    raise ConfigError(f"{ref!r} is neither a config file nor a preset ({sorted(PRESETS)})")


def _config_from_args(args, settings: Settings) -> RunConfig:
    if args.preset:
        return load_preset(args.preset, settings)
    return load_run_config(args.config, settings)


def _instance_from_trace(trace: TraceFile, upto: Optional[int], doubled_value: bool) -> KnapsackInstance:
    values = group_values(trace, upto, doubled_value)
    sizes = trace.group_sizes
    names = trace.group_names
    return KnapsackInstance.from_lists(names, [values[n] for n in names], [sizes[n] for n in names])


def _emit_json(payload: Dict[str, Any]) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


# ============================================================================
# COMMANDS
# ============================================================================

def cmd_simulate(args, settings: Settings) -> int:
    config = _config_from_args(args, settings)
    model = config.build_model()
    with TraceWriter(args.out, config.model_name, model.groups) as writer:
        record = run_algorithm1(
            model,
            config.training.iterations,
            config.training.lazy_period,
            config.training_mask(),
            config.trainer_settings(),
            on_column=writer.write_column,
        )
    logger.info(f"💾 Trace written to {args.out}")

    values = record.cumulative_values
    appi = record.appi
    sizes = {g.name: g.size for g in model.groups}
    summary = {
        'model': config.model_name,
        'seed': config.training.seed,
        'iterations': record.iterations,
        'initial_loss': record.losses[0],
        'final_loss': record.losses[-1],
        'cumulative_values': values,
        'appi': appi,
        'ranking': rank_groups(values),
        'trace': str(args.out),
    }
    if args.json:
        _emit_json(summary)
        return 0

    print(f"📊 Simulated {config.model_name} for {record.iterations} iterations (seed {config.training.seed})")
    print(f"   Loss: {record.losses[0]:.6g} -> {record.losses[-1]:.6g}")
    table = [[name, sizes[name], values[name], appi[name]] for name in summary['ranking']]
    print(tabulate(table, headers=['group', 'size', 'cum_value', 'appi'], floatfmt='.6g'))
    print(f"💾 Trace: {args.out}")
    return 0


def cmd_select(args, settings: Settings) -> int:
    epsilon = _check_epsilon(args.epsilon)
    trace = read_trace(args.trace)
    inst = _instance_from_trace(trace, args.upto, args.doubled_value)
    check_solver_guard(args.solver, len(inst))

    selection = solve_epsilon(
        inst, epsilon, solver=args.solver, divisor=args.divisor, max_cells=settings.max_dp_cells
    )
    pareto = None
    if args.solver != 'greedy' and len(inst) <= EXHAUSTIVE_MAX_ITEMS:
        pareto = is_pareto_optimal(inst, selection)

    report = {
        'solver': args.solver,
        'epsilon': epsilon,
        'selected': selection.selected_names(inst),
        'mask': [int(m) for m in selection.mask],
        'total_value': selection.total_value,
        'total_weight': selection.total_weight,
        'fraction': selection.fraction,
        'pareto_optimal': pareto,
    }
    if args.json:
        _emit_json(report)
        return 0

    print(f"🎯 Selection ({args.solver}, epsilon={epsilon})")
    print(f"   Groups: {', '.join(report['selected']) or '(none)'}")
    print(f"   Total value: {selection.total_value!r}")
    print(f"   Weight: {selection.total_weight} / {inst.total_weight} ({selection.fraction:.6%})")
    if pareto is not None:
        print(f"   Pareto optimal: {'yes' if pareto else 'no'}")
    return 0


def _frontier_rows(inst: KnapsackInstance, points, kind: str) -> List[Dict[str, Any]]:
    return [
        {
            'kind': kind,
            'fraction': p.selection.fraction,
            'weight': p.selection.total_weight,
            'value': p.selection.total_value,
            'dominated': p.dominated,
            'groups': p.selection.selected_names(inst),
        }
        for p in points
    ]


def cmd_frontier(args, settings: Settings) -> int:
    trace = read_trace(args.trace)
    inst = _instance_from_trace(trace, args.upto, args.doubled_value)

    rows = []
    if args.mode == 'exact':
        check_solver_guard('exhaustive', len(inst))
        rows += _frontier_rows(inst, pareto_frontier(inst, 'exact'), 'exact')
    rows += _frontier_rows(inst, pareto_frontier(inst, 'greedy'), 'greedy')

    if args.json:
        _emit_json({'mode': args.mode, 'points': rows})
        return 0

    print(f"📈 Pareto frontier ({args.mode}) over {len(inst)} groups")
    print(tabulate(
        [[r['kind'], r['fraction'], r['weight'], r['value'], 'yes' if r['dominated'] else 'no', ','.join(r['groups'])]
         for r in rows],
        headers=['kind', 'fraction', 'weight', 'value', 'dominated', 'groups'],
        floatfmt='.6g',
    ))
    return 0


def cmd_transfer(args, settings: Settings) -> int:
    epsilon = _check_epsilon(args.epsilon)
    large_config = _load_config_or_preset(args.large, settings)
    large = large_config.build_model()
    trainer = large_config.trainer_settings()
    lazy = large_config.training.lazy_period

    if args.small.endswith('.ppitrace'):
        trace = read_trace(args.small)
        if set(trace.group_names) != set(large.group_names):
            raise CompatibilityError(
                f"trace groups {sorted(trace.group_names)} do not match {large.name} groups {sorted(large.group_names)}"
            )
        mask, _, _ = select_mask(group_values(trace), {g.name: g.size for g in large.groups}, epsilon)
        record = run_algorithm1(large, args.iters, lazy, mask, trainer)
    else:
        small = _load_config_or_preset(args.small, settings).build_model()
        check_compatible(small, large)
        mask, record = run_adapeft(small, large, args.budget, epsilon, args.iters, lazy, trainer)

    sizes = {g.name: g.size for g in large.groups}
    selected = mask.ordered(large)
    report = {
        'large_model': large.name,
        'epsilon': epsilon,
        'mask': selected,
        'fraction': sum(sizes[n] for n in selected) / sum(sizes.values()),
        'initial_loss': record.losses[0],
        'final_loss': record.losses[-1],
    }
    if args.baseline:
        baseline = run_algorithm1(large, args.iters, lazy, TrainingMask.full(large), trainer)
        report['fmt_final_loss'] = baseline.losses[-1]

    if args.json:
        _emit_json(report)
        return 0

    print(f"🔁 Transfer to {large.name} (epsilon={epsilon}, {args.iters} iterations)")
    print(f"   Mask: {', '.join(selected) or '(none)'} ({report['fraction']:.6%} of parameters)")
    print(f"   Loss: {record.losses[0]:.6g} -> {record.losses[-1]:.6g}")
    if args.baseline:
        print(f"   FMT baseline final loss: {report['fmt_final_loss']:.6g}")
    return 0


def cmd_render(args, settings: Settings) -> int:
    trace = read_trace(args.trace)
    out = Path(args.out)
    if args.kind == 'heatmap':
        heatmap = export_heatmap(trace)
        text = render_heatmap_svg(heatmap) if out.suffix.lower() == '.svg' else heatmap_to_tsv(heatmap)
    elif args.kind == 'appi':
        text = appi_to_tsv(export_appi(trace))
    else:
        raise ConfigError(f"unknown export kind {args.kind!r}")

    with open(out, 'w', encoding='utf-8', newline='\n') as handle:
        handle.write(text)
    print(f"💾 {args.kind} written to {out}")
    return 0


def cmd_sweep(args, settings: Settings) -> int:
    config = _config_from_args(args, settings)
    base = config.training.seed
    result = seed_sweep(
        config.build_model,
        list(range(base, base + args.seeds)),
        config.training.iterations,
        config.training.lazy_period,
        config.trainer_settings(),
    )
    if args.json:
        _emit_json({
            'rankings': {str(seed): ranking for seed, ranking in result.rankings.items()},
            'mean_kendall_tau': result.mean_kendall_tau,
        })
        return 0

    print(f"🎲 APPI rankings over {args.seeds} seeds")
    print(tabulate([[seed, ' > '.join(r)] for seed, r in result.rankings.items()], headers=['seed', 'ranking']))
    print(f"   Mean Kendall tau: {result.mean_kendall_tau:.4f}")
    return 0


# ============================================================================
# CLI INTERFACE
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Hessian-informed parameter group selection (AdaPEFT)")
    parser.add_argument('--log-level', default=None, help='Logging level (default: $ADAPEFT_LOG_LEVEL or WARNING)')
    sub = parser.add_subparsers(dest='command', required=True)

    def add_source(p):
        source = p.add_mutually_exclusive_group(required=True)
        source.add_argument('--config', help='Run config JSON file')
        source.add_argument('--preset', choices=sorted(PRESETS), help='Built-in run config')

    p = sub.add_parser('simulate', help='Run the Hessian-informed training loop and write a trace')
    add_source(p)
    p.add_argument('--out', required=True, help='Output .ppitrace path')
    p.add_argument('--json', action='store_true', help='Machine-readable summary')
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser('select', help='Select groups under a parameter budget')
    p.add_argument('--trace', required=True)
    p.add_argument('--epsilon', type=float, required=True)
    p.add_argument('--solver', choices=SOLVERS, default='greedy')
    p.add_argument('--divisor', type=int, default=1, help='DP weight-rescaling divisor')
    p.add_argument('--upto', type=int, default=None, help='Only use records up to this iteration')
    p.add_argument('--doubled-value', action='store_true', help='Use b^2/a instead of b^2/(2a)')
    p.add_argument('--json', action='store_true')
    p.set_defaults(handler=cmd_select)

    p = sub.add_parser('frontier', help='Exact and greedy Pareto frontiers')
    p.add_argument('--trace', required=True)
    p.add_argument('--mode', choices=['exact', 'greedy'], default='exact')
    p.add_argument('--upto', type=int, default=None)
    p.add_argument('--doubled-value', action='store_true')
    p.add_argument('--json', action='store_true')
    p.set_defaults(handler=cmd_frontier)

    p = sub.add_parser('transfer', help='Select on a small/short run, train the large model masked')
    p.add_argument('--small', required=True, help='Config file, preset name or .ppitrace')
    p.add_argument('--large', required=True, help='Config file or preset name')
    p.add_argument('--epsilon', type=float, required=True)
    p.add_argument('--iters', type=int, required=True)
    p.add_argument('--budget', type=float, default=0.1, help='Fraction of iterations for the small run')
    p.add_argument('--baseline', action='store_true', help='Also train the full model for comparison')
    p.add_argument('--json', action='store_true')
    p.set_defaults(handler=cmd_transfer)

    p = sub.add_parser('render', help='Export heatmap (TSV or SVG) or APPI series')
    p.add_argument('--kind', choices=['heatmap', 'appi'], required=True)
    p.add_argument('--trace', required=True)
    p.add_argument('--out', required=True)
    p.set_defaults(handler=cmd_render)

    p = sub.add_parser('sweep', help='APPI ranking stability across seeds')
    add_source(p)
    p.add_argument('--seeds', type=int, default=5)
    p.add_argument('--json', action='store_true')
    p.set_defaults(handler=cmd_sweep)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        settings = Settings.from_env()
        setup_logging(args.log_level or settings.log_level)
        return args.handler(args, settings)
    except AdaPeftError as e:
        print(f"❌ {e}", file=sys.stderr)
        return e.exit_code
    except ValueError as e:
        print(f"❌ {e}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
