# main.py
import config
from derive import equations_of_motion, hamiltonian
from discover import system_report
from errors import EXIT_OK, LagrangifyError, ParseError, UsageError
from experiments import (FAILED, discover_from_files, extract_chain_template, generalize_chain, noise_study,
                         perpetual_prediction, run_benchmark, run_suite, train, write_noise_csv, write_summary_csv,
                         zero_shot)
from expr import from_json, render
from presets import get_preset
from dictionary import write_trajectory_csv
from sim import NoiseSpec, simulate
import plots
import argparse
from dataclasses import dataclass, replace
from datetime import datetime
from typing import Optional
import json
import logging
import os
import sys

DEFAULT_NOISE_SYSTEMS = ['HarmonicFree', 'Triatomic', 'ThreeDof']
DEFAULT_NOISE_LEVELS = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]


@dataclass(frozen=True)
class RunConfig:
    """Resolved command-line settings. Exactly one data source: a preset or a trajectory CSV plus dictionary JSON."""
    subcommand: str
    preset: Optional[str] = None
    data: Optional[str] = None
    dictionary: Optional[str] = None
    lam: Optional[float] = None
    noise: float = 0.0
    seed: int = config.default_seed
    out: str = config.out_path
    threads: int = config.threads

    def __post_init__(self):
        files = self.data is not None or self.dictionary is not None
        if self.preset is not None and files:
            raise UsageError("Give either --preset or --data/--dict, not both")
        if files and (self.data is None or self.dictionary is None):
            raise UsageError("--data and --dict must be given together")
        if self.threads < 1:
            raise UsageError(f"--threads must be at least 1, got {self.threads}")
        if self.noise < 0:
            raise UsageError(f"--noise must be non-negative, got {self.noise}")

    @property
    def has_source(self):
        return self.preset is not None or self.data is not None

    @property
    def noise_spec(self):
        return NoiseSpec(self.noise, self.seed) if self.noise > 0 else None


def write_json(data, out, name, timestamp):
    path = os.path.join(out, f"{name}_{timestamp}.json")
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, ensure_ascii=False)
    print(f"Saved {name} to: {path}")
    return path


def _require_source(run):
    if not run.has_source:
        raise UsageError(f"{run.subcommand} needs --preset or --data/--dict")


def _plots_dir(args, out):
    if not args.plots:
        return None
    path = os.path.join(out, 'plots')
    os.makedirs(path, exist_ok=True)
    return path


def cmd_simulate(run, args, timestamp):
    if run.preset is None:
        raise UsageError("simulate needs --preset")
    preset = get_preset(run.preset)
    if args.T is not None:
        preset = replace(preset, T=args.T)

    print(f"\n--- Step 1: Simulating {preset.name} ({preset.kind}, {preset.m} coordinates) ---")
    tr = simulate(preset)
    path = os.path.join(run.out, f"{preset.name}_{timestamp}.csv")
    write_trajectory_csv(tr, path)
    print(f"Wrote {tr.n_samples} samples (dt={tr.dt:g}) to: {path}")
    return EXIT_OK


def _discover(run, args):
    """Discovery report for either data source."""
    if run.preset is not None:
        preset = get_preset(run.preset)
        print(f"\n--- Step 1: Simulating and discovering {preset.name} ---")
        return run_benchmark(preset, noise=run.noise_spec, lam=run.lam, threads=run.threads,
                             plots_dir=_plots_dir(args, run.out), svg=args.plots)

    if run.lam is None:
        raise UsageError("--lambda is required when discovering from --data/--dict")
    print(f"\n--- Step 1: Discovering from {run.data} with dictionary {run.dictionary} ---")
    _, _, report = discover_from_files(run.data, run.dictionary, run.lam, noise=run.noise_spec, threads=run.threads)
    return report


def _print_report(report):
    print(f"Status: {report.status}")
    if report.diagnostics:
        print(f"Diagnostics: {report.diagnostics}")
        return
    print(f"L = {report.lagrangian}")
    for i, support in enumerate(report.supports):
        print(f"  DOF {i}: {support}")
    for p in report.parameters:
        print(f"  {p['name']}: identified {p['identified']:.6g}, true {p['true']:.6g} "
              f"({100.0 * p['relative_error']:.4f}% error)")


def cmd_discover(run, args, timestamp):
    _require_source(run)
    report = _discover(run, args)
    print("\n--- Step 2: Discovery report ---")
    _print_report(report)
    write_json(report.to_json(), run.out, 'discovery_report', timestamp)
    return report.exit_code


def _load_lagrangian(path):
    try:
        with open(path, encoding='utf-8') as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ParseError(f"Could not read Lagrangian file {path}: {e}")
    if isinstance(data, dict) and 'discovery' in data:
        data = data['discovery']
    if isinstance(data, dict) and 'lagrangian_tree' in data:
        data = data['lagrangian_tree']
    return from_json(data)


def cmd_derive(run, args, timestamp):
    if args.lagrangian:
        if run.has_source:
            raise UsageError("Give either --lagrangian or a data source, not both")
        print(f"\n--- Step 1: Loading Lagrangian from {args.lagrangian} ---")
        lagrangian = _load_lagrangian(args.lagrangian)
    else:
        _require_source(run)
        print("\n--- Step 1: Discovering the Lagrangian ---")
        if run.preset is not None:
            _, _, lagrangian = train(run.preset, noise=run.noise_spec, lam=run.lam, threads=run.threads)
        else:
            if run.lam is None:
                raise UsageError("--lambda is required when discovering from --data/--dict")
            _, lagrangian, _ = discover_from_files(run.data, run.dictionary, run.lam, noise=run.noise_spec,
                                                   threads=run.threads)

    print("\n--- Step 2: Deriving the Hamiltonian and equations of motion ---")
    h = hamiltonian(lagrangian)
    eom = equations_of_motion(lagrangian)
    expr = getattr(lagrangian, 'expr', lagrangian)
    print(f"L = {render(expr)}")
    print(f"H = {h}")
    for line in eom.equations():
        print(f"  {line}")

    result = {'lagrangian': render(expr), 'hamiltonian': str(h), 'equations_of_motion': eom.to_json()}
    if hasattr(lagrangian, 'per_dof'):
        result['discovery'] = system_report(lagrangian)
    write_json(result, run.out, 'derivation', timestamp)
    return EXIT_OK


def cmd_predict(run, args, timestamp):
    if run.preset is None:
        raise UsageError("predict needs --preset")
    preset = get_preset(run.preset)
    if args.horizon is None or args.horizon <= 0:
        raise UsageError("predict needs a positive --horizon")
    stride = args.stride or max(1, int(round(args.horizon / preset.T)))

    print(f"\n--- Step 1: Discovering {preset.name} and predicting to t={args.horizon:g} s (stride {stride}) ---")
    result = perpetual_prediction(preset, args.horizon, stride=stride, threads=run.threads)
    paths = plots.error_plot(run.out, f"{preset.name}_prediction_{timestamp}", result.t, result.abs_error,
                             svg=args.plots)

    print("\n--- Step 2: Prediction error ---")
    print(f"Max absolute error: {result.max_error:.4e} ({100.0 * result.relative_max_error:.4f}% of amplitude)")
    print(f"Relative L2 error: {100.0 * result.relative_l2_error:.4f}%")
    print(f"Error curve saved to: {paths[0]}")
    write_json(result.to_json(), run.out, 'prediction', timestamp)
    return EXIT_OK


def cmd_zero_shot(run, args, timestamp):
    if run.preset is None:
        raise UsageError("zero-shot needs --preset")
    preset = get_preset(run.preset)
    if preset.kind != 'blade' and args.x0 is None and args.mode is None:
        raise UsageError("zero-shot needs --x0 (or --mode for the blade)")
    print(f"\n--- Step 1: Discovering {preset.name} and testing an unseen initial condition ---")
    result = zero_shot(preset, x0=args.x0, mode=args.mode, threads=run.threads)
    print(f"Relative L2 error: {100.0 * result['relative_l2_error']:.4f}%")
    write_json(result, run.out, 'zero_shot', timestamp)
    return EXIT_OK


def cmd_noise_study(run, args, timestamp):
    names = [run.preset] if run.preset else DEFAULT_NOISE_SYSTEMS
    levels = args.levels or DEFAULT_NOISE_LEVELS
    print(f"\n--- Step 1: Noise study on {', '.join(names)} at levels {levels} (seed {run.seed}, "
          f"{args.repeats} repeat(s)) ---")
    rows = noise_study(names, levels, seed=run.seed, repeats=args.repeats, lam=run.lam, threads=run.threads)

    print("\n--- Step 2: Exact support recovery ---")
    for row in rows:
        error = '' if row['lagrangian_error'] is None else f", e_L {100.0 * row['lagrangian_error']:.4f}%"
        print(f"  {row['system']} at {row['level']:g}%: {'Yes' if row['recovered'] else 'No'}{error}")
    path = write_noise_csv(rows, os.path.join(run.out, f"noise_study_{timestamp}.csv"))
    print(f"Saved noise table to: {path}")
    write_json(rows, run.out, 'noise_study', timestamp)
    return EXIT_OK


def cmd_generalize(run, args, timestamp):
    reference = run.preset or 'Triatomic'
    print(f"\n--- Step 1: Discovering the {reference} unit cell ---")
    _, _, system = train(reference, lam=run.lam, threads=run.threads)
    template = extract_chain_template(system)
    print(f"Template: masses {template.masses}, coupling {template.coupling:.6g}")

    print(f"\n--- Step 2: Building and simulating a {args.units}-unit chain ---")
    result = generalize_chain(template, args.units, reference=reference)
    print(f"Relative L2 error against the direct simulation: {100.0 * result.relative_error:.4f}%")
    if args.plots:
        plots.response_plot(run.out, f"chain_{args.units}_{timestamp}", result.trajectory.t, result.trajectory.X,
                            result.truth_trajectory.X, coord=args.units - 1, svg=True)
    write_json(result.to_json(), run.out, 'chain_report', timestamp)
    return EXIT_OK


def cmd_suite(run, args, timestamp):
    names = [run.preset] if run.preset else None
    print(f"\n--- Step 1: Running the benchmark suite with {run.threads} worker(s) ---")
    reports = run_suite(names, threads=run.threads, plots_dir=_plots_dir(args, run.out), svg=args.plots)

    print("\n--- Step 2: Summary ---")
    for report in reports:
        print(f"\n[{report.preset}]")
        _print_report(report)
    path = write_summary_csv(reports, os.path.join(run.out, f"summary_{timestamp}.csv"))
    print(f"\nSaved summary table to: {path}")
    write_json([r.to_json() for r in reports], run.out, 'suite_reports', timestamp)
    failed = [r for r in reports if r.status == FAILED]
    return max((r.exit_code for r in failed), default=EXIT_OK)


COMMANDS = {
    'simulate': cmd_simulate,
    'discover': cmd_discover,
    'derive': cmd_derive,
    'predict': cmd_predict,
    'zero-shot': cmd_zero_shot,
    'noise-study': cmd_noise_study,
    'generalize': cmd_generalize,
    'suite': cmd_suite,
}


def build_parser():
    parser = argparse.ArgumentParser(description="Discover sparse Lagrangians from trajectory data and derive "
                                                 "Hamiltonians and equations of motion.")
    parser.add_argument('subcommand', choices=list(COMMANDS), help="Pipeline stage to run.")
    parser.add_argument('--preset', help="Benchmark preset name (see presets/benchmarks.json).")
    parser.add_argument('--data', help="Trajectory CSV with columns t,x0..,v0..[,f0..].")
    parser.add_argument('--dict', dest='dictionary', help="Dictionary spec JSON.")
    parser.add_argument('--lambda', dest='lam', type=float, help="STLSQ threshold override.")
    parser.add_argument('--noise', type=float, default=0.0, help="Measurement noise level in percent.")
    parser.add_argument('--seed', type=int, default=config.default_seed, help="Seed for every random draw.")
    parser.add_argument('--out', default=config.out_path, help="Output directory (default: $LAGRANGIFY_OUT).")
    parser.add_argument('--threads', type=int, default=config.threads, help="Worker processes.")
    parser.add_argument('--horizon', type=float, help="Prediction horizon in seconds.")
    parser.add_argument('--stride', type=int, help="Keep every stride-th sample of a long prediction.")
    parser.add_argument('--units', type=int, default=30, help="Chain length for generalize.")
    parser.add_argument('--T', type=float, help="Override the simulated duration.")
    parser.add_argument('--x0', type=float, nargs='+', help="Initial positions for zero-shot.")
    parser.add_argument('--mode', type=int, help="Discrete mode excited for the blade zero-shot test.")
    parser.add_argument('--levels', type=float, nargs='+', help="Noise levels in percent for noise-study.")
    parser.add_argument('--repeats', type=int, default=1, help="Noise realizations per level.")
    parser.add_argument('--lagrangian', help="Lagrangian JSON tree (or a discovery report) for derive.")
    parser.add_argument('--plots', action='store_true', help="Also write static SVG figures.")
    return parser


def setup_logging(timestamp):
    os.makedirs(config.log_path, exist_ok=True)
    logging.basicConfig(filename=os.path.join(config.log_path, f"lagrangify_{timestamp}.log"),
                        level=getattr(logging, config.log_level.upper(), logging.INFO),
                        format='%(asctime)s - %(levelname)s - %(message)s')


def main(argv=None, timestamp=None):
    """Run one subcommand and return its exit code."""
    if not timestamp:
        timestamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    args = build_parser().parse_args(argv)
    setup_logging(timestamp)

    try:
        run = RunConfig(args.subcommand, args.preset, args.data, args.dictionary, args.lam, args.noise, args.seed,
                        args.out, args.threads)
        os.makedirs(run.out, exist_ok=True)

        print("--- Current Configuration & Settings ---")
        print(f"Subcommand: {run.subcommand}")
        print(f"Data source: {run.preset or run.data or args.lagrangian or 'default'}")
        print(f"Output Path: {run.out}")
        print(f"Log Path: {config.log_path}")
        print(f"Seed: {run.seed}")
        print(f"Threads: {run.threads}")
        print("----------------------------------------")

        code = COMMANDS[run.subcommand](run, args, timestamp)
    except LagrangifyError as e:
        logging.error(f"{type(e).__name__}: {e}", exc_info=True)
        print(f"Error ({type(e).__name__}): {e}")
        return e.exit_code

    print("\nProcess finished." if code == EXIT_OK else f"\nProcess finished with exit code {code}.")
    return code


if __name__ == "__main__":
    sys.exit(main())
