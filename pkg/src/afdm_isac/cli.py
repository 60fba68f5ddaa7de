"""Command-line driver for the Monte Carlo sweeps.

    afdm-bench --preset fig3 --trials 20 -o fig3.csv
    afdm-bench my_scenario.yaml --format json -o out.json
"""

import argparse
import logging
import sys
import warnings
from dataclasses import replace

from . import bench
from .errors import RangeQuantizationWarning


def build_parser():
    p = argparse.ArgumentParser(prog="afdm-bench",
                                description="Off-grid SBL delay/Doppler estimation sweeps.")
    p.add_argument("scenario", nargs="?", help="YAML or JSON scenario file")
    p.add_argument("--preset", choices=bench.PRESETS, help="built-in scenario")
    p.add_argument("-o", "--output", default="results.csv", help="result table path")
    p.add_argument("--scatter", help="per-target scatter path (default <output stem>_scatter)")
    p.add_argument("--format", choices=("csv", "json"), default="csv",
                   help="csv table or json records")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--trials", type=int, help="override the Monte Carlo trial count")
    p.add_argument("--conventional-rmse", action="store_true",
                   help="score sqrt(mean e^2) instead of (1/P) sqrt(sum e^2)")
    p.add_argument("-v", "--verbose", action="count", default=0,
                   help="-v for progress, -vv for debug")
    p.add_argument("--trace", action="store_true",
                   help="log per-iteration estimator diagnostics (implies -vv)")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if (args.scenario is None) == (args.preset is None):
        parser.error("give exactly one of a scenario file or --preset")
    level = logging.WARNING
    if args.verbose == 1:
        level = logging.INFO
    elif args.verbose >= 2 or args.trace:
        level = logging.DEBUG
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    log = logging.getLogger("afdm_isac.cli")
    if not args.verbose:
        warnings.simplefilter("ignore", RangeQuantizationWarning)

    try:
        scenario = (bench.preset(args.preset) if args.preset
                    else bench.load_scenario(args.scenario))
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.trials is not None:
            overrides["trials"] = args.trials
        if overrides:
            scenario = replace(scenario, **overrides)
    except (OSError, ValueError) as exc:
        parser.error(str(exc))

    def progress(P, trial):
        if trial + 1 == scenario.trials or (trial + 1) % 10 == 0:
            log.info("P=%d: %d/%d trials", P, trial + 1, scenario.trials)

    rows, scatter = bench.run_scenario(scenario, trace=args.trace,
                                       conventional=args.conventional_rmse, progress=progress)
    try:
        paths = bench.emit_results(rows, args.output, args.format, scatter, args.scatter)
    except OSError as exc:
        print(f"afdm-bench: {exc}", file=sys.stderr)
        return 1
    print(bench.format_summary(rows))
    print("wrote " + ", ".join(str(p) for p in paths))
    return 1 if any(r.error for r in rows) else 0


if __name__ == "__main__":
    sys.exit(main())
