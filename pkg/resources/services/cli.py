"""Batch command line: ``python -m resources.services.cli <stage> [options]``.

Exit codes: 0 success, 1 computation failure, 2 configuration or input error.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional

from resources.services.pipeline import STAGES, ConnectomePipeline
from resources.services.run_config import RunConfig, load_run_config, parse_overrides
from resources.utils.errors import ComputationError, ConnectomeError, InputError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_COMPUTATION = 1
EXIT_INPUT = 2
LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"

COMMANDS = {
    "features": "clean bars and write rolling-window feature panels",
    "gica": "group ICA with Icasso consensus per universe, window length and era",
    "factors": "Risk-On / Risk-Off factor indices and the rolling risk-shift curve",
    "dmnc": "dMNC tensors, change signals and network metrics",
    "regimes": "k-means regimes on connectivity vectors, PCA embedding and timelines",
    "report": "collate every stage into report.json plus CSV tables",
    "synth": "write a synthetic market (and optional ETF universe) with a planted mixing",
    "all": "features, gica, factors, dmnc, regimes and report in order",
}


def _defaults_epilog() -> str:
    fields = RunConfig.model_fields
    cited = ("window_lengths", "k_ica", "icasso_runs", "rho_window", "iq_threshold", "delta", "regime_k", "seed")
    lines = ["defaults:"]
    for name in cited:
        info = fields[name]
        default = info.default
        if isinstance(default, tuple):
            default = ",".join(str(v) for v in default)
        lines.append(f"  {name} = {default}" + (f"  ({info.description})" if info.description else ""))
    return "\n".join(lines)


def _parse_args(argv: Optional[list[str]] = None) -> argparse.Namespace:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key = value file (or INI with a [run] section)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    common.add_argument("--seed", type=int, help="root seed (CONNECTOME_SEED still wins)")
    common.add_argument("--threads", type=int, help="stage-internal worker threads")
    common.add_argument("--outdir", help="output directory; stages write to <outdir>/<stage>/")
    common.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))

    parser = argparse.ArgumentParser(
        prog="connectome",
        description="Financial connectome pipeline: features -> group ICA -> factors -> dMNC -> regimes -> report.",
        epilog=_defaults_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, summary in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=summary, description=summary, epilog=_defaults_epilog(), formatter_class=argparse.RawDescriptionHelpFormatter)
    return parser.parse_args(argv)


def run(args: argparse.Namespace) -> int:
    try:
        cfg = load_run_config(args.config, parse_overrides(args.overrides), seed=args.seed, threads=args.threads, outdir=args.outdir)
        ConnectomePipeline(cfg).run(args.command)
    except InputError as e:
        logger.error("[%s] input error: %s", args.command.upper(), e)
        return EXIT_INPUT
    except ComputationError as e:
        logger.error("[%s] computation failed: %s", args.command.upper(), e)
        return EXIT_COMPUTATION
    except ConnectomeError as e:
        logger.error("[%s] %s", args.command.upper(), e)
        return e.exit_code
    except Exception:
        logger.exception("[%s] unexpected failure", args.command.upper())
        return EXIT_COMPUTATION
    logger.info("[%s] done", args.command.upper())
    return EXIT_OK


def main(argv: Optional[list[str]] = None) -> int:
    args = _parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT, stream=sys.stderr)
    return run(args)


if __name__ == "__main__":
    raise SystemExit(main())
