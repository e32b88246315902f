"""``smcforge <command> --config FILE [--seed N] [--workdir DIR]``.

Exit codes: 0 success, 1 invalid input or a missing upstream artifact,
2 I/O failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import MissingArtifactError, SmcError
from .pipeline import COMMANDS, MODELS, load_config, run

logger = logging.getLogger("smcforge")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smcforge", description="Soil-moisture forecasting pipeline.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "simulate": "generate the synthetic world",
        "train": "train the forecasters on the full training span",
        "predict": "forecast maps and site values from trained checkpoints",
        "evaluate": "score trained checkpoints on the held-out sites and span",
        "compare": "run the training-data ablation of both forecasters",
        "ndvi-map": "render an NDVI heatmap for one optical acquisition",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, help="run config JSON (or a bundled name such as 'desk')")
        p.add_argument("--seed", type=int, default=None, help="override train.seed")
        p.add_argument("--workdir", default=None, help="override paths.workdir")
        p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
        if name == "train":
            p.add_argument("--model", choices=MODELS, default=None, help="train only this model (default: both)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, root = load_config(args.config, args.seed, args.workdir)
        manifest = run(args.command, cfg, root, getattr(args, "model", None))
    except MissingArtifactError as e:
        print(f"smcforge {args.command}: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (SmcError, ValueError) as e:
        print(f"smcforge {args.command}: invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as e:
        print(f"smcforge {args.command}: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    print(manifest)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
