#!/usr/bin/env python3
import argparse
import logging
import sys

from src.config import RunConfig
from src.errors import ConfigError, PolypCountError
from src.pipeline import PolypCountingPipeline

COMMANDS = ("tracklets", "synth", "cluster", "sweep", "eval", "report", "sample", "convert")


def setup_logging(verbose: bool = False):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description='Polyp counting by tracklet re-association')
    parser.add_argument('command', choices=COMMANDS, help='Command to run')
    parser.add_argument('--config', help='YAML or JSON run configuration file')
    parser.add_argument('--seed', type=int, help='Seed for synthesis, sampling and clustering jitter')
    parser.add_argument('--rho', type=float, help='Target false positive rate (default 0.05)')
    parser.add_argument('--stride', type=int, help='Frame stride for embedding fusion (default 4)')
    parser.add_argument('--metric', choices=['euclidean', 'cosine'], help='Distance metric (default euclidean)')
    parser.add_argument('--split', choices=['train', 'val', 'test'], help='Split to process (default test)')
    parser.add_argument('--annotations', dest='annotations_path', help='Annotation JSONL file')
    parser.add_argument('--embeddings', dest='embeddings_path', help='Embedding file (PEM1 or CSV)')
    parser.add_argument('--manifest', dest='manifest_path', help='Split manifest (JSON or YAML)')
    parser.add_argument('--assignments', dest='assignments_path', help='Assignments JSON for the eval command')
    parser.add_argument('--output', dest='output_dir', help='Run output directory')
    parser.add_argument('--parallelism', type=int, help='Worker count (default: all cores)')
    parser.add_argument('--strict', action='store_true', help='Exit with code 4 when clustering does not converge')
    parser.add_argument('--dump-matrices', action='store_true', help='Write each video similarity matrix as CSV (cluster)')
    parser.add_argument('--report', nargs=3, action='append', default=[], metavar=('METHOD', 'SPLIT', 'PATH'),
                        help='Report file to include in the comparison table (repeatable)')
    parser.add_argument('--annotation-dir', help='REAL-Colon annotation directory for the convert command')
    parser.add_argument('--verbose', action='store_true', help='Debug logging')
    return parser


def run(args: argparse.Namespace) -> None:
    config = RunConfig()
    config.load(args.config)
    config.apply_overrides(
        seed=args.seed, rho=args.rho, stride=args.stride, metric=args.metric, split=args.split,
        annotations_path=args.annotations_path, embeddings_path=args.embeddings_path,
        manifest_path=args.manifest_path, assignments_path=args.assignments_path,
        output_dir=args.output_dir, parallelism=args.parallelism,
        strict_convergence=True if args.strict else None,
        dump_matrices=True if args.dump_matrices else None,
    )
    pipeline = PolypCountingPipeline(config)

    if args.command == 'tracklets':
        pipeline.run_tracklets()
    elif args.command == 'synth':
        pipeline.run_synth()
    elif args.command == 'cluster':
        pipeline.run_cluster()
    elif args.command == 'sweep':
        pipeline.run_sweep()
    elif args.command == 'eval':
        pipeline.run_eval()
    elif args.command == 'report':
        pipeline.run_report([tuple(entry) for entry in args.report])
    elif args.command == 'sample':
        pipeline.run_sample()
    elif args.command == 'convert':
        if not args.annotation_dir:
            raise ConfigError("--annotation-dir must be specified for the convert command")
        pipeline.run_convert(args.annotation_dir)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)

    try:
        run(args)
    except PolypCountError as e:
        logging.error(f"{args.command} failed: {str(e)}")
        logging.error(f"Error type: {type(e).__name__}")
        return e.exit_code
    except KeyboardInterrupt:
        logging.info("Interrupted")
        return 1
    except Exception as e:
        logging.error(f"{args.command} crashed: {str(e)}")
        logging.error(f"Error type: {type(e).__name__}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
