#!/usr/bin/env python3
"""
SymmCompletion - Single Entry Point
Data generation, training, evaluation, completion and kernel benchmarks
"""

import sys
import os
import argparse
from dataclasses import dataclass, field
from typing import List, Optional

from core.checkpoint import load_checkpoint, save_checkpoint
from core.config import get_config
from core.errors import SymmCompletionError
from core.geometry import denormalize_cloud, normalization, normalize_cloud
from core.run_tracker import RunTracker
from core.training import evaluate, train
from processors.pointcloud_io import read_cloud, write_cloud
from processors.report_writer import ReportWriter, make_run_id
from processors.synthetic_shapes import gen_synthetic, load_dataset, read_manifest_bytes, save_dataset
from utils.bench_kernels import BENCH_OPS, run_bench
from utils.selftest import run_selftest

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2

COMMANDS = ('gen-data', 'train', 'eval', 'complete', 'bench', 'selftest')


class UsageError(Exception):
    pass


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors with exit code 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"[!] {self.prog}: {message}", file=sys.stderr)
        raise UsageError(message)


@dataclass
class RunManifest:
    """What a command reads and writes, checked before any long-running work"""
    command: str
    config: Optional[str] = None
    inputs: List[str] = field(default_factory=list)
    outputs: List[str] = field(default_factory=list)
    seed: Optional[int] = None

    def validate(self):
        if self.command not in COMMANDS:
            raise UsageError(f"unknown command '{self.command}'")
        for path in ([self.config] if self.config else []) + self.inputs:
            if not os.path.exists(path):
                raise FileNotFoundError(f"No such file or directory: '{path}'")
        for path in self.outputs:
            parent = os.path.dirname(os.path.abspath(path))
            os.makedirs(parent, exist_ok=True)
            if not os.access(parent, os.W_OK):
                raise PermissionError(f"Cannot write to '{parent}'")


def build_parser() -> CliParser:
    parser = CliParser(
        prog='run_symmcompletion.py',
        description='SymmCompletion - point cloud completion by local symmetry transformation',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python run_symmcompletion.py gen-data --seed 7 --count 256 --resolution 2048 --out data/toy
  python run_symmcompletion.py train --config configs/toy.yaml --data data/toy --out runs/toy.symc
  python run_symmcompletion.py eval --ckpt runs/toy.symc --data data/toy --report reports/toy --export
  python run_symmcompletion.py complete --ckpt runs/toy.symc --in partial.xyz --out completed.xyz
  python run_symmcompletion.py bench --op knn --n 4096
  python run_symmcompletion.py selftest
        """
    )
    sub = parser.add_subparsers(dest='command', metavar='COMMAND', parser_class=CliParser)
    sub.required = True

    gen = sub.add_parser('gen-data', help='Generate a synthetic partial/complete dataset')
    gen.add_argument('--seed', type=int, default=0)
    gen.add_argument('--count', type=int, required=True)
    gen.add_argument('--resolution', type=int, default=2048)
    gen.add_argument('--partial-size', type=int, default=512)
    gen.add_argument('--out', required=True, help='Output directory')

    tr = sub.add_parser('train', help='Train a model and write a checkpoint')
    tr.add_argument('--config', default=None, help='YAML config (defaults when omitted)')
    tr.add_argument('--data', required=True, help='Dataset directory from gen-data')
    tr.add_argument('--out', required=True, help='Checkpoint path')

    ev = sub.add_parser('eval', help='Evaluate a checkpoint on a dataset')
    ev.add_argument('--ckpt', required=True)
    ev.add_argument('--data', required=True)
    ev.add_argument('--report', required=True, help='Report directory')
    ev.add_argument('--export', action='store_true', help='Also write mirror/p_init/fine1/fine2 XYZ files')
    ev.add_argument('--no-f-k', action='store_true', help='Disable the key-feature guidance path')
    ev.add_argument('--no-f-m', action='store_true', help='Disable the missing-feature guidance path')

    co = sub.add_parser('complete', help='Complete a single point cloud file')
    co.add_argument('--ckpt', required=True)
    co.add_argument('--in', dest='input', required=True, help='Partial cloud (.xyz/.txt/.pcf)')
    co.add_argument('--out', required=True, help='Completed cloud (.xyz/.txt/.pcf)')
    co.add_argument('--normalize', action='store_true',
                    help='Fit the input into the unit cube first and map the output back')

    be = sub.add_parser('bench', help='Benchmark a geometry kernel')
    be.add_argument('--op', choices=BENCH_OPS, required=True)
    be.add_argument('--n', type=int, default=4096)

    sub.add_parser('selftest', help='Run the oracle and gradient suites')
    return parser


def manifest_for(args) -> RunManifest:
    command = args.command
    if command == 'gen-data':
        return RunManifest(command, outputs=[os.path.join(args.out, 'manifest.json')], seed=args.seed)
    if command == 'train':
        return RunManifest(command, config=args.config, inputs=[os.path.join(args.data, 'manifest.json')],
                           outputs=[args.out])
    if command == 'eval':
        return RunManifest(command, inputs=[args.ckpt, os.path.join(args.data, 'manifest.json')],
                           outputs=[os.path.join(args.report, 'metrics.csv')])
    if command == 'complete':
        return RunManifest(command, inputs=[args.ckpt, args.input], outputs=[args.out])
    return RunManifest(command)


def cmd_gen_data(args) -> int:
    print(f"[*] Generating {args.count} samples (seed {args.seed}, resolution {args.resolution})")
    records = gen_synthetic(args.seed, args.count, args.resolution, args.partial_size)
    meta = {'seed': args.seed, 'count': args.count, 'resolution': args.resolution,
            'partial_size': args.partial_size}
    save_dataset(records, args.out, meta)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = get_config(args.config)
    dataset = load_dataset(args.data)
    run_id = make_run_id(cfg, read_manifest_bytes(args.data))
    print(f"[*] Run {run_id}: {len(dataset)} samples, {cfg.epochs} epochs")
    tracker = RunTracker(run_id=run_id)
    result = train(cfg, dataset, tracker=tracker)
    save_checkpoint(result.model, args.out)
    print(f"[+] Checkpoint saved to: {args.out}")
    tracker.save_log(f"{args.out}.log.csv")
    tracker.save_to_file(f"{args.out}.summary.json")
    tracker.print_summary()
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.ckpt)
    dataset = load_dataset(args.data)
    flags = (not args.no_f_k, not args.no_f_m)
    print(f"[*] Evaluating {len(dataset)} samples (use_f_k={flags[0]}, use_f_m={flags[1]})")
    evaluation = evaluate(model, dataset, flags=flags)

    writer = ReportWriter(args.report, run_id=make_run_id(model.cfg, read_manifest_bytes(args.data)))
    writer.write_report(evaluation.records, model.cfg, extra={'checkpoint': os.path.basename(args.ckpt)})
    if args.export:
        for sample, result in zip(dataset, evaluation.results):
            writer.export_clouds(sample.shape_id, result.clouds(), sample.partial, sample.symmetry_plane)
        print(f"[+] Exported clouds for {len(dataset)} samples")
    for name, value in evaluation.aggregate.items():
        print(f"    {name}: {value:.6f}")
    return EXIT_OK


def cmd_complete(args) -> int:
    model = load_checkpoint(args.ckpt)
    partial = read_cloud(args.input)
    if args.normalize:
        center, factor = normalization(partial)
        output = denormalize_cloud(model.complete(normalize_cloud(partial)).output.data, center, factor)
    else:
        output = model.complete(partial).output.data
    write_cloud(output, args.out)
    print(f"[+] {partial.shape[0]} -> {output.shape[0]} points written to: {args.out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.n < 1:
        raise UsageError(f"--n must be positive, got {args.n}")
    run_bench(args.op, args.n)
    return EXIT_OK


def cmd_selftest(args) -> int:
    return EXIT_OK if run_selftest() == 0 else EXIT_FAILURE


HANDLERS = {
    'gen-data': cmd_gen_data,
    'train': cmd_train,
    'eval': cmd_eval,
    'complete': cmd_complete,
    'bench': cmd_bench,
    'selftest': cmd_selftest,
}


def cli_dispatch(argv: Optional[List[str]] = None) -> int:
    """Parse `argv`, run the command, return the exit code"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return int(e.code or 0)

    try:
        manifest_for(args).validate()
        return HANDLERS[args.command](args)
    except UsageError as e:
        print(f"[!] Usage error: {e}")
        return EXIT_USAGE
    except (SymmCompletionError, OSError, ValueError) as e:
        print(f"[!] Error: {e}")
        return EXIT_FAILURE


def main():
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
