#!/usr/bin/env python3
"""
Toy-scale benchmark: training descent, the reflection-baseline comparison and
the guidance and LSTNet ablations on synthetic shapes. Slow (hours on CPU).
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import argparse
import json

from core.config import load_config_file
from core.training import run_guidance_ablation, run_lstnet_ablation, run_symmetry_baseline_check, train
from processors.synthetic_shapes import gen_synthetic

DEFAULT_CONFIG = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'configs', 'toy.yaml')
DESCENT_FACTOR = 0.5
BASELINE_FACTOR = 1.5


def check_descent(val_history) -> bool:
    return val_history[-1] <= DESCENT_FACTOR * val_history[0]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description='Toy-scale training benchmark')
    parser.add_argument('--config', default=DEFAULT_CONFIG)
    parser.add_argument('--count', type=int, default=256)
    parser.add_argument('--data-seed', type=int, default=0)
    parser.add_argument('--seeds', type=int, nargs='+', default=[0, 1, 2])
    parser.add_argument('--skip-ablation', action='store_true')
    parser.add_argument('--out', default='', help='Write the results as JSON here')
    args = parser.parse_args(argv)

    cfg = load_config_file(args.config)
    print(f"[*] Generating {args.count} samples ({cfg.partial_size} -> {cfg.resolution} points)")
    dataset = gen_synthetic(args.data_seed, args.count, cfg.resolution, cfg.partial_size)

    print("=" * 60)
    print("TRAINING DESCENT")
    print("=" * 60)
    result = train(cfg, dataset)
    result.tracker.print_summary()
    history = result.tracker.val_history()
    descent_ok = check_descent(history)
    print(f"[{'+' if descent_ok else '-'}] val CD {history[0]:.6f} -> {history[-1]:.6f} "
          f"(needs <= {DESCENT_FACTOR} x epoch 0)")

    val_ids = set(result.val_ids)
    held_out = [s for s in dataset if s.shape_id in val_ids]
    if not any(s.symmetric for s in held_out):
        print("[!] No symmetric validation samples, comparing on the whole dataset")
        held_out = list(dataset)
    baseline = run_symmetry_baseline_check(result.model, held_out)
    baseline_ok = baseline['ratio'] <= BASELINE_FACTOR
    print(f"[{'+' if baseline_ok else '-'}] initial CD {baseline['initial_cd']:.6f} vs reflection "
          f"oracle {baseline['oracle_cd']:.6f} (ratio {baseline['ratio']:.3f}, needs <= {BASELINE_FACTOR})")

    report = {'val_history': history, 'descent_ok': descent_ok, 'baseline': baseline, 'baseline_ok': baseline_ok}
    ok = descent_ok and baseline_ok

    if not args.skip_ablation:
        for title, key, run in (('GUIDANCE ABLATION', 'ablation', run_guidance_ablation),
                                ('LSTNET ABLATION', 'lstnet_ablation', run_lstnet_ablation)):
            print("=" * 60)
            print(title)
            print("=" * 60)
            ablation = run(cfg, dataset, seeds=args.seeds)
            for seed, vote in ablation.votes().items():
                print(f"[{'+' if vote else '-'}] seed {seed}: {ablation.per_seed[seed]}")
            print(f"[{'+' if ablation.majority else '-'}] ordering holds for the majority of seeds")
            report[key] = {str(k): v for k, v in ablation.per_seed.items()}
            report[f'{key}_ok'] = ablation.majority
            ok = ok and ablation.majority

    if args.out:
        with open(args.out, 'w', encoding='utf-8') as f:
            json.dump(report, f, indent=2)
        print(f"[+] Results saved to: {args.out}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
