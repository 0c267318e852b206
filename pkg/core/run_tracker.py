"""
Training run tracking
Keeps the per-epoch log and summarises the run
"""

import json
import time
from datetime import datetime
from typing import Dict, List, Optional


class RunTracker:
    """Track epochs, losses and timing of a training run"""

    LOG_COLUMNS = ('epoch', 'train_cd', 'val_cd', 'seconds')

    def __init__(self, run_id: str = '', verbose: bool = True):
        self.run_id = run_id
        self.verbose = verbose
        self.epochs: List[Dict] = []
        self.notes: Dict = {}
        self.session_start = datetime.now()
        self._t0 = time.perf_counter()

    def log_epoch(self, epoch: int, train_cd: float, val_cd: float, seconds: float):
        """
        Record one epoch

        Args:
            epoch: 0 for the evaluation before any update
            train_cd: mean l1 chamfer distance of the final output over the training batches
            val_cd: mean l1 chamfer distance on the validation split
            seconds: wall time of the epoch
        """
        record = {'epoch': epoch, 'train_cd': float(train_cd), 'val_cd': float(val_cd),
                  'seconds': float(seconds)}
        self.epochs.append(record)
        if self.verbose:
            print(f"[*] epoch {epoch:3d}  train_cd={train_cd:.6f}  val_cd={val_cd:.6f}  ({seconds:.1f}s)")

    def note(self, key: str, value):
        """Attach extra run information (parameter count, split sizes, ...)"""
        self.notes[key] = value

    def val_history(self) -> List[float]:
        return [e['val_cd'] for e in self.epochs]

    def get_summary(self) -> Dict:
        if not self.epochs:
            return {'run_id': self.run_id, 'epochs': 0, 'notes': self.notes}
        best = min(self.epochs, key=lambda e: e['val_cd'])
        return {
            'run_id': self.run_id,
            'session_start': self.session_start.isoformat(),
            'session_duration_seconds': time.perf_counter() - self._t0,
            'epochs': len(self.epochs) - 1,
            'initial_val_cd': self.epochs[0]['val_cd'],
            'final_val_cd': self.epochs[-1]['val_cd'],
            'best_val_cd': best['val_cd'],
            'best_epoch': best['epoch'],
            'notes': self.notes,
            'history': self.epochs,
        }

    def print_summary(self):
        summary = self.get_summary()
        if not self.epochs:
            print("\n[*] No epochs recorded")
            return
        print("\n" + "=" * 60)
        print("TRAINING SUMMARY")
        print("=" * 60)
        print(f"Run: {summary['run_id'] or '-'}")
        print(f"Epochs: {summary['epochs']}")
        print(f"Val CD: {summary['initial_val_cd']:.6f} -> {summary['final_val_cd']:.6f} "
              f"(best {summary['best_val_cd']:.6f} at epoch {summary['best_epoch']})")
        for key, value in summary['notes'].items():
            print(f"{key}: {value}")
        print("=" * 60)

    def save_log(self, filepath: str, include_seconds: bool = True):
        """Write the CSV epoch log: epoch,train_cd,val_cd,seconds"""
        with open(filepath, 'w', encoding='utf-8', newline='') as f:
            f.write(','.join(self.LOG_COLUMNS) + '\n')
            for e in self.epochs:
                seconds = f"{e['seconds']:.3f}" if include_seconds else '0'
                f.write(f"{e['epoch']},{e['train_cd']:.10g},{e['val_cd']:.10g},{seconds}\n")
        if self.verbose:
            print(f"[+] Training log saved to: {filepath}")

    def save_to_file(self, filepath: str, extra: Optional[Dict] = None):
        """Save the JSON summary"""
        summary = self.get_summary()
        if extra:
            summary.update(extra)
        with open(filepath, 'w', encoding='utf-8') as f:
            json.dump(summary, f, indent=2)
        if self.verbose:
            print(f"[+] Run summary saved to: {filepath}")
