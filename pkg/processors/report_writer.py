#!/usr/bin/env python3
"""
Evaluation report output
Metrics CSV, aggregate JSON with config echo and run id, and per-sample XYZ exports
"""

import csv
import hashlib
import json
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from core.config import ModelConfig
from core.geometry import METRIC_NAMES, MetricsRecord, aggregate_metrics, reflect_about_plane
from .pointcloud_io import write_xyz

METRIC_COLUMNS = ('shape_id',) + METRIC_NAMES


def make_run_id(cfg: ModelConfig, manifest: bytes = b'') -> str:
    """First 12 hex chars of sha1(config YAML-equivalent JSON + data manifest)"""
    digest = hashlib.sha1()
    digest.update(json.dumps(cfg.to_dict(), sort_keys=True).encode('utf-8'))
    digest.update(manifest)
    return digest.hexdigest()[:12]


class ReportWriter:
    """Writes one evaluation report directory"""

    def __init__(self, report_dir: str, run_id: str = ''):
        self.report_dir = Path(report_dir)
        self.report_dir.mkdir(parents=True, exist_ok=True)
        self.run_id = run_id

    def write_metrics_csv(self, records: List[MetricsRecord], filename: str = 'metrics.csv') -> Path:
        path = self.report_dir / filename
        with open(path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(METRIC_COLUMNS)
            for r in records:
                writer.writerow([r.shape_id] + [f"{getattr(r, name):.10g}" for name in METRIC_COLUMNS[1:]])
        return path

    def write_summary_json(self, records: List[MetricsRecord], cfg: ModelConfig,
                           extra: Optional[Dict] = None, filename: str = 'summary.json') -> Path:
        summary = {
            'run_id': self.run_id,
            'samples': len(records),
            'aggregate': aggregate_metrics(records),
            'config': cfg.to_sections(),
        }
        if extra:
            summary.update(extra)
        path = self.report_dir / filename
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            json.dump(summary, f, indent=2, sort_keys=True)
            f.write('\n')
        return path

    def export_clouds(self, shape_id: str, clouds: Dict[str, np.ndarray],
                      partial: Optional[np.ndarray] = None, plane: Optional[np.ndarray] = None):
        """`<shape_id>.<name>.xyz` for each cloud, plus the mirror of the partial when the plane is known"""
        out = self.report_dir / 'clouds'
        out.mkdir(exist_ok=True)
        for name, points in clouds.items():
            write_xyz(points, out / f"{shape_id}.{name}.xyz")
        if partial is not None and plane is not None:
            write_xyz(reflect_about_plane(partial, plane), out / f"{shape_id}.mirror.xyz",
                      header='reflection of the partial input about the recorded plane')

    def write_report(self, records: List[MetricsRecord], cfg: ModelConfig, extra: Optional[Dict] = None):
        csv_path = self.write_metrics_csv(records)
        json_path = self.write_summary_json(records, cfg, extra)
        print(f"[+] Metrics written to: {csv_path}")
        print(f"[+] Summary written to: {json_path}")
