"""
Point cloud file, dataset and report processing modules
"""

from .pointcloud_io import read_cloud, write_cloud
from .synthetic_shapes import SampleRecord, gen_synthetic, save_dataset, load_dataset
from .report_writer import ReportWriter

__all__ = ['read_cloud', 'write_cloud', 'SampleRecord', 'gen_synthetic', 'save_dataset',
           'load_dataset', 'ReportWriter']
