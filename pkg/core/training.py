#!/usr/bin/env python3
"""
Training and evaluation of the completion model
Loss over the initial and both fine outputs, mini-batch AdamW training,
per-sample metrics and the toy-scale ablation harnesses.
"""

import hashlib
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import diffcore as dc
from .config import ModelConfig, get_thread_count
from .errors import SizeError, TrainingDivergedError
from .geometry import (MetricsRecord, aggregate_metrics, chamfer_l1, chamfer_l2, f1_score, fidelity_distance,
                       mmd, reflection_baseline)
from .run_tracker import RunTracker
from .symm_completion import CompletionResult, SymmCompletion

# (use_f_k, use_f_m) of the guidance ablation
GUIDANCE_VARIANTS = {
    'both': (True, True),
    'f_k_only': (True, False),
    'f_m_only': (False, True),
    'neither': (False, False),
}
LSTNET_VARIANTS = {
    'both': {},
    'local': {'lstnet_features': 'local'},
    'global': {'lstnet_features': 'global'},
    'plane': {'initial_generator': 'plane'},
}
VAL_BUCKETS = 5


def total_loss(p_init: dc.TensorLike, fines: Sequence[dc.TensorLike], gt: np.ndarray) -> dc.Tensor:
    """chamfer_l1(p_init, gt) + sum of chamfer_l1(fine_i, gt)"""
    if len(fines) != 2:
        raise SizeError(f"expected 2 fine outputs, got {len(fines)}")
    loss = dc.chamfer_l1(p_init, gt)
    for fine in fines:
        loss = dc.add(loss, dc.chamfer_l1(fine, gt))
    return loss


def split_train_val(dataset: Sequence) -> Tuple[list, list]:
    """80/20 split by md5(shape_id); an empty validation split falls back to the training split"""
    train, val = [], []
    for sample in dataset:
        bucket = int(hashlib.md5(sample.shape_id.encode('utf-8')).hexdigest(), 16) % VAL_BUCKETS
        (val if bucket == 0 else train).append(sample)
    if not val:
        print("[!] Validation split is empty, validating on the training samples")
        val = list(train)
    if not train:
        print("[!] Training split is empty, training on the validation samples")
        train = list(val)
    return train, val


def _map_samples(fn: Callable, samples: Sequence, threads: Optional[int] = None) -> list:
    """Order-preserving map; single-threaded when the thread count is 0 or 1"""
    threads = get_thread_count() if threads is None else threads
    if threads <= 1 or len(samples) <= 1:
        return [fn(s) for s in samples]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, samples))


def predict(model: SymmCompletion, samples: Sequence, threads: Optional[int] = None) -> List[CompletionResult]:
    """Forward every sample without building a graph"""
    def run(sample):
        with dc.no_grad():
            return model.complete(sample.partial)
    return _map_samples(run, samples, threads)


def mean_output_cd(model: SymmCompletion, samples: Sequence, threads: Optional[int] = None) -> float:
    results = predict(model, samples, threads)
    return float(np.mean([chamfer_l1(r.output.data, s.gt) for r, s in zip(results, samples)]))


@dataclass
class TrainingResult:
    model: SymmCompletion
    tracker: RunTracker
    train_ids: List[str] = field(default_factory=list)
    val_ids: List[str] = field(default_factory=list)

    @property
    def final_val_cd(self) -> float:
        return self.tracker.epochs[-1]['val_cd']


def train(cfg: ModelConfig, dataset: Sequence, tracker: Optional[RunTracker] = None,
          threads: Optional[int] = None, verbose: bool = True) -> TrainingResult:
    """
    Train a fresh model on `dataset` (a list of SampleRecord)

    Epoch 0 is an evaluation of the untrained model. Each later epoch shuffles the
    training split, takes one AdamW step per mini-batch on the mean total_loss,
    and records the mean final-output l1 CD of the batches and the validation CD.
    """
    if not dataset:
        raise SizeError("training needs a non-empty dataset")
    train_set, val_set = split_train_val(dataset)
    tracker = tracker or RunTracker(verbose=verbose)
    model = SymmCompletion(cfg)
    params = model.parameters()
    optimizer = dc.AdamW(params, lr=cfg.lr, betas=cfg.betas, weight_decay=cfg.weight_decay)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])

    tracker.note('parameters', model.num_parameters())
    tracker.note('train_samples', len(train_set))
    tracker.note('val_samples', len(val_set))
    if verbose:
        print(f"[*] Training on {len(train_set)} samples, validating on {len(val_set)} "
              f"({model.num_parameters():,} parameters)")

    start = time.perf_counter()
    tracker.log_epoch(0, mean_output_cd(model, train_set, threads), mean_output_cd(model, val_set, threads),
                      time.perf_counter() - start)

    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        order = shuffle_rng.permutation(len(train_set))
        batch_cds = []
        for batch, offset in enumerate(range(0, len(order), cfg.batch_size)):
            members = [train_set[i] for i in order[offset:offset + cfg.batch_size]]
            losses = []
            for sample in members:
                result = model.complete(sample.partial)
                losses.append(total_loss(result.p_init, result.fines, sample.gt))
                batch_cds.append(chamfer_l1(result.output.data, sample.gt))
            loss = losses[0]
            for extra in losses[1:]:
                loss = dc.add(loss, extra)
            loss = dc.scale(loss, 1.0 / len(losses))
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(epoch, batch, value)
            dc.backward(loss, params)
            optimizer.step()
        val_cd = mean_output_cd(model, val_set, threads)
        tracker.log_epoch(epoch, float(np.mean(batch_cds)), val_cd, time.perf_counter() - start)

    return TrainingResult(model=model, tracker=tracker,
                          train_ids=[s.shape_id for s in train_set], val_ids=[s.shape_id for s in val_set])


def evaluate_outputs(outputs: Sequence[np.ndarray], dataset: Sequence, threshold: float = 0.01,
                     resolution: Optional[int] = None, threads: Optional[int] = None) -> List[MetricsRecord]:
    """Metrics of externally produced outputs against each sample's gt; MMD uses every gt as gallery"""
    if len(outputs) != len(dataset):
        raise SizeError(f"{len(outputs)} outputs for {len(dataset)} samples")
    if resolution is not None:
        for sample in dataset:
            if sample.gt.shape[0] != resolution:
                raise SizeError(f"{sample.shape_id}: gt has {sample.gt.shape[0]} points, "
                                f"config resolution is {resolution}")
    gallery = [s.gt for s in dataset]

    def score(pair) -> MetricsRecord:
        output, sample = pair
        return MetricsRecord(
            shape_id=sample.shape_id,
            cd_l1=chamfer_l1(output, sample.gt),
            cd_l2=chamfer_l2(output, sample.gt),
            f1=f1_score(output, sample.gt, threshold),
            fd=fidelity_distance(sample.partial, output),
            mmd=mmd(output, gallery),
        )
    return _map_samples(score, list(zip(outputs, dataset)), threads)


@dataclass
class EvaluationResult:
    records: List[MetricsRecord]
    results: List[CompletionResult]

    @property
    def aggregate(self) -> Dict[str, float]:
        return aggregate_metrics(self.records)


def evaluate(model: SymmCompletion, dataset: Sequence, flags: Optional[Tuple[bool, bool]] = None,
             threads: Optional[int] = None) -> EvaluationResult:
    """Complete every sample and score the final output; `flags` overrides (use_f_k, use_f_m)"""
    if not dataset:
        raise SizeError("evaluation needs a non-empty dataset")
    cfg = model.cfg
    for sample in dataset:
        if sample.gt.shape[0] != cfg.resolution:
            raise SizeError(f"{sample.shape_id}: gt has {sample.gt.shape[0]} points, "
                            f"config resolution is {cfg.resolution}")
    if flags is not None:
        model.with_guidance(*flags)
    try:
        results = predict(model, dataset, threads)
    finally:
        model.cfg = cfg
    records = evaluate_outputs([r.output.data for r in results], dataset, cfg.f1_threshold, threads=threads)
    return EvaluationResult(records=records, results=results)


def guidance_ordering_holds(cds: Dict[str, float], slack: float = 0.05) -> bool:
    """both <= each single path <= neither, each comparison with `slack` relative tolerance"""
    single = (cds['f_k_only'], cds['f_m_only'])
    return (cds['both'] <= min(single) * (1 + slack)
            and max(single) <= cds['neither'] * (1 + slack))


def lstnet_ordering_holds(cds: Dict[str, float], slack: float = 0.05) -> bool:
    """Both feature sources beat local-only and global-only, point-wise transforms beat one mirror plane"""
    best = cds['both'] / (1 + slack)
    return best <= min(cds['local'], cds['global']) and best <= cds['plane']


@dataclass
class AblationResult:
    per_seed: Dict[int, Dict[str, float]]
    slack: float = 0.05
    check: Callable[[Dict[str, float], float], bool] = guidance_ordering_holds

    def votes(self) -> Dict[int, bool]:
        return {seed: self.check(cds, self.slack) for seed, cds in self.per_seed.items()}

    @property
    def majority(self) -> bool:
        votes = list(self.votes().values())
        return sum(votes) * 2 > len(votes)


def _train_variants(cfg: ModelConfig, dataset: Sequence, variants: Dict[str, dict], seeds: Sequence[int],
                    threads: Optional[int], verbose: bool) -> Dict[int, Dict[str, float]]:
    """Final validation CD of every config variant, per seed"""
    per_seed = {}
    for seed in seeds:
        cds = {}
        for name, changes in variants.items():
            result = train(cfg.replace(seed=seed, **changes), dataset, threads=threads, verbose=verbose)
            cds[name] = result.final_val_cd
            print(f"[*] seed {seed} {name:9s} val_cd={cds[name]:.6f}")
        per_seed[seed] = cds
    return per_seed


def run_guidance_ablation(cfg: ModelConfig, dataset: Sequence, seeds: Sequence[int] = (0, 1, 2),
                          threads: Optional[int] = None, verbose: bool = False) -> AblationResult:
    """Train every guidance variant per seed and collect the final validation CDs"""
    variants = {name: {'use_f_k': use_f_k, 'use_f_m': use_f_m}
                for name, (use_f_k, use_f_m) in GUIDANCE_VARIANTS.items()}
    return AblationResult(per_seed=_train_variants(cfg, dataset, variants, seeds, threads, verbose))


def run_lstnet_ablation(cfg: ModelConfig, dataset: Sequence, seeds: Sequence[int] = (0, 1, 2),
                        threads: Optional[int] = None, verbose: bool = False) -> AblationResult:
    """
    Feature sources (both, local, global) and the initial generator (point-wise
    transforms vs a single predicted mirror plane). 'both' is the full model, so it
    also stands in for the point-wise generator.
    """
    base = {'lstnet_features': 'both', 'initial_generator': 'lstnet', 'use_f_k': True, 'use_f_m': True}
    variants = {name: {**base, **changes} for name, changes in LSTNET_VARIANTS.items()}
    return AblationResult(per_seed=_train_variants(cfg, dataset, variants, seeds, threads, verbose),
                          check=lstnet_ordering_holds)


def run_symmetry_baseline_check(model: SymmCompletion, dataset: Sequence,
                                threads: Optional[int] = None) -> Dict[str, float]:
    """
    Compare the model's initial cloud with the oracle reflection baseline on the
    mirror-symmetric samples (reflection of the partial about the known plane)
    """
    symmetric = [s for s in dataset if s.symmetric and s.symmetry_plane is not None]
    if not symmetric:
        raise SizeError("no mirror-symmetric samples with a known plane")
    results = predict(model, symmetric, threads)
    model_cd = float(np.mean([chamfer_l1(r.p_init.data, s.gt) for r, s in zip(results, symmetric)]))
    oracle_cd = float(np.mean([chamfer_l1(reflection_baseline(s.partial, s.symmetry_plane), s.gt)
                               for s in symmetric]))
    return {'samples': len(symmetric), 'initial_cd': model_cd, 'oracle_cd': oracle_cd,
            'ratio': model_cd / oracle_cd if oracle_cd > 0 else math.inf}
