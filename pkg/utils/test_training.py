#!/usr/bin/env python3
"""
Test the loss, synthetic data, training loop, checkpoints and evaluation
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import hashlib

import numpy as np
import pytest

from core import diffcore as dc
from core import training
from core.checkpoint import load_checkpoint, read_state, save_checkpoint, write_state
from core.config import (ModelConfig, get_model_defaults, get_thread_count, load_config_file,
                         save_config_file)
from core.errors import CheckpointError, ConfigError, SizeError, TrainingDivergedError
from core.geometry import chamfer_l1, reflect_about_plane, reflection_cd
from core.symm_completion import SymmCompletion
from core.training import (evaluate, evaluate_outputs, guidance_ordering_holds, lstnet_ordering_holds,
                           split_train_val, total_loss, train)
from processors.synthetic_shapes import SampleRecord, gen_synthetic, load_dataset, save_dataset


def _config(**changes) -> ModelConfig:
    base = dict(n_k=8, c=8, enc_channels=8, fuse_channels=8, heads=2, knn_k=4, ratios=(2, 2),
                partial_size=32, resolution=64, epochs=1, batch_size=2, lr=0.001)
    base.update(changes)
    return ModelConfig(**base)


def _dataset(count=4, seed=0):
    return gen_synthetic(seed, count, 64, 32, threads=0)


# Loss

def test_total_loss_is_zero_at_the_target():
    gt = np.random.default_rng(0).uniform(size=(20, 3))
    assert total_loss(gt, [gt, gt], gt).item() == 0.0


def test_total_loss_sums_the_terms():
    gt = np.zeros((1, 3))
    off = np.array([[0.5, 0.0, 0.0]])
    assert total_loss(gt, [off, off], gt).item() == pytest.approx(1.0)


def test_total_loss_of_zero_offset_model():
    model = SymmCompletion(_config())
    sample = _dataset(1)[0]
    result = model.complete(sample.partial)
    expected = sum(chamfer_l1(c.data, sample.gt) for c in [result.p_init] + result.fines)
    assert total_loss(result.p_init, result.fines, sample.gt).item() == pytest.approx(expected, rel=1e-12)


def test_total_loss_needs_two_fines():
    gt = np.zeros((2, 3))
    with pytest.raises(SizeError):
        total_loss(gt, [gt], gt)


# Synthetic data

def test_synthetic_data_is_deterministic():
    a = gen_synthetic(3, 5, 64, 32, threads=0)
    b = gen_synthetic(3, 5, 64, 32, threads=3)
    for x, y in zip(a, b):
        assert x.shape_id == y.shape_id
        assert np.array_equal(x.gt, y.gt) and np.array_equal(x.partial, y.partial)
        assert np.array_equal(x.symmetry_plane, y.symmetry_plane)


def test_synthetic_shapes_and_symmetry():
    records = gen_synthetic(1, 10, 512, 128, threads=0)
    for record in records:
        assert record.gt.shape == (512, 3)
        assert record.partial.shape == (128, 3)
        assert np.abs(record.gt).max() <= 0.5 + 1e-6
        assert np.linalg.norm(record.symmetry_plane) == pytest.approx(1.0)
        score = reflection_cd(record.gt, record.symmetry_plane)
        if record.symmetric:
            assert score < 0.02
        else:
            assert score > 0.05
    assert sum(not r.symmetric for r in records) == 2


def test_partial_is_taken_from_the_ground_truth():
    record = _dataset(1)[0]
    gt_rows = {tuple(p) for p in record.gt}
    assert all(tuple(p) in gt_rows for p in record.partial)


def test_dataset_round_trip(tmp_path):
    records = _dataset(3)
    save_dataset(records, str(tmp_path / 'a'), meta={'seed': 0})
    save_dataset(_dataset(3), str(tmp_path / 'b'), meta={'seed': 0})
    for name in os.listdir(tmp_path / 'a'):
        assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes()
    loaded = load_dataset(str(tmp_path / 'a'))
    for x, y in zip(records, loaded):
        assert x.shape_id == y.shape_id and x.symmetric == y.symmetric
        assert np.array_equal(x.gt, y.gt) and np.array_equal(x.partial, y.partial)
        assert np.array_equal(x.symmetry_plane, y.symmetry_plane)


# Splits and metrics

def _records_with_ids(ids):
    return [SampleRecord(partial=np.zeros((1, 3)), gt=np.zeros((1, 3)), shape_id=i) for i in ids]


def test_split_is_by_id_hash():
    records = _records_with_ids([f"shape-{i}" for i in range(200)])
    train_set, val_set = split_train_val(records)
    assert len(train_set) + len(val_set) == 200
    assert 20 <= len(val_set) <= 60
    for r in val_set:
        assert int(hashlib.md5(r.shape_id.encode()).hexdigest(), 16) % 5 == 0


def test_empty_validation_split_falls_back_to_training():
    ids = [f"s{i}" for i in range(40) if int(hashlib.md5(f"s{i}".encode()).hexdigest(), 16) % 5][:3]
    train_set, val_set = split_train_val(_records_with_ids(ids))
    assert [r.shape_id for r in val_set] == [r.shape_id for r in train_set] == ids


def test_evaluate_ground_truth_against_itself():
    records = _dataset(3)
    metrics = evaluate_outputs([r.gt for r in records], records, resolution=64, threads=0)
    for m in metrics:
        assert m.cd_l1 == 0.0 and m.cd_l2 == 0.0 and m.f1 == 1.0
        assert m.fd == 0.0 and m.mmd == 0.0


def test_fidelity_of_output_embedding_the_partial():
    record = _dataset(1)[0]
    output = np.concatenate([record.partial, reflect_about_plane(record.partial, record.symmetry_plane)])
    metric = evaluate_outputs([output], [record], threads=0)[0]
    assert metric.fd == 0.0


def test_evaluate_rejects_resolution_mismatch():
    model = SymmCompletion(_config(resolution=128))
    with pytest.raises(SizeError):
        evaluate(model, _dataset(2), threads=0)


def test_guidance_ordering():
    assert guidance_ordering_holds({'both': 1.0, 'f_k_only': 1.02, 'f_m_only': 1.1, 'neither': 1.2})
    assert guidance_ordering_holds({'both': 1.04, 'f_k_only': 1.0, 'f_m_only': 1.1, 'neither': 1.1})
    assert not guidance_ordering_holds({'both': 1.2, 'f_k_only': 1.0, 'f_m_only': 1.0, 'neither': 1.3})


def test_lstnet_ordering():
    assert lstnet_ordering_holds({'both': 1.0, 'local': 1.1, 'global': 1.3, 'plane': 1.5})
    assert lstnet_ordering_holds({'both': 1.04, 'local': 1.0, 'global': 1.3, 'plane': 1.01})
    assert not lstnet_ordering_holds({'both': 1.0, 'local': 1.1, 'global': 1.3, 'plane': 0.9})
    assert not lstnet_ordering_holds({'both': 1.2, 'local': 1.0, 'global': 1.3, 'plane': 1.5})


def test_lstnet_ablation_trains_every_variant(capsys):
    result = training.run_lstnet_ablation(_config(), _dataset(4), seeds=(0,), threads=0)
    cds = result.per_seed[0]
    assert sorted(cds) == sorted(training.LSTNET_VARIANTS)
    assert all(np.isfinite(v) and v > 0 for v in cds.values())
    assert result.votes() == {0: lstnet_ordering_holds(cds)}
    assert result.majority == result.votes()[0]
    assert 'plane' in capsys.readouterr().out


def test_evaluate_keeps_the_model_guidance_flags():
    model = SymmCompletion(_config())
    dataset = _dataset(2)
    ablated = evaluate(model, dataset, flags=(False, False), threads=0)
    assert model.cfg.use_f_k is True and model.cfg.use_f_m is True
    full = evaluate(model, dataset, threads=0)
    assert set(ablated.aggregate) == set(full.aggregate) == {'cd_l1', 'cd_l2', 'f1', 'fd', 'mmd'}
    assert full.aggregate['cd_l1'] == pytest.approx(np.mean([r.cd_l1 for r in full.records]))


# Training

def test_train_one_epoch_and_checkpoint_round_trip(tmp_path):
    cfg = _config()
    dataset = _dataset(4)
    result = train(cfg, dataset, threads=0, verbose=False)
    assert [e['epoch'] for e in result.tracker.epochs] == [0, 1]

    path = str(tmp_path / 'model.symc')
    save_checkpoint(result.model, path)
    assert os.path.exists(path + '.yaml')
    assert load_config_file(path + '.yaml') == cfg
    restored = load_checkpoint(path)
    with dc.no_grad():
        a = result.model.complete(dataset[0].partial)
        b = restored.complete(dataset[0].partial)
    for x, y in zip([a.p_init] + a.fines, [b.p_init] + b.fines):
        assert np.array_equal(x.data, y.data)


def test_training_is_deterministic():
    cfg = _config(epochs=2)
    dataset = _dataset(5)
    a = train(cfg, dataset, threads=0, verbose=False)
    b = train(cfg, dataset, threads=0, verbose=False)
    strip = [{k: v for k, v in e.items() if k != 'seconds'} for e in a.tracker.epochs]
    assert strip == [{k: v for k, v in e.items() if k != 'seconds'} for e in b.tracker.epochs]
    sa, sb = a.model.state_dict(), b.model.state_dict()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)


def test_zero_learning_rate_leaves_parameters_unchanged():
    cfg = _config(lr=0.0, weight_decay=0.0, epochs=2)
    result = train(cfg, _dataset(4), threads=0, verbose=False)
    fresh = SymmCompletion(cfg).state_dict()
    trained = result.model.state_dict()
    assert all(np.array_equal(fresh[k], trained[k]) for k in fresh)


def test_training_changes_parameters():
    cfg = _config()
    result = train(cfg, _dataset(4), threads=0, verbose=False)
    fresh = SymmCompletion(cfg).state_dict()
    trained = result.model.state_dict()
    assert any(not np.array_equal(fresh[k], trained[k]) for k in fresh)


def test_divergence_names_epoch_and_batch(monkeypatch):
    def nan_loss(p_init, fines, gt):
        return dc.scale(dc.chamfer_l1(p_init, gt), float('nan'))
    monkeypatch.setattr(training, 'total_loss', nan_loss)
    with pytest.raises(TrainingDivergedError) as info:
        train(_config(), _dataset(4), threads=0, verbose=False)
    assert info.value.epoch == 1 and info.value.batch == 0
    assert 'epoch 1' in str(info.value)


def test_train_rejects_empty_dataset():
    with pytest.raises(SizeError):
        train(_config(), [], verbose=False)


def test_symmetry_baseline_check_reports_ratio():
    model = SymmCompletion(_config())
    report = training.run_symmetry_baseline_check(model, _dataset(5), threads=0)
    assert report['samples'] == 4
    assert report['oracle_cd'] > 0.0
    assert report['ratio'] == pytest.approx(report['initial_cd'] / report['oracle_cd'])


# Config

def test_config_file_round_trip_and_validation(tmp_path):
    cfg = _config(ratios=(4, 2), use_f_m=False)
    path = str(tmp_path / 'cfg.yaml')
    save_config_file(cfg, path)
    assert load_config_file(path) == cfg
    assert get_model_defaults()['ratios'] == [4, 4]
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({'training': {'n_k': 8}})
    with pytest.raises(ConfigError):
        _config(heads=3)


def test_thread_count_from_environment(monkeypatch):
    monkeypatch.setenv('SYMM_THREADS', '0')
    assert get_thread_count() == 0
    monkeypatch.setenv('SYMM_THREADS', 'many')
    with pytest.raises(ConfigError):
        get_thread_count()


# Checkpoint format

def test_checkpoint_state_round_trip(tmp_path):
    state = {'a.weight': np.arange(6.0).reshape(2, 3), 'b': np.array([1.5]), 'scalar': np.array(2.0)}
    path = str(tmp_path / 'state.symc')
    write_state(state, path)
    with open(path, 'rb') as f:
        assert f.read(4) == b'SYMC'
    loaded = read_state(path)
    assert list(loaded) == list(state)
    for name in state:
        assert np.array_equal(loaded[name], state[name]) and loaded[name].shape == state[name].shape


def test_checkpoint_errors(tmp_path):
    path = tmp_path / 'bad.symc'
    path.write_bytes(b'NOPE' + bytes(8))
    with pytest.raises(CheckpointError):
        read_state(str(path))

    good = str(tmp_path / 'model.symc')
    save_checkpoint(SymmCompletion(_config()), good)
    blob = (tmp_path / 'model.symc').read_bytes()
    (tmp_path / 'cut.symc').write_bytes(blob[:-5])
    with pytest.raises(CheckpointError):
        read_state(str(tmp_path / 'cut.symc'))
    with pytest.raises(CheckpointError):
        load_checkpoint(good, _config(c=16))
    with pytest.raises(CheckpointError):
        load_checkpoint(str(tmp_path / 'missing.symc'))


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, '-q']))
