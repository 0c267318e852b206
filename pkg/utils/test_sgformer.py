#!/usr/bin/env python3
"""
Test the symmetry-guidance transformer and the assembled completion model
"""

import sys
import os
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from core import diffcore as dc
from core.config import ModelConfig
from core.errors import ShapeError
from core.sgformer import FeatureSet, SGFormerStage, StageConfig
from core.symm_completion import SymmCompletion, complete, count_params


def _config(**changes) -> ModelConfig:
    base = dict(n_k=16, c=8, enc_channels=8, fuse_channels=8, heads=2, knn_k=4, ratios=(2, 2))
    base.update(changes)
    return ModelConfig(**base)


def _cloud(n, seed=0):
    return np.random.default_rng(seed).uniform(-0.5, 0.5, size=(n, 3))


def _mlp(sizes):
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def _point_transformer(c):
    return 2 * (c * c + c) + 3 * c * c + _mlp([3, c, c]) + _mlp([c, c, c])


def _attention_block(c):
    return 4 * (c * c + c) + _mlp([c, 2 * c, c])


def _expected_params(cfg: ModelConfig) -> int:
    enc, c, w = cfg.enc_channels, cfg.c, cfg.fuse_channels
    lstnet = (_mlp([3, enc // 2, enc]) + _point_transformer(enc) + _mlp([enc, c, c])
              + _mlp([2 * c, c, c // 2, 9]) + _mlp([2 * c, c, c // 2, 3]))
    path = 2 * _mlp([enc, w, w]) + 2 * _attention_block(w)
    stages = 0
    for r in cfg.ratios:
        encoder = _mlp([3, enc // 2, enc]) + _mlp([2 * enc, enc, enc]) + _point_transformer(enc)
        stages += encoder + 2 * path + 2 * _attention_block(2 * w) + _mlp([2 * w, w, 3 * r])
    return lstnet + stages


def test_count_params_matches_layer_arithmetic():
    for cfg in (_config(), _config(n_k=8, c=64, enc_channels=16, fuse_channels=32, heads=4, ratios=(4, 2))):
        assert count_params(cfg) == _expected_params(cfg)


def test_parameter_names_follow_the_module_tree():
    model = SymmCompletion(_config())
    names = [p.name for p in model.parameters()]
    assert 'lstnet.affine_head.layer2.weight' in names
    assert any(n.startswith('sgformer.stage1.') for n in names)
    assert any(n.startswith('sgformer.stage2.decoder.1.') for n in names)
    assert len(names) == len(set(names))


def test_shape_contract_full_resolution():
    cfg = _config(n_k=512, ratios=(4, 4))
    with dc.no_grad():
        result = complete(_cloud(1024), cfg)
    assert result.counts() == [1024, 4096, 16384]
    assert result.counts() == cfg.output_counts


def test_refinement_starts_at_repeated_input():
    cfg = _config()
    model = SymmCompletion(cfg)
    with dc.no_grad():
        result = model.complete(_cloud(64))
    fine1, fine2 = (f.data for f in result.fines)
    assert np.array_equal(fine1, np.repeat(result.p_init.data, 2, axis=0))
    assert np.array_equal(fine2, np.repeat(fine1, 2, axis=0))


def test_initial_cloud_is_key_points_then_missing_part():
    model = SymmCompletion(_config())
    with dc.no_grad():
        result = model.complete(_cloud(64, seed=1))
    assert np.array_equal(result.p_init.data[:16], result.key.p_k)
    assert np.array_equal(result.p_init.data[16:], result.pair.p_m.data)


def _stage(seed=0):
    stage = SGFormerStage(StageConfig(ratio=3, enc_channels=8, fuse_channels=8, heads=2, knn_k=4),
                          np.random.default_rng(seed))
    stage.point_shuffle.last.weight.data = np.random.default_rng(seed + 1).normal(
        size=stage.point_shuffle.last.weight.shape)
    return stage


def test_stage_upsamples_by_ratio():
    stage = _stage()
    rng = np.random.default_rng(2)
    out = stage(_cloud(10), rng.normal(size=(6, 8)), rng.normal(size=(7, 8)))
    assert out.shape == (30, 3)


def test_stage_is_permutation_equivariant_over_point_blocks():
    stage = _stage(seed=4)
    rng = np.random.default_rng(5)
    cloud, f_k, f_m = _cloud(12, seed=6), rng.normal(size=(6, 8)), rng.normal(size=(6, 8))
    perm = rng.permutation(12)
    with dc.no_grad():
        out = stage(cloud, f_k, f_m).data.reshape(12, 3, 3)
        out_perm = stage(cloud[perm], f_k, f_m).data.reshape(12, 3, 3)
    assert np.allclose(out_perm, out[perm], atol=1e-10)


def test_encoder_gives_duplicate_points_identical_features():
    stage = _stage()
    cloud = _cloud(10, seed=7)
    cloud[7] = cloud[3]
    with dc.no_grad():
        features = stage.encode(cloud).features.data
    assert np.allclose(features[7], features[3], atol=1e-12)


def test_disabled_guidance_ignores_its_source():
    stage = _stage()
    rng = np.random.default_rng(3)
    cloud, f_k, f_m = _cloud(10), rng.normal(size=(6, 8)), rng.normal(size=(6, 8))
    other_f_k = rng.normal(size=(6, 8))
    with dc.no_grad():
        a = stage(cloud, f_k, f_m, use_f_k=False).data
        b = stage(cloud, other_f_k, f_m, use_f_k=False).data
        c = stage(cloud, other_f_k, f_m).data
    assert np.array_equal(a, b)
    assert not np.allclose(a, c)


def test_dual_path_fuse_checks_channels():
    stage = _stage()
    f_init = stage.encode(_cloud(10))
    assert f_init.channels == 8
    with pytest.raises(ShapeError):
        stage.dual_path_fuse(f_init, np.zeros((6, 5)), np.zeros((6, 8)))


def test_feature_set_alignment():
    with pytest.raises(ShapeError):
        FeatureSet(points=_cloud(4), features=dc.Tensor(np.zeros((5, 2))))


def test_guidance_flags_keep_parameters():
    model = SymmCompletion(_config())
    before = model.state_dict()
    model.with_guidance(False, False)
    assert model.cfg.use_f_k is False and model.cfg.use_f_m is False
    after = model.state_dict()
    assert all(np.array_equal(before[k], after[k]) for k in before)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, '-q']))
