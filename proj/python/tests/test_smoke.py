# Copyright 2026 The fbitrain Authors
# SPDX-License-Identifier: Apache-2.0

import math
import os
import subprocess

import numpy as np
import pytest

import fbi


def tiny_config(binarize=True):
    cfg = fbi.ModelConfig()
    cfg.n_layers = 1
    cfg.hidden_size = 32
    cfg.n_heads = 2
    cfg.n_kv_heads = 2
    cfg.intermediate_size = 48
    cfg.max_seq_len = 16
    cfg.binarize = binarize
    return cfg


def test_sign_maps_zero_to_minus_one():
    w = np.array([[0.5, -0.3, 0.0, -0.0]], dtype=np.float32)
    assert fbi.ste_sign(w).tolist() == [[1.0, -1.0, -1.0, -1.0]]


def test_init_scales_match_numpy():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(17, 5)).astype(np.float32)
    alpha, beta = fbi.init_scales(w)
    mean = w.astype(np.float64).mean(axis=0)
    np.testing.assert_allclose(alpha, mean, atol=1e-6)
    np.testing.assert_allclose(beta, np.abs(w - mean).mean(axis=0), atol=1e-6)


def test_linear_forward_matches_effective_weight():
    rng = np.random.default_rng(1)
    w = rng.normal(size=(8, 3)).astype(np.float32)
    alpha = rng.normal(size=3).astype(np.float32)
    beta = rng.normal(size=3).astype(np.float32)
    x = rng.normal(size=(4, 8)).astype(np.float32)
    w_eff = alpha * np.where(w > 0, 1.0, -1.0) + beta
    np.testing.assert_allclose(fbi.fbi_linear_forward(x, w, alpha, beta), x @ w_eff, atol=1e-5)


def test_pack_round_trip_and_forward():
    rng = np.random.default_rng(2)
    w = rng.normal(size=(100, 37)).astype(np.float32)
    alpha, beta = fbi.init_scales(w)
    packed = fbi.pack(w, alpha, beta)
    assert packed.words.shape == (37 * 2,)
    np.testing.assert_array_equal(fbi.unpack(packed), np.where(w > 0, 1.0, -1.0))
    x = rng.uniform(-10, 10, size=(3, 100)).astype(np.float32)
    dense = x.astype(np.float64) @ (alpha * np.where(w > 0, 1.0, -1.0) + beta).astype(np.float64)
    np.testing.assert_allclose(fbi.packed_forward(packed, x), dense, atol=1e-4)


def test_losses():
    uniform = np.full((1, 1, 4), 0.25, dtype=np.float32)
    assert fbi.ad_loss(np.zeros((1, 1, 4), np.float32), uniform) == pytest.approx(math.log(4), abs=1e-6)
    ids = np.array([[1, 2, 3]], dtype=np.int32)
    logits = np.zeros((1, 3, 259), np.float32)
    assert fbi.na_loss(logits, ids) == pytest.approx(math.log(259), abs=1e-5)


def test_bitwidth_and_storage():
    assert fbi.module_bitwidth(2048) == pytest.approx(1.0219, abs=1e-4)
    report = fbi.storage_report(fbi.ModelConfig.fbi_7b())
    assert report["compression_ratio"] == pytest.approx(0.9007, abs=0.005)
    assert fbi.ModelConfig.toy().census()["total"] == 881024


def test_model_export_import(tmp_path):
    model = fbi.Model(tiny_config(), seed=3)
    ids = np.array([[fbi.BOS, 72, 105, 33, 10, 72]], dtype=np.int32)
    logits = model.forward_logits(ids)
    assert logits.shape == (1, 6, 259)
    path = tmp_path / "m.fbip"
    fbi.export_packed(model, path)
    packed = fbi.import_packed(path)
    np.testing.assert_allclose(packed.forward_logits(ids), logits, atol=1e-4)
    assert packed.encode() == path.read_bytes()

    model.save(tmp_path / "m.fbic")
    again = fbi.load_model(tmp_path / "m.fbic")
    np.testing.assert_array_equal(again.forward_logits(ids), logits)


def test_errors_surface_as_python_exceptions():
    with pytest.raises(fbi.DimensionError):
        fbi.fbi_linear_forward(np.zeros((2, 3), np.float32), np.zeros((4, 2), np.float32),
                               np.zeros(2, np.float32), np.zeros(2, np.float32))
    with pytest.raises(fbi.FbiError):
        fbi.import_packed("/nonexistent/file.fbip")
    bad = tiny_config()
    bad.n_heads = 5
    with pytest.raises(fbi.ConfigError):
        bad.validate()


def test_short_training_run_is_deterministic():
    text = ("The river was quiet, and the garden was green. " * 400).encode()
    tokens = np.array(fbi.encode_documents(text.decode()), dtype=np.int32)
    data = fbi.ChunkedDataset.from_tokens(tokens, 1024, 16)
    cfg = fbi.TrainConfig()
    cfg.total_steps = 20
    cfg.warmup_steps = 2
    cfg.batch_tokens = 64
    cfg.seq_len = 16
    cfg.checkpoint_every = 10
    cfg.ff_interval = 5
    cfg.peak_lr = 3e-3
    cfg.final_lr = 3e-4

    runs = []
    for _ in range(2):
        model = fbi.Model(tiny_config(), seed=1)
        before = fbi.sign_snapshot(model)
        result = fbi.train(model, data, cfg, "na")
        ff = fbi.ff_ratio(before, fbi.sign_snapshot(model))
        assert 0.0 <= ff["ratio"] <= 1.0
        assert result["steps_completed"] == 20
        runs.append(model.forward_logits(tokens[:16].reshape(1, 16)))
    np.testing.assert_array_equal(runs[0], runs[1])
    losses = [r["loss"] for r in result["log"] if r["loss"] is not None]
    assert losses[-1] < losses[0]


@pytest.mark.skipif("FBI_CLI" not in os.environ, reason="needs the fbi executable")
def test_cli_reports_storage():
    out = subprocess.run([os.environ["FBI_CLI"], "report"], capture_output=True, text=True, check=True)
    assert "7B" in out.stdout
