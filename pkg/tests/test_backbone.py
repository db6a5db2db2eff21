import json

import numpy as np
import pytest

from oodgate import (
    ConfigError,
    DataError,
    ManifestEntry,
    SizeError,
    forward_all,
    forward_stage,
    gate_overhead_flops,
    global_average_pool,
    head_logits,
    init_backbone,
    load_feature_manifest,
    save_feature_manifest,
    stage_flops,
    validate_feature_manifest,
    write_tensor,
)


def reference_conv_stage(z, weights, stride):
    """Direct-index reference for one conv+ReLU stage (zero padding 1)."""
    out_ch, in_ch, kh, kw = weights.shape
    _, h, w = z.shape
    oh = (h + 2 - kh) // stride + 1
    ow = (w + 2 - kw) // stride + 1
    out = np.zeros((out_ch, oh, ow))
    padded = np.zeros((in_ch, h + 2, w + 2))
    padded[:, 1:-1, 1:-1] = z
    for o in range(out_ch):
        for y in range(oh):
            for x in range(ow):
                acc = 0.0
                for i in range(in_ch):
                    for dy in range(kh):
                        for dx in range(kw):
                            acc += padded[i, y * stride + dy, x * stride + dx] * weights[o, i, dy, dx]
                out[o, y, x] = max(acc, 0.0)
    return out


class TestInit:
    def test_same_seed_bit_identical(self):
        a = init_backbone(42, classes=4)
        b = init_backbone(42, classes=4)
        for wa, wb in zip(a.conv_weights, b.conv_weights):
            assert wa.tobytes() == wb.tobytes()
        assert a.head_weight.tobytes() == b.head_weight.tobytes()

    def test_different_seeds_differ(self):
        a = init_backbone(1, classes=4)
        b = init_backbone(2, classes=4)
        assert a.conv_weights[0].tobytes() != b.conv_weights[0].tobytes()

    def test_head_emits_class_count_logits(self, rng):
        b = init_backbone(3, classes=10, input_extents=(3, 32, 32))
        x = rng.random((3, 32, 32)).astype(np.float32)
        _, logits = forward_all(b, x)
        assert logits.shape == (10,)

    def test_classes_lower_bound(self):
        with pytest.raises(ConfigError):
            init_backbone(0, classes=1)

    def test_zero_extent_rejected(self):
        with pytest.raises(SizeError):
            init_backbone(0, classes=4, input_extents=(0, 32, 32))

    def test_weight_bound_follows_fan_in(self):
        b = init_backbone(9, classes=4)
        for spec, w in zip(b.stages, b.conv_weights):
            bound = 1.0 / np.sqrt(spec.in_channels * 9)
            assert np.abs(w).max() <= bound


class TestForward:
    def test_zero_input_zero_output(self):
        b = init_backbone(5, classes=4)
        out = forward_stage(b, 0, np.zeros((3, 32, 32), np.float32))
        assert np.allclose(out, 0.0)

    def test_stride_two_halves_extents(self, rng):
        b = init_backbone(5, classes=4)
        out = forward_stage(b, 0, rng.random((3, 32, 32)).astype(np.float32))
        assert out.shape == (16, 16, 16)

    def test_extent_mismatch_reports_both(self):
        b = init_backbone(5, classes=4)
        with pytest.raises(SizeError) as err:
            forward_stage(b, 1, np.zeros((3, 32, 32), np.float32))
        assert "(16, 16, 16)" in str(err.value) and "(3, 32, 32)" in str(err.value)

    def test_composition_matches_reference(self, rng):
        b = init_backbone(11, classes=4)
        x = rng.random((3, 32, 32)).astype(np.float32)
        z = x.astype(np.float64)
        for i, spec in enumerate(b.stages):
            z = reference_conv_stage(z, b.conv_weights[i].astype(np.float64), spec.stride)
        feats, logits = forward_all(b, x)
        assert np.allclose(feats[-1], z, atol=1e-5)
        ref_logits = b.head_weight.astype(np.float64) @ z.mean(axis=(1, 2))
        assert np.allclose(logits, ref_logits, atol=1e-5)

    def test_forward_deterministic_across_runs(self, rng):
        b = init_backbone(11, classes=4)
        x = rng.random((3, 32, 32)).astype(np.float32)
        a1, l1 = forward_all(b, x)
        a2, l2 = forward_all(b, x)
        assert l1.tobytes() == l2.tobytes()
        assert all(f1.tobytes() == f2.tobytes() for f1, f2 in zip(a1, a2))

    def test_global_average_pool(self, rng):
        z = rng.random((4, 5, 5)).astype(np.float32)
        pooled = global_average_pool(z)
        assert pooled.shape == (4,)
        assert pooled[0] == pytest.approx(z[0].mean(), abs=1e-6)


class TestFlops:
    def test_conv_closed_form(self):
        b = init_backbone(0, classes=10)
        # stage 0: 3 -> 16 channels, 16x16 output, 3x3 kernel
        assert stage_flops(b, 0) == 2 * 16 * 16 * 16 * 3 * 9

    def test_head_closed_form(self):
        b = init_backbone(0, classes=10)
        assert stage_flops(b, b.n_stages) == 2 * 64 * 10 == 1280

    def test_ledger_additivity(self):
        b = init_backbone(0, classes=4)
        assert sum(b.flops_ledger) == sum(stage_flops(b, i) for i in range(b.n_stages + 1))

    def test_gate_overheads(self):
        b = init_backbone(0, classes=4)
        # ses on stage-0 output (16x16x16): depthwise 3x3 plus pooling
        assert gate_overhead_flops(b, 0, "ses") == 2 * 16 * 16 * 16 * 9 + 16 * 16 * 16
        # she on stage-1 output (32 channels pooled): one dot per class
        assert gate_overhead_flops(b, 1, "she") == 2 * 4 * 32
        assert stage_flops(b, 0, gate="ses") == stage_flops(b, 0) + gate_overhead_flops(b, 0, "ses")
        assert stage_flops(b, 0, gate=True) == stage_flops(b, 0, gate="ses")

    def test_unknown_gate_kind(self):
        b = init_backbone(0, classes=4)
        with pytest.raises(ConfigError):
            gate_overhead_flops(b, 0, "nope")


class TestFeatureManifest:
    def _write_entry(self, tmp_path, rng, sid, stages=2, with_logits=True):
        paths = []
        for s in range(stages):
            p = tmp_path / f"{sid}_s{s}.tzr"
            write_tensor(rng.random((2, 4, 4)).astype(np.float32), p)
            paths.append(str(p))
        logits = None
        if with_logits:
            logits = str(tmp_path / f"{sid}_logits.tzr")
            write_tensor(rng.random(4).astype(np.float32), logits)
        return ManifestEntry(sample_id=sid, label=1, stage_paths=tuple(paths), logits_path=logits)

    def test_round_trip(self, tmp_path, rng):
        entries = [self._write_entry(tmp_path, rng, f"s{i}") for i in range(3)]
        manifest = tmp_path / "manifest.json"
        save_feature_manifest(entries, manifest)
        back = load_feature_manifest(manifest)
        assert [e.sample_id for e in back] == ["s0", "s1", "s2"]
        assert all(len(e.stage_paths) == 2 for e in back)
        assert validate_feature_manifest(manifest) == 3

    def test_missing_file_rejected(self, tmp_path, rng):
        entries = [self._write_entry(tmp_path, rng, "s0")]
        manifest = tmp_path / "manifest.json"
        save_feature_manifest(entries, manifest)
        (tmp_path / "s0_s1.tzr").unlink()
        with pytest.raises(DataError):
            load_feature_manifest(manifest)

    def test_inconsistent_stage_count_rejected(self, tmp_path, rng):
        e0 = self._write_entry(tmp_path, rng, "s0", stages=2)
        e1 = self._write_entry(tmp_path, rng, "s1", stages=3)
        manifest = tmp_path / "manifest.json"
        save_feature_manifest([e0, e1], manifest)
        with pytest.raises(DataError):
            load_feature_manifest(manifest)

    def test_not_an_array_rejected(self, tmp_path):
        manifest = tmp_path / "manifest.json"
        manifest.write_text(json.dumps({"oops": 1}))
        with pytest.raises(DataError):
            load_feature_manifest(manifest)
