import struct

import numpy as np
import pytest

from vitkit.weights_io import (
    MAGIC,
    FormatError,
    NamedTensorArchive,
    WeightImportError,
    import_pretrained,
    interpolate_pos_embedding,
    load,
    save,
    save_archive,
)
from vitkit.vit import ViTModel, preset_config


@pytest.fixture
def tiny_model():
    return ViTModel(preset_config("tiny"), seed=21)


class TestRoundTrip:
    def test_names_and_shapes_survive(self, tiny_model, tmp_path):
        path = tmp_path / "model.vitw"
        save(tiny_model, path)
        archive = load(path)
        assert archive.names() == list(tiny_model.params)
        for name, arr in archive.entries:
            assert arr.shape == tiny_model.param(name).data.shape

    def test_payloads_match_after_f32_rounding(self, tiny_model, tmp_path):
        path = tmp_path / "model.vitw"
        save(tiny_model, path)
        archive = load(path)
        for name, arr in archive.entries:
            np.testing.assert_array_equal(
                arr, tiny_model.param(name).data.astype(np.float32))

    def test_save_load_save_byte_identical(self, tiny_model, tmp_path):
        p1, p2 = tmp_path / "a.vitw", tmp_path / "b.vitw"
        save(tiny_model, p1)
        save_archive(load(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_loading_twice_identical(self, tiny_model, tmp_path):
        path = tmp_path / "model.vitw"
        save(tiny_model, path)
        a1, a2 = load(path), load(path)
        assert a1.names() == a2.names()
        for (_, x), (_, y) in zip(a1.entries, a2.entries):
            assert x.tobytes() == y.tobytes()

    def test_empty_archive(self, tmp_path):
        path = tmp_path / "empty.vitw"
        save_archive(NamedTensorArchive(), path)
        assert path.read_bytes() == MAGIC + struct.pack("<Q", 0)
        assert load(path).entries == []


class TestCorruption:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.vitw"
        path.write_bytes(b"NOTVITW!" + struct.pack("<Q", 0))
        with pytest.raises(FormatError, match="magic"):
            load(path)

    def test_truncated_payload(self, tiny_model, tmp_path):
        path = tmp_path / "model.vitw"
        save(tiny_model, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-10])
        with pytest.raises(FormatError, match="offset"):
            load(path)

    def test_corrupt_length_field_no_partial_state(self, tiny_model, tmp_path):
        path = tmp_path / "model.vitw"
        save(tiny_model, path)
        blob = bytearray(path.read_bytes())
        # inflate the first entry's name length
        blob[8 + 8:8 + 8 + 4] = struct.pack("<I", 2**31)
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError):
            load(path)

    def test_trailing_garbage(self, tiny_model, tmp_path):
        path = tmp_path / "model.vitw"
        save(tiny_model, path)
        path.write_bytes(path.read_bytes() + b"xx")
        with pytest.raises(FormatError, match="trailing"):
            load(path)


class TestImportPretrained:
    def test_self_import_complete(self, tiny_model, tmp_path):
        path = tmp_path / "model.vitw"
        save(tiny_model, path)
        fresh = ViTModel(preset_config("tiny"), seed=99)
        report = import_pretrained(load(path), fresh, strict=True)
        assert len(report.imported) == len(fresh.params)
        assert not report.skipped_head and not report.mismatched
        for name in fresh.params:
            np.testing.assert_array_equal(
                fresh.param(name).data,
                tiny_model.param(name).data.astype(np.float32).astype(np.float64))

    def test_head_skipped_on_class_mismatch(self, tmp_path):
        donor = ViTModel(preset_config("tiny", num_classes=1000), seed=1)
        path = tmp_path / "donor.vitw"
        save(donor, path)
        target = ViTModel(preset_config("tiny", num_classes=4), seed=2)
        report = import_pretrained(load(path), target, strict=False)
        assert sorted(report.skipped_head) == ["head.b", "head.w"]
        assert not report.mismatched

    def test_strict_mismatch_lists_all(self, tmp_path):
        donor = ViTModel(preset_config("tiny"), seed=1)
        path = tmp_path / "donor.vitw"
        save(donor, path)
        archive = load(path)
        archive.entries = [(n, a if n != "norm.g" else a[:32]) for n, a in archive.entries]
        target = ViTModel(preset_config("tiny"), seed=2)
        with pytest.raises(WeightImportError, match="norm.g"):
            import_pretrained(archive, target, strict=True)

    def test_position_embedding_interpolated(self, tmp_path):
        # 197xD (224 res, P=16) into 65xD (32 res, P=4) desk case
        d_tiny = 64
        pos = np.random.default_rng(0).normal(size=(197, d_tiny)).astype(np.float32)
        archive = NamedTensorArchive(entries=[("embed.pos", pos)])
        target = ViTModel(preset_config("tiny"), seed=2)
        report = import_pretrained(archive, target, strict=False)
        assert report.interpolated == ["embed.pos"]
        assert target.param("embed.pos").data.shape == (65, d_tiny)
        np.testing.assert_array_equal(target.param("embed.pos").data[0],
                                      pos[0].astype(np.float64))
        out = target.forward(np.zeros((1, 32, 32, 3)))
        assert np.all(np.isfinite(out.data))


class TestInterpolation:
    def test_identity_when_same_grid(self):
        pos = np.random.default_rng(1).normal(size=(17, 8))
        np.testing.assert_allclose(interpolate_pos_embedding(pos, 17), pos)

    def test_class_token_untouched(self):
        pos = np.random.default_rng(2).normal(size=(17, 8))
        out = interpolate_pos_embedding(pos, 10)
        np.testing.assert_array_equal(out[0], pos[0])
        assert out.shape == (10, 8)

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            interpolate_pos_embedding(np.zeros((7, 4)), 5)
