"""Checkpoint container format and model persistence."""

import numpy as np
import pytest

from signet.checkpoint import (
    MAGIC,
    CheckpointError,
    load_checkpoint,
    save_checkpoint,
)
from signet.model import build_signet, embed, tiny_architecture
from signet.persist import arch_from_kv, arch_to_kv, load_model, parse_kv_text, save_model


class TestContainer:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "t.sgnt"
        arrays = {
            "a": np.arange(6, dtype=np.float32).reshape(2, 3),
            "b": np.array([1.5], dtype=np.float32),
        }
        save_checkpoint(path, arrays, "key = value\n")
        loaded, text = load_checkpoint(path)
        assert text == "key = value\n"
        assert set(loaded) == {"a", "b"}
        np.testing.assert_array_equal(loaded["a"], arrays["a"])

    def test_float64_inputs_stored_as_float32(self, tmp_path):
        path = tmp_path / "t.sgnt"
        save_checkpoint(path, {"a": np.array([1.0, 2.0])}, "")
        loaded, _ = load_checkpoint(path)
        assert loaded["a"].dtype == np.float32

    def test_magic_bytes(self, tmp_path):
        path = tmp_path / "t.sgnt"
        save_checkpoint(path, {}, "x = 1")
        assert path.read_bytes()[:4] == MAGIC

    def test_corrupt_magic_clean_error(self, tmp_path):
        path = tmp_path / "t.sgnt"
        save_checkpoint(path, {"a": np.zeros(2, dtype=np.float32)}, "")
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_truncation_detected(self, tmp_path):
        path = tmp_path / "t.sgnt"
        save_checkpoint(path, {"a": np.zeros(8, dtype=np.float32)}, "")
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 5])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_trailing_garbage_detected(self, tmp_path):
        path = tmp_path / "t.sgnt"
        save_checkpoint(path, {}, "x = 1")
        path.write_bytes(path.read_bytes() + b"JUNK")
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(path)

    def test_unsupported_version(self, tmp_path):
        path = tmp_path / "t.sgnt"
        save_checkpoint(path, {}, "x = 1")
        raw = bytearray(path.read_bytes())
        raw[4:8] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_reserved_name_rejected(self, tmp_path):
        with pytest.raises(CheckpointError):
            save_checkpoint(tmp_path / "t.sgnt",
                            {"config": np.zeros(1, dtype=np.float32)}, "")

    def test_no_temp_file_left_behind(self, tmp_path):
        path = tmp_path / "t.sgnt"
        save_checkpoint(path, {}, "x = 1")
        assert [p.name for p in tmp_path.iterdir()] == ["t.sgnt"]


class TestKvText:
    def test_parse_skips_comments_and_blanks(self):
        kv = parse_kv_text("# note\n\na = 1\nb = two words\n")
        assert kv == {"a": "1", "b": "two words"}

    def test_parse_rejects_bad_line(self):
        with pytest.raises(ValueError, match="line 1"):
            parse_kv_text("nonsense")

    def test_value_may_contain_equals(self):
        assert parse_kv_text("a = x=y")["a"] == "x=y"


class TestArchSerialization:
    @pytest.mark.parametrize("preset", ["tiny", "full"])
    def test_round_trip(self, preset):
        from signet.model import ARCH_PRESETS

        config = ARCH_PRESETS[preset]()
        assert arch_from_kv(arch_to_kv(config)) == config


class TestModelPersistence:
    def test_save_load_embed_bit_identical(self, tmp_path):
        model = build_signet(tiny_architecture(), seed=1)
        path = tmp_path / "m.sgnt"
        save_model(path, model, meta={"preprocess.std": "32.0"})
        loaded, meta, opt = load_model(path)
        assert meta["preprocess.std"] == "32.0"
        assert opt == {}
        rng = np.random.default_rng(2)
        x = rng.normal(size=(2, 1, 32, 48)).astype(np.float32)
        np.testing.assert_array_equal(embed(model, x).data, embed(loaded, x).data)

    def test_optimizer_state_round_trip(self, tmp_path):
        model = build_signet(tiny_architecture(), seed=1)
        acc = {name: np.full_like(t.data, 0.25) for name, t in model.params.items()}
        path = tmp_path / "m.sgnt"
        save_model(path, model, meta={}, opt_acc=acc)
        _, _, loaded_acc = load_model(path)
        assert set(loaded_acc) == set(acc)
        np.testing.assert_array_equal(loaded_acc["fc2.bias"], acc["fc2.bias"])

    def test_mismatched_tensor_named(self, tmp_path):
        model = build_signet(tiny_architecture(), seed=1)
        path = tmp_path / "m.sgnt"
        bad = dict(model.param_arrays())
        bad["conv1.weight"] = bad["conv1.weight"][:, :, :3, :3]
        from signet.checkpoint import save_checkpoint
        from signet.persist import arch_to_kv, format_kv

        save_checkpoint(path, bad, format_kv(arch_to_kv(model.config)))
        with pytest.raises(CheckpointError, match="conv1.weight"):
            load_model(path)

    def test_missing_tensor_reported(self, tmp_path):
        model = build_signet(tiny_architecture(), seed=1)
        path = tmp_path / "m.sgnt"
        arrays = dict(model.param_arrays())
        del arrays["fc1.bias"]
        from signet.checkpoint import save_checkpoint
        from signet.persist import arch_to_kv, format_kv

        save_checkpoint(path, arrays, format_kv(arch_to_kv(model.config)))
        with pytest.raises(CheckpointError, match="fc1.bias"):
            load_model(path)
