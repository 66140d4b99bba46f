import struct

import numpy as np
import pytest

from simkd.checkpoint import (
    checkpoint_tensors,
    decode_tensors,
    encode_tensors,
    from_tensors,
    read_checkpoint,
    write_checkpoint,
)
from simkd.distill import distill_joint, distill_simkd, evaluate, sequential_linear_eval
from simkd.errors import CorruptionError, InputError
from simkd.network import plain_cnn
from simkd.numeric import fnv1a64

from conftest import assert_params_equal, fast_config, random_model

STUDENT = plain_cnn((4, 8), 4)


def state(obj):
    """Every named tensor of a checkpointable object, copied."""
    return {k: v.copy() for k, v in checkpoint_tensors(obj).items()}


class TestTensorFormat:
    def test_round_trip_preserves_bits(self):
        tensors = {"a": np.array([1.5, -0.0, np.pi]), "b.c": np.arange(24.0).reshape(2, 3, 4), "s": np.array(7.0)}
        back = decode_tensors(encode_tensors(tensors))
        assert list(back) == list(tensors)
        assert_params_equal(back, tensors)
        assert back["s"].shape == ()

    def test_layout(self):
        blob = encode_tensors({"w": np.array([[1.0, 2.0]])})
        assert blob[:4] == b"SKDC"
        assert struct.unpack_from("<H", blob, 4) == (1,)
        assert struct.unpack_from("<H", blob, 6) == (1,) and blob[8:9] == b"w"
        assert blob[9] == 2 and struct.unpack_from("<2I", blob, 10) == (1, 2)
        assert struct.unpack_from("<2d", blob, 18) == (1.0, 2.0)
        assert struct.unpack("<Q", blob[-8:])[0] == fnv1a64(blob[:-8])
        assert len(blob) == 18 + 16 + 8

    @pytest.mark.parametrize("cut", [1, 8, 20, 40])
    def test_truncation(self, cut):
        blob = encode_tensors({"w": np.ones((3, 3))})
        with pytest.raises(CorruptionError):
            decode_tensors(blob[:-cut])

    def test_every_single_bit_flip_detected(self):
        blob = encode_tensors({"w": np.ones(2)})
        for i in range(len(blob)):
            for bit in range(8):
                bad = bytearray(blob)
                bad[i] ^= 1 << bit
                with pytest.raises(CorruptionError):
                    decode_tensors(bytes(bad))

    def test_bad_magic_with_valid_checksum(self):
        body = b"XXXX" + encode_tensors({})[4:-8]
        with pytest.raises(CorruptionError, match="magic"):
            decode_tensors(body + struct.pack("<Q", fnv1a64(body)))

    def test_bad_version_with_valid_checksum(self):
        body = b"SKDC" + struct.pack("<H", 9)
        with pytest.raises(CorruptionError, match="version"):
            decode_tensors(body + struct.pack("<Q", fnv1a64(body)))

    def test_overrun_with_valid_checksum(self):
        body = encode_tensors({"w": np.ones(4)})[:-8 - 8]
        with pytest.raises(CorruptionError):
            decode_tensors(body + struct.pack("<Q", fnv1a64(body)))

    def test_duplicate_names(self):
        one = encode_tensors({"w": np.ones(1)})[6:-8]
        body = b"SKDC" + struct.pack("<H", 1) + one + one
        with pytest.raises(CorruptionError, match="duplicate"):
            decode_tensors(body + struct.pack("<Q", fnv1a64(body)))


class TestObjects:
    def test_model_round_trip(self, tmp_path, tiny_teacher, tiny_data):
        write_checkpoint(tiny_teacher, tmp_path / "t.skdc")
        back = read_checkpoint(tmp_path / "t.skdc")
        assert back.spec == tiny_teacher.spec
        assert_params_equal(state(back), state(tiny_teacher))
        x = tiny_data[1].x
        np.testing.assert_array_equal(back.logits(x), tiny_teacher.logits(x))

    def test_bn_stats_use_reserved_prefix(self):
        names = checkpoint_tensors(random_model())
        assert any(k.startswith("__bn__.encoder.") for k in names)
        assert "__spec__" in names

    def test_simkd_assembly_round_trip(self, tmp_path, tiny_teacher, tiny_data):
        assembly, _ = distill_simkd(tiny_teacher, STUDENT, *tiny_data, fast_config(1))
        write_checkpoint(assembly, tmp_path / "a.skdc")
        back = read_checkpoint(tmp_path / "a.skdc")
        assert list(back.heads) == list(assembly.heads)
        for ds in tiny_data:
            assert evaluate(back, ds) == evaluate(assembly, ds)

    def test_multi_head_assemblies(self, tmp_path, tiny_teacher, tiny_data):
        (_, joint), _ = distill_joint(tiny_teacher, STUDENT, *tiny_data, fast_config(1, method="joint", alpha=0.5))
        simkd, _ = distill_simkd(tiny_teacher, STUDENT, *tiny_data, fast_config(1))
        seq, _ = sequential_linear_eval(simkd, *tiny_data, fast_config(1))
        for i, obj in enumerate((joint, seq)):
            write_checkpoint(obj, tmp_path / f"{i}.skdc")
            back = read_checkpoint(tmp_path / f"{i}.skdc")
            for head in obj.heads:
                np.testing.assert_array_equal(back.logits(tiny_data[1].x, head), obj.logits(tiny_data[1].x, head))

    def test_shared_stacks_stay_shared(self, tiny_teacher, tiny_data):
        simkd, _ = distill_simkd(tiny_teacher, STUDENT, *tiny_data, fast_config(1))
        seq, _ = sequential_linear_eval(simkd, *tiny_data, fast_config(1))
        back = from_tensors(checkpoint_tensors(seq))
        assert back.heads["sequential"][0].projector is back.heads["teacher"][0].projector

    def test_missing_parameter_detected(self):
        tensors = checkpoint_tensors(random_model())
        del tensors["encoder.0.weight"]
        with pytest.raises(CorruptionError):
            from_tensors(tensors)
        with pytest.raises(CorruptionError):
            from_tensors({})

    def test_unsupported_object(self):
        with pytest.raises(InputError):
            checkpoint_tensors(object())
