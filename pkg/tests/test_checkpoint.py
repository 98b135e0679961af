import struct

import numpy as np
import pytest

from serlct import checkpoint as ck
from serlct.features import FeatureStats
from serlct.model import ModelConfig, build_model
from serlct.runner import _stats_to_json, model_from_checkpoint, snapshot
from serlct.tensor import Tensor
from serlct.training import Adam, TrainConfig


@pytest.fixture
def trained(rng):
    model = build_model(ModelConfig.miniature(), seed=5, dtype=np.float32)
    opt = Adam(model, weight_decay=1e-6)
    for p in model.parameters():
        p.grad = rng.normal(size=p.shape).astype(np.float32)
    opt.step(1e-3)
    gen = np.random.default_rng(11)
    gen.random(3)
    stats = FeatureStats.fit(rng.normal(size=(4, 26, 10)))
    snap = snapshot(model, model.cfg, TrainConfig(), opt, gen, 7, {"feature_stats": _stats_to_json(stats)})
    return model, opt, gen, snap


def test_roundtrip_bit_exact(trained):
    model, opt, gen, snap = trained
    back = ck.loads(ck.dumps(snap))
    assert back.epoch == 7 and back.optimizer_step == 1
    assert list(back.arrays) == list(snap.arrays)
    for name, arr in snap.arrays.items():
        assert back.arrays[name].dtype == arr.dtype
        assert back.arrays[name].tobytes() == arr.tobytes()
    for name, arr in snap.optimizer_arrays.items():
        assert back.optimizer_arrays[name].tobytes() == arr.tobytes()
    assert back.model_config == snap.model_config and back.extra == snap.extra
    assert ck.dumps(back) == ck.dumps(snap)


def test_restored_rng_continues_stream(trained):
    *_, gen, snap = trained
    restored = ck.restore_rng(ck.loads(ck.dumps(snap)).rng_state)
    np.testing.assert_array_equal(restored.random(5), gen.random(5))


def test_model_rebuilt_from_checkpoint(trained, rng):
    model, _, _, snap = trained
    clone = model_from_checkpoint(ck.loads(ck.dumps(snap)))
    x = rng.normal(size=(2, 1, 26, 178)).astype(np.float32)
    model.eval()
    clone.eval()
    np.testing.assert_array_equal(clone(Tensor(x)).data, model(Tensor(x)).data)


def test_file_save_load(trained, tmp_path):
    *_, snap = trained
    ck.save(tmp_path / "a.ckpt", snap)
    assert not (tmp_path / "a.ckpt.tmp").exists()
    assert ck.dumps(ck.load(tmp_path / "a.ckpt")) == ck.dumps(snap)


def test_version_mismatch_rejected(trained):
    raw = bytearray(ck.dumps(trained[-1]))
    raw[len(ck.MAGIC)] = ck.VERSION + 1
    with pytest.raises(ck.CheckpointError, match="version") as info:
        ck.loads(bytes(raw))
    assert info.value.offset == len(ck.MAGIC)


def test_bad_magic():
    with pytest.raises(ck.CheckpointError, match="magic"):
        ck.loads(b"NOTCKPT\x01")


@pytest.mark.parametrize("cut", [5, 12, 100, 5000, -3])
def test_truncation_reports_offset(trained, cut):
    raw = ck.dumps(trained[-1])
    with pytest.raises(ck.CheckpointError) as info:
        ck.loads(raw[:cut])
    assert "byte offset" in str(info.value)
    assert 0 <= info.value.offset <= len(raw[:cut])


def test_trailing_bytes_rejected(trained):
    raw = ck.dumps(trained[-1])
    with pytest.raises(ck.CheckpointError, match="trailing") as info:
        ck.loads(raw + b"\x00\x00")
    assert info.value.offset == len(raw)


def test_unknown_dtype_code_located():
    snap = ck.Checkpoint(model_config={}, arrays={"w": np.zeros(2)})
    raw = bytearray(ck.dumps(snap))
    head = len(ck.MAGIC) + 1 + 4 + 2 + 4 + 2 + 4        # header, two "{}" blobs, epoch
    at = head + 4 + 2 + 1 + 1 + 4                      # count, name len, name, rank, dim
    assert raw[at] == 2
    raw[at] = 9
    with pytest.raises(ck.CheckpointError, match="dtype code 9") as info:
        ck.loads(bytes(raw))
    assert info.value.offset == at


def test_little_endian_payload():
    raw = ck.dumps(ck.Checkpoint(model_config={}, arrays={"w": np.array([1.5])}))
    assert struct.pack("<d", 1.5) in raw


def test_unsupported_dtype_refused():
    with pytest.raises(ck.CheckpointError):
        ck.dumps(ck.Checkpoint(model_config={}, arrays={"i": np.arange(3)}))
