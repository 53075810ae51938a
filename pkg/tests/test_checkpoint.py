import struct

import pytest
import torch

from lesionnet.checkpoint import MAGIC, Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from lesionnet.model import ArchConfig, ModelVariant
from lesionnet.schema import PHANTOM
from lesionnet.training import TrainConfig, init_parameters, make_optimizer


@pytest.mark.parametrize("variant", list(ModelVariant))
def test_round_trip_exact(tmp_path, variant):
    arch = ArchConfig.reduced(variant, 4, 8)
    model = init_parameters(arch, "random", seed=1)
    opt = make_optimizer(model, TrainConfig())
    model(torch.rand(1, 3, 48, 48))["diagnosis_logit"].sum().backward()
    opt.step()
    ck = Checkpoint.from_model(model, PHANTOM, opt, epoch=3, config={"train": {"seed": 1}})
    back = load_checkpoint(save_checkpoint(ck, tmp_path / "m.ckpt"))
    assert back.arch == arch and back.schema == PHANTOM and back.epoch == 3
    assert back.digest == ck.digest
    probe = torch.rand(2, 3, 48, 48, generator=torch.Generator().manual_seed(0))
    model.eval()
    with torch.no_grad():
        a, b = model(probe), back.build()(probe)
    for k in a:
        assert torch.equal(a[k], b[k])
    opt2 = make_optimizer(back.build(), TrainConfig())
    opt2.load_state_dict(back.optimizer_state)


def _saved(tmp_path):
    ck = Checkpoint.from_model(init_parameters(ArchConfig.reduced("al-max", 4, 8), "random"), PHANTOM)
    return save_checkpoint(ck, tmp_path / "m.ckpt")


def test_corrupted_payload_digest_error(tmp_path):
    p = _saved(tmp_path)
    blob = bytearray(p.read_bytes())
    blob[-5] ^= 0xFF
    p.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="digest"):
        load_checkpoint(p)


def test_version_mismatch(tmp_path):
    p = _saved(tmp_path)
    blob = p.read_bytes()
    (n,) = struct.unpack("<Q", blob[8:16])
    header = blob[16:16 + n].replace(b'"format_version": 1', b'"format_version": 2')
    p.write_bytes(MAGIC + struct.pack("<Q", len(header)) + header + blob[16 + n:])
    with pytest.raises(CheckpointError, match="unsupported checkpoint version 2"):
        load_checkpoint(p)


def test_not_a_checkpoint(tmp_path):
    p = tmp_path / "x.ckpt"
    p.write_bytes(b"hello world")
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        load_checkpoint(p)
    with pytest.raises(CheckpointError, match="not found"):
        load_checkpoint(tmp_path / "absent.ckpt")


def test_checkpoint_init_is_bit_identical(tmp_path):
    arch = ArchConfig.reduced("al-fc", 4, 8)
    ck = load_checkpoint(save_checkpoint(Checkpoint.from_model(init_parameters(arch, "random", seed=5), PHANTOM),
                                         tmp_path / "c.ckpt"))
    m = init_parameters(arch, "checkpoint", checkpoint=ck)
    for k, v in m.state_dict().items():
        assert torch.equal(v, ck.state[k])
