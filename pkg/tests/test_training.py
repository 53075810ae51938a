import math

import pytest
import torch

from lesionnet.checkpoint import state_digest
from lesionnet.data.folds import make_folds
from lesionnet.data.manifest import DatasetManifest
from lesionnet.model import ArchConfig, ModelVariant
from lesionnet.training import (
    TrainConfig,
    TrainingError,
    fine_tune,
    he_uniform_,
    init_parameters,
    load_pretrained_state,
    make_optimizer,
    train,
)


def cfg(**kw):
    base = dict(variant="al-max", learning_rate=1e-4, epochs=1, batch_size=4, init_source="random",
                width_divisor=8, target_width=48, resize_above=10**9, normalization="unit")
    base.update(kw)
    return TrainConfig(**base)


def test_config_validation():
    with pytest.raises(ValueError, match="learning_rate"):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError, match="beta1"):
        TrainConfig(beta1=1.0)
    with pytest.raises(ValueError, match="epochs"):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError, match="normalization"):
        TrainConfig(normalization="zscore")


def test_he_uniform_bound_over_many_draws():
    head = torch.nn.Conv2d(512, 200, 1)
    he_uniform_(head, torch.Generator().manual_seed(0))
    bound = math.sqrt(6 / 512)
    assert bound == pytest.approx(0.108253, abs=1e-6)
    w = head.weight.detach().flatten()
    assert w.numel() >= 10**5
    assert w.abs().max().item() <= bound
    assert w.abs().max().item() > 0.99 * bound
    assert not head.bias.any()


def test_pretrained_copies_trunk_and_draws_added_layers(tmp_path):
    arch = ArchConfig.reduced(ModelVariant.AL_FC, 4, 8)
    donor = init_parameters(arch, "random", seed=7).state_dict()
    trunk = {k: v for k, v in donor.items() if k.startswith("features.")}
    p = tmp_path / "vgg.pth"
    torch.save(trunk, p)
    state = load_pretrained_state(p)
    m = init_parameters(arch, "pretrained", seed=0, pretrained=state)
    for k, v in m.state_dict().items():
        if k.startswith("features."):
            assert torch.equal(v, trunk[k])
    assert not torch.equal(m.head.weight, donor["head.weight"])
    assert not m.head.bias.any() and not m.fc.bias.any()
    with pytest.raises(FileNotFoundError):
        load_pretrained_state(tmp_path / "absent.pth")
    with pytest.raises(ValueError, match="digest"):
        load_pretrained_state(p, digest="0" * 64)


def test_pretrained_shape_mismatch():
    arch = ArchConfig.reduced(ModelVariant.AL_MAX, 4, 8)
    other = init_parameters(ArchConfig.reduced(ModelVariant.AL_MAX, 4, 4), "random").state_dict()
    with pytest.raises(ValueError, match="shape mismatch"):
        init_parameters(arch, "pretrained", pretrained=other)
    with pytest.raises(ValueError, match="lack"):
        init_parameters(arch, "pretrained", pretrained={})


def test_random_init_deterministic():
    arch = ArchConfig.reduced(ModelVariant.AL_MAX, 4, 8)
    a = init_parameters(arch, "random", seed=3).state_dict()
    b = init_parameters(arch, "random", seed=3).state_dict()
    assert state_digest(a) == state_digest(b)


def test_adam_first_step_matches_recurrence():
    w = torch.nn.Parameter(torch.tensor([0.3], dtype=torch.float64))
    m = torch.nn.Module()
    m.w = w
    c = TrainConfig(learning_rate=1e-3)
    opt = make_optimizer(m, c)
    g = 2.5
    w.grad = torch.tensor([g], dtype=torch.float64)
    opt.step()
    # reference Adam recurrence, one step from zero state
    m1 = (1 - c.beta1) * g
    v1 = (1 - c.beta2) * g * g
    mhat, vhat = m1 / (1 - c.beta1), v1 / (1 - c.beta2)
    want = 0.3 - c.learning_rate * mhat / (math.sqrt(vhat) + c.adam_eps)
    assert abs(w.item() - want) < 1e-10
    assert abs(abs(w.item() - 0.3) - c.learning_rate) < 1e-8


def test_step_count_and_log_stream(tiny_phantom):
    m, _ = tiny_phantom
    two = m.subset([s.image_id for s in m.samples[:2]])
    recs = []
    res = train(cfg(batch_size=1), two, sink=recs.append)
    steps = [r for r in recs if "step" in r and "event" not in r]
    assert len(steps) == 2 and res.steps == 2
    assert {"step", "epoch", "loss", "loss_diag", "loss_lesion", "lr"} <= set(steps[0])
    assert len({r["lr"] for r in steps}) == 1
    assert recs[0]["event"] == "start"


def test_reproducible_loss_sequence(tiny_phantom):
    m, _ = tiny_phantom
    a, b = [], []
    train(cfg(epochs=2), m, sink=a.append)
    train(cfg(epochs=2), m, sink=b.append)
    assert a == b


def test_adam_second_moment_nonnegative(tiny_phantom):
    m, _ = tiny_phantom
    res = train(cfg(), m)
    for st in res.checkpoint.optimizer_state["state"].values():
        assert torch.all(st["exp_avg_sq"] >= 0)


def test_variant_needs_lesion_labels(tiny_phantom):
    m, _ = tiny_phantom
    bare = DatasetManifest(m.name, m.schema, [s.__class__(**{**s.__dict__, "lesion_flags": None})
                                             for s in m.samples])
    with pytest.raises(TrainingError, match="needs lesion labels"):
        train(cfg(), bare)
    train(cfg(variant="a-only"), bare)


def test_non_finite_loss_aborts_with_record(tiny_phantom, monkeypatch):
    m, _ = tiny_phantom
    import lesionnet.training as tr

    def bad(rec, d, l):
        from lesionnet.losses import LossValue

        nan = torch.tensor(float("nan"))
        return LossValue(nan, nan, nan)

    monkeypatch.setattr(tr, "combined_loss", bad)
    with pytest.raises(TrainingError, match="non-finite") as e:
        train(cfg(), m)
    assert e.value.record["image_ids"]


def test_fold_holdout(tiny_phantom):
    m, _ = tiny_phantom
    folds = make_folds(m, 2, seed=0)
    recs = []
    train(cfg(fold=1), m, folds, sink=recs.append)
    assert recs[0]["n_train"] == len(folds.train_ids(1))


def test_fine_tune_starts_from_checkpoint_and_drops_lesion_loss(tiny_phantom):
    m, _ = tiny_phantom
    src = train(cfg(), m).checkpoint
    target = DatasetManifest("t", m.schema, [s.__class__(**{**s.__dict__, "lesion_flags": None})
                                             for s in m.samples])
    recs = []
    res = fine_tune(src, target, cfg=cfg(epochs=1), sink=recs.append)
    assert recs[0]["param_digest"] == state_digest(src.state)
    steps = [r for r in recs if "step" in r and "event" not in r]
    assert steps and all("loss_lesion" not in r for r in steps)
    assert res.checkpoint.config["fine_tune"]["source_digest"] == state_digest(src.state)


def test_fine_tune_default_epochs(tiny_phantom):
    m, _ = tiny_phantom
    src = train(cfg(), m.subset([s.image_id for s in m.samples[:4]])).checkpoint
    res = fine_tune(src, m.subset([s.image_id for s in m.samples[:2]]))
    assert len(res.epochs) == 15


def test_loss_decreases_on_phantom(tiny_phantom):
    m, _ = tiny_phantom
    res = train(cfg(epochs=8, learning_rate=3e-4), m)
    assert res.epochs[-1]["loss"] < res.epochs[0]["loss"]
