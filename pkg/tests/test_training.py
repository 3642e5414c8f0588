import math
import struct

import pytest
import torch

from barpatch.checkpoint import MAGIC, Checkpoint, CheckpointError, CheckpointVersionError
from barpatch.generation import DecodingParams, bits_per_byte, generate, score_bpb, target_bytes
from barpatch.model import InputTooLong, ModelConfig, compute_loss
from barpatch.tasks import TaskInstance
from barpatch import training
from barpatch.training import NonFiniteLoss, TrainSchedule, batch_indices, load_model, train
from helpers import LN_V, PAIRS, TINY, tiny_batch

INSTANCES = [TaskInstance(i.split("\n")[0][2:], i, o) for i, o in PAIRS]
CONFIG = ModelConfig(**TINY)


def quick(steps=6, **kw):
    return TrainSchedule(steps=steps, batch_size=2, lr=1e-3, warmup_steps=2, **kw)


def test_lr_schedule():
    s = TrainSchedule(lr=2e-4, warmup_steps=4)
    assert [s.lr_at(k) for k in range(6)] == pytest.approx([5e-5, 1e-4, 1.5e-4, 2e-4, 2e-4, 2e-4])
    assert TrainSchedule(warmup_steps=0).lr_at(0) == TrainSchedule().lr
    with pytest.raises(ValueError):
        TrainSchedule.from_dict({"steps": 3, "bogus": 1})


def test_batch_indices_cover_epoch():
    seen = []
    for step in range(5):
        seen += batch_indices(10, 2, step, seed=1)
    assert sorted(seen) == list(range(10))
    assert batch_indices(10, 2, 7, seed=1) == batch_indices(10, 2, 7, seed=1)


def test_training_deterministic(tmp_path):
    a = train(INSTANCES, CONFIG, quick(), log_path=tmp_path / "a.tsv")
    b = train(INSTANCES, CONFIG, quick(), log_path=tmp_path / "b.tsv")
    assert a.losses == b.losses
    assert (tmp_path / "a.tsv").read_bytes() == (tmp_path / "b.tsv").read_bytes()
    assert a.to_bytes() == b.to_bytes()
    lines = (tmp_path / "a.tsv").read_text().splitlines()
    assert lines[0] == "step\tloss\tlr" and len(lines) == 7


def test_loss_goes_down():
    ck = train(INSTANCES, CONFIG, quick(steps=40))
    assert ck.losses[-1] < ck.losses[0]


def test_checkpoint_roundtrip_bytes(tmp_path):
    ck = train(INSTANCES, CONFIG, quick())
    path = tmp_path / "m.ckpt"
    ck.save(path)
    loaded = Checkpoint.load(path)
    assert loaded.to_bytes() == path.read_bytes()
    assert loaded.step == 6 and loaded.config == CONFIG
    batch = tiny_batch(CONFIG)
    torch.manual_seed(0)
    assert torch.equal(compute_loss(ck.model, batch)[1], compute_loss(loaded.model, batch)[1])
    assert data_has_magic(path.read_bytes())


def data_has_magic(data):
    return data[:8] == MAGIC


def test_checkpoint_version_refused(tmp_path):
    data = bytearray(train(INSTANCES, CONFIG, quick(steps=1)).to_bytes())
    data[8:12] = struct.pack("<I", 99)
    with pytest.raises(CheckpointVersionError):
        Checkpoint.from_bytes(bytes(data))
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(b"not a checkpoint at all")


def test_resume_matches_uninterrupted(tmp_path):
    full = train(INSTANCES, CONFIG, quick(steps=8))
    half = train(INSTANCES, CONFIG, quick(steps=4))
    half = Checkpoint.from_bytes(half.to_bytes())
    rest = train(INSTANCES, CONFIG, quick(steps=8), init=half, resume=True)
    assert rest.losses == full.losses[4:]
    for (_, p), (_, q) in zip(full.model.named_parameters(), rest.model.named_parameters()):
        assert torch.equal(p, q)


def test_periodic_checkpoint(tmp_path):
    path = tmp_path / "p.ckpt"
    train(INSTANCES, CONFIG, quick(steps=4, checkpoint_every=2), checkpoint_path=path)
    assert Checkpoint.load(path).step == 4


def test_non_finite_loss_aborts(tmp_path, monkeypatch):
    path = tmp_path / "nan.ckpt"
    models = []
    make = training.new_checkpoint

    def capture(config):
        ck = make(config)
        models.append(ck.model)
        return ck

    def poison(step, loss):
        if step == 2:
            with torch.no_grad():
                for p in models[0].parameters():
                    p.fill_(float("nan"))

    monkeypatch.setattr(training, "new_checkpoint", capture)
    with pytest.raises(NonFiniteLoss) as info:
        train(INSTANCES, CONFIG, quick(steps=6, checkpoint_every=1), checkpoint_path=path, on_step=poison)
    assert info.value.step == 3
    assert info.value.last_good.step == 1
    saved = Checkpoint.load(path)
    assert saved.step == 1
    assert all(torch.isfinite(p).all() for p in saved.model.parameters())


def test_fine_tune_starts_fresh_optimizer():
    base = train(INSTANCES, CONFIG, quick(steps=3))
    tuned = train(INSTANCES[:1], CONFIG, quick(steps=2), init=base)
    assert len(tuned.losses) == 2 and tuned.step == 2


def test_generate_contracts():
    model = train(INSTANCES, CONFIG, quick(steps=3)).model
    greedy = DecodingParams(temperature=0.0, max_patches=4)
    assert generate(model, "%%generation\n", greedy) == generate(model, "%%generation\n", greedy)
    forced = DecodingParams(temperature=0.0, max_patches=4, forced_prefix="S:1\nB:8\n")
    assert generate(model, "%%generation\n", forced).startswith("S:1\nB:8\n")
    sampled = DecodingParams(temperature=1.0, top_p=0.9, max_patches=3, seed=5)
    assert generate(model, "%%generation\n", sampled) == generate(model, "%%generation\n", sampled)
    with pytest.raises(InputTooLong):
        generate(model, "X:1\n" * 20, greedy)


def test_bits_per_byte():
    assert bits_per_byte(8 * math.log(2) * 7, 8) == pytest.approx(7.0)
    assert target_bytes("%%harmonization\nE:3\nX:1\n") == len("E:3\nX:1\n")
    model = train(INSTANCES, CONFIG, quick(steps=1)).model
    torch.nn.init.zeros_(model.head.weight)
    torch.nn.init.zeros_(model.head.bias)
    result = score_bpb(model, INSTANCES)
    assert result.total_nats == pytest.approx(LN_V * result.token_count)
    assert result.total_bytes == sum(target_bytes(i.output) for i in INSTANCES)


def test_load_model(tmp_path):
    ck = train(INSTANCES, CONFIG, quick(steps=1))
    ck.save(tmp_path / "m.ckpt")
    assert not load_model(tmp_path / "m.ckpt").training
