"""Training loop: AdamW, linear warmup then constant learning rate."""

from __future__ import annotations

import copy
import logging
import math
import random
from dataclasses import asdict, dataclass, fields
from typing import Callable, Optional, Sequence

import torch

from .checkpoint import Checkpoint
from .model import BarPatchModel, ModelConfig, collate, compute_loss, encode_pair
from .patching import PatchError

log = logging.getLogger(__name__)


class NonFiniteLoss(RuntimeError):
    def __init__(self, step: int, last_good: Checkpoint):
        super().__init__(f"non-finite loss at step {step}; last good checkpoint is step {last_good.step}")
        self.step = step
        self.last_good = last_good


@dataclass
class TrainSchedule:
    steps: int = 2000
    batch_size: int = 8
    lr: float = 2e-4
    warmup_steps: int = 100
    weight_decay: float = 0.01
    betas: tuple = (0.9, 0.999)
    grad_clip: float = 1.0
    checkpoint_every: int = 0
    seed: int = 0

    def lr_at(self, step: int) -> float:
        if self.warmup_steps <= 0:
            return self.lr
        return self.lr * min(1.0, (step + 1) / self.warmup_steps)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainSchedule":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown schedule keys: {sorted(unknown)}")
        data = dict(data)
        if "betas" in data:
            data["betas"] = tuple(data["betas"])
        return cls(**data)


def encode_instances(instances: Sequence, config: ModelConfig) -> tuple:
    """Encode (input, output) pairs that fit the model bounds; returns (pairs, skipped)."""
    pairs, skipped = [], 0
    for inst in instances:
        try:
            pairs.append(encode_pair(inst.input, inst.output, config.patch_size, config.patch_length))
        except PatchError:
            skipped += 1
    return pairs, skipped


def batch_indices(n: int, batch_size: int, step: int, seed: int) -> list:
    """Indices for ``step``: epoch-wise seeded permutations, so any step is reproducible on its own."""
    batch_size = min(batch_size, n)
    per_epoch = max(1, n // batch_size)
    epoch, k = divmod(step, per_epoch)
    order = list(range(n))
    random.Random(f"{seed}:{epoch}").shuffle(order)
    return order[k * batch_size:(k + 1) * batch_size]


def make_optimizer(model: BarPatchModel, schedule: TrainSchedule) -> torch.optim.AdamW:
    return torch.optim.AdamW(model.parameters(), lr=schedule.lr, betas=tuple(schedule.betas),
                             weight_decay=schedule.weight_decay)


def new_checkpoint(config: ModelConfig) -> Checkpoint:
    torch.manual_seed(config.seed)
    return Checkpoint(config=config, model=BarPatchModel(config))


def train(instances: Sequence, config: ModelConfig, schedule: TrainSchedule,
          init: Optional[Checkpoint] = None, resume: bool = False,
          checkpoint_path=None, log_path=None,
          on_step: Optional[Callable[[int, float], None]] = None) -> Checkpoint:
    """Train on task instances and return the final checkpoint.

    ``init`` starts from existing weights (fine-tuning: fresh optimizer and
    step counter unless ``resume``).  The returned checkpoint carries the
    per-step mean losses in ``losses``.
    """
    torch.use_deterministic_algorithms(True)
    pairs, skipped = encode_instances(instances, config)
    if skipped:
        log.info("skipped %d instances exceeding patch bounds", skipped)
    if not pairs:
        raise ValueError("no trainable instances")

    if init is None:
        ckpt = new_checkpoint(config)
    else:
        ckpt = Checkpoint(config=init.config, model=copy.deepcopy(init.model))
        if resume:
            ckpt.step = init.step
            ckpt.optimizer_state = init.optimizer_state
            ckpt.rng_state = init.rng_state
    model = ckpt.model
    model.train()
    optimizer = make_optimizer(model, schedule)
    if ckpt.optimizer_state is not None:
        optimizer.load_state_dict(ckpt.optimizer_state)
    if ckpt.rng_state is not None:
        torch.set_rng_state(ckpt.rng_state)
    else:
        torch.manual_seed(schedule.seed)

    def snapshot(step: int) -> Checkpoint:
        return Checkpoint(config=config, model=copy.deepcopy(model), step=step,
                          schedule=schedule.to_dict(),
                          optimizer_state=copy.deepcopy(optimizer.state_dict()),
                          rng_state=torch.get_rng_state())

    last_good = snapshot(ckpt.step)
    losses = []
    log_fh = open(log_path, "a" if resume else "w") if log_path else None
    try:
        if log_fh and not resume:
            log_fh.write("step\tloss\tlr\n")
        for step in range(ckpt.step, schedule.steps):
            lr = schedule.lr_at(step)
            for group in optimizer.param_groups:
                group["lr"] = lr
            idx = batch_indices(len(pairs), schedule.batch_size, step, schedule.seed)
            batch = collate([pairs[i] for i in idx])
            loss, _ = compute_loss(model, batch)
            value = loss.item()
            if not math.isfinite(value):
                if checkpoint_path:
                    last_good.save(checkpoint_path)
                raise NonFiniteLoss(step + 1, last_good)
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            if schedule.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(model.parameters(), schedule.grad_clip)
            optimizer.step()
            losses.append(value)
            if log_fh:
                log_fh.write(f"{step + 1}\t{value:.6f}\t{lr:.6e}\n")
            if on_step:
                on_step(step + 1, value)
            if schedule.checkpoint_every and (step + 1) % schedule.checkpoint_every == 0:
                if all(torch.isfinite(p).all() for p in model.parameters()):
                    last_good = snapshot(step + 1)
                    if checkpoint_path:
                        last_good.save(checkpoint_path)
                else:
                    log.warning("parameters non-finite at step %d; keeping step %d", step + 1, last_good.step)
    finally:
        if log_fh:
            log_fh.close()

    final = snapshot(schedule.steps)
    final.model = model
    model.eval()
    final.losses = losses
    if checkpoint_path:
        final.save(checkpoint_path)
    return final


def load_model(path) -> BarPatchModel:
    model = Checkpoint.load(path).model
    model.eval()
    return model
