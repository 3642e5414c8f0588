"""Multi-task versus single-task pre-training on the toy corpus.

Both arms pre-train for the same number of steps, then fine-tune on
harmonization and are scored by teacher-forced BPB on held-out harmonization
instances.  The split is by tune: a held-out tune contributes no instance of
any task to either arm.
"""

from __future__ import annotations

import logging
import random
from dataclasses import dataclass, field

from .abcnotation import Kind
from .curation import curate_texts
from .generation import score_bpb
from .model import ModelConfig
from .tasks import build_dataset
from .toy import toy_corpus
from .training import TrainSchedule, train

log = logging.getLogger(__name__)


@dataclass
class AblationResult:
    seed: int
    multi_task_bpb: float
    single_task_bpb: float
    train_counts: dict = field(default_factory=dict)
    held_out: int = 0


def split_tunes_for_harmonization(tunes, fraction: float, seed: int) -> tuple:
    """(training tunes, held-out tunes); held-out tunes are drawn from those with chords."""
    chorded = [i for i, t in enumerate(tunes) if any(tok.kind is Kind.CHORD_SYMBOL for tok in t.body)]
    rng = random.Random(f"holdout:{seed}")
    held = set(rng.sample(chorded, max(1, round(len(chorded) * fraction))))
    return ([t for i, t in enumerate(tunes) if i not in held],
            [t for i, t in enumerate(tunes) if i in held])


def run_ablation(seed: int, n_tunes: int = 500, pretrain_steps: int = 600,
                 finetune_steps: int = 200, batch_size: int = 8, lr: float = 5e-4,
                 holdout: float = 0.25, config: ModelConfig = None) -> AblationResult:
    config = config or ModelConfig.desk(seed=seed)
    tunes = curate_texts(toy_corpus(n_tunes, seed=seed))
    train_tunes, held_tunes = split_tunes_for_harmonization(tunes, holdout, seed)
    kw = dict(seed=seed, patch_size=config.patch_size, patch_length=config.patch_length)
    pretrain_all = build_dataset(train_tunes, **kw)
    harmonization = [i for i in pretrain_all.instances if i.task == "harmonization"]
    val = build_dataset(held_tunes, tasks=["harmonization"], **kw).instances

    def schedule(steps):
        return TrainSchedule(steps=steps, batch_size=batch_size, lr=lr, warmup_steps=50, seed=seed)

    scores = {}
    for arm, data in (("multi", pretrain_all.instances), ("single", harmonization)):
        pre = train(data, config, schedule(pretrain_steps))
        tuned = train(harmonization, config, schedule(finetune_steps), init=pre)
        scores[arm] = score_bpb(tuned.model, val).bits_per_byte
        log.info("seed %d %s-task BPB %.4f", seed, arm, scores[arm])
    return AblationResult(seed, scores["multi"], scores["single"],
                          dict(pretrain_all.counts), len(val))
