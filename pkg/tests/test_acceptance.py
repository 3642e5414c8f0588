"""Acceptance suite: one test (or group) per criterion, tagged with the criterion marker.

The terminal summary prints one PASS/FAIL line per criterion.
"""

import json
import os
import random
import string
import subprocess
import sys
import time
from fractions import Fraction
from itertools import zip_longest

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from barpatch.ablation import run_ablation
from barpatch.abcnotation import (
    normalize_line_endings,
    parse_tune,
    serialize,
    split_bars,
    split_tunes,
    bar_duration,
    strip_chord_symbols,
    strip_decorations,
)
from barpatch.curation import bundled_corpus, curate_texts
from barpatch.distance import similarity_e
from barpatch.generation import DecodingParams, bits_per_byte, generate, score_bpb
from barpatch.metrics import TimedChord, TimedNote, ctnctr, mctd, pcs, seg_f1
from barpatch.model import ModelConfig, compute_loss
from barpatch.patching import depatchify, encode_patch, patchify
from barpatch.tasks import (
    TaskInstance,
    build_dataset,
    build_variation,
    compute_control_codes,
    strip_e_line,
    strip_task_header,
    variant_groups,
)
from barpatch.toy import toy_corpus
from barpatch.training import TrainSchedule, train

import oracles
from helpers import LN_V, TINY, finite_difference_check, tiny_batch, tiny_model

criterion = pytest.mark.criterion


def bundled_texts():
    return split_tunes(bundled_corpus())


def corpora():
    yield "bundled", curate_texts(bundled_texts())
    yield "toy", curate_texts(toy_corpus(500, seed=42))


# ---------------------------------------------------------------------------
# 1


@criterion(1, "parser roundtrip on bundled corpus")
def test_parser_roundtrip_bundled():
    texts = bundled_texts()
    assert len(texts) >= 50
    joined = "".join(texts)
    for feature in ('"', "!trill!", "!breath!", "|:", ":|", "[K:", "[M:"):
        assert feature in joined, feature
    start = time.perf_counter()
    for text in texts:
        assert serialize(parse_tune(text)) == normalize_line_endings(text)
    assert time.perf_counter() - start < 1.0


@criterion(1, "parser roundtrip on bundled corpus")
def test_parser_roundtrip_crlf():
    text = bundled_texts()[0]
    assert serialize(parse_tune(text.replace("\n", "\r\n"))) == text


# ---------------------------------------------------------------------------
# 2

ABC_PIECES = st.sampled_from(["|", "||", "|]", "|:", ":|", "::", "[|", "|1", ":|2", "\n", " ",
                              "C", "d'", "^F,", "_B2", "z4", "A/2", '"Am"', "!breath!",
                              "[K:G]", "[M:3/4]", "X:1\n", "K:D\n", "M:6/8\n", "%c\n", "\\\n"])
ABC_LIKE = st.lists(ABC_PIECES, max_size=60).map("".join)
PRINTABLE = st.text(alphabet=st.characters(min_codepoint=3, max_codepoint=127), max_size=300)


@criterion(2, "patching roundtrip and one-hot rows")
@settings(max_examples=1000, deadline=None, derandomize=True)
@given(st.one_of(ABC_LIKE, PRINTABLE), st.sampled_from([1, 4, 8, 32, 64]))
def test_patching_roundtrip(text, size):
    seq = patchify(text, patch_size=size, patch_length=100_000)
    assert depatchify(seq) == text
    for p in seq:
        np.testing.assert_array_equal(encode_patch(p, size).sum(axis=1), np.ones(size))


# ---------------------------------------------------------------------------
# 3


@criterion(3, "similarity_e matches reference DP")
def test_similarity_oracle():
    rng = random.Random(2024)
    for k in range(10_000):
        alphabet = "ab" if k % 3 == 0 else string.printable[:40]
        a = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 40)))
        b = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 40)))
        assert similarity_e(a, b) == oracles.similarity_dp(a, b), (a, b)


@criterion(3, "similarity_e matches reference DP")
def test_similarity_endpoints():
    rng = random.Random(7)
    for _ in range(200):
        s = "".join(rng.choice(string.ascii_letters) for _ in range(rng.randint(1, 40)))
        assert similarity_e(s, s) == 10
        assert similarity_e(s, "") == similarity_e("", s) == 0
    assert similarity_e("", "") == 10


# ---------------------------------------------------------------------------
# 4


def input_score(instance):
    return strip_task_header(instance.input)


def output_score(instance):
    return strip_e_line(instance.output)


@criterion(4, "task builders reconstruct their inputs")
@pytest.mark.parametrize("name,tunes", list(corpora()), ids=["bundled", "toy"])
def test_builder_reconstruction(name, tunes):
    data = build_dataset(tunes, seed=0, patch_size=10_000, patch_length=10_000)
    by_task = {}
    for inst in data.instances:
        by_task.setdefault(inst.task, []).append(inst)
    assert by_task.get("harmonization") and by_task.get("melodization")
    for inst in by_task["harmonization"]:
        out = parse_tune(output_score(inst))
        assert serialize(strip_chord_symbols(out)) == input_score(inst)
    for inst in by_task.get("segmentation", []):
        out = parse_tune(output_score(inst))
        assert serialize(strip_decorations(out, {"breath"})) == input_score(inst)
    for inst in by_task["melodization"]:
        src_bars = split_bars(parse_tune(input_score(inst)))
        out_bars = split_bars(parse_tune(output_score(inst)))
        for a, b in zip_longest(src_bars, out_bars):
            assert a is not None and b is not None
            da, db = bar_duration(a), bar_duration(b)
            assert isinstance(da, Fraction) and da == db
    groups = variant_groups(tunes)
    expected = sum(len(g) * (len(g) - 1) for g in groups)
    assert len(by_task.get("variation", [])) == expected
    for g in groups:
        assert len(build_variation(g)) == len(g) * (len(g) - 1)
    if name == "toy":
        assert groups and by_task.get("segmentation")


# ---------------------------------------------------------------------------
# 5


@criterion(5, "control codes of two identical sections")
def test_control_codes_identical_sections():
    section = "CDEF GABc|cBAG FEDC|EFGA B2c2|c8:|\n"
    tune = parse_tune("X:1\nM:4/4\nL:1/8\nK:C\n|:" + section + "|:" + section)
    codes = compute_control_codes(tune)
    assert codes.section_count == 2
    assert codes.bar_counts[0] == codes.bar_counts[1] == 4
    assert list(codes.similarities) == [10]


# ---------------------------------------------------------------------------
# 6


@criterion(6, "gradient check against central differences")
def test_gradient_check():
    start = time.perf_counter()
    model = tiny_model(seed=11)
    assert (model.config.hidden_dim, model.config.patch_size, model.config.patch_length,
            model.config.vocab_size) == (16, 8, 8, 128)
    errors = finite_difference_check(model, tiny_batch(ModelConfig(**TINY)), eps=1e-3, per_tensor=6)
    assert len(errors) == len(list(model.parameters()))
    assert max(errors.values()) < 1e-3, max(errors.items(), key=lambda kv: kv[1])
    assert time.perf_counter() - start < 120


# ---------------------------------------------------------------------------
# 7


def uniform_model():
    model = tiny_model(seed=5)
    torch.nn.init.zeros_(model.head.weight)
    torch.nn.init.zeros_(model.head.bias)
    return model


@criterion(7, "uniform-output loss and BPB anchors")
def test_uniform_loss_is_ln_v():
    model = uniform_model()
    loss, _ = compute_loss(model, tiny_batch(model.config))
    assert abs(loss.item() - LN_V) < 1e-3


@criterion(7, "uniform-output loss and BPB anchors")
def test_uniform_bpb_is_seven():
    model = uniform_model()
    inst = [TaskInstance("generation", "%%generation\n", "S:1\nB:2\nX:2\nK:G\nGA|B|]\n")]
    result = score_bpb(model, inst)
    # one byte per predicted token
    assert abs(bits_per_byte(result.total_nats, result.token_count) - 7.0) < 1e-3
    assert abs(bits_per_byte(100 * LN_V, 100) - 7.0) < 1e-3


# ---------------------------------------------------------------------------
# 8


@pytest.mark.slow
@criterion(8, "desk model overfits 8 instances")
def test_overfit_eight_instances():
    start = time.perf_counter()
    config = ModelConfig.desk()
    tunes = curate_texts(bundled_texts())
    pool = build_dataset(tunes, seed=0, patch_size=config.patch_size, patch_length=config.patch_length,
                         tasks=["harmonization"]).instances
    chosen = sorted(pool, key=lambda i: (len(i.input) + len(i.output), i.input))[:8]
    assert len(chosen) == 8
    result = train(chosen, config, TrainSchedule(steps=1000, batch_size=8, lr=1e-3, warmup_steps=50))
    losses = result.losses
    assert len(losses) <= 2000
    assert min(losses) < 0.1 and losses[-1] < 0.1, losses[-1]
    windows = [np.mean(losses[k:k + 50]) for k in range(0, 300, 50)]
    assert all(a > b for a, b in zip(windows, windows[1:])), windows
    for inst in chosen:
        assert generate(result.model, inst.input, DecodingParams(temperature=0.0)) == inst.output
    assert time.perf_counter() - start < 15 * 60


# ---------------------------------------------------------------------------
# 9


@criterion(9, "future targets do not affect past outputs")
def test_causality_loss_level():
    model = tiny_model(seed=2)
    model.eval()
    c = model.config
    base = ("%%harmonization\nX:1\nK:C\nCDE|FG|\n", "E:8\nX:1\nK:C\nCDE|FGA|\n")
    changed = (base[0], "E:8\nX:1\nK:C\nCDE|FBc|\n")
    _, nll_a = compute_loss(model, tiny_batch(c, [base]))
    _, nll_b = compute_loss(model, tiny_batch(c, [changed]))
    # earlier patches and the shared first character of the changed bar agree
    assert (nll_a[:4] - nll_b[:4]).abs().max().item() < 1e-6
    assert (nll_a[4, :1] - nll_b[4, :1]).abs().max().item() < 1e-6
    assert (nll_a[4] - nll_b[4]).abs().max().item() > 1e-6


@criterion(9, "future targets do not affect past outputs")
def test_causality_patch_and_char_level():
    model = tiny_model(seed=4)
    c = model.config
    gen = torch.Generator().manual_seed(0)
    memory = model.encode(torch.randint(3, 128, (2, 3, c.patch_size), generator=gen))
    prev = torch.randint(3, 128, (2, 6, c.patch_size), generator=gen)
    for cut in range(1, 6):
        future = prev.clone()
        future[:, cut:] = torch.randint(3, 128, (2, 6 - cut, c.patch_size), generator=gen)
        h, h2 = model.decode_patches(prev, memory), model.decode_patches(future, memory)
        assert (h[:, :cut] - h2[:, :cut]).abs().max().item() < 1e-6
    reps = torch.randn(3, c.hidden_dim, generator=gen)
    chars = torch.randint(3, 128, (3, c.patch_size), generator=gen)
    logits = model.char_logits(reps, chars)
    for cut in range(1, c.patch_size):
        future = chars.clone()
        future[:, cut:] = torch.randint(3, 128, (3, c.patch_size - cut), generator=gen)
        # position k predicts from characters before k, so logits up to cut are unchanged
        diff = (logits[:, :cut + 1] - model.char_logits(reps, future)[:, :cut + 1]).abs().max()
        assert diff.item() < 1e-6


# ---------------------------------------------------------------------------
# 10


@pytest.mark.slow
@criterion(10, "multi-task pre-training beats single-task")
def test_multi_task_direction():
    results = [run_ablation(seed) for seed in (0, 1, 2)]
    for r in results:
        print(f"seed {r.seed}: multi {r.multi_task_bpb:.4f} single {r.single_task_bpb:.4f} "
              f"held-out {r.held_out}")
    multi = np.mean([r.multi_task_bpb for r in results])
    single = np.mean([r.single_task_bpb for r in results])
    print(f"mean: multi {multi:.4f} single {single:.4f}")
    assert multi < single


# ---------------------------------------------------------------------------
# 11


def _timed(notes, chords):
    melody = [TimedNote(Fraction(o), Fraction(d), p) for o, d, p in notes]
    return melody, [TimedChord(Fraction(o), frozenset(pc)) for o, pc in chords]


@criterion(11, "metric oracles")
def test_metrics_exhaustive():
    n = 0
    for notes, chords in oracles.all_small_cases():
        melody, timed = _timed(notes, chords)
        assert ctnctr(melody, timed) == pytest.approx(oracles.ctnctr_brute(notes, chords), abs=1e-12)
        assert pcs(melody, timed).value == pytest.approx(oracles.pcs_brute(notes, chords), abs=1e-12)
        assert mctd(melody, timed).value == pytest.approx(oracles.mctd_brute(notes, chords), abs=1e-9)
        n += 1
    assert n > 40_000


@criterion(11, "metric oracles")
@pytest.mark.parametrize("pred,ref,expected", [
    (set(), set(), (0.0, 0.0, 0.0)),
    ({(0, 4)}, {(0, 4)}, (1.0, 1.0, 1.0)),
    ({(0, 4), (1, 2)}, {(0, 4)}, (0.5, 1.0, 2 / 3)),
    ({(0, 4)}, {(0, 4), (1, 2), (2, 3)}, (1.0, 1 / 3, 0.5)),
    ({(0, 3)}, {(0, 4)}, (0.0, 0.0, 0.0)),
    ({(0, 4), (1, 1), (3, 0), (5, 2)}, {(0, 4), (1, 1), (2, 2)}, (0.5, 2 / 3, 4 / 7)),
])
def test_seg_f1_cases(pred, ref, expected):
    assert seg_f1(pred, ref) == pytest.approx(expected, abs=1e-15)


# ---------------------------------------------------------------------------
# 12

PIPELINE_CONFIG = {"batch_size": 8, "lr": 5e-4, "warmup_steps": 20}


def run_pipeline(root):
    os.makedirs(root / "raw")
    (root / "raw" / "tunes.abc").write_text(bundled_corpus())
    (root / "cfg.json").write_text(json.dumps(PIPELINE_CONFIG))
    steps = [
        ["curate", "--in", "raw", "--out", "corpus.abc", "--report", "curation.json"],
        ["build", "--in", "corpus.abc", "--out", "train.jsonl", "--test", "test.jsonl",
         "--test-fraction", "0.2", "--stats", "stats.tsv"],
        ["train", "--in", "train.jsonl", "--out", "model.ckpt", "--steps", "200", "--log", "loss.tsv"],
        ["eval", "--ckpt", "model.ckpt", "--task", "harmonization", "--test", "test.jsonl",
         "--max-patches", "12", "--out", "report.json"],
    ]
    env = dict(os.environ, BARPATCH_LOG_LEVEL="WARNING")
    for argv in steps:
        proc = subprocess.run([sys.executable, "-m", "barpatch", *argv, "--seed", "42",
                               "--config", "cfg.json"], cwd=root, env=env,
                              capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
    names = ["corpus.abc", "curation.json", "train.jsonl", "test.jsonl", "stats.tsv",
             "loss.tsv", "model.ckpt", "report.json"]
    return {n: (root / n).read_bytes() for n in names}


@pytest.mark.slow
@criterion(12, "seeded pipeline is byte-identical across runs")
def test_pipeline_determinism(tmp_path):
    first = run_pipeline(tmp_path / "a")
    second = run_pipeline(tmp_path / "b")
    for name in first:
        assert first[name] == second[name], name
    assert len(first["loss.tsv"].decode().splitlines()) == 201
    report = json.loads(first["report.json"])
    assert report["task"] == "harmonization" and report["count"] > 0
