"""Score-to-score task instances for the seven melody tasks."""

from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .abcnotation import (
    AbcError,
    Kind,
    Tune,
    detect_sections,
    notes_to_rests,
    parse_tune,
    remove_repeats,
    respell_canonical,
    serialize,
    strip_chord_symbols,
    strip_decorations,
)
from .distance import similarity_e
from .patching import DEFAULT_PATCH_LENGTH, DEFAULT_PATCH_SIZE, PatchError, patchify

TASKS = (
    "cataloging",
    "generation",
    "harmonization",
    "melodization",
    "segmentation",
    "transcription",
    "variation",
)
METADATA_TAGS = ("T", "C", "O")
CONTROL_TAGS = ("S", "B", "E")
MAX_SECTIONS = 8
MAX_SECTION_BARS = 32


@dataclass(frozen=True)
class TaskInstance:
    task: str
    input: str
    output: str

    def to_json(self) -> str:
        return json.dumps({"task": self.task, "input": self.input, "output": self.output})

    @classmethod
    def from_json(cls, line: str) -> "TaskInstance":
        obj = json.loads(line)
        return cls(obj["task"], obj["input"], obj["output"])


def task_header(task: str) -> str:
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}")
    return f"%%{task}\n"


def strip_task_header(text: str) -> str:
    """Drop a leading ``%%<task>`` line."""
    first, nl, rest = text.partition("\n")
    if nl and first.startswith("%%") and first[2:] in TASKS:
        return rest
    return text


def strip_e_line(text: str) -> str:
    if text.startswith("E:"):
        return text.partition("\n")[2]
    return text


# ---------------------------------------------------------------------------
# control codes


@dataclass(frozen=True)
class ControlCodes:
    section_count: int
    bar_counts: tuple
    similarities: tuple = ()

    def serialize(self) -> str:
        lines = [f"S:{self.section_count}", "B:" + ",".join(map(str, self.bar_counts))]
        if self.similarities:
            lines.append("E:" + ",".join(map(str, self.similarities)))
        return "\n".join(lines) + "\n"

    def three_lines(self) -> str:
        """S:, B: and E: lines, with an empty E: when there are no section pairs."""
        return (f"S:{self.section_count}\nB:" + ",".join(map(str, self.bar_counts))
                + "\nE:" + ",".join(map(str, self.similarities)) + "\n")

    @classmethod
    def parse(cls, text: str) -> "ControlCodes":
        """Read S:/B:/E: lines from the top of ``text``."""
        values = {}
        for line in text.split("\n"):
            if len(line) >= 2 and line[0] in CONTROL_TAGS and line[1] == ":":
                values.setdefault(line[0], line[2:].strip())
            else:
                break
        if "S" not in values or "B" not in values:
            raise ValueError("missing S:/B: control codes")

        def ints(v):
            return tuple(int(x) for x in v.split(",") if x.strip())

        return cls(int(values["S"]), ints(values["B"]), ints(values.get("E", "")))


def clamp(value: int, lo: int, hi: int) -> int:
    return max(lo, min(hi, value))


def compute_control_codes(tune: Tune) -> ControlCodes:
    """Sections past the eighth are folded into the eighth."""
    sections = [list(s.bars) for s in detect_sections(tune)]
    if len(sections) > MAX_SECTIONS:
        head, tail = sections[:MAX_SECTIONS - 1], sections[MAX_SECTIONS - 1:]
        sections = head + [[bar for s in tail for bar in s]]
    if not sections:
        return ControlCodes(1, (1,), ())
    texts = ["".join(t.text for bar in s for t in bar) for s in sections]
    bars = tuple(clamp(len(s), 1, MAX_SECTION_BARS) for s in sections)
    sims = tuple(similarity_e(a, b) for a, b in itertools.combinations(texts, 2))
    return ControlCodes(len(sections), bars, sims)


def strip_control_codes(text: str) -> str:
    lines = text.split("\n")
    k = 0
    while k < len(lines) - 1 and len(lines[k]) >= 2 and lines[k][0] in CONTROL_TAGS and lines[k][1] == ":":
        k += 1
    return "\n".join(lines[k:])


# ---------------------------------------------------------------------------
# builders


def has_kind(tune: Tune, kind: Kind) -> bool:
    return any(t.kind is kind for t in tune.body)


def has_decoration(tune: Tune, name: str) -> bool:
    return any(t.decoration_name == name for t in tune.body)


def _paired(task: str, input_score: str, output_score: str) -> TaskInstance:
    e = similarity_e(input_score, output_score)
    return TaskInstance(task, task_header(task) + input_score, f"E:{e}\n" + output_score)


def build_generation(tune: Tune) -> TaskInstance:
    codes = compute_control_codes(tune)
    return TaskInstance("generation", task_header("generation"), codes.serialize() + serialize(tune))


def build_harmonization(tune: Tune) -> Optional[TaskInstance]:
    if not has_kind(tune, Kind.CHORD_SYMBOL):
        return None
    return _paired("harmonization", serialize(strip_chord_symbols(tune)), serialize(tune))


def build_melodization(tune: Tune) -> Optional[TaskInstance]:
    if not (has_kind(tune, Kind.CHORD_SYMBOL) and has_kind(tune, Kind.NOTE)):
        return None
    try:
        rests = notes_to_rests(tune)
    except AbcError:
        return None
    return _paired("melodization", serialize(rests), serialize(tune))


def build_segmentation(tune: Tune) -> Optional[TaskInstance]:
    if not has_decoration(tune, "breath"):
        return None
    return _paired("segmentation", serialize(strip_decorations(tune, {"breath"})), serialize(tune))


def degrade(tune: Tune) -> Tune:
    """Deterministic stand-in for an ABC -> MIDI -> ABC roundtrip."""
    tune = strip_decorations(tune)
    tune = remove_repeats(tune)
    tune = respell_canonical(tune)
    return strip_chord_symbols(tune)


def build_transcription(tune: Tune) -> TaskInstance:
    return _paired("transcription", serialize(degrade(tune)), serialize(tune))


def build_variation(group: Sequence[Tune]) -> list:
    texts = [serialize(t) for t in group]
    out = []
    for i, j in itertools.permutations(range(len(texts)), 2):
        out.append(_paired("variation", texts[i], texts[j]))
    return out


def build_cataloging(tune: Tune, rng: random.Random) -> Optional[TaskInstance]:
    meta = [f for f in tune.header if f.tag in METADATA_TAGS]
    if not meta:
        return None
    meta = list(meta)
    rng.shuffle(meta)
    rest = [f for f in tune.header if f.tag not in METADATA_TAGS]
    blanks = "".join(f"{f.tag}:\n" for f in meta)
    score = "".join(f.text + "\n" for f in rest) + tune.body_text
    output = "".join(f.text + "\n" for f in meta)
    return TaskInstance("cataloging", task_header("cataloging") + blanks + score, output)


def variant_key(tune: Tune) -> Optional[str]:
    title = tune.field("T")
    if title is None or not title.value.strip():
        return None
    return " ".join(title.value.lower().split())


def variant_groups(corpus: Sequence[Tune]) -> list:
    """Tunes sharing a (case- and space-normalized) first title, in corpus order."""
    groups = {}
    for tune in corpus:
        key = variant_key(tune)
        if key is not None:
            groups.setdefault(key, []).append(tune)
    return [g for g in groups.values() if len(g) >= 2]


# ---------------------------------------------------------------------------
# dataset


@dataclass
class BuildResult:
    instances: list = field(default_factory=list)
    counts: dict = field(default_factory=lambda: {t: 0 for t in TASKS})
    dropped: dict = field(default_factory=lambda: {t: 0 for t in TASKS})

    @property
    def total(self) -> int:
        return len(self.instances)


def fits(instance: TaskInstance, patch_size: int, patch_length: int) -> bool:
    try:
        patchify(instance.input, patch_size, patch_length)
        patchify(instance.output, patch_size, patch_length)
    except PatchError:
        return False
    return True


def build_dataset(corpus: Sequence[Tune], seed: int = 0,
                  patch_size: int = DEFAULT_PATCH_SIZE,
                  patch_length: int = DEFAULT_PATCH_LENGTH,
                  tasks: Iterable[str] = TASKS) -> BuildResult:
    """Every builder over every eligible tune, grouped by task in TASKS order."""
    wanted = set(tasks)
    result = BuildResult()
    per_task = {t: [] for t in TASKS}
    for index, tune in enumerate(corpus):
        rng = random.Random(f"{seed}:{index}")
        candidates = {
            "cataloging": lambda: build_cataloging(tune, rng),
            "generation": lambda: build_generation(tune),
            "harmonization": lambda: build_harmonization(tune),
            "melodization": lambda: build_melodization(tune),
            "segmentation": lambda: build_segmentation(tune),
            "transcription": lambda: build_transcription(tune),
        }
        for task, make in candidates.items():
            if task in wanted:
                inst = make()
                if inst is not None:
                    per_task[task].append(inst)
    if "variation" in wanted:
        for group in variant_groups(corpus):
            per_task["variation"].extend(build_variation(group))
    for task in TASKS:
        for inst in per_task[task]:
            if fits(inst, patch_size, patch_length):
                result.instances.append(inst)
                result.counts[task] += 1
            else:
                result.dropped[task] += 1
    return result


def stats_table(counts: dict, source: str = "corpus") -> str:
    """TSV laid out like a per-source instance-count table with a Total row."""
    head = ["Data Sources"] + [t.capitalize() for t in TASKS]
    row = [source] + [str(counts.get(t, 0)) if counts.get(t, 0) else "--" for t in TASKS]
    total = ["Total"] + [str(counts.get(t, 0)) for t in TASKS]
    return "\n".join("\t".join(r) for r in (head, row, total)) + "\n"


def write_jsonl(instances: Iterable[TaskInstance], path) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for inst in instances:
            fh.write(inst.to_json() + "\n")


def read_jsonl(path, task: Optional[str] = None) -> list:
    out = []
    with open(path, encoding="ascii") as fh:
        for line in fh:
            if line.strip():
                inst = TaskInstance.from_json(line)
                if task is None or inst.task == task:
                    out.append(inst)
    return out


def split_instances(instances: Sequence, fraction: float, seed: int = 0) -> tuple:
    """Seeded random split into (train, validation) with ``fraction`` held out."""
    order = list(range(len(instances)))
    random.Random(seed).shuffle(order)
    n_val = int(round(len(order) * fraction))
    val = set(order[:n_val])
    train = [x for i, x in enumerate(instances) if i not in val]
    held = [x for i, x in enumerate(instances) if i in val]
    return train, held


def score_of(text: str) -> Tune:
    """Parse a task output after dropping identifier, E: and control-code lines."""
    return parse_tune(strip_control_codes(strip_task_header(text)))
