"""Objective metrics: controllability, melody/chord harmonicity, phrase F1, BPB reports."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .abcnotation import AbcError, Kind, Tune, iter_sounding, split_bars
from .distance import similarity_ratio
from .tasks import ControlCodes, compute_control_codes, score_of, strip_task_header

log = logging.getLogger(__name__)


class UnknownChordSymbol(ValueError):
    pass


@dataclass(frozen=True)
class TimedNote:
    onset: Fraction
    duration: Fraction
    pitch: int  # MIDI number

    @property
    def pitch_class(self) -> int:
        return self.pitch % 12


@dataclass(frozen=True)
class TimedChord:
    onset: Fraction
    pitch_classes: frozenset
    root: int = 0


# ---------------------------------------------------------------------------
# chord symbols

QUALITIES = {
    "": (0, 4, 7), "maj": (0, 4, 7), "M": (0, 4, 7),
    "m": (0, 3, 7), "min": (0, 3, 7), "-": (0, 3, 7),
    "dim": (0, 3, 6), "o": (0, 3, 6),
    "aug": (0, 4, 8), "+": (0, 4, 8),
    "7": (0, 4, 7, 10),
    "maj7": (0, 4, 7, 11), "M7": (0, 4, 7, 11),
    "m7": (0, 3, 7, 10), "min7": (0, 3, 7, 10), "-7": (0, 3, 7, 10),
}
ROOTS = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}
CHORD_RE = re.compile(r"([A-Ga-g])([#b]?)(.*?)(?:/([A-Ga-g][#b]?))?\Z")
ANNOTATION_PREFIXES = "^_<>@"


def is_annotation(symbol: str) -> bool:
    inner = symbol.strip('"')
    return not inner or inner[0] in ANNOTATION_PREFIXES


def chord_pitch_classes(symbol: str) -> tuple:
    """(root, frozenset of pitch classes) for a chord symbol such as ``"F#m7"``.

    A slash bass is ignored.
    """
    inner = symbol.strip('"').strip()
    m = CHORD_RE.match(inner)
    if m is None or m.group(3) not in QUALITIES:
        raise UnknownChordSymbol(symbol)
    root = (ROOTS[m.group(1).upper()] + {"#": 1, "b": -1, "": 0}[m.group(2)]) % 12
    return root, frozenset((root + iv) % 12 for iv in QUALITIES[m.group(3)])


def extract_melody_and_chords(tune: Tune) -> tuple:
    """Timed notes and chord symbols of a score; onsets in L: units.

    Opaque syntax (tuplets, grace notes, broken rhythm) contributes no time.
    Unknown chord symbols raise UnknownChordSymbol.
    """
    pitches = {i: midi for i, _, midi in iter_sounding(tune)}
    notes, chords = [], []
    t = Fraction(0)
    for i, tok in enumerate(tune.body):
        if tok.kind is Kind.CHORD_SYMBOL and not is_annotation(tok.text):
            root, pcs = chord_pitch_classes(tok.text)
            chords.append(TimedChord(t, pcs, root))
        elif tok.kind is Kind.NOTE:
            notes.append(TimedNote(t, tok.duration, pitches[i]))
            t += tok.duration
        elif tok.kind is Kind.REST:
            t += tok.duration
    return notes, chords


def align(melody: Sequence[TimedNote], chords: Sequence[TimedChord]) -> list:
    """(note, chord) pairs; a note takes the latest chord with onset <= its onset.

    Notes sounding before the first chord are left out.
    """
    ordered = sorted(chords, key=lambda c: c.onset)
    pairs, k, current = [], 0, None
    for note in sorted(melody, key=lambda n: n.onset):
        while k < len(ordered) and ordered[k].onset <= note.onset:
            current = ordered[k]
            k += 1
        if current is not None:
            pairs.append((note, current))
    return pairs


# ---------------------------------------------------------------------------
# harmonicity


def ctnctr(melody: Sequence[TimedNote], chords: Sequence[TimedChord]) -> float:
    """Chord tone to non-chord tone ratio (n_c + n_p) / (n_c + n_n).

    n_p counts non-chord tones followed, in the melody, by a note 1 or 2
    semitones away.
    """
    seq = sorted(melody, key=lambda n: n.onset)
    nxt = {id(n): (seq[i + 1] if i + 1 < len(seq) else None) for i, n in enumerate(seq)}
    n_c = n_n = n_p = 0
    for note, chord in align(seq, chords):
        if note.pitch_class in chord.pitch_classes:
            n_c += 1
            continue
        n_n += 1
        after = nxt[id(note)]
        if after is not None and 0 < abs(after.pitch - note.pitch) <= 2:
            n_p += 1
    if n_c + n_n == 0:
        return 1.0
    return (n_c + n_p) / (n_c + n_n)


CONSONANT = frozenset({0, 3, 4, 7, 8, 9})
NEUTRAL = frozenset({5})


def interval_score(interval: int) -> int:
    interval %= 12
    if interval in CONSONANT:
        return 1
    if interval in NEUTRAL:
        return 0
    return -1


@dataclass
class WeightedValue:
    value: float
    weight: float

    @property
    def empty(self) -> bool:
        return self.weight == 0


def pcs(melody: Sequence[TimedNote], chords: Sequence[TimedChord]) -> WeightedValue:
    """Duration-weighted mean consonance over (melody note, chord tone) pairs."""
    num = den = 0.0
    for note, chord in align(melody, chords):
        w = float(note.duration)
        for pc in chord.pitch_classes:
            num += w * interval_score(note.pitch_class - pc)
            den += w
    return WeightedValue(num / den if den else 0.0, den)


R_FIFTHS, R_MINOR, R_MAJOR = 1.0, 1.0, 0.5


def _tonnetz_matrix() -> np.ndarray:
    k = np.arange(12)
    return np.vstack([
        R_FIFTHS * np.sin(k * 7 * np.pi / 6), R_FIFTHS * np.cos(k * 7 * np.pi / 6),
        R_MINOR * np.sin(k * 3 * np.pi / 2), R_MINOR * np.cos(k * 3 * np.pi / 2),
        R_MAJOR * np.sin(k * 2 * np.pi / 3), R_MAJOR * np.cos(k * 2 * np.pi / 3),
    ])


TONNETZ = _tonnetz_matrix()


def tonal_centroid(pitch_classes) -> np.ndarray:
    """6-D tonal centroid of a pitch-class set (L1-normalized binary chroma)."""
    chroma = np.zeros(12)
    for pc in pitch_classes:
        chroma[pc % 12] = 1.0
    if chroma.sum() == 0:
        return np.zeros(6)
    return TONNETZ @ (chroma / chroma.sum())


def mctd(melody: Sequence[TimedNote], chords: Sequence[TimedChord]) -> WeightedValue:
    """Duration-weighted mean melody-note to chord tonal-centroid distance."""
    num = den = 0.0
    for note, chord in align(melody, chords):
        w = float(note.duration)
        d = np.linalg.norm(tonal_centroid([note.pitch_class]) - tonal_centroid(chord.pitch_classes))
        num += w * float(d)
        den += w
    return WeightedValue(num / den if den else 0.0, den)


# ---------------------------------------------------------------------------
# structure


def ctrl_score(intended: ControlCodes, generated_score: str) -> float:
    """Similarity between intended control codes and those recomputed from the output."""
    try:
        actual = compute_control_codes(score_of(generated_score))
    except AbcError:
        return 0.0
    return similarity_ratio(intended.three_lines(), actual.three_lines())


def breath_positions(tune: Tune) -> set:
    """Breath marks as (bar index, number of notes/rests before the mark in that bar)."""
    out = set()
    for b, bar in enumerate(split_bars(tune)):
        seen = 0
        for tok in bar:
            if tok.kind in (Kind.NOTE, Kind.REST):
                seen += 1
            elif tok.decoration_name == "breath":
                out.add((b, seen))
    return out


def seg_f1(predicted: set, reference: set) -> tuple:
    """(precision, recall, F1) with exact position matching."""
    hit = len(set(predicted) & set(reference))
    p = hit / len(predicted) if predicted else 0.0
    r = hit / len(reference) if reference else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


# ---------------------------------------------------------------------------
# reports

TASK_METRICS = {
    "generation": ("ctrl",),
    "harmonization": ("ctnctr", "pcs", "mctd"),
    "melodization": ("ctnctr", "pcs", "mctd"),
    "segmentation": ("precision", "recall", "f1"),
}


@dataclass
class EvalReport:
    task: str
    count: int = 0
    skipped: int = 0
    metrics: dict = field(default_factory=dict)
    per_instance: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def instance_metrics(task: str, reference_output: str, generated_output: str) -> dict:
    """Metric values for one generated output; raises on unusable output."""
    if task == "generation":
        intended = ControlCodes.parse(strip_task_header(reference_output))
        return {"ctrl": ctrl_score(intended, generated_output)}
    if task in ("harmonization", "melodization"):
        melody, chords = extract_melody_and_chords(score_of(generated_output))
        p, m = pcs(melody, chords), mctd(melody, chords)
        if p.empty:
            raise ValueError("no melody notes under a chord")
        return {"ctnctr": ctnctr(melody, chords), "pcs": p.value, "mctd": m.value}
    if task == "segmentation":
        pred = breath_positions(score_of(generated_output))
        ref = breath_positions(score_of(reference_output))
        p, r, f = seg_f1(pred, ref)
        return {"precision": p, "recall": r, "f1": f}
    return {}


def evaluate_outputs(task: str, instances: Sequence, outputs: Sequence[str],
                     bpb: Optional[float] = None) -> EvalReport:
    """Aggregate task metrics given one generated output per instance."""
    report = EvalReport(task=task, count=len(instances))
    sums = {}
    for inst, out in zip(instances, outputs):
        try:
            values = instance_metrics(task, inst.output, out)
        except (AbcError, ValueError) as err:
            log.debug("skipping instance: %s", err)
            report.skipped += 1
            report.per_instance.append({"skipped": str(err)})
            continue
        report.per_instance.append(values)
        for k, v in values.items():
            sums.setdefault(k, []).append(v)
    for k, vs in sums.items():
        report.metrics[k] = float(np.mean(vs))
    if bpb is not None and instances:
        report.metrics["bpb"] = bpb
    return report


def control_prefix(reference_output: str) -> str:
    """The S:/B:/E: lines at the top of a generation target."""
    lines = strip_task_header(reference_output).split("\n")
    keep = []
    for line in lines:
        if len(line) >= 2 and line[0] in "SBE" and line[1] == ":":
            keep.append(line + "\n")
        else:
            break
    return "".join(keep)


def evaluate(model, instances: Sequence, task: str, params=None,
             generate_fn: Optional[Callable] = None) -> EvalReport:
    """Generate for every instance of ``task`` and score it, plus teacher-forced BPB."""
    from .generation import DecodingParams, generate, score_bpb

    instances = [i for i in instances if i.task == task]
    if not instances:
        return EvalReport(task=task)
    params = params or DecodingParams(temperature=0.0)
    outputs = []
    for inst in instances:
        p = params
        if task == "generation":
            p = DecodingParams(**{**asdict(params), "forced_prefix": control_prefix(inst.output)})
        outputs.append((generate_fn or generate)(model, inst.input, p))
    bpb = score_bpb(model, instances).bits_per_byte
    return evaluate_outputs(task, instances, outputs, bpb=bpb)
