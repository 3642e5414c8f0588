"""Seeded procedural folk-tune corpus for desk-scale experiments.

Tunes are diatonic, bar-structured and built over a per-bar chord progression,
so chord symbols are predictable from the melody.  Only a minority of tunes
carry chord symbols, which keeps harmonization data scarce relative to the
other tasks.
"""

from __future__ import annotations

import random
LETTERS = "CDEFGAB"
KEYS = ("C", "G", "D", "F", "A")
SHARPS = {"C": "", "G": "F", "D": "FC", "F": "", "A": "FCG"}
FLATS = {"F": "B"}
QUALITY = {0: "", 1: "m", 2: "m", 3: "", 4: "", 5: "m", 6: "dim"}
PROGRESSIONS = (
    (0, 3, 4, 0), (0, 5, 3, 4), (0, 4, 5, 3), (0, 3, 0, 4),
    (5, 3, 0, 4), (0, 1, 4, 0), (0, 0, 3, 4),
)
METERS = {
    "4/4": ((2, 2, 2, 2), (1, 1, 2, 2, 2), (2, 1, 1, 2, 2), (1, 1, 1, 1, 2, 2), (4, 2, 2), (2, 2, 4), (8,)),
    "3/4": ((2, 2, 2), (1, 1, 2, 2), (4, 2), (2, 1, 1, 2), (6,)),
    "6/8": ((3, 3), (2, 1, 2, 1), (1, 1, 1, 3), (3, 2, 1), (1, 1, 1, 1, 1, 1)),
}
WORDS = ("Lark", "Mill", "River", "Harvest", "Rowan", "Ferry", "Heather", "Bridge",
         "Morning", "Willow", "Piper", "Lantern", "Meadow", "Valley", "Shepherd", "Kettle")
FINAL = {"4/4": (8,), "3/4": (6,), "6/8": (6,)}
RHYTHMS = {"4/4": "reel", "3/4": "waltz", "6/8": "jig"}
PLACES = ("Glen", "Shore", "Hill", "Town", "Moor", "Green", "Island", "Road")
COMPOSERS = ("Trad.", "A. Fiddler", "M. Piper", "J. Harper")


def _chord_name(key: str, degree: int, seventh: bool = False) -> str:
    tonic = LETTERS.index(key)
    letter = LETTERS[(tonic + degree) % 7]
    acc = "#" if letter in SHARPS[key] else ("b" if letter in FLATS.get(key, "") else "")
    quality = QUALITY[degree]
    if seventh and degree == 4:
        quality = "7"
    return letter + acc + quality


def _note(key: str, step: int, length: int) -> str:
    """ABC for the diatonic step above the tonic (tonic octave: uppercase)."""
    absolute = LETTERS.index(key) + step
    octave, idx = divmod(absolute, 7)
    letter = LETTERS[idx]
    if octave <= 0:
        text = letter + "," * (-octave)
    else:
        text = letter.lower() + "'" * (octave - 1)
    return text + (str(length) if length != 1 else "")


def _bar(rng: random.Random, key: str, meter: str, degree: int, last_step: int,
         final: bool) -> tuple:
    """(list of (step, length) pairs, last step) for one bar over chord ``degree``."""
    pattern = FINAL[meter] if final else rng.choice(METERS[meter])
    chord_steps = [degree, degree + 2, degree + 4]
    out, step = [], last_step
    for k, length in enumerate(pattern):
        if final:
            target = 7 if last_step > 3 else 0
        elif k == 0 or rng.random() < 0.65:
            cands = [s + 7 * o for s in chord_steps for o in (-1, 0, 1)]
            cands = [c for c in cands if -2 <= c <= 9]
            target = min(cands, key=lambda c: (abs(c - step), rng.random()))
            if rng.random() < 0.4:
                target = rng.choice(cands)
        else:
            target = step + rng.choice((-1, 1))
        target = max(-2, min(9, target))
        out.append((target, length))
        step = target
    return out, step


def make_tune(rng: random.Random, index: int, chords: bool, breath: bool,
              title: str) -> dict:
    """A tune description: header values plus a list of sections of bars."""
    key = rng.choice(KEYS)
    meter = rng.choice(tuple(METERS))
    n_sections = rng.choice((1, 2, 2, 3))
    bars_per = 8 if n_sections == 1 else rng.choice((4, 8))
    progression = rng.choice(PROGRESSIONS)
    sections = []
    step = 0
    for s in range(n_sections):
        bars = []
        for b in range(bars_per):
            degree = progression[b % 4]
            final = b == bars_per - 1
            if final:
                degree = 0
            notes, step = _bar(rng, key, meter, degree, step, final)
            bars.append({"degree": degree, "notes": notes, "seventh": rng.random() < 0.3})
        sections.append(bars)
    if n_sections == 3 and rng.random() < 0.6:
        sections[2] = [dict(b) for b in sections[0]]
    return {
        "index": index, "key": key, "meter": meter, "title": title,
        "sections": sections, "chords": chords, "breath": breath,
        "repeat": rng.random() < 0.4, "decorate": rng.random() < 0.3,
        "rhythm": RHYTHMS[meter], "composer": rng.choice(COMPOSERS),
    }


def _title(rng: random.Random, taken: set) -> str:
    while True:
        title = f"The {rng.choice(WORDS)} {rng.choice(WORDS)} of the {rng.choice(PLACES)}"
        if title not in taken:
            taken.add(title)
            return title


def vary(rng: random.Random, tune: dict) -> dict:
    """A variant: same outline with a few bars re-drawn."""
    out = dict(tune)
    out["sections"] = [[dict(b) for b in sec] for sec in tune["sections"]]
    for _ in range(rng.randint(1, 3)):
        sec = rng.choice(out["sections"])
        k = rng.randrange(len(sec) - 1)
        notes, _ = _bar(rng, tune["key"], tune["meter"], sec[k]["degree"], sec[k]["notes"][0][0], False)
        sec[k] = dict(sec[k], notes=notes)
    return out


def render(tune: dict, rng: random.Random) -> str:
    key, meter = tune["key"], tune["meter"]
    lines = [f"X:{tune['index']}", f"T:{tune['title']}"]
    if rng.random() < 0.5:
        lines.append(f"C:{tune['composer']}")
    lines.append(f"R:{tune['rhythm']}")
    lines += [f"M:{meter}", "L:1/8", f"K:{key}"]
    n = len(tune["sections"])
    for s, sec in enumerate(tune["sections"]):
        repeat = tune["repeat"] and s < n - 1
        parts = ["|:" if repeat else ""]
        for b, bar in enumerate(sec):
            text = ""
            if tune["chords"]:
                text += '"' + _chord_name(key, bar["degree"], bar["seventh"]) + '"'
            for k, (step, length) in enumerate(bar["notes"]):
                if tune["decorate"] and k == 0 and b % 4 == 1:
                    text += "~" if length >= 2 else "."
                text += _note(key, step, length)
                if meter == "4/4" and k % 2 == 1 and k < len(bar["notes"]) - 1 and length == 2:
                    text += " "
            if tune["breath"] and b % 4 == 3 and b < len(sec) - 1:
                text += "!breath!"
            last = b == len(sec) - 1
            if not last:
                bar_line = "|"
            elif s == n - 1:
                bar_line = "|]"
            else:
                bar_line = ":|" if repeat else "||"
            parts.append(text + bar_line)
            if b % 4 == 3 and not last:
                parts.append("\n")
        lines.append("".join(parts))
    return "\n".join(lines) + "\n"


def toy_corpus(n: int = 500, seed: int = 0, chord_fraction: float = 0.15,
               breath_fraction: float = 0.4, variant_fraction: float = 0.1) -> list:
    """``n`` ABC tune texts; deterministic in ``seed``."""
    rng = random.Random(f"toy:{seed}")
    texts, index, taken = [], 1, set()
    while len(texts) < n:
        chords = rng.random() < chord_fraction
        breath = rng.random() < breath_fraction
        base = make_tune(rng, index, chords, breath, _title(rng, taken))
        group = [base]
        if rng.random() < variant_fraction:
            for _ in range(rng.randint(1, 2)):
                group.append(vary(rng, base))
        for tune in group:
            if len(texts) >= n:
                break
            tune = dict(tune, index=index)
            texts.append(render(tune, rng))
            index += 1
    return texts
