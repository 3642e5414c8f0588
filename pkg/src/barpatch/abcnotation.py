"""Lossless ABC notation parsing, inspection and score transforms.

A tune is split into header information fields (up to and including the
``K:`` line) and a body of tokens.  Every body token keeps its verbatim
source span, so ``serialize(parse_tune(text))`` reproduces the
LF-normalized input exactly.  Syntax outside the modelled subset (grace
groups, tuplets, multi-note chords, slurs, ties, ...) becomes ``Opaque``
tokens rather than an error.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterable, Optional, Sequence


class AbcError(ValueError):
    """Base class for ABC parsing and transform errors."""


class EmptyInput(AbcError):
    pass


class NonAsciiInput(AbcError):
    pass


class UnterminatedChordSymbol(AbcError):
    pass


class UnterminatedDecoration(AbcError):
    pass


class DurationOverflow(AbcError):
    pass


class Kind(str, enum.Enum):
    NOTE = "Note"
    REST = "Rest"
    CHORD_SYMBOL = "ChordSymbol"
    DECORATION = "Decoration"
    BARLINE = "Barline"
    INLINE_FIELD = "InlineField"
    OPAQUE = "Opaque"


# barline styles
SINGLE = "single"
DOUBLE = "double"
FINAL = "final"
REPEAT_START = "repeat-start"
REPEAT_END = "repeat-end"
REPEAT_BOTH = "repeat-both"

SECTION_END_STYLES = frozenset({DOUBLE, FINAL, REPEAT_END, REPEAT_BOTH})

LETTER_PC = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}
ACCIDENTAL_ALTER = {"": 0, "^": 1, "^^": 2, "_": -1, "__": -2, "=": 0}
ALTER_ACCIDENTAL = {1: "^", 2: "^^", -1: "_", -2: "__", 0: "="}

HEADER_FIELD_RE = re.compile(r"([A-Za-z]):(.*)\Z|(%%[^\s]*)(.*)\Z", re.S)
FIELD_LINE_START_RE = re.compile(r"[A-Za-z]:|%%")
BARLINE_RE = re.compile(r":+\|\|?:+|::+|\|\|?:+|:+\|\|?|\|\]|\[\||\|\||\|")
INLINE_FIELD_RE = re.compile(r"\[([A-Za-z]):([^\]\n]*)\]")
ENDING_RE = re.compile(r"\[[0-9][0-9,\-]*")
BRACKET_CHORD_RE = re.compile(r"\[[^\]\n]*\][0-9/]*")
TUPLET_RE = re.compile(r"\([0-9](:[0-9]*)?(:[0-9]*)?")
NOTE_RE = re.compile(
    r"(?P<acc>\^\^|\^|__|_|=)?(?P<letter>[A-Ga-g])(?P<oct>[,']*)"
    r"(?P<num>[0-9]*)(?P<slashes>/*)(?P<den>[0-9]*)"
)
REST_RE = re.compile(r"z(?P<num>[0-9]*)(?P<slashes>/*)(?P<den>[0-9]*)")
SPACE_RE = re.compile(r"[ \t]+")


@dataclass(frozen=True)
class InformationField:
    """A ``Tag:value`` line, a ``%%directive`` line or an inline ``[Tag:value]``.

    For directives the tag carries the ``%%`` prefix and the value keeps the
    separating whitespace verbatim.
    """

    tag: str
    value: str
    inline: bool = False

    @property
    def is_directive(self) -> bool:
        return self.tag.startswith("%%")

    @property
    def text(self) -> str:
        if self.is_directive:
            return self.tag + self.value
        if self.inline:
            return f"[{self.tag}:{self.value}]"
        return f"{self.tag}:{self.value}"

    @classmethod
    def parse(cls, line: str) -> "InformationField":
        m = HEADER_FIELD_RE.match(line)
        if m is None:
            raise AbcError(f"not an information field: {line!r}")
        if m.group(1) is not None:
            return cls(m.group(1), m.group(2))
        return cls(m.group(3), m.group(4))


@dataclass(frozen=True)
class Token:
    """One body token.  ``text`` is the verbatim source span."""

    kind: Kind
    text: str
    pitch_class: Optional[int] = None
    octave: Optional[int] = None
    duration: Optional[Fraction] = None
    style: Optional[str] = None
    field: Optional[InformationField] = None

    @property
    def is_whitespace(self) -> bool:
        return self.kind is Kind.OPAQUE and self.text.strip(" \t\n") == ""

    @property
    def is_comment(self) -> bool:
        return self.kind is Kind.OPAQUE and self.text.startswith("%")

    @property
    def decoration_name(self) -> Optional[str]:
        if self.kind is not Kind.DECORATION:
            return None
        return self.text[1:-1]

    @property
    def is_line_field(self) -> bool:
        """A full-line information field appearing inside the body."""
        return self.kind is Kind.INLINE_FIELD and not self.field.inline


Bar = list  # list[Token], ends with a Barline except possibly the last


@dataclass(frozen=True)
class Section:
    """A run of whole bars; ``start``/``stop`` index into the tune body."""

    start: int
    stop: int
    bars: tuple

    @property
    def tokens(self) -> list:
        return [t for bar in self.bars for t in bar]

    @property
    def text(self) -> str:
        return "".join(t.text for t in self.tokens)


@dataclass(frozen=True)
class Tune:
    header: tuple = ()
    body: tuple = ()

    def field(self, tag: str) -> Optional[InformationField]:
        """First header field with ``tag``, or None."""
        for f in self.header:
            if f.tag == tag:
                return f
        return None

    def fields(self, tag: str) -> list:
        return [f for f in self.header if f.tag == tag]

    @property
    def body_text(self) -> str:
        return "".join(t.text for t in self.body)

    def with_body(self, body: Iterable[Token]) -> "Tune":
        return Tune(self.header, tuple(body))

    def with_header(self, header: Iterable[InformationField]) -> "Tune":
        return Tune(tuple(header), self.body)

    def __str__(self) -> str:
        return serialize(self)


def normalize_line_endings(text: str) -> str:
    return text.replace("\r\n", "\n").replace("\r", "\n")


def check_ascii(text: str) -> None:
    for i, ch in enumerate(text):
        if ord(ch) > 127:
            raise NonAsciiInput(f"non-ASCII character {ch!r} at offset {i}")


# ---------------------------------------------------------------------------
# durations


def parse_duration(num: str, slashes: str, den: str) -> Fraction:
    n = int(num) if num else 1
    if not slashes:
        return Fraction(n)
    if den:
        d = int(den) * 2 ** (len(slashes) - 1)
    else:
        d = 2 ** len(slashes)
    if d == 0:
        return Fraction(0)
    return Fraction(n, d)


def format_duration(duration: Fraction) -> str:
    """ABC length suffix for ``duration`` (in units of the L: field)."""
    duration = Fraction(duration)
    if duration <= 0:
        raise DurationOverflow(f"non-positive duration {duration}")
    num, den = duration.numerator, duration.denominator
    if den & (den - 1):
        raise DurationOverflow(f"duration {duration} has a non-binary denominator")
    if den == 1:
        return "" if num == 1 else str(num)
    if num == 1:
        return "/" if den == 2 else f"/{den}"
    return f"{num}/{den}"


# ---------------------------------------------------------------------------
# lexing


def _note_token(m: re.Match) -> Optional[Token]:
    duration = parse_duration(m.group("num"), m.group("slashes"), m.group("den"))
    if duration <= 0:
        return None
    letter = m.group("letter")
    octave = 0 if letter.isupper() else 1
    octave += m.group("oct").count("'") - m.group("oct").count(",")
    alter = ACCIDENTAL_ALTER[m.group("acc") or ""]
    return Token(
        Kind.NOTE,
        m.group(0),
        pitch_class=(LETTER_PC[letter.upper()] + alter) % 12,
        octave=octave,
        duration=duration,
    )


def _barline_style(text: str) -> str:
    if text.startswith(":") and text.endswith(":"):
        return REPEAT_BOTH
    if text.endswith(":"):
        return REPEAT_START
    if text.startswith(":"):
        return REPEAT_END
    if text == "|]":
        return FINAL
    if text in ("||", "[|"):
        return DOUBLE
    return SINGLE


def tokenize_body(text: str, strict: bool = True) -> list:
    """Split body text into tokens whose texts concatenate back to ``text``.

    With ``strict=False`` unterminated chord symbols and decorations become
    Opaque spans instead of raising.
    """
    tokens = []
    pos, n = 0, len(text)
    while pos < n:
        ch = text[pos]
        line_end = text.find("\n", pos)
        if line_end < 0:
            line_end = n
        at_line_start = pos == 0 or text[pos - 1] == "\n"

        if at_line_start and FIELD_LINE_START_RE.match(text, pos):
            span = text[pos:line_end]
            tokens.append(Token(Kind.INLINE_FIELD, span, field=InformationField.parse(span)))
            pos = line_end
            continue
        if ch == "\n":
            tokens.append(Token(Kind.OPAQUE, "\n"))
            pos += 1
            continue
        if ch == "%":
            tokens.append(Token(Kind.OPAQUE, text[pos:line_end]))
            pos = line_end
            continue
        m = SPACE_RE.match(text, pos)
        if m:
            tokens.append(Token(Kind.OPAQUE, m.group(0)))
            pos = m.end()
            continue
        if ch == '"':
            close = text.find('"', pos + 1, line_end)
            if close < 0:
                if strict:
                    raise UnterminatedChordSymbol(f"unterminated chord symbol at offset {pos}")
                tokens.append(Token(Kind.OPAQUE, text[pos:line_end]))
                pos = line_end
                continue
            tokens.append(Token(Kind.CHORD_SYMBOL, text[pos:close + 1]))
            pos = close + 1
            continue
        if ch == "!":
            close = text.find("!", pos + 1, line_end)
            if close < 0:
                if strict:
                    raise UnterminatedDecoration(f"unterminated decoration at offset {pos}")
                tokens.append(Token(Kind.OPAQUE, "!"))
                pos += 1
                continue
            tokens.append(Token(Kind.DECORATION, text[pos:close + 1]))
            pos = close + 1
            continue
        m = BARLINE_RE.match(text, pos)
        if m:
            tokens.append(Token(Kind.BARLINE, m.group(0), style=_barline_style(m.group(0))))
            pos = m.end()
            continue
        if ch == "[":
            m = INLINE_FIELD_RE.match(text, pos)
            if m:
                field = InformationField(m.group(1), m.group(2), inline=True)
                tokens.append(Token(Kind.INLINE_FIELD, m.group(0), field=field))
                pos = m.end()
                continue
            m = ENDING_RE.match(text, pos) or BRACKET_CHORD_RE.match(text, pos)
            span = m.group(0) if m else "["
            tokens.append(Token(Kind.OPAQUE, span))
            pos += len(span)
            continue
        if ch == "{":
            close = text.find("}", pos + 1, line_end)
            span = text[pos:close + 1] if close >= 0 else "{"
            tokens.append(Token(Kind.OPAQUE, span))
            pos += len(span)
            continue
        if ch == "(":
            m = TUPLET_RE.match(text, pos)
            span = m.group(0) if m else "("
            tokens.append(Token(Kind.OPAQUE, span))
            pos += len(span)
            continue
        m = NOTE_RE.match(text, pos)
        if m:
            tok = _note_token(m)
            if tok is not None:
                tokens.append(tok)
                pos = m.end()
                continue
        m = REST_RE.match(text, pos)
        if m:
            duration = parse_duration(m.group("num"), m.group("slashes"), m.group("den"))
            if duration > 0:
                tokens.append(Token(Kind.REST, m.group(0), duration=duration))
                pos = m.end()
                continue
        tokens.append(Token(Kind.OPAQUE, ch))
        pos += 1
    return tokens


def _split_header(text: str) -> tuple:
    header = []
    pos = 0
    while pos < len(text):
        nl = text.find("\n", pos)
        if nl < 0:
            break  # a last line without newline stays in the body
        line = text[pos:nl]
        m = HEADER_FIELD_RE.match(line)
        if m is None:
            break
        field = InformationField.parse(line)
        header.append(field)
        pos = nl + 1
        if field.tag == "K":
            break
    return header, text[pos:]


def parse_tune(text: str, strict: bool = True) -> Tune:
    """Parse one ABC tune.  The result serializes back to the LF-normalized text."""
    text = normalize_line_endings(text)
    if strict and not text.strip():
        raise EmptyInput("empty ABC input")
    check_ascii(text)
    header, body = _split_header(text)
    return Tune(tuple(header), tuple(tokenize_body(body, strict=strict)))


def serialize(tune: Tune) -> str:
    return "".join(f.text + "\n" for f in tune.header) + "".join(t.text for t in tune.body)


def split_tunes(text: str) -> list:
    """Split a multi-tune file into tune texts at blank lines.

    Free text before the first tune is kept as its own chunk; callers that
    only want tunes should filter on ``X:``.
    """
    text = normalize_line_endings(text)
    chunks, current = [], []
    for line in text.split("\n"):
        if line.strip():
            current.append(line)
        elif current:
            chunks.append("\n".join(current) + "\n")
            current = []
    if current:
        chunks.append("\n".join(current) + "\n")
    return chunks


# ---------------------------------------------------------------------------
# inspection


def has_content(token: Token) -> bool:
    """True for tokens that make a segment count as a bar."""
    if token.kind in (Kind.NOTE, Kind.REST):
        return True
    return (
        token.kind is Kind.OPAQUE
        and not token.is_whitespace
        and not token.is_comment
        and token.text != "\\"
    )


def _absorb_trailing_space(tokens: Sequence[Token], i: int) -> int:
    """Index just past the spaces+newline that end the line after ``tokens[i-1]``."""
    j = i
    if j < len(tokens) and tokens[j].kind is Kind.OPAQUE and tokens[j].text.strip(" \t") == "":
        if tokens[j].text != "\n":
            j += 1
    if j < len(tokens) and tokens[j].text == "\n":
        return j + 1
    return i


def segment_body(tokens: Sequence[Token], split_fields: bool = False) -> list:
    """Group body tokens into units ending at barlines.

    A barline closes the current unit only once the unit has musical
    content; a leading barline (e.g. ``|:`` at the start of a line) is kept
    as the prefix of the following bar.  Whitespace running to the end of
    the line after a closing barline joins the closed unit, and
    content-free trailing material joins the last unit.  With
    ``split_fields`` full-line body fields become units of their own.
    """
    units, current, content = [], [], False
    i, n = 0, len(tokens)
    while i < n:
        tok = tokens[i]
        if split_fields and tok.is_line_field:
            if current:
                units.append(current)
            unit = [tok]
            i += 1
            if i < n and tokens[i].text == "\n":
                unit.append(tokens[i])
                i += 1
            units.append(unit)
            current, content = [], False
            continue
        current.append(tok)
        i += 1
        if tok.kind is Kind.BARLINE and content:
            j = _absorb_trailing_space(tokens, i)
            current.extend(tokens[i:j])
            i = j
            units.append(current)
            current, content = [], False
        elif has_content(tok):
            content = True
    if current:
        if units and not content:
            units[-1].extend(current)
        else:
            units.append(current)
    return units


def split_bars(tune: Tune) -> list:
    """Bars of the body; their concatenation reproduces the body exactly."""
    return segment_body(tune.body)


def count_bars(tune: Tune) -> int:
    """Bars holding musical content; a body of only decorations or symbols has none."""
    return sum(any(has_content(t) for t in bar) for bar in split_bars(tune))


def bar_ends_section(bar: Sequence[Token]) -> bool:
    for tok in reversed(bar):
        if tok.kind is Kind.BARLINE:
            return tok.style in SECTION_END_STYLES
        if has_content(tok):
            break
    return False


def detect_sections(tune: Tune) -> list:
    """Sections end at ``||``, ``:|``, ``::`` or an interior ``|]``."""
    bars = split_bars(tune)
    sections, current, start, pos = [], [], 0, 0
    for k, bar in enumerate(bars):
        current.append(bar)
        pos += len(bar)
        if bar_ends_section(bar) and k < len(bars) - 1:
            sections.append(Section(start, pos, tuple(current)))
            current, start = [], pos
    if current:
        sections.append(Section(start, pos, tuple(current)))
    return sections


# ---------------------------------------------------------------------------
# transforms


def strip_chord_symbols(tune: Tune) -> Tune:
    return tune.with_body(t for t in tune.body if t.kind is not Kind.CHORD_SYMBOL)


def strip_decorations(tune: Tune, which: Optional[Iterable[str]] = None) -> Tune:
    """Drop decorations named in ``which``; ``which=None`` drops all of them."""
    if which is None:
        return tune.with_body(t for t in tune.body if t.kind is not Kind.DECORATION)
    names = set(which)
    return tune.with_body(t for t in tune.body if t.decoration_name not in names)


def make_rest(duration: Fraction) -> Token:
    return Token(Kind.REST, "z" + format_duration(duration), duration=Fraction(duration))


def _is_rest_joiner(tok: Token) -> bool:
    return (tok.kind is Kind.OPAQUE and SPACE_RE.fullmatch(tok.text) is not None) or tok.text == "-"


def notes_to_rests(tune: Tune) -> Tune:
    """Replace notes by rests and merge adjacent rests into one.

    Rests merge across spaces and ties only; any other token (chord symbol,
    barline, field, decoration, newline, other opaque syntax) ends a run.
    """
    body = [make_rest(t.duration) if t.kind is Kind.NOTE else t for t in tune.body]
    out, i, n = [], 0, len(body)
    while i < n:
        tok = body[i]
        if tok.kind is not Kind.REST:
            out.append(tok)
            i += 1
            continue
        run_end, total, j = i + 1, tok.duration, i + 1
        members = [tok]
        while j < n:
            if body[j].kind is Kind.REST:
                total += body[j].duration
                members.append(body[j])
                run_end = j + 1
                j += 1
            elif _is_rest_joiner(body[j]):
                j += 1
            else:
                break
        out.append(members[0] if len(members) == 1 else make_rest(total))
        i = run_end
    return tune.with_body(out)


def bar_duration(bar: Iterable[Token]) -> Fraction:
    return sum((t.duration for t in bar if t.kind in (Kind.NOTE, Kind.REST)), Fraction(0))


# ---------------------------------------------------------------------------
# keys and pitch


SHARP_ORDER = "FCGDAEB"
MODE_OFFSETS = [
    ("mixolydian", -1), ("mix", -1),
    ("dorian", -2), ("dor", -2),
    ("phrygian", -4), ("phr", -4),
    ("lydian", 1), ("lyd", 1),
    ("locrian", -5), ("loc", -5),
    ("aeolian", -3), ("aeo", -3),
    ("ionian", 0), ("ion", 0),
    ("major", 0), ("maj", 0),
    ("minor", -3), ("min", -3), ("m", -3),
]
TONIC_FIFTHS = {"C": 0, "G": 1, "D": 2, "A": 3, "E": 4, "B": 5, "F": -1}
KEY_RE = re.compile(r"\s*([A-G])([#b]?)\s*([A-Za-z]*)")


def key_signature(value: str) -> dict:
    """Map letter -> alteration (-1, 0, +1) for a K: field value."""
    alters = {letter: 0 for letter in LETTER_PC}
    m = KEY_RE.match(value or "")
    if m is None:
        return alters
    fifths = TONIC_FIFTHS[m.group(1)]
    fifths += {"#": 7, "b": -7, "": 0}[m.group(2)]
    mode = m.group(3).lower()
    for name, offset in MODE_OFFSETS:
        if mode.startswith(name):
            fifths += offset
            break
    if fifths > 0:
        for letter in SHARP_ORDER[:min(fifths, 7)]:
            alters[letter] = 1
    elif fifths < 0:
        for letter in SHARP_ORDER[::-1][:min(-fifths, 7)]:
            alters[letter] = -1
    return alters


def split_note_text(text: str) -> re.Match:
    return NOTE_RE.fullmatch(text)


def note_letter_octave(tok: Token) -> tuple:
    m = split_note_text(tok.text)
    return m.group("letter").upper(), tok.octave


def iter_sounding(tune: Tune):
    """Yield ``(index, token, midi_pitch)`` for every note, applying the key
    signature (header and inline K:) and within-bar accidental carry."""
    key_field = tune.field("K")
    key = key_signature(key_field.value if key_field else "")
    bar_acc = {}
    for i, tok in enumerate(tune.body):
        if tok.kind is Kind.BARLINE:
            bar_acc = {}
        elif tok.kind is Kind.INLINE_FIELD and tok.field.tag == "K":
            key = key_signature(tok.field.value)
            bar_acc = {}
        elif tok.kind is Kind.NOTE:
            m = split_note_text(tok.text)
            letter = m.group("letter").upper()
            acc = m.group("acc")
            if acc:
                alter = ACCIDENTAL_ALTER[acc]
                bar_acc[(letter, tok.octave)] = alter
            else:
                alter = bar_acc.get((letter, tok.octave), key[letter])
            yield i, tok, 60 + 12 * tok.octave + LETTER_PC[letter] + alter


SHARP_SPELLING = {
    0: ("C", 0), 1: ("C", 1), 2: ("D", 0), 3: ("D", 1), 4: ("E", 0), 5: ("F", 0),
    6: ("F", 1), 7: ("G", 0), 8: ("G", 1), 9: ("A", 0), 10: ("A", 1), 11: ("B", 0),
}


def _letter_text(letter: str, octave: int) -> str:
    if octave >= 1:
        return letter.lower() + "'" * (octave - 1)
    return letter + "," * (-octave)


def respell_canonical(tune: Tune) -> Tune:
    """Respell every note preserving its sounding pitch.

    Pitches diatonic to the current key use the key's letter; the rest use
    the sharp spelling.  Accidentals are written only where the key
    signature plus earlier accidentals in the bar would not already give the
    right pitch.
    """
    sounding = {i: midi for i, _, midi in iter_sounding(tune)}
    key_field = tune.field("K")
    key = key_signature(key_field.value if key_field else "")
    out_acc = {}
    body = []
    for i, tok in enumerate(tune.body):
        if tok.kind is Kind.BARLINE:
            out_acc = {}
        elif tok.kind is Kind.INLINE_FIELD and tok.field.tag == "K":
            key = key_signature(tok.field.value)
            out_acc = {}
        if tok.kind is not Kind.NOTE:
            body.append(tok)
            continue
        midi = sounding[i]
        pc = midi % 12
        diatonic = [(l, a) for l, a in key.items() if (LETTER_PC[l] + a) % 12 == pc]
        letter, alter = diatonic[0] if diatonic else SHARP_SPELLING[pc]
        octave = (midi - 60 - LETTER_PC[letter] - alter) // 12
        implied = out_acc.get((letter, octave), key[letter])
        acc = "" if implied == alter else ALTER_ACCIDENTAL[alter]
        if acc:
            out_acc[(letter, octave)] = alter
        m = split_note_text(tok.text)
        suffix = m.group("num") + m.group("slashes") + m.group("den")
        new = _note_token(NOTE_RE.fullmatch(acc + _letter_text(letter, octave) + suffix))
        body.append(new)
    return tune.with_body(body)


def remove_repeats(tune: Tune) -> Tune:
    """Turn repeat barlines into plain ``|`` (no unfolding)."""
    body = []
    for tok in tune.body:
        if tok.kind is Kind.BARLINE and tok.style in (REPEAT_START, REPEAT_END, REPEAT_BOTH):
            tok = Token(Kind.BARLINE, "|", style=SINGLE)
        body.append(tok)
    return tune.with_body(body)


def replace_barline(tok: Token, text: str) -> Token:
    return replace(tok, text=text, style=_barline_style(text))
