"""Melody corpus curation over a directory of ABC files."""

from __future__ import annotations

import json
import logging
import re
import unicodedata
from importlib import resources
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .abcnotation import (
    AbcError,
    FINAL,
    Kind,
    Token,
    Tune,
    parse_tune,
    replace_barline,
    serialize,
    split_bars,
    split_tunes,
)

log = logging.getLogger(__name__)

MIN_BARS = 8
MUSICAL_TAGS = frozenset("XTCOKLMQR")
LYRIC_TAGS = frozenset("wW")
DEDUP_TAGS = ("K", "L", "M")

URL_RE = re.compile(r"https?://|www\.", re.I)
EMAIL_RE = re.compile(r"[\w.+-]+@[\w-]+\.[\w.-]+")
COPYRIGHT_RE = re.compile(r"copyright|©", re.I)


@dataclass
class CurationReport:
    input_count: int = 0
    rejected_copyright: int = 0
    rejected_nonascii: int = 0
    rejected_unparseable: int = 0
    rejected_short: int = 0
    deduplicated: int = 0
    output_count: int = 0
    skipped_files: list = field(default_factory=list)

    @property
    def rejected(self) -> int:
        return (self.rejected_copyright + self.rejected_nonascii
                + self.rejected_unparseable + self.rejected_short)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def has_copyright(text: str) -> bool:
    return COPYRIGHT_RE.search(text) is not None


def filter_copyright(tune: Tune) -> bool:
    """True to keep.  Plain substring match, case-insensitive."""
    return not has_copyright(serialize(tune))


def filter_short(tune: Tune, min_bars: int = MIN_BARS) -> bool:
    return len(split_bars(tune)) >= min_bars


def transliterate(text: str) -> Optional[str]:
    """ASCII-fold ``text`` one character at a time; None if some character has no single-character fold."""
    out = []
    for ch in text:
        if ord(ch) < 128:
            out.append(ch)
            continue
        folded = "".join(c for c in unicodedata.normalize("NFKD", ch) if not unicodedata.combining(c))
        if len(folded) != 1 or ord(folded) >= 128:
            return None
        out.append(folded)
    return "".join(out)


def _nonmusical(value: str) -> bool:
    return URL_RE.search(value) is not None or EMAIL_RE.search(value) is not None


def strip_nonmusical(tune: Tune) -> Tune:
    """Drop lyric lines and non-musical fields/comments carrying URLs or e-mail addresses."""
    header = [
        f for f in tune.header
        if f.tag not in LYRIC_TAGS and (f.tag in MUSICAL_TAGS or not _nonmusical(f.value))
    ]
    body, i, toks = [], 0, tune.body
    while i < len(toks):
        tok = toks[i]
        drop = False
        if tok.is_line_field:
            f = tok.field
            drop = f.tag in LYRIC_TAGS or (f.tag not in MUSICAL_TAGS and _nonmusical(f.value))
        elif tok.is_comment and (i == 0 or toks[i - 1].text == "\n"):
            drop = _nonmusical(tok.text)
        if drop:
            i += 1
            if i < len(toks) and toks[i].text == "\n":
                i += 1
            continue
        body.append(tok)
        i += 1
    return Tune(tuple(header), tuple(body))


def is_rest_bar(bar: Iterable[Token]) -> bool:
    has_rest = False
    for tok in bar:
        if tok.kind is Kind.REST:
            has_rest = True
        elif tok.kind is Kind.BARLINE or tok.is_whitespace:
            continue
        else:
            return False
    return has_rest


def trim_rest_bars(tune: Tune) -> Tune:
    """Remove leading and trailing bars of complete rest.

    When trailing bars go, the last kept bar takes over the barline of the
    removed final bar (so ``...|z8|]`` ends in ``|]``) and its line ending.
    """
    bars = split_bars(tune)
    lo, hi = 0, len(bars)
    while lo < hi and is_rest_bar(bars[lo]):
        lo += 1
    while hi > lo and is_rest_bar(bars[hi - 1]):
        hi -= 1
    if lo == 0 and hi == len(bars):
        return tune
    kept = [list(b) for b in bars[lo:hi]]
    if hi < len(bars) and kept:
        removed = bars[-1]
        last_bar_idx = max((k for k, t in enumerate(removed) if t.kind is Kind.BARLINE), default=None)
        tail = kept[-1]
        own_idx = max((k for k, t in enumerate(tail) if t.kind is Kind.BARLINE), default=None)
        if last_bar_idx is not None and own_idx is not None:
            trailing = removed[last_bar_idx + 1:]
            kept[-1] = tail[:own_idx] + [removed[last_bar_idx]] + trailing
    return tune.with_body(t for bar in kept for t in bar)


def ensure_final_barline(tune: Tune) -> Tune:
    body = list(tune.body)
    k = len(body)
    while k > 0 and (body[k - 1].is_whitespace or body[k - 1].is_comment):
        k -= 1
    trailing = body[k:]
    if k > 0 and body[k - 1].kind is Kind.BARLINE:
        last = body[k - 1]
        if last.style == FINAL:
            return tune
        if last.text in ("|", "||"):
            body[k - 1] = replace_barline(last, "|]")
            return tune.with_body(body)
    # trailing whitespace and comments stay after the new barline
    ending = [Token(Kind.OPAQUE, " "), replace_barline(Token(Kind.BARLINE, "|"), "|]")]
    return tune.with_body(body[:k] + ending + trailing)


def dedup_key(tune: Tune) -> str:
    fields = []
    for tag in DEDUP_TAGS:
        f = tune.field(tag)
        fields.append(f"{tag}:{f.value.strip() if f else ''}")
    body = "".join(tune.body_text.split())
    return "\n".join(fields) + "\n" + body


def deduplicate(corpus: Iterable[Tune]) -> list:
    seen, out = set(), []
    for tune in corpus:
        key = dedup_key(tune)
        if key in seen:
            continue
        seen.add(key)
        out.append(tune)
    return out


def curate_texts(texts: Iterable[str], report: Optional[CurationReport] = None,
                 min_bars: int = MIN_BARS) -> list:
    """Run every per-tune step and deduplication over raw tune texts."""
    report = report if report is not None else CurationReport()
    kept = []
    for raw in texts:
        report.input_count += 1
        if has_copyright(raw):
            report.rejected_copyright += 1
            continue
        text = transliterate(raw)
        if text is None:
            report.rejected_nonascii += 1
            continue
        try:
            tune = parse_tune(text)
        except AbcError as err:
            log.debug("unparseable tune: %s", err)
            report.rejected_unparseable += 1
            continue
        tune = trim_rest_bars(strip_nonmusical(tune))
        if not filter_short(tune, min_bars):
            report.rejected_short += 1
            continue
        kept.append(ensure_final_barline(tune))
    out = deduplicate(kept)
    report.deduplicated += len(kept) - len(out)
    report.output_count += len(out)
    return out


def iter_tune_texts(paths: Iterable[Path], report: CurationReport):
    for path in paths:
        if path.suffix.lower() != ".abc":
            report.skipped_files.append(path.name)
            continue
        text = path.read_bytes().decode("utf-8", errors="replace")
        for chunk in split_tunes(text):
            if chunk.lstrip().startswith("X:"):
                yield chunk


def curate_directory(directory, report: Optional[CurationReport] = None) -> tuple:
    """Curate every ``.abc`` file under ``directory`` (sorted); returns (tunes, report)."""
    report = report if report is not None else CurationReport()
    root = Path(directory)
    paths = sorted(p for p in root.rglob("*") if p.is_file())
    tunes = curate_texts(iter_tune_texts(paths, report), report)
    return tunes, report


def write_corpus(tunes: Iterable[Tune], path) -> None:
    text = "\n".join(serialize(t).rstrip("\n") + "\n" for t in tunes)
    Path(path).write_text(text, encoding="ascii")


def read_corpus(path) -> list:
    text = Path(path).read_text(encoding="ascii")
    return [parse_tune(chunk) for chunk in split_tunes(text) if chunk.lstrip().startswith("X:")]


def bundled_corpus() -> str:
    """Text of the hand-written sample corpus shipped with the package."""
    return resources.files("barpatch").joinpath("data/tunes.abc").read_text(encoding="ascii")
