"""Bar patching: score text <-> sequences of bar/field patches.

Each patch is one header information field (with its newline) or one bar
(ending with its barline plus any whitespace that runs to the end of that
line).  Units longer than the patch size are cut into consecutive chunks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .abcnotation import AbcError, HEADER_FIELD_RE, segment_body, tokenize_body

PAD, BOS, EOS = 0, 1, 2
VOCAB_SIZE = 128
DEFAULT_PATCH_SIZE = 64
DEFAULT_PATCH_LENGTH = 256

INFORMATION_FIELD = "information_field"
BAR = "bar"
SPECIAL = "special"


class PatchError(AbcError):
    pass


class TooLong(PatchError):
    pass


class NonAscii(PatchError):
    pass


def char_ids(text: str) -> list:
    ids = [ord(c) for c in text]
    for i, c in enumerate(ids):
        if c < 3 or c >= VOCAB_SIZE:
            raise NonAscii(f"character {text[i]!r} at offset {i} is outside the 3-127 vocabulary")
    return ids


@dataclass(frozen=True)
class BarPatch:
    chars: tuple
    origin: str = BAR

    @property
    def text(self) -> str:
        return "".join(chr(c) for c in self.chars if c > EOS)

    def __len__(self) -> int:
        return len(self.chars)


BOS_PATCH = BarPatch((BOS,), SPECIAL)
EOS_PATCH = BarPatch((EOS,), SPECIAL)


class PatchSequence(list):
    """A list of BarPatch."""

    @property
    def texts(self) -> list:
        return [p.text for p in self]


def _units(text: str) -> list:
    """(unit text, origin) pairs; header lines first, then body units."""
    units = []
    pos = 0
    while pos < len(text):
        nl = text.find("\n", pos)
        if nl < 0 or HEADER_FIELD_RE.match(text[pos:nl]) is None:
            break
        line = text[pos:nl + 1]
        units.append((line, INFORMATION_FIELD))
        pos = nl + 1
        if line.startswith("K:"):
            break
    body = tokenize_body(text[pos:], strict=False)
    for unit in segment_body(body, split_fields=True):
        origin = INFORMATION_FIELD if unit[0].is_line_field else BAR
        units.append(("".join(t.text for t in unit), origin))
    return units


def patchify(text: str, patch_size: int = DEFAULT_PATCH_SIZE,
             patch_length: int = DEFAULT_PATCH_LENGTH) -> PatchSequence:
    if patch_size < 1 or patch_length < 1:
        raise ValueError("patch size and patch length must be positive")
    char_ids(text)
    patches = PatchSequence()
    for unit, origin in _units(text):
        ids = [ord(c) for c in unit]
        for k in range(0, len(ids), patch_size):
            patches.append(BarPatch(tuple(ids[k:k + patch_size]), origin))
    if len(patches) > patch_length:
        raise TooLong(f"{len(patches)} patches exceed the patch length {patch_length}")
    return patches


def depatchify(seq: Iterable[BarPatch]) -> str:
    return "".join(p.text for p in seq)


def patch_ids(patch: BarPatch, patch_size: int) -> np.ndarray:
    if len(patch.chars) > patch_size:
        raise PatchError(f"patch of {len(patch.chars)} chars exceeds patch size {patch_size}")
    out = np.full(patch_size, PAD, dtype=np.int64)
    out[:len(patch.chars)] = patch.chars
    return out


def encode_patch(patch: BarPatch, patch_size: int = DEFAULT_PATCH_SIZE,
                 vocab_size: int = VOCAB_SIZE) -> np.ndarray:
    """Stacked one-hot rows, shape (patch_size, vocab_size); pad rows are one-hot PAD."""
    ids = patch_ids(patch, patch_size)
    out = np.zeros((patch_size, vocab_size), dtype=np.float32)
    out[np.arange(patch_size), ids] = 1.0
    return out


def encode_sequence(seq: Sequence[BarPatch], patch_size: int = DEFAULT_PATCH_SIZE) -> np.ndarray:
    """Character ids of every patch, shape (len(seq), patch_size)."""
    if not seq:
        return np.zeros((0, patch_size), dtype=np.int64)
    return np.stack([patch_ids(p, patch_size) for p in seq])


def dump(seq: Sequence[BarPatch], patch_size: int = DEFAULT_PATCH_SIZE) -> str:
    """Debug listing: one patch per line, pad positions shown as U+2400."""
    lines = []
    for p in seq:
        shown = []
        for c in p.chars:
            if c == BOS:
                shown.append("<bos>")
            elif c == EOS:
                shown.append("<eos>")
            else:
                shown.append(chr(c).encode("unicode_escape").decode("ascii"))
        shown.extend("␀" * (patch_size - len(p.chars)))
        lines.append("".join(shown))
    return "\n".join(lines)
