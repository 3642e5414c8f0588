"""Autoregressive decoding and bits-per-byte scoring."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import torch

from .model import BarPatchModel, InputTooLong, collate, encode_pair
from .patching import BOS, BOS_PATCH, EOS, PAD, BarPatch, PatchError, encode_sequence, patchify
from .tasks import strip_task_header


@dataclass
class DecodingParams:
    temperature: float = 1.0
    top_p: float = 0.9
    max_patches: Optional[int] = None
    forced_prefix: str = ""
    seed: int = 0


def _pick(logits: torch.Tensor, params: DecodingParams, gen: torch.Generator) -> int:
    logits = logits.clone()
    logits[PAD] = float("-inf")
    logits[BOS] = float("-inf")
    if params.temperature <= 0:
        return int(torch.argmax(logits))
    probs = torch.softmax(logits / params.temperature, dim=-1)
    if params.top_p < 1.0:
        sorted_p, order = torch.sort(probs, descending=True)
        cum = torch.cumsum(sorted_p, dim=0)
        keep = cum - sorted_p < params.top_p
        keep[0] = True
        probs = torch.zeros_like(probs).scatter(0, order[keep], sorted_p[keep])
        probs = probs / probs.sum()
    return int(torch.multinomial(probs, 1, generator=gen))


@torch.no_grad()
def generate(model: BarPatchModel, input_text: str, params: Optional[DecodingParams] = None) -> str:
    """Decode a target score for ``input_text``.

    Whole patches of ``params.forced_prefix`` are teacher-forced first and
    appear verbatim at the start of the result.
    """
    params = params or DecodingParams()
    c = model.config
    model.eval()
    try:
        src = patchify(input_text, c.patch_size, c.patch_length)
    except PatchError as err:
        raise InputTooLong(str(err)) from err
    enc = torch.from_numpy(encode_sequence(src, c.patch_size))[None]
    if enc.shape[1] == 0:
        enc = torch.zeros(1, 1, c.patch_size, dtype=torch.long)
        enc_valid = torch.zeros(1, 1, dtype=torch.bool)
    else:
        enc_valid = torch.ones(1, enc.shape[1], dtype=torch.bool)
    memory = model.encode(enc, enc_valid)

    prefix = list(patchify(params.forced_prefix, c.patch_size, c.patch_length))
    patches = [BOS_PATCH] + prefix
    out = [p.text for p in prefix]
    limit = c.patch_length if params.max_patches is None else min(params.max_patches, c.patch_length)
    gen = torch.Generator().manual_seed(params.seed)
    while len(patches) - 1 < limit:
        ids = torch.from_numpy(encode_sequence(patches, c.patch_size))[None]
        rep = model.decode_patch_step(ids, memory, enc_valid)
        chars = []
        while len(chars) < c.patch_size:
            prev = torch.tensor([chars], dtype=torch.long)
            logits = model.char_logits(rep, prev)[0, -1]
            nxt = _pick(logits, params, gen)
            if nxt == EOS:
                break
            chars.append(nxt)
        if not chars:
            break  # terminal patch
        patch = BarPatch(tuple(chars))
        patches.append(patch)
        out.append(patch.text)
    return "".join(out)


@dataclass
class BpbResult:
    bits_per_byte: float
    total_nats: float
    total_bytes: int
    token_count: int


def bits_per_byte(total_nats: float, total_bytes: int) -> float:
    if total_bytes <= 0:
        return float("inf")
    return total_nats / (math.log(2) * total_bytes)


def target_bytes(output_text: str) -> int:
    return len(strip_task_header(output_text).encode("ascii"))


@torch.no_grad()
def score_bpb(model: BarPatchModel, instances: Sequence, batch_size: int = 8) -> BpbResult:
    """Teacher-forced bits per byte over the instances' output texts.

    Every predicted token counts in the numerator, including the per-patch
    and terminal end markers; only the raw output bytes count in the
    denominator.
    """
    c = model.config
    model.eval()
    total, n_bytes, n_tokens = 0.0, 0, 0
    pairs = []
    for inst in instances:
        pairs.append(encode_pair(inst.input, inst.output, c.patch_size, c.patch_length))
        n_bytes += target_bytes(inst.output)
    for k in range(0, len(pairs), batch_size):
        nll, mask = model(collate(pairs[k:k + batch_size]))
        total += float(nll.double().sum())
        n_tokens += int(mask.sum())
    return BpbResult(bits_per_byte(total, n_bytes), total, n_bytes, n_tokens)
