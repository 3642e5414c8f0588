"""Hierarchical patch/character encoder-decoder.

Input bar patches are multi-hot (S x V) matrices mapped to dense vectors by
one affine projection, contextualized by a bidirectional patch encoder.  A
causal patch decoder with cross-attention produces one vector per target
patch, and a small causal character decoder expands each vector into the
characters of that patch, with the vector placed at position 0.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .patching import BOS_PATCH, EOS, PAD, VOCAB_SIZE, encode_sequence, patchify


class InputTooLong(ValueError):
    pass


@dataclass
class ModelConfig:
    patch_size: int = 32
    patch_length: int = 64
    vocab_size: int = VOCAB_SIZE
    hidden_dim: int = 64
    n_heads: int = 4
    enc_layers: int = 2
    patch_dec_layers: int = 2
    char_dec_layers: int = 1
    share_patch_weights: bool = True
    dropout: float = 0.0
    ffn_mult: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.hidden_dim % self.n_heads:
            raise ValueError("hidden_dim must be divisible by n_heads")
        if min(self.enc_layers, self.patch_dec_layers, self.char_dec_layers) < 1:
            raise ValueError("every layer count must be >= 1")
        if self.share_patch_weights and self.enc_layers != self.patch_dec_layers:
            raise ValueError("shared patch weights need enc_layers == patch_dec_layers")
        if self.vocab_size != VOCAB_SIZE:
            raise ValueError(f"vocab_size is fixed at {VOCAB_SIZE}")

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        return cls(**overrides)

    @classmethod
    def full(cls, **overrides) -> "ModelConfig":
        base = dict(patch_size=64, patch_length=256, hidden_dim=768, n_heads=12,
                    enc_layers=9, patch_dec_layers=9, char_dec_layers=3,
                    share_patch_weights=True, dropout=0.1)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)


# ---------------------------------------------------------------------------
# building blocks


class Attention(nn.Module):
    def __init__(self, dim: int, n_heads: int, dropout: float = 0.0):
        super().__init__()
        self.n_heads = n_heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, memory=None, key_valid=None, causal=False, return_weights=False):
        memory = x if memory is None else memory
        b, tq, d = x.shape
        tk = memory.shape[1]
        h = self.n_heads
        q = self.q(x).view(b, tq, h, d // h).transpose(1, 2)
        k = self.k(memory).view(b, tk, h, d // h).transpose(1, 2)
        v = self.v(memory).view(b, tk, h, d // h).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d // h)
        allowed = torch.ones(tq, tk, dtype=torch.bool, device=x.device)
        if causal:
            allowed = torch.tril(allowed)
        allowed = allowed[None, None]
        if key_valid is not None:
            allowed = allowed & key_valid[:, None, None, :]
        scores = scores.masked_fill(~allowed, torch.finfo(scores.dtype).min)
        weights = torch.softmax(scores, dim=-1)
        y = (self.drop(weights) @ v).transpose(1, 2).reshape(b, tq, d)
        y = self.out(y)
        return (y, weights) if return_weights else y


class FeedForward(nn.Module):
    def __init__(self, dim: int, mult: int, dropout: float):
        super().__init__()
        self.up = nn.Linear(dim, dim * mult)
        self.down = nn.Linear(dim * mult, dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        return self.drop(self.down(F.gelu(self.up(x))))


class SelfBlock(nn.Module):
    """Pre-norm self-attention + feed-forward block."""

    def __init__(self, dim, n_heads, mult, dropout):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, n_heads, dropout)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = FeedForward(dim, mult, dropout)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, key_valid=None, causal=False):
        x = x + self.drop(self.attn(self.norm1(x), key_valid=key_valid, causal=causal))
        return x + self.ffn(self.norm2(x))


class DecoderBlock(nn.Module):
    """Self-attention, cross-attention, feed-forward.

    With ``shared`` the self-attention, feed-forward and their norms are the
    very modules of the given encoder block; cross-attention is always
    decoder-only.
    """

    def __init__(self, dim, n_heads, mult, dropout, shared: Optional[SelfBlock] = None):
        super().__init__()
        src = shared if shared is not None else SelfBlock(dim, n_heads, mult, dropout)
        self.norm1, self.attn = src.norm1, src.attn
        self.norm2, self.ffn = src.norm2, src.ffn
        self.norm_cross = nn.LayerNorm(dim)
        self.cross = Attention(dim, n_heads, dropout)
        self.drop = nn.Dropout(dropout)

    def forward(self, x, memory, key_valid=None, memory_valid=None):
        x = x + self.drop(self.attn(self.norm1(x), key_valid=key_valid, causal=True))
        x = x + self.drop(self.cross(self.norm_cross(x), memory=memory, key_valid=memory_valid))
        return x + self.ffn(self.norm2(x))


class PatchProjection(nn.Module):
    """One affine map from a flattened S x V multi-hot patch to a dense vector."""

    def __init__(self, patch_size: int, vocab_size: int, dim: int):
        super().__init__()
        self.patch_size, self.vocab_size = patch_size, vocab_size
        self.linear = nn.Linear(patch_size * vocab_size, dim)

    def forward(self, multihot: torch.Tensor) -> torch.Tensor:
        if multihot.shape[-2:] != (self.patch_size, self.vocab_size):
            raise ValueError(f"expected (..., {self.patch_size}, {self.vocab_size}) input, "
                             f"got {tuple(multihot.shape)}")
        return self.linear(multihot.flatten(-2))

    def embed_ids(self, ids: torch.Tensor) -> torch.Tensor:
        """Same map from character ids (..., S): a sum of selected weight rows."""
        if ids.shape[-1] != self.patch_size:
            raise ValueError(f"expected patches of {self.patch_size} ids, got {ids.shape[-1]}")
        table = self.linear.weight.t().reshape(self.patch_size, self.vocab_size, -1)
        rows = table[torch.arange(self.patch_size, device=ids.device), ids]
        return rows.sum(-2) + self.linear.bias


# ---------------------------------------------------------------------------
# the model


class BarPatchModel(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = c = config
        d = c.hidden_dim
        self.projection = PatchProjection(c.patch_size, c.vocab_size, d)
        self.enc_pos = nn.Embedding(c.patch_length + 1, d)
        self.dec_pos = nn.Embedding(c.patch_length + 1, d)
        self.encoder = nn.ModuleList(
            SelfBlock(d, c.n_heads, c.ffn_mult, c.dropout) for _ in range(c.enc_layers))
        self.enc_norm = nn.LayerNorm(d)
        self.decoder = nn.ModuleList(
            DecoderBlock(d, c.n_heads, c.ffn_mult, c.dropout,
                         shared=self.encoder[i] if c.share_patch_weights else None)
            for i in range(c.patch_dec_layers))
        self.dec_norm = nn.LayerNorm(d)
        self.char_embed = nn.Embedding(c.vocab_size, d)
        self.char_pos = nn.Embedding(c.patch_size + 1, d)
        self.char_blocks = nn.ModuleList(
            SelfBlock(d, c.n_heads, c.ffn_mult, c.dropout) for _ in range(c.char_dec_layers))
        self.char_norm = nn.LayerNorm(d)
        self.head = nn.Linear(d, c.vocab_size)
        self.drop = nn.Dropout(c.dropout)
        self.apply(self._init_weights)

    @staticmethod
    def _init_weights(module):
        if isinstance(module, nn.Linear):
            nn.init.normal_(module.weight, std=0.02)
            nn.init.zeros_(module.bias)
        elif isinstance(module, nn.Embedding):
            nn.init.normal_(module.weight, std=0.02)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())

    def project_patches(self, patches: torch.Tensor) -> torch.Tensor:
        """Multi-hot (..., S, V) or id (..., S) patches -> (..., d)."""
        if patches.dtype in (torch.int64, torch.int32):
            return self.projection.embed_ids(patches)
        return self.projection(patches)

    def _positions(self, table, n, device):
        if n > table.num_embeddings:
            raise InputTooLong(f"{n} patches exceed the model's patch length")
        return table(torch.arange(n, device=device))

    def encode(self, patches, valid=None):
        """Bidirectional patch encoder; ``valid`` (B, P) masks pad patches out."""
        x = self.project_patches(patches)
        x = self.drop(x + self._positions(self.enc_pos, x.shape[1], x.device))
        for block in self.encoder:
            x = block(x, key_valid=valid)
        return self.enc_norm(x)

    def decode_patches(self, patches, memory, valid=None, memory_valid=None):
        """Causal patch decoder over previous target patches -> (B, T, d)."""
        x = self.project_patches(patches)
        x = self.drop(x + self._positions(self.dec_pos, x.shape[1], x.device))
        for block in self.decoder:
            x = block(x, memory, key_valid=valid, memory_valid=memory_valid)
        return self.dec_norm(x)

    def decode_patch_step(self, patches, memory, memory_valid=None):
        """Representation of the next patch given all previous ones, (B, d)."""
        return self.decode_patches(patches, memory, memory_valid=memory_valid)[:, -1]

    def char_logits(self, reps, char_inputs):
        """reps (N, d), char_inputs (N, J) with J <= S -> logits (N, J + 1, V)."""
        x = torch.cat([reps[:, None, :], self.char_embed(char_inputs)], dim=1)
        x = self.drop(x + self.char_pos(torch.arange(x.shape[1], device=x.device)))
        for block in self.char_blocks:
            x = block(x, causal=True)
        return self.head(self.char_norm(x))

    def decode_chars(self, reps, prev_chars):
        """Next-character distribution (N, V) after ``prev_chars`` (N, j) of the current patch."""
        return torch.softmax(self.char_logits(reps, prev_chars)[:, -1], dim=-1)

    def forward(self, batch: "Batch"):
        """Per-token negative log-likelihood (N, S + 1) and its mask."""
        memory = self.encode(batch.enc_ids, batch.enc_valid)
        h = self.decode_patches(batch.dec_ids, memory, batch.dec_valid, batch.enc_valid)
        reps = h[batch.dec_valid]
        targets = batch.char_targets[batch.dec_valid]
        inputs = targets[:, :-1].masked_fill(targets[:, :-1] == EOS, PAD)
        logits = self.char_logits(reps, inputs)
        return token_nll(logits, targets)


def token_nll(logits: torch.Tensor, targets: torch.Tensor):
    """-log p(target) per position, zero where the target is PAD; returns (nll, mask)."""
    mask = targets != PAD
    logp = torch.log_softmax(logits, dim=-1)
    nll = -logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    return nll * mask, mask


def compute_loss(model: BarPatchModel, batch: "Batch"):
    """Mean nats per target token, plus the per-token matrix (N, S + 1)."""
    nll, mask = model(batch)
    return nll.sum() / mask.sum(), nll


# ---------------------------------------------------------------------------
# batches


@dataclass
class EncodedPair:
    enc_ids: np.ndarray       # (Pi, S)
    dec_ids: np.ndarray       # (Po + 1, S): bos patch + output patches
    char_targets: np.ndarray  # (Po + 1, S + 1): chars + eos, last row = terminal patch


@dataclass
class Batch:
    enc_ids: torch.Tensor
    enc_valid: torch.Tensor
    dec_ids: torch.Tensor
    dec_valid: torch.Tensor
    char_targets: torch.Tensor

    @property
    def token_count(self) -> int:
        return int((self.char_targets != PAD).sum())


def encode_pair(input_text: str, output_text: str, patch_size: int, patch_length: int) -> EncodedPair:
    src = patchify(input_text, patch_size, patch_length)
    tgt = patchify(output_text, patch_size, patch_length)
    dec_ids = encode_sequence([BOS_PATCH] + list(tgt), patch_size)
    targets = np.full((len(tgt) + 1, patch_size + 1), PAD, dtype=np.int64)
    for i, p in enumerate(tgt):
        targets[i, :len(p.chars)] = p.chars
        targets[i, len(p.chars)] = EOS
    targets[len(tgt), 0] = EOS
    return EncodedPair(encode_sequence(src, patch_size), dec_ids, targets)


def collate(pairs: Sequence[EncodedPair], device=None) -> Batch:
    b = len(pairs)
    s = pairs[0].enc_ids.shape[1]
    pi = max(max(p.enc_ids.shape[0] for p in pairs), 1)
    po = max(p.dec_ids.shape[0] for p in pairs)
    enc = np.zeros((b, pi, s), dtype=np.int64)
    enc_valid = np.zeros((b, pi), dtype=bool)
    dec = np.zeros((b, po, s), dtype=np.int64)
    dec_valid = np.zeros((b, po), dtype=bool)
    tgt = np.zeros((b, po, s + 1), dtype=np.int64)
    for i, p in enumerate(pairs):
        n, m = p.enc_ids.shape[0], p.dec_ids.shape[0]
        enc[i, :n], enc_valid[i, :n] = p.enc_ids, True
        dec[i, :m], dec_valid[i, :m] = p.dec_ids, True
        tgt[i, :m] = p.char_targets
    as_t = lambda a: torch.from_numpy(a).to(device) if device else torch.from_numpy(a)
    return Batch(as_t(enc), as_t(enc_valid), as_t(dec), as_t(dec_valid), as_t(tgt))
