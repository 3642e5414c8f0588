"""Shared fixtures: tiny models, batches, finite differences."""

import math
import random

import torch

from barpatch.model import BarPatchModel, ModelConfig, collate, compute_loss, encode_pair

TINY = dict(patch_size=8, patch_length=8, hidden_dim=16, n_heads=2,
            enc_layers=1, patch_dec_layers=1, char_dec_layers=1)

PAIRS = [
    ("%%harmonization\nX:1\nK:C\nCDE|FG|\n", "E:8\nX:1\nK:C\n\"C\"CDE|FG|\n"),
    ("%%generation\n", "S:1\nB:2\nX:2\nK:G\nGA|B|]\n"),
]


def tiny_model(seed=0, **overrides):
    torch.manual_seed(seed)
    return BarPatchModel(ModelConfig(**{**TINY, **overrides}))


def tiny_batch(config, pairs=PAIRS):
    return collate([encode_pair(i, o, config.patch_size, config.patch_length) for i, o in pairs])


def finite_difference_check(model, batch, eps=1e-3, per_tensor=4, seed=0):
    """Relative error ||analytic - numeric|| / max(||analytic||, ||numeric||) per parameter tensor.

    Compares on a few sampled entries per tensor, always including the
    entry with the largest analytic gradient.  Runs in float64.
    """
    model = model.double()
    model.eval()

    def loss():
        return compute_loss(model, batch)[0]

    model.zero_grad()
    loss().backward()
    rng = random.Random(seed)
    errors = {}
    for name, p in model.named_parameters():
        grad = p.grad.detach().clone().flatten()
        n = grad.numel()
        picks = {int(torch.argmax(grad.abs()))}
        while len(picks) < min(per_tensor, n):
            picks.add(rng.randrange(n))
        flat = p.data.view(-1)
        analytic, numeric = [], []
        for k in sorted(picks):
            orig = flat[k].item()
            with torch.no_grad():
                flat[k] = orig + eps
                up = loss().item()
                flat[k] = orig - eps
                down = loss().item()
                flat[k] = orig
            analytic.append(grad[k].item())
            numeric.append((up - down) / (2 * eps))
        a = torch.tensor(analytic, dtype=torch.float64)
        b = torch.tensor(numeric, dtype=torch.float64)
        scale = max(a.norm().item(), b.norm().item())
        errors[name] = 0.0 if scale < 1e-12 else (a - b).norm().item() / scale
    return errors


LN_V = math.log(128)
