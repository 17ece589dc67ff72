"""Functional causal decoder forward pass over a ModelParams set."""

import math
from collections.abc import Sequence
from dataclasses import dataclass

import torch

from src.exceptions import ConfigError
from src.model.params import ModelParams
from src.model.units import UnitId, UnitKind


@dataclass
class ForwardTrace:
    """Per-block post-residual activations h_ℓ and final pre-softmax logits z."""

    hidden_states: list[torch.Tensor]
    logits: torch.Tensor


def as_token_batch(tokens: Sequence[int] | torch.Tensor) -> tuple[torch.Tensor, bool]:
    """Return a [batch, seq] LongTensor and whether the input was a single sequence."""
    batch = torch.as_tensor(tokens, dtype=torch.long)
    if batch.dim() == 1:
        return batch.unsqueeze(0), True
    if batch.dim() != 2:
        raise ConfigError(f"Token input must be 1-D or 2-D, got {batch.dim()}-D")
    return batch, False


def rms_norm(x: torch.Tensor, scale: torch.Tensor, eps: float) -> torch.Tensor:
    return x * torch.rsqrt((x * x).mean(dim=-1, keepdim=True) + eps) * scale


def _attention(params: ModelParams, block: int, x: torch.Tensor) -> torch.Tensor:
    cfg = params.config
    batch, seq, _ = x.shape
    heads, head_dim = cfg.n_heads, cfg.head_dim

    def split(t: torch.Tensor) -> torch.Tensor:
        return t.reshape(batch, seq, heads, head_dim).transpose(1, 2)

    q = split(x @ params[UnitId(block, UnitKind.ATTN_Q)])
    k = split(x @ params[UnitId(block, UnitKind.ATTN_K)])
    v = split(x @ params[UnitId(block, UnitKind.ATTN_V)])
    scores = (q @ k.transpose(-2, -1)) / math.sqrt(head_dim)
    future = torch.triu(torch.ones(seq, seq, dtype=torch.bool), diagonal=1)
    scores = scores.masked_fill(future, float("-inf"))
    mixed = torch.softmax(scores, dim=-1) @ v
    mixed = mixed.transpose(1, 2).reshape(batch, seq, cfg.d_model)
    return mixed @ params[UnitId(block, UnitKind.ATTN_O)]


def _gated_mlp(params: ModelParams, block: int, x: torch.Tensor) -> torch.Tensor:
    gate = torch.nn.functional.silu(x @ params[UnitId(block, UnitKind.MLP_GATE)])
    up = x @ params[UnitId(block, UnitKind.MLP_UP)]
    return (gate * up) @ params[UnitId(block, UnitKind.MLP_DOWN)]


def forward(params: ModelParams, tokens: Sequence[int] | torch.Tensor) -> ForwardTrace:
    """
    Run the pre-norm causal decoder.

    Args:
        params: Parameter set (may carry autograd history from merge coefficients)
        tokens: One sequence ``[seq]`` or a batch ``[batch, seq]`` of token ids

    Returns:
        ForwardTrace with hidden states ``[.., seq, d_model]`` per block and
        logits ``[.., seq, vocab]``; a single sequence yields unbatched tensors.
    """
    cfg = params.config
    batch, single = as_token_batch(tokens)
    seq = batch.shape[1]
    if seq == 0 or seq > cfg.max_seq_len:
        raise ConfigError(f"Sequence length {seq} outside [1, {cfg.max_seq_len}]")
    if bool((batch < 0).any()) or bool((batch >= cfg.vocab_size).any()):
        raise ConfigError(f"Token id outside vocabulary of size {cfg.vocab_size}")

    x = params[UnitId(None, UnitKind.EMBED)][batch] + params[UnitId(None, UnitKind.POS_EMBED)][:seq]
    hidden_states = []
    for block in range(cfg.n_blocks):
        h = rms_norm(x, params[UnitId(block, UnitKind.NORM1)], cfg.norm_eps)
        x = x + _attention(params, block, h)
        h = rms_norm(x, params[UnitId(block, UnitKind.NORM2)], cfg.norm_eps)
        x = x + _gated_mlp(params, block, h)
        hidden_states.append(x)
    final = rms_norm(x, params[UnitId(None, UnitKind.FINAL_NORM)], cfg.norm_eps)
    logits = final @ params[UnitId(None, UnitKind.HEAD)]

    if single:
        return ForwardTrace([h[0] for h in hidden_states], logits[0])
    return ForwardTrace(hidden_states, logits)
