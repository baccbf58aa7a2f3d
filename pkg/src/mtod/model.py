"""Decoder-only causal transformer with a scene-masked LM objective.

Pre-norm GPT-style blocks, learned positional embeddings, untied output
projection, trained from scratch. The loss skips every target position inside
the scene prefix (and padding) by boolean indexing, so masked positions get
exactly zero gradient. Generation is greedy (top-k=1, ties to the lowest id)
through a KV-cache session whose generated tokens become part of the left
context, which also lets a caller continue generation across several stop
tokens without re-encoding the prompt.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .serialize import TrainingSequence


class ModelError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_layers: int = 2
    n_heads: int = 4
    d_model: int = 128
    d_ff: int = 512
    max_positions: int = 512
    dropout_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ModelError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        for name in ("vocab_size", "n_layers", "n_heads", "d_model", "d_ff", "max_positions"):
            if getattr(self, name) < 1:
                raise ModelError(f"{name} must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ModelError("dropout_rate must be in [0, 1)")


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-3
    epsilon: float = 1e-6
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    batch_size: int = 32
    epochs: int = 20
    grad_clip: float = 1.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ModelError("learning_rate must be > 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ModelError("batch_size must be >= 1 and epochs >= 0")


class _SelfAttention(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.n_heads = cfg.n_heads
        self.head_dim = cfg.d_model // cfg.n_heads
        self.qkv = nn.Linear(cfg.d_model, 3 * cfg.d_model)
        self.proj = nn.Linear(cfg.d_model, cfg.d_model)
        self.attn_drop = nn.Dropout(cfg.dropout_rate)
        self.resid_drop = nn.Dropout(cfg.dropout_rate)

    def forward(self, x: torch.Tensor, cache: dict | None = None) -> torch.Tensor:
        B, T, C = x.shape
        q, k, v = self.qkv(x).split(C, dim=2)
        q = q.view(B, T, self.n_heads, self.head_dim).transpose(1, 2)
        k = k.view(B, T, self.n_heads, self.head_dim).transpose(1, 2)
        v = v.view(B, T, self.n_heads, self.head_dim).transpose(1, 2)

        offset = 0
        if cache is not None:
            if cache.get("k") is not None:
                offset = cache["k"].size(2)
                k = torch.cat((cache["k"], k), dim=2)
                v = torch.cat((cache["v"], v), dim=2)
            cache["k"], cache["v"] = k, v

        att = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        q_pos = torch.arange(offset, offset + T).unsqueeze(1)
        k_pos = torch.arange(k.size(2)).unsqueeze(0)
        att = att.masked_fill(k_pos > q_pos, float("-inf"))
        att = self.attn_drop(F.softmax(att, dim=-1))
        y = (att @ v).transpose(1, 2).contiguous().view(B, T, C)
        return self.resid_drop(self.proj(y))


class _Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn = _SelfAttention(cfg)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.mlp = nn.Sequential(
            nn.Linear(cfg.d_model, cfg.d_ff),
            nn.GELU(),
            nn.Linear(cfg.d_ff, cfg.d_model),
            nn.Dropout(cfg.dropout_rate),
        )

    def forward(self, x: torch.Tensor, cache: dict | None = None) -> torch.Tensor:
        x = x + self.attn(self.ln1(x), cache)
        return x + self.mlp(self.ln2(x))


class TransformerLM(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.wte = nn.Embedding(config.vocab_size, config.d_model)
        self.wpe = nn.Embedding(config.max_positions, config.d_model)
        self.drop = nn.Dropout(config.dropout_rate)
        self.blocks = nn.ModuleList(_Block(config) for _ in range(config.n_layers))
        self.ln_f = nn.LayerNorm(config.d_model)
        self.head = nn.Linear(config.d_model, config.vocab_size, bias=False)

    def embed(self, ids: torch.Tensor, offset: int = 0) -> torch.Tensor:
        """Summed token + positional embeddings (the salience input layer)."""
        T = ids.size(-1)
        if offset + T > self.config.max_positions:
            raise ModelError(f"sequence length {offset + T} exceeds "
                             f"max_positions={self.config.max_positions}")
        pos = torch.arange(offset, offset + T, device=ids.device)
        return self.wte(ids) + self.wpe(pos)

    def trunk(self, x: torch.Tensor, caches: list | None = None) -> torch.Tensor:
        x = self.drop(x)
        for i, block in enumerate(self.blocks):
            x = block(x, caches[i] if caches is not None else None)
        return self.head(self.ln_f(x))

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        squeezed = ids.dim() == 1
        if squeezed:
            ids = ids.unsqueeze(0)
        logits = self.trunk(self.embed(ids))
        return logits.squeeze(0) if squeezed else logits

    def forward_embedded(self, x: torch.Tensor) -> torch.Tensor:
        """Logits from already-summed embeddings [B, T, d_model]."""
        if x.size(-2) > self.config.max_positions:
            raise ModelError("sequence exceeds max_positions")
        return self.trunk(x)


def build_model(config: ModelConfig) -> TransformerLM:
    """Seeded init: N(0, 0.02) weights, zero biases, default LayerNorm."""
    model = TransformerLM(config)
    gen = torch.Generator().manual_seed(config.seed)
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, nn.Linear):
                module.weight.normal_(0.0, 0.02, generator=gen)
                if module.bias is not None:
                    module.bias.zero_()
            elif isinstance(module, nn.Embedding):
                module.weight.normal_(0.0, 0.02, generator=gen)
    return model


def collate(sequences: Sequence[TrainingSequence], pad_id: int):
    T = max(s.total_len for s in sequences)
    ids = torch.full((len(sequences), T), pad_id, dtype=torch.long)
    for row, seq in enumerate(sequences):
        ids[row, :seq.total_len] = torch.tensor(seq.token_ids, dtype=torch.long)
    prefix = torch.tensor([s.scene_prefix_len for s in sequences], dtype=torch.long)
    return ids, prefix


def masked_nll(logits: torch.Tensor, ids: torch.Tensor, scene_prefix_lens: torch.Tensor,
               pad_id: int):
    """(mean, sum, count) of NLL over targets at positions >= scene_prefix_len.

    Masked positions are dropped by indexing before cross-entropy, so their
    logits receive exactly zero gradient.
    """
    T = ids.size(1)
    targets = ids[:, 1:]
    positions = torch.arange(1, T, device=ids.device)
    mask = (positions.unsqueeze(0) >= scene_prefix_lens.unsqueeze(1)) & (targets != pad_id)
    count = int(mask.sum())
    if count == 0:
        raise ModelError("no unmasked target positions in batch")
    total = F.cross_entropy(logits[:, :-1, :][mask], targets[mask], reduction="sum")
    return total / count, total, count


def batch_loss(model: TransformerLM, sequences: Sequence[TrainingSequence], pad_id: int):
    ids, prefix = collate(sequences, pad_id)
    return masked_nll(model(ids), ids, prefix, pad_id)


def _length_batches(sequences: Sequence[TrainingSequence], batch_size: int) -> list[list[int]]:
    order = sorted(range(len(sequences)), key=lambda i: sequences[i].total_len)
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


def train(sequences: Sequence[TrainingSequence], config: ModelConfig,
          opt_config: OptimizerConfig, pad_id: int,
          progress=None) -> tuple[TransformerLM, list[dict]]:
    """Returns (model in eval mode, per-epoch log of mean/sum loss).

    Batches are length-bucketed to limit padding; the batch order is shuffled
    each epoch from the model seed, so runs are reproducible bit-for-bit on a
    fixed platform.
    """
    torch.manual_seed(config.seed)
    model = build_model(config)
    optimizer = torch.optim.AdamW(
        model.parameters(), lr=opt_config.learning_rate,
        betas=(opt_config.beta1, opt_config.beta2),
        eps=opt_config.epsilon, weight_decay=opt_config.weight_decay)
    shuffle_gen = torch.Generator().manual_seed(config.seed + 1)
    batches = _length_batches(sequences, opt_config.batch_size)

    history: list[dict] = []
    model.train()
    for epoch in range(1, opt_config.epochs + 1):
        epoch_sum, epoch_targets = 0.0, 0
        for b in torch.randperm(len(batches), generator=shuffle_gen).tolist():
            batch = [sequences[i] for i in batches[b]]
            ids, prefix = collate(batch, pad_id)
            mean, total, count = masked_nll(model(ids), ids, prefix, pad_id)
            if not torch.isfinite(mean):
                raise ModelError(f"training diverged: non-finite loss at epoch {epoch}")
            optimizer.zero_grad()
            mean.backward()
            nn.utils.clip_grad_norm_(model.parameters(), opt_config.grad_clip)
            optimizer.step()
            epoch_sum += float(total.detach())
            epoch_targets += count
        entry = {"epoch": epoch, "mean_loss": epoch_sum / max(epoch_targets, 1),
                 "sum_loss": epoch_sum, "n_targets": epoch_targets}
        history.append(entry)
        if progress is not None:
            progress(entry)
    model.eval()
    return model, history


@torch.no_grad()
def evaluate_loss(model: TransformerLM, sequences: Sequence[TrainingSequence],
                  pad_id: int, batch_size: int = 64) -> dict:
    was_training = model.training
    model.eval()
    total, count = 0.0, 0
    for idxs in _length_batches(sequences, batch_size):
        batch = [sequences[i] for i in idxs]
        ids, prefix = collate(batch, pad_id)
        _, batch_total, batch_count = masked_nll(model(ids), ids, prefix, pad_id)
        total += float(batch_total)
        count += batch_count
    if was_training:
        model.train()
    return {"mean_loss": total / max(count, 1), "sum_loss": total, "n_targets": count}


def _argmax_lowest(logits: torch.Tensor) -> int:
    ties = (logits == logits.max()).nonzero(as_tuple=False)
    if ties.numel():
        return int(ties[0, 0])
    return int(torch.argmax(logits))  # non-finite rows: torch's choice


class GenerationSession:
    """Greedy decoding against a KV cache.

    ``feed`` extends the left context (prompt or previously generated text);
    ``generate`` appends argmax tokens one at a time, each becoming context
    for the next step. A single session can alternate feed/generate to build
    up belief, action, and response from one prompt pass.
    """

    def __init__(self, model: TransformerLM):
        self.model = model
        self.caches = [{} for _ in model.blocks]
        self.length = 0
        self.last_logits: torch.Tensor | None = None

    @property
    def remaining(self) -> int:
        return self.model.config.max_positions - self.length

    @torch.no_grad()
    def feed(self, ids: Sequence[int]) -> None:
        if not ids:
            return
        if len(ids) > self.remaining:
            raise ModelError(f"context window exhausted: {self.length} + {len(ids)} "
                             f"> {self.model.config.max_positions}")
        tensor = torch.tensor([list(ids)], dtype=torch.long)
        x = self.model.embed(tensor, offset=self.length)
        logits = self.model.trunk(x, self.caches)
        self.length += len(ids)
        self.last_logits = logits[0, -1]

    def generate(self, stop_id: int, max_new: int) -> list[int]:
        """Greedy tokens up to and including stop_id (or until max_new/window)."""
        if self.last_logits is None:
            raise ModelError("generate called before any feed")
        out: list[int] = []
        while len(out) < max_new and self.remaining > 0:
            nxt = _argmax_lowest(self.last_logits)
            out.append(nxt)
            self.feed([nxt])
            if nxt == stop_id:
                break
        return out


def generate_greedy(model: TransformerLM, prompt: Sequence[int], stop_id: int,
                    max_new: int) -> list[int]:
    if not prompt:
        raise ModelError("prompt must be non-empty")
    was_training = model.training
    model.eval()
    try:
        session = GenerationSession(model)
        session.feed(prompt)
        return session.generate(stop_id, max_new)
    finally:
        if was_training:
            model.train()
