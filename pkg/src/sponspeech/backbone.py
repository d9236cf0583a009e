"""Codec-token acoustic language model.

A causal transformer generates the first quantizer layer token by token with
an EOS symbol; a non-causal transformer fills the remaining layers stage by
stage, conditioned on the sum of the embeddings of the already-known layers
plus a stage embedding. Both decoders are conditioned on a per-phoneme
sequence (text embeddings plus whatever additive conditions the caller mixed
in) and, at inference, on an acoustic prompt.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .annotation import AnnotatedUtterance
from .codec import CodecSpec, CodecTokenGrid
from .errors import ValidationError
from .evaluation import MelParams


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 128
    n_heads: int = 4
    n_layers_ar: int = 4
    n_layers_nar: int = 4
    feedforward_dim: int = 512
    dropout: float = 0.1
    text_vocab: int = 256
    max_seq_len: int = 4096
    n_layers_label_predictor: int = 3
    n_layers_prosody_predictor: int = 3
    syntactic_cap: float = 64.0
    prompt_frames: int = 24
    codec: CodecSpec = field(default_factory=CodecSpec)
    mel: MelParams = field(default_factory=MelParams)

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValidationError("d_model must be divisible by n_heads")
        for name in ("d_model", "n_heads", "n_layers_ar", "n_layers_nar",
                     "feedforward_dim", "text_vocab", "max_seq_len"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")


@dataclass(frozen=True)
class SamplingConfig:
    temperature: float = 1.0
    top_k: int = 10
    seed: int = 0
    max_len: Optional[int] = None


@dataclass
class ConditionSeq:
    """Per-phoneme conditioning vectors plus an optional acoustic prompt grid."""

    cond: Tensor  # (S, d_model)
    prompt: Optional[np.ndarray] = None  # (Tp, Q) token grid


class SelfAttention(nn.Module):
    def __init__(self, d_model, n_heads, dropout):
        super().__init__()
        self.n_heads = n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.out = nn.Linear(d_model, d_model)
        self.dropout_p = dropout

    def forward(self, x, keep_mask=None):
        # keep_mask: bool (B, 1, L, L), True = may attend
        B, L, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        shape = (B, L, self.n_heads, d // self.n_heads)
        q = q.view(shape).transpose(1, 2)
        k = k.view(shape).transpose(1, 2)
        v = v.view(shape).transpose(1, 2)
        out = F.scaled_dot_product_attention(
            q, k, v,
            attn_mask=keep_mask,
            dropout_p=self.dropout_p if self.training else 0.0,
        )
        return self.out(out.transpose(1, 2).reshape(B, L, d))


class TransformerLayer(nn.Module):
    """Pre-norm self-attention + feed-forward block."""

    def __init__(self, d_model, n_heads, feedforward_dim, dropout):
        super().__init__()
        self.norm1 = nn.LayerNorm(d_model)
        self.attn = SelfAttention(d_model, n_heads, dropout)
        self.norm2 = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(
            nn.Linear(d_model, feedforward_dim),
            nn.ReLU(),
            nn.Dropout(dropout),
            nn.Linear(feedforward_dim, d_model),
        )
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, keep_mask=None):
        x = x + self.dropout(self.attn(self.norm1(x), keep_mask))
        x = x + self.dropout(self.ff(self.norm2(x)))
        return x


class TransformerStack(nn.Module):
    def __init__(self, n_layers, d_model, n_heads, feedforward_dim, dropout):
        super().__init__()
        self.layers = nn.ModuleList(
            TransformerLayer(d_model, n_heads, feedforward_dim, dropout)
            for _ in range(n_layers)
        )
        self.norm = nn.LayerNorm(d_model)

    def forward(self, x, keep_mask=None):
        for layer in self.layers:
            x = layer(x, keep_mask)
        return self.norm(x)


def causal_keep_mask(length, device=None):
    return torch.tril(torch.ones(length, length, dtype=torch.bool, device=device))


def padding_keep_mask(lengths, max_len, device=None):
    """(B, 1, L, L) mask that only blocks padded keys; padded rows keep col 0."""
    idx = torch.arange(max_len, device=device)
    valid = idx[None, :] < lengths[:, None]  # (B, L)
    keep = valid[:, None, :].expand(-1, max_len, -1).clone()
    keep[~valid] = False
    keep[~valid, 0] = True
    return keep[:, None]


def _init_embedding(emb: nn.Embedding):
    nn.init.normal_(emb.weight, std=0.02)


class AcousticBackbone(nn.Module):
    """Text embedding plus AR and NAR decoders over codec token grids."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        V = cfg.codec.vocab_size
        Q = cfg.codec.num_quantizers

        self.text_embedding = nn.Embedding(cfg.text_vocab, d)
        self.ar_cond_pos = nn.Embedding(cfg.max_seq_len, d)
        self.ar_audio_pos = nn.Embedding(cfg.max_seq_len, d)
        self.ar_audio_embedding = nn.Embedding(V + 1, d)  # id V = padding
        self.ar_decoder = TransformerStack(
            cfg.n_layers_ar, d, cfg.n_heads, cfg.feedforward_dim, cfg.dropout
        )
        self.ar_head = nn.Linear(d, V + 1)  # class V = EOS

        if Q > 1:
            self.nar_cond_pos = nn.Embedding(cfg.max_seq_len, d)
            self.nar_audio_pos = nn.Embedding(cfg.max_seq_len, d)
            self.nar_audio_embeddings = nn.ModuleList(
                nn.Embedding(V + 1, d) for _ in range(Q)
            )
            self.nar_stage_embedding = nn.Embedding(Q - 1, d)
            self.nar_decoder = TransformerStack(
                cfg.n_layers_nar, d, cfg.n_heads, cfg.feedforward_dim, cfg.dropout
            )
            self.nar_heads = nn.ModuleList(nn.Linear(d, V) for _ in range(Q - 1))

        for module in self.modules():
            if isinstance(module, nn.Embedding):
                _init_embedding(module)

    @property
    def eos_id(self) -> int:
        return self.cfg.codec.vocab_size

    @property
    def pad_token_id(self) -> int:
        return self.cfg.codec.vocab_size

    def embed_text(self, phonemes) -> Tensor:
        """Per-phoneme embedding lookup; raises on out-of-vocabulary ids."""
        ids = torch.as_tensor(phonemes, dtype=torch.long)
        if ids.numel() and (ids.min() < 0 or ids.max() >= self.cfg.text_vocab):
            raise ValueError("phoneme id outside the text vocabulary")
        return self.text_embedding(ids)

    def _pack(self, cond, cond_lens, audio, audio_lens, cond_pos, audio_pos):
        """Concatenate [cond_b | audio_b] per item, right-padded to a batch."""
        B = cond.shape[0]
        total = cond_lens + audio_lens
        L = int(total.max().item())
        x = cond.new_zeros(B, L, cond.shape[-1])
        for b in range(B):
            S = int(cond_lens[b])
            T = int(audio_lens[b])
            x[b, :S] = cond[b, :S] + cond_pos.weight[:S]
            if T:
                x[b, S : S + T] = audio[b, :T] + audio_pos.weight[:T]
        return x, total

    def _combined_mask(self, cond_lens, total_lens, L, causal_audio, device):
        """Cond rows see cond only; audio rows see cond plus audio per mode."""
        i = torch.arange(L, device=device)[None, :, None]
        j = torch.arange(L, device=device)[None, None, :]
        S = cond_lens[:, None, None]
        Lb = total_lens[:, None, None]
        valid_j = j < Lb
        cond_rows = i < S
        cond_cols = j < S
        if causal_audio:
            audio_keep = cond_cols | ((j >= S) & (j <= i))
        else:
            audio_keep = cond_cols | (j >= S)
        keep = torch.where(cond_rows, cond_cols, audio_keep) & valid_j
        dead_rows = i >= Lb
        keep = keep & ~dead_rows
        keep = keep | (dead_rows & (j == 0))
        return keep[:, None]  # (B, 1, L, L)

    # ------------------------------------------------------------------ AR

    def ar_logits(self, cond, cond_lens, tokens, token_lens):
        """Teacher-forced AR logits.

        cond: (B, S_max, d); tokens: (B, T_max) first-layer ids. Returns
        (B, T_max + 1, V + 1); row t of item b predicts token t, row T_b
        predicts EOS. Rows beyond T_b are zero.
        """
        B, _, d = cond.shape
        audio = self.ar_audio_embedding(tokens)
        x, total = self._pack(
            cond, cond_lens, audio, token_lens, self.ar_cond_pos, self.ar_audio_pos
        )
        L = x.shape[1]
        if L > self.cfg.max_seq_len:
            raise ValueError(f"sequence length {L} exceeds max_seq_len")
        mask = self._combined_mask(cond_lens, total, L, True, x.device)
        h = self.ar_decoder(x, mask)
        T_max = int(token_lens.max().item())
        out = h.new_zeros(B, T_max + 1, self.cfg.codec.vocab_size + 1)
        for b in range(B):
            S = int(cond_lens[b])
            T = int(token_lens[b])
            out[b, : T + 1] = self.ar_head(h[b, S - 1 : S + T])
        return out

    def ar_forward(self, cond: Tensor, tokens) -> Tensor:
        """Single-sequence teacher-forced logits, shape (len(tokens)+1, V+1)."""
        tokens = torch.as_tensor(tokens, dtype=torch.long)
        cond_lens = torch.tensor([cond.shape[0]])
        token_lens = torch.tensor([tokens.shape[0]])
        return self.ar_logits(
            cond[None], cond_lens, tokens[None], token_lens
        )[0]

    def ar_generate(self, cond: ConditionSeq, sampling: SamplingConfig) -> np.ndarray:
        """Sample first-layer tokens until EOS or the length budget runs out."""
        max_len = sampling.max_len
        if max_len is None or max_len < 1:
            raise ValueError("sampling.max_len must be >= 1")
        prompt = []
        if cond.prompt is not None:
            prompt = [int(t) for t in np.asarray(cond.prompt)[:, 0]]
        budget = self.cfg.max_seq_len - cond.cond.shape[0] - len(prompt) - 1
        max_len = min(max_len, budget)
        gen = torch.Generator().manual_seed(sampling.seed)
        stream = list(prompt)
        out = []
        for _ in range(max_len):
            tokens = torch.tensor(stream, dtype=torch.long)
            logits = self.ar_forward(cond.cond, tokens)[-1]
            tok = _sample_token(logits, sampling.temperature, sampling.top_k, gen)
            if tok == self.eos_id:
                break
            stream.append(tok)
            out.append(tok)
        return np.asarray(out, dtype=np.int64)

    # ----------------------------------------------------------------- NAR

    def _nar_prefix_embedding(self, grid_prefix: Tensor, layer_order) -> Tensor:
        """Sum per-layer embeddings in canonical (ascending layer) order."""
        n = grid_prefix.shape[-1]
        if layer_order is None:
            layer_order = tuple(range(n))
        if sorted(layer_order) != list(range(n)):
            raise ValueError(f"layer_order must be a permutation of 0..{n - 1}")
        column_of = {layer: i for i, layer in enumerate(layer_order)}
        emb = None
        for layer in range(n):
            e = self.nar_audio_embeddings[layer](grid_prefix[..., column_of[layer]])
            emb = e if emb is None else emb + e
        return emb

    def _prompt_embedding(self, prompt) -> Tensor:
        grid = torch.as_tensor(np.asarray(prompt), dtype=torch.long)
        emb = None
        for layer in range(grid.shape[-1]):
            e = self.nar_audio_embeddings[layer](grid[..., layer])
            emb = e if emb is None else emb + e
        return emb

    def nar_logits(self, cond, cond_lens, grid_prefix, token_lens, stage,
                   prompt_emb=None, prompt_lens=None, layer_order=None):
        """Batched stage-q logits over the non-prompt frames, shape (B, T_max, V)."""
        Q = self.cfg.codec.num_quantizers
        if not 2 <= stage <= Q:
            raise ValueError(f"stage must be in 2..{Q}, got {stage}")
        if grid_prefix.shape[-1] != stage - 1:
            raise ValueError(
                f"grid_prefix has {grid_prefix.shape[-1]} layers, stage {stage} "
                f"needs {stage - 1}"
            )
        B = cond.shape[0]
        target = self._nar_prefix_embedding(grid_prefix, layer_order)
        if prompt_emb is not None:
            T_in = int((prompt_lens + token_lens).max().item())
            audio = target.new_zeros(B, T_in, target.shape[-1])
            for b in range(B):
                P = int(prompt_lens[b])
                T = int(token_lens[b])
                audio[b, :P] = prompt_emb[b, :P]
                audio[b, P : P + T] = target[b, :T]
            audio_lens = prompt_lens + token_lens
        else:
            audio = target
            audio_lens = token_lens
            prompt_lens = torch.zeros_like(token_lens)
        audio = audio + self.nar_stage_embedding.weight[stage - 2]
        x, total = self._pack(
            cond, cond_lens, audio, audio_lens, self.nar_cond_pos, self.nar_audio_pos
        )
        L = x.shape[1]
        if L > self.cfg.max_seq_len:
            raise ValueError(f"sequence length {L} exceeds max_seq_len")
        mask = self._combined_mask(cond_lens, total, L, False, x.device)
        h = self.nar_decoder(x, mask)
        T_max = int(token_lens.max().item())
        out = h.new_zeros(B, T_max, self.cfg.codec.vocab_size)
        for b in range(B):
            start = int(cond_lens[b] + prompt_lens[b])
            T = int(token_lens[b])
            out[b, :T] = self.nar_heads[stage - 2](h[b, start : start + T])
        return out

    def nar_forward(self, cond: ConditionSeq, grid_prefix, stage: int,
                    layer_order=None) -> Tensor:
        """Single-sequence stage-q logits, shape (T, V)."""
        grid_prefix = torch.as_tensor(np.asarray(grid_prefix), dtype=torch.long)
        if grid_prefix.ndim != 2:
            raise ValueError("grid_prefix must be (T, stage-1)")
        prompt_emb = prompt_lens = None
        if cond.prompt is not None:
            prompt_emb = self._prompt_embedding(cond.prompt)[None]
            prompt_lens = torch.tensor([prompt_emb.shape[1]])
        return self.nar_logits(
            cond.cond[None],
            torch.tensor([cond.cond.shape[0]]),
            grid_prefix[None],
            torch.tensor([grid_prefix.shape[0]]),
            stage,
            prompt_emb=prompt_emb,
            prompt_lens=prompt_lens,
            layer_order=layer_order,
        )[0]

    def nar_generate(self, cond: ConditionSeq, first_layer) -> CodecTokenGrid:
        """Fill layers 2..Q greedily, stage by stage."""
        spec = self.cfg.codec
        first = np.asarray(first_layer, dtype=np.int64)
        grid = np.zeros((first.shape[0], spec.num_quantizers), dtype=np.int64)
        grid[:, 0] = first
        for stage in range(2, spec.num_quantizers + 1):
            logits = self.nar_forward(cond, grid[:, : stage - 1], stage)
            grid[:, stage - 1] = logits.argmax(dim=-1).numpy()
        return CodecTokenGrid(tokens=grid, spec=spec)


def _sample_token(logits: Tensor, temperature: float, top_k: int,
                  generator: torch.Generator) -> int:
    logits = logits.detach().clone()
    if top_k and top_k > 0:
        k = min(top_k, logits.numel())
        threshold = torch.topk(logits, k).values[-1]
        logits[logits < threshold] = float("-inf")
    if temperature <= 0.0:
        return int(logits.argmax())
    probs = torch.softmax(logits / temperature, dim=-1)
    return int(torch.multinomial(probs, 1, generator=generator))


def concat_augment(a: AnnotatedUtterance, b: AnnotatedUtterance) -> AnnotatedUtterance:
    """Concatenate two annotated utterances (text, labels, tokens, boundaries).

    Both must carry token grids of the same width (or both carry none). The
    second utterance's frame boundaries are shifted by the first's frame
    count. Concatenating with an empty utterance is the identity.
    """
    if (a.tokens is None) != (b.tokens is None):
        raise ValueError("cannot concatenate a tokenized and a raw-audio utterance")
    if a.tokens is not None and a.tokens.shape[1] != b.tokens.shape[1]:
        raise ValueError(
            f"quantizer mismatch: {a.tokens.shape[1]} vs {b.tokens.shape[1]}"
        )
    T_a = a.num_frames
    if T_a is None:
        raise ValueError("first utterance has unknown frame count")
    if not b.chars:
        out_id, audio_path = a.id, a.audio_path
    elif not a.chars:
        out_id, audio_path = b.id, b.audio_path
    else:
        out_id, audio_path = f"{a.id}+{b.id}", None
    tokens = None
    if a.tokens is not None:
        tokens = np.concatenate([a.tokens, b.tokens], axis=0)
    out = AnnotatedUtterance(
        id=out_id,
        chars=list(a.chars) + list(b.chars),
        char_labels=list(a.char_labels) + list(b.char_labels),
        phonemes=list(a.phonemes) + list(b.phonemes),
        char_phoneme_counts=list(a.char_phoneme_counts) + list(b.char_phoneme_counts),
        phoneme_boundaries=list(a.phoneme_boundaries)
        + [(s + T_a, e + T_a) for s, e in b.phoneme_boundaries],
        audio_path=audio_path,
        tokens=tokens,
    )
    out.validate()
    return out
