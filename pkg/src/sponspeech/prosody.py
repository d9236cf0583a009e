"""Fine-grained prosody: mel-side extractor (training) and AR predictor (inference).

The extractor condenses a mel-spectrogram through a frame-level convolution,
two convolution stacks, per-phoneme average pooling over frame boundaries and
a final convolution over the phoneme axis. A multi-head cross-attention
module then fuses the pooled prosody with the behavior embeddings (queries)
to form the P-embedding teacher signal. The predictor regenerates those
vectors autoregressively from text plus behavior conditions alone.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .backbone import ModelConfig, TransformerStack, _init_embedding
from .evaluation import MelParams


def _conv(channels_in, channels_out):
    # Replicate padding keeps constant inputs constant through the stack.
    return nn.Conv1d(channels_in, channels_out, kernel_size=5, padding=2,
                     padding_mode="replicate")


class ProsodyExtractor(nn.Module):
    """Mel frames -> per-phoneme prosody vectors (8 convolutions, kernel 5).

    The frame projection and the output convolution are linear; the two
    middle stacks are residual ReLU refinements, so the mel signal always has
    an identity path and the extractor cannot silently die to a constant
    under joint training.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_model
        self.input_conv = _conv(cfg.mel.n_mels, d)
        self.stack1 = nn.ModuleList(_conv(d, d) for _ in range(3))
        self.stack2 = nn.ModuleList(_conv(d, d) for _ in range(3))
        self.output_conv = _conv(d, d)

    def forward(self, mel, boundaries) -> Tensor:
        """mel: (F, n_mels); boundaries: (S, 2) frame intervals. Returns (S, d)."""
        mel = torch.as_tensor(mel, dtype=self.input_conv.weight.dtype)
        if mel.ndim != 2:
            raise ValueError("expected a (frames, mels) spectrogram")
        bounds = np.asarray(boundaries, dtype=np.int64)
        if bounds.ndim != 2 or bounds.shape[1] != 2:
            raise ValueError("boundaries must be (S, 2)")
        F_total = mel.shape[0]
        for s, e in bounds:
            if not 0 <= s < e <= F_total:
                raise ValueError(f"boundary [{s}, {e}) invalid for {F_total} frames")

        x = self.input_conv(mel.t()[None])  # (1, d, F)
        for conv in self.stack1:
            x = x + torch.relu(conv(x))
        for conv in self.stack2:
            x = x + torch.relu(conv(x))
        frames = x[0].t()  # (F, d)
        pooled = torch.stack([frames[s:e].mean(dim=0) for s, e in bounds])
        return self.output_conv(pooled.t()[None])[0].t()


class ProsodyFuser(nn.Module):
    """Multi-head cross-attention: behavior embeddings attend over prosody.

    Keys and values carry no positional encoding, so the output is invariant
    to permutations of the key/value rows.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_model
        self.n_heads = cfg.n_heads
        self.w_query = nn.Linear(d, d)
        self.w_key = nn.Linear(d, d)
        self.w_value = nn.Linear(d, d)
        self.out = nn.Linear(d, d)

    def forward(self, query: Tensor, keys_values: Tensor, kv_lengths=None) -> Tensor:
        """query: (S, d) or (B, S, d); keys_values: (P, d) or (B, P, d)."""
        squeeze = query.ndim == 2
        if squeeze:
            query = query[None]
            keys_values = keys_values[None]
        if keys_values.shape[1] == 0:
            raise ValueError("prosody key/value sequence is empty")
        B, S, d = query.shape
        P = keys_values.shape[1]
        dh = d // self.n_heads
        q = self.w_query(query).view(B, S, self.n_heads, dh).transpose(1, 2)
        k = self.w_key(keys_values).view(B, P, self.n_heads, dh).transpose(1, 2)
        v = self.w_value(keys_values).view(B, P, self.n_heads, dh).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(dh)
        if kv_lengths is not None:
            valid = torch.arange(P, device=query.device)[None, :] < kv_lengths[:, None]
            scores = scores.masked_fill(~valid[:, None, None, :], float("-inf"))
        heads = torch.softmax(scores, dim=-1) @ v
        fused = self.out(heads.transpose(1, 2).reshape(B, S, d))
        return fused[0] if squeeze else fused


class ProsodyPredictor(nn.Module):
    """Causal transformer regressor over the phoneme axis.

    Teacher forcing feeds the extracted P-embedding of the previous position;
    at inference the model's own outputs are fed back.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d_model
        self.in_proj = nn.Linear(d, d)
        self.pos = nn.Embedding(cfg.max_seq_len, d)
        _init_embedding(self.pos)
        self.decoder = TransformerStack(
            cfg.n_layers_prosody_predictor, d, cfg.n_heads,
            cfg.feedforward_dim, cfg.dropout,
        )
        self.head = nn.Linear(d, d)

    def _run(self, cond: Tensor, prev: Tensor) -> Tensor:
        B, S, _ = cond.shape
        x = cond + self.in_proj(prev) + self.pos.weight[:S]
        keep = torch.tril(torch.ones(S, S, dtype=torch.bool, device=cond.device))
        return self.head(self.decoder(x, keep[None, None]))

    def forward_teacher(self, cond: Tensor, targets: Tensor) -> Tensor:
        """Teacher-forced prediction; cond and targets are (B, S, d) or (S, d)."""
        squeeze = cond.ndim == 2
        if squeeze:
            cond, targets = cond[None], targets[None]
        if cond.shape != targets.shape:
            raise ValueError("condition/target shape mismatch")
        prev = torch.cat([torch.zeros_like(targets[:, :1]), targets[:, :-1]], dim=1)
        out = self._run(cond, prev)
        return out[0] if squeeze else out

    def generate(self, cond: Tensor) -> Tensor:
        """Free-running prediction, differentiable; cond is (B, S, d) or (S, d)."""
        squeeze = cond.ndim == 2
        if squeeze:
            cond = cond[None]
        B, S, d = cond.shape
        outputs = []
        prev = [torch.zeros(B, 1, d, dtype=cond.dtype, device=cond.device)]
        for t in range(S):
            step = self._run(cond[:, : t + 1], torch.cat(prev, dim=1))
            outputs.append(step[:, -1:])
            prev.append(outputs[-1])
        out = torch.cat(outputs, dim=1)
        return out[0] if squeeze else out


def predict_p_embeddings(model, text_emb: Tensor, l_emb: Tensor) -> Tensor:
    """Inference-path P-embeddings from text plus behavior conditions."""
    if text_emb.shape != l_emb.shape:
        raise ValueError("text/L-embedding length mismatch")
    return model.generate(text_emb + l_emb)


def mel_boundaries_from_frames(boundaries, frame_hop: int, mel_params: MelParams,
                               num_mel_frames: int) -> np.ndarray:
    """Map codec-frame phoneme boundaries onto mel-frame intervals.

    Produces nonempty, contiguous intervals clipped to [0, num_mel_frames).
    """
    scale = frame_hop / mel_params.hop_length
    out = []
    prev_end = 0
    n = len(boundaries)
    for i, (s, e) in enumerate(boundaries):
        start = prev_end
        end = int(round(e * scale))
        end = min(max(end, start + 1), num_mel_frames)
        remaining = n - i - 1
        end = min(end, num_mel_frames - remaining)
        if i == n - 1:
            end = num_mel_frames
        out.append((start, end))
        prev_end = end
    arr = np.asarray(out, dtype=np.int64) if out else np.zeros((0, 2), dtype=np.int64)
    if arr.size and (arr[:, 1] <= arr[:, 0]).any():
        raise ValueError("could not fit phoneme boundaries into the mel frames")
    return arr
