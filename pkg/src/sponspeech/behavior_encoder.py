"""Syntactic-aware behavior embeddings and the non-autoregressive label predictor."""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .annotation import TAXONOMY
from .backbone import ModelConfig, TransformerStack, _init_embedding, padding_keep_mask


class BehaviorEncoder(nn.Module):
    """Label embedding plus a two-layer ReLU encoder of syntactic positions.

    The syntactic features are scaled by a fixed cap before the linear layers
    so that large position counts stay in a tame range.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cap = cfg.syntactic_cap
        self.label_embedding = nn.Embedding(TAXONOMY.num_classes, cfg.d_model)
        _init_embedding(self.label_embedding)
        self.syntactic_encoder = nn.Sequential(
            nn.Linear(4, cfg.d_model),
            nn.ReLU(),
            nn.Linear(cfg.d_model, cfg.d_model),
        )

    def label_embed(self, labels) -> Tensor:
        ids = torch.as_tensor(labels, dtype=torch.long)
        if ids.numel() and (ids.min() < 0 or ids.max() >= TAXONOMY.num_classes):
            raise ValueError("behavior id outside 0..19")
        return self.label_embedding(ids)

    def encode_syntactic(self, feats) -> Tensor:
        dtype = self.syntactic_encoder[0].weight.dtype
        feats = torch.as_tensor(feats, dtype=dtype)
        if feats.shape[-1] != 4:
            raise ValueError(f"syntactic features must have width 4, got {feats.shape[-1]}")
        return self.syntactic_encoder(feats / self.cap)

    def forward(self, labels, feats) -> Tensor:
        """L-embeddings: label embedding + encoded syntactic features."""
        labels = torch.as_tensor(labels, dtype=torch.long)
        feats = torch.as_tensor(feats, dtype=self.syntactic_encoder[0].weight.dtype)
        if labels.shape != feats.shape[:-1]:
            raise ValueError(
                f"label/feature length mismatch: {tuple(labels.shape)} vs "
                f"{tuple(feats.shape[:-1])}"
            )
        return self.label_embed(labels) + self.encode_syntactic(feats)


class LabelPredictor(nn.Module):
    """Per-position behavior classifier over text embeddings, full attention."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.pos = nn.Embedding(cfg.max_seq_len, cfg.d_model)
        _init_embedding(self.pos)
        self.encoder = TransformerStack(
            cfg.n_layers_label_predictor, cfg.d_model, cfg.n_heads,
            cfg.feedforward_dim, cfg.dropout,
        )
        self.head = nn.Linear(cfg.d_model, TAXONOMY.num_classes)

    def forward(self, text_emb: Tensor, lengths=None) -> Tensor:
        """Logits over the 20 label classes, one row per phoneme position."""
        squeeze = text_emb.ndim == 2
        if squeeze:
            text_emb = text_emb[None]
        B, S, _ = text_emb.shape
        x = text_emb + self.pos.weight[:S]
        mask = None
        if lengths is not None:
            mask = padding_keep_mask(lengths, S, device=text_emb.device)
        logits = self.head(self.encoder(x, mask))
        return logits[0] if squeeze else logits

    def predict(self, text_emb: Tensor) -> Tensor:
        """Argmax labels for a single sequence."""
        with torch.no_grad():
            return self.forward(text_emb).argmax(dim=-1)
