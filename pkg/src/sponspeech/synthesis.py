"""End-to-end inference: text plus an acoustic prompt to a waveform.

The pipeline embeds the phonemes, chooses behavior labels (manual if given,
otherwise predicted), builds L-embeddings from labels plus syntactic
features, predicts P-embeddings autoregressively, generates the first
quantizer layer with the causal decoder, fills the remaining layers with the
non-causal decoder and decodes the grid with the codec. Mel-spectrograms are
never consulted here; the prosody extractor is a training-time module only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch

from .annotation import (
    DEFAULT_PUNCTUATION,
    TAXONOMY,
    expand_labels,
    expand_rows,
    syntactic_features,
)
from .backbone import ConditionSeq, SamplingConfig
from .codec import CodecTokenGrid, MockCodec
from .errors import StageError, ValidationError
from .model import Checkpoint


@dataclass
class SynthesisRequest:
    phonemes: list
    chars: list
    char_phoneme_counts: list
    manual_labels: Optional[list] = None  # char-level, total (NONE elsewhere)
    prompt: Optional[np.ndarray] = None  # (Tp, Q) token grid
    sampling: SamplingConfig = field(default_factory=SamplingConfig)

    def validate(self):
        if len(self.chars) != len(self.char_phoneme_counts):
            raise ValidationError("chars and char_phoneme_counts length mismatch")
        if sum(self.char_phoneme_counts) != len(self.phonemes):
            raise ValidationError("char_phoneme_counts do not cover the phonemes")
        if self.manual_labels is not None:
            if len(self.manual_labels) != len(self.chars):
                raise ValidationError("manual labels must cover every character")
            for lab in self.manual_labels:
                if not 0 <= lab < TAXONOMY.num_classes:
                    raise ValidationError(f"manual label {lab} outside 0..19")


def _collapse_to_chars(phoneme_labels: np.ndarray, counts, chars) -> list:
    """Char-level labels from per-phoneme predictions (first phoneme wins).

    Predictions landing on punctuation are dropped: separators carry no
    behavior.
    """
    out = []
    pos = 0
    for c, ch in zip(counts, chars):
        label = int(phoneme_labels[pos])
        out.append(0 if ch in DEFAULT_PUNCTUATION else label)
        pos += c
    return out


def synthesize(req: SynthesisRequest, ckpt: Checkpoint, codec: Optional[MockCodec] = None,
               use_prosody: bool = True):
    """Run the full pipeline; returns (waveform, diagnostics dict).

    With use_prosody=False the P-embeddings are forced to zero, which also
    permits running from a stage-1 or stage-2 checkpoint.
    """
    req.validate()
    if use_prosody:
        ckpt.require_stage("stage3", "prosody-conditioned synthesis")
    elif ckpt.stage == "pretrained":
        raise StageError("synthesis requires at least a stage1 checkpoint")
    model = ckpt.model
    model.eval()
    if codec is None:
        codec = MockCodec(model.cfg.codec)

    with torch.no_grad():
        phonemes = np.asarray(req.phonemes, dtype=np.int64)
        text_emb = model.backbone.embed_text(torch.from_numpy(phonemes))

        if req.manual_labels is not None:
            char_labels = [int(x) for x in req.manual_labels]
        else:
            predicted = model.label_predictor.predict(text_emb).numpy()
            char_labels = _collapse_to_chars(
                predicted, req.char_phoneme_counts, req.chars
            )
        labels_ph = expand_labels(char_labels, req.char_phoneme_counts)
        feats_ph = expand_rows(
            syntactic_features(req.chars, char_labels), req.char_phoneme_counts
        )
        l_emb = model.behavior_encoder(labels_ph, feats_ph)

        if use_prosody:
            p_emb = model.prosody_predictor.generate(text_emb + l_emb)
        else:
            p_emb = torch.zeros_like(text_emb)
        cond_vecs = text_emb + l_emb + p_emb

        sampling = req.sampling
        if sampling.max_len is None:
            sampling = SamplingConfig(
                temperature=sampling.temperature, top_k=sampling.top_k,
                seed=sampling.seed, max_len=max(1, 20 * len(phonemes)),
            )
        prompt = None
        if req.prompt is not None:
            prompt = np.asarray(
                req.prompt.tokens if isinstance(req.prompt, CodecTokenGrid) else req.prompt,
                dtype=np.int64,
            )
        cond = ConditionSeq(cond=cond_vecs, prompt=prompt)
        first = model.backbone.ar_generate(cond, sampling)
        grid = model.backbone.nar_generate(cond, first)
        wave = codec.decode(grid)

    diagnostics = {
        "labels": [int(x) for x in labels_ph],
        "p_norms": [float(x) for x in p_emb.norm(dim=-1)],
        "tokens_len": int(grid.num_frames),
        "seed": int(sampling.seed),
    }
    return wave, diagnostics


def synthesize_baseline(req: SynthesisRequest, ckpt: Checkpoint,
                        codec: Optional[MockCodec] = None):
    """Behavior-conditioned synthesis with zero prosody conditioning."""
    return synthesize(req, ckpt, codec, use_prosody=False)
