"""Pre-training and the three-step fine-tuning recipe.

Step 1 jointly trains the acoustic decoders, the behavior encoder, the label
predictor and the prosody extractor under token CE plus a weighted label CE.
Step 2 distills the (frozen) extractor into the AR prosody predictor with an
MSE loss. Step 3 jointly tunes the predictor and the acoustic decoders at a
lower learning rate with the extractor frozen, feeding the predictor's own
free-running outputs through the condition path.
"""

from __future__ import annotations

import json
import os
from contextlib import contextmanager
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from .annotation import expand_labels, expand_rows, syntactic_features
from .backbone import ModelConfig
from .codec import MockCodec, read_wav
from .errors import ConfigError, ValidationError
from .evaluation import MelParams, mel_spectrogram
from .model import Checkpoint, SponSpeechModel
from .prosody import mel_boundaries_from_frames


@dataclass(frozen=True)
class TrainingConfig:
    lambda_label: float = 0.1
    lr_pretrain: float = 1e-3
    lr_stage1: float = 1e-3
    lr_stage2: float = 1e-3
    lr_stage3: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.95
    batch_size: int = 8
    steps_pretrain: int = 2000
    steps_stage1: int = 2000
    steps_stage2: int = 1000
    steps_stage3: int = 500
    seed: int = 0
    augment_prob: float = 0.5
    nar_stage_mode: str = "random"  # "random" | "all"

    def __post_init__(self):
        if self.lambda_label < 0:
            raise ConfigError("lambda_label must be >= 0")
        if not self.lr_stage3 < self.lr_stage1:
            raise ConfigError("lr_stage3 must be lower than lr_stage1")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0.0 < b < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.nar_stage_mode not in ("random", "all"):
            raise ConfigError(f"unknown nar_stage_mode: {self.nar_stage_mode!r}")


@dataclass
class TrainItem:
    """One utterance, fully featurized for training."""

    id: str
    phonemes: np.ndarray
    labels: np.ndarray  # phoneme-level behavior ids
    feats: np.ndarray  # phoneme-level syntactic features (S, 4)
    tokens: np.ndarray  # codec grid (T, Q)
    mel: np.ndarray  # (F, n_mels)
    mel_bounds: np.ndarray  # (S, 2)
    chars: list
    char_labels: list
    char_counts: list


def prepare_items(utterances, codec: MockCodec, mel_params: MelParams,
                  corpus_dir=None) -> list:
    """Featurize corpus records: encode audio, extract mels, expand labels."""
    items = []
    for utt in utterances:
        utt.validate()
        wave = None
        if utt.audio_path is not None:
            path = utt.audio_path
            if corpus_dir is not None and not os.path.isabs(path):
                path = os.path.join(corpus_dir, path)
            wave = read_wav(path, expected_rate=codec.spec.sample_rate)
        if utt.tokens is not None:
            tokens = utt.tokens
        elif wave is not None:
            tokens = codec.encode(wave).tokens
        else:
            raise ValidationError(f"{utt.id}: record carries neither audio nor tokens")
        if wave is None:
            from .codec import CodecTokenGrid

            wave = codec.decode(CodecTokenGrid(tokens=tokens, spec=codec.spec))
            wave = np.clip(wave, -1.0, 1.0)
        mel = mel_spectrogram(wave, mel_params).astype(np.float32)
        labels = expand_labels(utt.char_labels, utt.char_phoneme_counts)
        feats = expand_rows(
            syntactic_features(utt.chars, utt.char_labels), utt.char_phoneme_counts
        )
        mel_bounds = mel_boundaries_from_frames(
            utt.phoneme_boundaries, codec.spec.frame_hop, mel_params, mel.shape[0]
        )
        items.append(
            TrainItem(
                id=utt.id,
                phonemes=np.asarray(utt.phonemes, dtype=np.int64),
                labels=labels,
                feats=feats.astype(np.float32),
                tokens=np.asarray(tokens, dtype=np.int64),
                mel=mel,
                mel_bounds=mel_bounds,
                chars=list(utt.chars),
                char_labels=list(utt.char_labels),
                char_counts=list(utt.char_phoneme_counts),
            )
        )
    return items


def _augment_pair(a: TrainItem, b: TrainItem) -> TrainItem:
    """Feature-level counterpart of concat_augment for prepared items."""
    chars = a.chars + b.chars
    char_labels = a.char_labels + b.char_labels
    char_counts = a.char_counts + b.char_counts
    feats = expand_rows(syntactic_features(chars, char_labels), char_counts)
    F_a = a.mel.shape[0]
    return TrainItem(
        id=f"{a.id}+{b.id}",
        phonemes=np.concatenate([a.phonemes, b.phonemes]),
        labels=np.concatenate([a.labels, b.labels]),
        feats=feats.astype(np.float32),
        tokens=np.concatenate([a.tokens, b.tokens], axis=0),
        mel=np.concatenate([a.mel, b.mel], axis=0),
        mel_bounds=np.concatenate([a.mel_bounds, b.mel_bounds + F_a], axis=0),
        chars=chars,
        char_labels=char_labels,
        char_counts=char_counts,
    )


@dataclass
class Batch:
    phonemes: Tensor  # (B, S) long
    cond_lens: Tensor  # (B,)
    labels: Tensor  # (B, S) long
    feats: Tensor  # (B, S, 4) float
    tokens: Tensor  # (B, T, Q) long, padded with the codec pad id
    token_lens: Tensor  # (B,)
    mels: list  # per-item (F, n_mels) arrays
    mel_bounds: list  # per-item (S, 2) arrays

    @property
    def cond_mask(self) -> Tensor:
        S = self.phonemes.shape[1]
        return torch.arange(S)[None, :] < self.cond_lens[:, None]

    @property
    def token_mask(self) -> Tensor:
        T = self.tokens.shape[1]
        return torch.arange(T)[None, :] < self.token_lens[:, None]


def collate(items: Sequence[TrainItem], pad_token: int) -> Batch:
    B = len(items)
    S = max(len(it.phonemes) for it in items)
    T = max(it.tokens.shape[0] for it in items)
    Q = items[0].tokens.shape[1]
    phonemes = torch.zeros(B, S, dtype=torch.long)
    labels = torch.zeros(B, S, dtype=torch.long)
    feats = torch.zeros(B, S, 4)
    tokens = torch.full((B, T, Q), pad_token, dtype=torch.long)
    cond_lens = torch.zeros(B, dtype=torch.long)
    token_lens = torch.zeros(B, dtype=torch.long)
    for b, it in enumerate(items):
        s, t = len(it.phonemes), it.tokens.shape[0]
        phonemes[b, :s] = torch.from_numpy(it.phonemes)
        labels[b, :s] = torch.from_numpy(it.labels)
        feats[b, :s] = torch.from_numpy(np.asarray(it.feats, dtype=np.float32))
        tokens[b, :t] = torch.from_numpy(it.tokens)
        cond_lens[b] = s
        token_lens[b] = t
    return Batch(
        phonemes=phonemes, cond_lens=cond_lens, labels=labels, feats=feats,
        tokens=tokens, token_lens=token_lens,
        mels=[it.mel for it in items], mel_bounds=[it.mel_bounds for it in items],
    )


class LossParts(NamedTuple):
    total: Tensor
    token_ce: Tensor
    label_ce: Tensor


def masked_ce(logits: Tensor, targets: Tensor, mask: Optional[Tensor] = None) -> Tensor:
    """Cross entropy averaged over unmasked positions."""
    if logits.shape[:-1] != targets.shape:
        raise ValueError(
            f"logits {tuple(logits.shape)} do not match targets {tuple(targets.shape)}"
        )
    flat = F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), reduction="none"
    )
    if mask is None:
        return flat.mean()
    flat_mask = mask.reshape(-1).to(flat.dtype)
    return (flat * flat_mask).sum() / flat_mask.sum().clamp_min(1.0)


def loss_stage1(c_logits, c_targets, l_logits, l_targets, lambda_label,
                c_mask=None, l_mask=None) -> LossParts:
    """Joint loss: mean token CE plus lambda times mean label CE."""
    token_ce = masked_ce(c_logits, c_targets, c_mask)
    label_ce = masked_ce(l_logits, l_targets, l_mask)
    return LossParts(token_ce + lambda_label * label_ce, token_ce, label_ce)


class MetricsLog:
    """Collects per-step metrics and optionally appends them to a JSONL file."""

    def __init__(self, path=None):
        self.path = path
        self.history = []

    def log(self, step, stage, loss, token_ce=None, label_ce=None, mse=None):
        entry = {
            "step": int(step),
            "stage": stage,
            "loss": float(loss),
            "token_ce": None if token_ce is None else float(token_ce),
            "label_ce": None if label_ce is None else float(label_ce),
            "mse": None if mse is None else float(mse),
        }
        self.history.append(entry)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry) + "\n")


@contextmanager
def _trainable_groups(model: SponSpeechModel, groups):
    """Temporarily restrict requires_grad to the given parameter groups."""
    saved = [(p, p.requires_grad) for p in model.parameters()]
    wanted = set()
    for g in groups:
        wanted.update(id(p) for p in getattr(model, g).parameters())
    for p, _ in saved:
        p.requires_grad_(id(p) in wanted)
    try:
        yield
    finally:
        for p, state in saved:
            p.requires_grad_(state)


def _sample_batch(items, rng: np.random.Generator, cfg: TrainingConfig,
                  augment: bool) -> list:
    picks = [items[int(i)] for i in rng.integers(len(items), size=cfg.batch_size)]
    if not augment or cfg.augment_prob <= 0:
        return picks
    out = []
    for it in picks:
        if rng.random() < cfg.augment_prob:
            partner = items[int(rng.integers(len(items)))]
            out.append(_augment_pair(it, partner))
        else:
            out.append(it)
    return out


def _l_embeddings(model: SponSpeechModel, batch: Batch) -> Tensor:
    return model.behavior_encoder(batch.labels, batch.feats)


def _teacher_p(model: SponSpeechModel, batch: Batch, l_emb: Tensor) -> Tensor:
    """Per-item extractor + fusion, padded back to (B, S, d)."""
    out = torch.zeros_like(l_emb)
    for b in range(len(batch.mels)):
        s = int(batch.cond_lens[b])
        out[b, :s] = model.teacher_p_embeddings(
            batch.mels[b], batch.mel_bounds[b], l_emb[b, :s]
        )
    return out


def _ar_targets(model, batch: Batch):
    B, T, _ = batch.tokens.shape
    targets = torch.zeros(B, T + 1, dtype=torch.long)
    mask = torch.zeros(B, T + 1, dtype=torch.bool)
    eos = model.backbone.eos_id
    for b in range(B):
        t = int(batch.token_lens[b])
        targets[b, :t] = batch.tokens[b, :t, 0]
        targets[b, t] = eos
        mask[b, : t + 1] = True
    return targets, mask


def _nar_stages(model, cfg: TrainingConfig, rng: np.random.Generator):
    Q = model.cfg.codec.num_quantizers
    if Q < 2:
        return []
    if cfg.nar_stage_mode == "all":
        return list(range(2, Q + 1))
    return [int(rng.integers(2, Q + 1))]


def _token_ce(model: SponSpeechModel, cond: Tensor, batch: Batch, stages):
    """AR cross entropy (plus EOS) and the mean NAR stage cross entropy."""
    ar_logits = model.backbone.ar_logits(
        cond, batch.cond_lens, batch.tokens[:, :, 0], batch.token_lens
    )
    ar_targets, ar_mask = _ar_targets(model, batch)
    ar_ce = masked_ce(ar_logits, ar_targets, ar_mask)
    if not stages:
        return ar_ce, None, ar_logits, ar_targets, ar_mask
    nar_terms = []
    for stage in stages:
        logits = model.backbone.nar_logits(
            cond, batch.cond_lens, batch.tokens[:, :, : stage - 1],
            batch.token_lens, stage,
        )
        # padded positions carry the pad id, outside the NAR class range
        targets = batch.tokens[:, :, stage - 1].masked_fill(~batch.token_mask, 0)
        nar_terms.append(masked_ce(logits, targets, batch.token_mask))
    nar_ce = sum(nar_terms) / len(nar_terms)
    return ar_ce, nar_ce, ar_logits, ar_targets, ar_mask


def _adam(cfg: TrainingConfig, params, lr):
    return torch.optim.Adam(params, lr=lr, betas=(cfg.beta1, cfg.beta2))


def pretrain(items, model_cfg: ModelConfig, cfg: TrainingConfig,
             metrics_path=None) -> tuple:
    """Train a fresh backbone on token CE alone; returns (checkpoint, history)."""
    if not items:
        raise ValidationError("cannot pretrain on an empty corpus")
    torch.manual_seed(cfg.seed)
    model = SponSpeechModel(model_cfg)
    rng = np.random.default_rng(cfg.seed)
    opt = _adam(cfg, model.backbone.parameters(), cfg.lr_pretrain)
    log = MetricsLog(metrics_path)
    pad = model.backbone.pad_token_id
    model.train()
    with _trainable_groups(model, ("backbone",)):
        for step in range(cfg.steps_pretrain):
            batch = collate(_sample_batch(items, rng, cfg, False), pad)
            cond = model.backbone.embed_text(batch.phonemes)
            ar_ce, nar_ce, *_ = _token_ce(model, cond, batch, _nar_stages(model, cfg, rng))
            loss = ar_ce if nar_ce is None else ar_ce + nar_ce
            opt.zero_grad()
            loss.backward()
            opt.step()
            log.log(step, "pretrained", loss.item(), token_ce=loss.item())
    model.eval()
    return Checkpoint(model=model, stage="pretrained"), log.history


def finetune_stage1(items, ckpt: Checkpoint, cfg: TrainingConfig,
                    metrics_path=None) -> tuple:
    """Joint token CE + label CE training of everything except the predictor."""
    if not items:
        raise ValidationError("cannot fine-tune on an empty corpus")
    ckpt.require_stage("pretrained", "stage-1 fine-tuning")
    torch.manual_seed(cfg.seed)
    out = ckpt.clone("stage1")
    model = out.model
    rng = np.random.default_rng(cfg.seed)
    groups = ("backbone", "behavior_encoder", "label_predictor",
              "prosody_extractor", "prosody_fuser")
    opt = _adam(cfg, model.group_parameters(groups), cfg.lr_stage1)
    log = MetricsLog(metrics_path)
    pad = model.backbone.pad_token_id
    model.train()
    with _trainable_groups(model, groups):
        for step in range(cfg.steps_stage1):
            batch = collate(_sample_batch(items, rng, cfg, True), pad)
            text = model.backbone.embed_text(batch.phonemes)
            l_emb = _l_embeddings(model, batch)
            p_emb = _teacher_p(model, batch, l_emb)
            cond = text + l_emb + p_emb
            stages = _nar_stages(model, cfg, rng)
            ar_ce, nar_ce, ar_logits, ar_targets, ar_mask = _token_ce(
                model, cond, batch, stages
            )
            label_logits = model.label_predictor(text, batch.cond_lens)
            parts = loss_stage1(
                ar_logits, ar_targets, label_logits, batch.labels,
                cfg.lambda_label, c_mask=ar_mask, l_mask=batch.cond_mask,
            )
            loss = parts.total if nar_ce is None else parts.total + nar_ce
            token_ce = parts.token_ce if nar_ce is None else parts.token_ce + nar_ce
            opt.zero_grad()
            loss.backward()
            opt.step()
            log.log(step, "stage1", loss.item(), token_ce=token_ce.item(),
                    label_ce=parts.label_ce.item())
    model.eval()
    return out, log.history


def finetune_stage2(items, ckpt: Checkpoint, cfg: TrainingConfig,
                    metrics_path=None) -> tuple:
    """Distill the frozen extractor into the AR prosody predictor (MSE)."""
    if not items:
        raise ValidationError("cannot fine-tune on an empty corpus")
    ckpt.require_stage("stage1", "stage-2 fine-tuning")
    torch.manual_seed(cfg.seed)
    out = ckpt.clone("stage2")
    model = out.model
    rng = np.random.default_rng(cfg.seed)
    opt = _adam(cfg, model.prosody_predictor.parameters(), cfg.lr_stage2)
    log = MetricsLog(metrics_path)
    pad = model.backbone.pad_token_id
    model.eval()
    model.prosody_predictor.train()
    with _trainable_groups(model, ("prosody_predictor",)):
        for step in range(cfg.steps_stage2):
            batch = collate(_sample_batch(items, rng, cfg, False), pad)
            with torch.no_grad():
                text = model.backbone.embed_text(batch.phonemes)
                l_emb = _l_embeddings(model, batch)
                targets = _teacher_p(model, batch, l_emb)
            pred = model.prosody_predictor.forward_teacher(text + l_emb, targets)
            err = ((pred - targets) ** 2).mean(dim=-1)
            mask = batch.cond_mask.to(err.dtype)
            mse = (err * mask).sum() / mask.sum().clamp_min(1.0)
            opt.zero_grad()
            mse.backward()
            opt.step()
            log.log(step, "stage2", mse.item(), mse=mse.item())
    model.eval()
    return out, log.history


def finetune_stage3(items, ckpt: Checkpoint, cfg: TrainingConfig,
                    metrics_path=None) -> tuple:
    """Low-LR joint tuning of predictor + acoustic model, extractor frozen."""
    if not items:
        raise ValidationError("cannot fine-tune on an empty corpus")
    ckpt.require_stage("stage2", "stage-3 fine-tuning")
    if not cfg.lr_stage3 < cfg.lr_stage1:
        raise ConfigError("lr_stage3 must be lower than lr_stage1")
    torch.manual_seed(cfg.seed)
    out = ckpt.clone("stage3")
    model = out.model
    rng = np.random.default_rng(cfg.seed)
    groups = ("backbone", "prosody_predictor")
    opt = _adam(cfg, model.group_parameters(groups), cfg.lr_stage3)
    log = MetricsLog(metrics_path)
    pad = model.backbone.pad_token_id
    model.train()
    with _trainable_groups(model, groups):
        for step in range(cfg.steps_stage3):
            batch = collate(_sample_batch(items, rng, cfg, False), pad)
            text = model.backbone.embed_text(batch.phonemes)
            l_emb = _l_embeddings(model, batch)
            p_emb = model.prosody_predictor.generate(text + l_emb)
            cond = text + l_emb + p_emb
            ar_ce, nar_ce, *_ = _token_ce(model, cond, batch, _nar_stages(model, cfg, rng))
            loss = ar_ce if nar_ce is None else ar_ce + nar_ce
            opt.zero_grad()
            loss.backward()
            opt.step()
            log.log(step, "stage3", loss.item(), token_ce=loss.item())
    model.eval()
    return out, log.history


def finetune_all(items, pretrained: Checkpoint, cfg: TrainingConfig,
                 metrics_path=None) -> tuple:
    """Run the three fine-tuning steps back to back."""
    s1, h1 = finetune_stage1(items, pretrained, cfg, metrics_path)
    s2, h2 = finetune_stage2(items, s1, cfg, metrics_path)
    s3, h3 = finetune_stage3(items, s2, cfg, metrics_path)
    return s3, h1 + h2 + h3


# --------------------------------------------------------------------- eval


@torch.no_grad()
def token_accuracy(model: SponSpeechModel, items, conditioned=False) -> dict:
    """Teacher-forced argmax accuracy on the AR layer (incl. EOS) and each NAR stage."""
    model.eval()
    pad = model.backbone.pad_token_id
    Q = model.cfg.codec.num_quantizers
    ar_hit = ar_total = 0
    nar_hit = {q: 0 for q in range(2, Q + 1)}
    nar_total = {q: 0 for q in range(2, Q + 1)}
    for it in items:
        batch = collate([it], pad)
        text = model.backbone.embed_text(batch.phonemes)
        if conditioned:
            l_emb = _l_embeddings(model, batch)
            cond = text + l_emb + _teacher_p(model, batch, l_emb)
        else:
            cond = text
        ar_logits = model.backbone.ar_logits(
            cond, batch.cond_lens, batch.tokens[:, :, 0], batch.token_lens
        )
        targets, mask = _ar_targets(model, batch)
        pred = ar_logits.argmax(dim=-1)
        ar_hit += int((pred[mask] == targets[mask]).sum())
        ar_total += int(mask.sum())
        for q in range(2, Q + 1):
            logits = model.backbone.nar_logits(
                cond, batch.cond_lens, batch.tokens[:, :, : q - 1],
                batch.token_lens, q,
            )
            pred = logits.argmax(dim=-1)
            tmask = batch.token_mask
            nar_hit[q] += int((pred[tmask] == batch.tokens[:, :, q - 1][tmask]).sum())
            nar_total[q] += int(tmask.sum())
    out = {"ar": ar_hit / max(ar_total, 1)}
    for q in range(2, Q + 1):
        out[f"nar{q}"] = nar_hit[q] / max(nar_total[q], 1)
    return out


@torch.no_grad()
def label_accuracy(model: SponSpeechModel, items) -> float:
    """Top-1 accuracy of the label predictor over phoneme positions."""
    model.eval()
    hit = total = 0
    for it in items:
        text = model.backbone.embed_text(torch.from_numpy(it.phonemes))
        pred = model.label_predictor(text).argmax(dim=-1).numpy()
        hit += int((pred == it.labels).sum())
        total += it.labels.size
    return hit / max(total, 1)


@torch.no_grad()
def prosody_mse(model: SponSpeechModel, items) -> float:
    """Teacher-forced MSE between predicted and extracted P-embeddings."""
    model.eval()
    total = count = 0.0
    pad = model.backbone.pad_token_id
    for it in items:
        batch = collate([it], pad)
        text = model.backbone.embed_text(batch.phonemes)
        l_emb = _l_embeddings(model, batch)
        targets = _teacher_p(model, batch, l_emb)
        pred = model.prosody_predictor.forward_teacher(text + l_emb, targets)
        total += float(((pred - targets) ** 2).mean(dim=-1).sum())
        count += it.phonemes.size
    return total / max(count, 1.0)
