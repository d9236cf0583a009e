import dataclasses
import json
import math

import numpy as np
import pytest
import torch

from sponspeech.codec import MockCodec
from sponspeech.datagen import GenSpec, generate
from sponspeech.errors import ConfigError, StageError, ValidationError
from sponspeech.model import Checkpoint, SponSpeechModel
from sponspeech.training import (
    TrainingConfig,
    finetune_stage1,
    finetune_stage2,
    finetune_stage3,
    loss_stage1,
    masked_ce,
    prepare_items,
    pretrain,
    prosody_mse,
)

from conftest import tiny_model_config

TINY_GEN = GenSpec(
    seed=0, num_utterances=10, num_chars=8, label_rate=0.5, min_chars=2,
    max_chars=4, base_frames=3, sample_rate=800, frame_hop=16,
)

FAST = TrainingConfig(
    batch_size=2, steps_pretrain=40, steps_stage1=40, steps_stage2=40,
    steps_stage3=20, seed=0,
)


@pytest.fixture(scope="module")
def items(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    records = generate(TINY_GEN, out)
    codec = MockCodec(tiny_model_config().codec)
    return prepare_items(records, codec, tiny_model_config().mel, corpus_dir=out)


@pytest.fixture(scope="module")
def pretrained(items):
    ckpt, history = pretrain(items, tiny_model_config(), FAST)
    return ckpt, history


# ------------------------------------------------------------- loss algebra


def test_loss_uniform_closed_form():
    c_logits = torch.zeros(6, 4)
    l_logits = torch.zeros(6, 2)
    c_gt = torch.randint(0, 4, (6,))
    l_gt = torch.randint(0, 2, (6,))
    parts = loss_stage1(c_logits, c_gt, l_logits, l_gt, 0.1)
    expected = math.log(4) + 0.1 * math.log(2)
    assert abs(float(parts.total) - expected) < 1e-6
    assert abs(expected - 1.4556090791) < 1e-6


def test_loss_lambda_zero_is_token_ce():
    g = torch.Generator().manual_seed(0)
    c_logits = torch.randn(5, 7, generator=g)
    l_logits = torch.randn(5, 20, generator=g)
    c_gt = torch.randint(0, 7, (5,), generator=g)
    l_gt = torch.randint(0, 20, (5,), generator=g)
    parts = loss_stage1(c_logits, c_gt, l_logits, l_gt, 0.0)
    assert float(parts.total) == float(parts.token_ce)


def test_loss_one_hot_tends_to_zero():
    targets = torch.tensor([2, 0, 1])
    logits = torch.full((3, 3), -1e4)
    for i, t in enumerate(targets):
        logits[i, t] = 1e4
    parts = loss_stage1(logits, targets, logits, targets, 0.1)
    assert float(parts.total) < 1e-6


def test_loss_additivity_exact():
    g = torch.Generator().manual_seed(1)
    for _ in range(20):
        c_logits = torch.randn(8, 11, generator=g)
        l_logits = torch.randn(8, 20, generator=g)
        c_gt = torch.randint(0, 11, (8,), generator=g)
        l_gt = torch.randint(0, 20, (8,), generator=g)
        lam = float(torch.rand(1, generator=g))
        with_label = loss_stage1(c_logits, c_gt, l_logits, l_gt, lam)
        without = loss_stage1(c_logits, c_gt, l_logits, l_gt, 0.0)
        recomposed = float(without.total) + lam * float(with_label.label_ce)
        assert abs(float(with_label.total) - recomposed) < 1e-6


def test_loss_shape_mismatch():
    with pytest.raises(ValueError, match="match"):
        masked_ce(torch.zeros(3, 4), torch.zeros(4, dtype=torch.long))


def test_masked_ce_ignores_masked_positions():
    logits = torch.randn(2, 3, 5)
    targets = torch.randint(0, 5, (2, 3))
    mask = torch.tensor([[True, True, False], [True, False, False]])
    got = masked_ce(logits, targets, mask)
    manual = torch.nn.functional.cross_entropy(
        torch.stack([logits[0, 0], logits[0, 1], logits[1, 0]]),
        torch.stack([targets[0, 0], targets[0, 1], targets[1, 0]]),
    )
    assert torch.allclose(got, manual)


# ------------------------------------------------------------------ config


def test_training_config_validation():
    with pytest.raises(ConfigError):
        TrainingConfig(lambda_label=-0.5)
    with pytest.raises(ConfigError):
        TrainingConfig(lr_stage3=1e-3, lr_stage1=1e-3)
    with pytest.raises(ConfigError):
        TrainingConfig(beta1=1.0)
    with pytest.raises(ConfigError):
        TrainingConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainingConfig(nar_stage_mode="sideways")


# ---------------------------------------------------------------- pretrain


def test_pretrain_rejects_empty_corpus():
    with pytest.raises(ValidationError, match="empty"):
        pretrain([], tiny_model_config(), FAST)


def test_pretrain_loss_decreases(pretrained):
    _, history = pretrained
    first = np.mean([h["loss"] for h in history[:5]])
    last = np.mean([h["loss"] for h in history[-5:]])
    assert last < first


def test_pretrain_checkpoint_round_trip(tmp_path, pretrained, items):
    ckpt, _ = pretrained
    path = tmp_path / "ckpt.pt"
    ckpt.save(path)
    loaded = Checkpoint.load(path)
    assert loaded.stage == "pretrained"
    for (na, pa), (nb, pb) in zip(
        sorted(ckpt.model.state_dict().items()),
        sorted(loaded.model.state_dict().items()),
    ):
        assert na == nb
        assert torch.equal(pa, pb)


def test_pretrain_deterministic_across_runs(items):
    cfg = dataclasses.replace(FAST, steps_pretrain=10)
    _, h1 = pretrain(items, tiny_model_config(), cfg)
    _, h2 = pretrain(items, tiny_model_config(), cfg)
    assert h1[-1]["loss"] == h2[-1]["loss"]


def test_metrics_jsonl_schema(items, tmp_path):
    cfg = dataclasses.replace(FAST, steps_pretrain=3)
    path = tmp_path / "metrics.jsonl"
    pretrain(items, tiny_model_config(), cfg, metrics_path=path)
    lines = [json.loads(x) for x in path.read_text().splitlines()]
    assert len(lines) == 3
    for entry in lines:
        assert set(entry) == {"step", "stage", "loss", "token_ce", "label_ce", "mse"}
        assert entry["stage"] == "pretrained"
        assert entry["mse"] is None


# ------------------------------------------------------------ stage gating


def test_stage_gating_rejects_wrong_predecessors(items, pretrained):
    ckpt, _ = pretrained
    with pytest.raises(StageError):
        finetune_stage2(items, ckpt, FAST)
    with pytest.raises(StageError):
        finetune_stage3(items, ckpt, FAST)
    s1, _ = finetune_stage1(items, ckpt, dataclasses.replace(FAST, steps_stage1=2))
    with pytest.raises(StageError):
        finetune_stage1(items, s1, FAST)
    with pytest.raises(StageError):
        finetune_stage3(items, s1, FAST)


def test_stage3_lr_guard(items, pretrained):
    ckpt, _ = pretrained
    fast = dataclasses.replace(FAST, steps_stage1=2, steps_stage2=2)
    s1, _ = finetune_stage1(items, ckpt, fast)
    s2, _ = finetune_stage2(items, s1, fast)
    bad = dataclasses.replace(fast)
    object.__setattr__(bad, "lr_stage3", bad.lr_stage1)  # bypass ctor validation
    with pytest.raises(ConfigError, match="lr_stage3"):
        finetune_stage3(items, s2, bad)


# -------------------------------------------------------- freeze contracts


def test_stage1_trains_all_but_predictor_and_codec(items, pretrained):
    ckpt, _ = pretrained
    codec = MockCodec(ckpt.model.cfg.codec)
    codec_before = codec.fingerprint()
    before = ckpt.model.parameter_fingerprints()
    s1, history = finetune_stage1(
        items, ckpt, dataclasses.replace(FAST, steps_stage1=10)
    )
    after = s1.model.parameter_fingerprints()
    assert after["prosody_predictor"] == before["prosody_predictor"]
    for group in ("backbone", "behavior_encoder", "label_predictor",
                  "prosody_extractor", "prosody_fuser"):
        assert after[group] != before[group]
    assert MockCodec(s1.model.cfg.codec).fingerprint() == codec_before
    # the source checkpoint itself is untouched
    assert ckpt.model.parameter_fingerprints() == before
    assert history[0]["label_ce"] is not None


def test_stage2_touches_only_predictor(items, pretrained):
    ckpt, _ = pretrained
    s1, _ = finetune_stage1(items, ckpt, dataclasses.replace(FAST, steps_stage1=5))
    before = s1.model.parameter_fingerprints()
    s2, history = finetune_stage2(
        items, s1, dataclasses.replace(FAST, steps_stage2=10)
    )
    after = s2.model.parameter_fingerprints()
    for group in before:
        if group == "prosody_predictor":
            assert after[group] != before[group]
        else:
            assert after[group] == before[group]
    assert history[0]["mse"] is not None


def test_stage2_mse_decreases_monotonically(items, pretrained):
    ckpt, _ = pretrained
    s1, _ = finetune_stage1(items, ckpt, dataclasses.replace(FAST, steps_stage1=5))
    _, history = finetune_stage2(items, s1, dataclasses.replace(FAST, steps_stage2=80))
    mse = np.array([h["mse"] for h in history])
    window = 10
    smoothed = np.convolve(mse, np.ones(window) / window, mode="valid")
    # monotone trend on the smoothed loss over the first K steps
    checkpoints = smoothed[[0, 17, 35, 52, 70]]
    assert (np.diff(checkpoints) < 0).all(), checkpoints


def test_stage2_zero_targets_shrink_outputs(items, pretrained):
    ckpt, _ = pretrained
    s1, _ = finetune_stage1(items, ckpt, dataclasses.replace(FAST, steps_stage1=5))

    def zero_teacher(mel, mel_bounds, l_emb):
        return torch.zeros_like(l_emb)

    s1.model.teacher_p_embeddings = zero_teacher

    def output_norm(model):
        total = 0.0
        with torch.no_grad():
            for it in items[:4]:
                text = model.backbone.embed_text(torch.from_numpy(it.phonemes))
                l_emb = model.behavior_encoder(it.labels, it.feats)
                total += float(model.prosody_predictor.generate(text + l_emb).norm())
        return total

    before = output_norm(s1.model)
    s2, _ = finetune_stage2(items, s1, dataclasses.replace(FAST, steps_stage2=80))
    after = output_norm(s2.model)
    assert after < 0.5 * before


def test_stage3_freezes_extractor(items, pretrained):
    ckpt, _ = pretrained
    fast = dataclasses.replace(FAST, steps_stage1=5, steps_stage2=5, steps_stage3=8)
    s1, _ = finetune_stage1(items, ckpt, fast)
    s2, _ = finetune_stage2(items, s1, fast)
    before = s2.model.parameter_fingerprints()
    s3, history = finetune_stage3(items, s2, fast)
    after = s3.model.parameter_fingerprints()
    assert after["prosody_extractor"] == before["prosody_extractor"]
    assert after["prosody_fuser"] == before["prosody_fuser"]
    assert after["behavior_encoder"] == before["behavior_encoder"]
    assert after["label_predictor"] == before["label_predictor"]
    assert after["backbone"] != before["backbone"]
    assert after["prosody_predictor"] != before["prosody_predictor"]
    assert s3.stage == "stage3"
    assert all(h["stage"] == "stage3" for h in history)


def test_stage1_label_ce_declines(items, pretrained):
    ckpt, _ = pretrained
    _, history = finetune_stage1(
        items, ckpt, dataclasses.replace(FAST, steps_stage1=80)
    )
    first = np.mean([h["label_ce"] for h in history[:5]])
    last = np.mean([h["label_ce"] for h in history[-5:]])
    assert last < first


def test_prosody_mse_eval_runs(items, pretrained):
    ckpt, _ = pretrained
    value = prosody_mse(ckpt.model, items[:3])
    assert np.isfinite(value)
