import numpy as np
import pytest
import torch

from sponspeech.backbone import SamplingConfig
from sponspeech.codec import MockCodec
from sponspeech.errors import StageError, ValidationError
from sponspeech.model import Checkpoint, SponSpeechModel
from sponspeech.synthesis import SynthesisRequest, synthesize, synthesize_baseline

from conftest import tiny_model_config


def make_checkpoint(stage="stage3", seed=0):
    torch.manual_seed(seed)
    return Checkpoint(model=SponSpeechModel(tiny_model_config()).eval(), stage=stage)


def make_request(seed=0, manual=None, max_len=16):
    # one phoneme per char so predicted labels collapse losslessly
    return SynthesisRequest(
        phonemes=[2, 4, 6, 0],
        chars=["a", "c", "e", "。"],
        char_phoneme_counts=[1, 1, 1, 1],
        manual_labels=manual,
        prompt=np.ones((3, 3), dtype=np.int64),
        sampling=SamplingConfig(seed=seed, max_len=max_len),
    )


def test_synthesize_deterministic_given_seed():
    ckpt = make_checkpoint()
    a, da = synthesize(make_request(seed=5), ckpt)
    b, db = synthesize(make_request(seed=5), ckpt)
    assert np.array_equal(a, b)
    assert da == db


def test_synthesize_seed_changes_output():
    ckpt = make_checkpoint()
    a, _ = synthesize(make_request(seed=1), ckpt)
    b, _ = synthesize(make_request(seed=2), ckpt)
    assert a.shape != b.shape or not np.array_equal(a, b)


def test_manual_labels_pass_through():
    ckpt = make_checkpoint()
    manual = [0, 7, 0, 0]
    _, diag = synthesize(make_request(manual=manual), ckpt)
    assert diag["labels"] == manual  # one phoneme per char


def test_manual_labels_validation():
    ckpt = make_checkpoint()
    req = make_request(manual=[0, 99, 0, 0])
    with pytest.raises(ValidationError, match="99"):
        synthesize(req, ckpt)
    req = make_request(manual=[0, 1])
    with pytest.raises(ValidationError, match="every character"):
        synthesize(req, ckpt)


def test_stage_gating():
    with pytest.raises(StageError, match="stage3"):
        synthesize(make_request(), make_checkpoint(stage="stage1"))
    with pytest.raises(StageError):
        synthesize_baseline(make_request(), make_checkpoint(stage="pretrained"))


def test_baseline_runs_on_stage1():
    wave, diag = synthesize_baseline(make_request(), make_checkpoint(stage="stage1"))
    assert np.isfinite(wave).all()
    assert all(n == 0.0 for n in diag["p_norms"])


def test_baseline_equals_full_when_predictor_is_zero():
    ckpt = make_checkpoint()
    with torch.no_grad():
        for p in ckpt.model.prosody_predictor.parameters():
            p.zero_()
    full, _ = synthesize(make_request(seed=3), ckpt)
    base, _ = synthesize_baseline(make_request(seed=3), ckpt)
    assert np.array_equal(full, base)


def test_baseline_differs_from_full_in_general():
    ckpt = make_checkpoint(seed=2)
    full, dfull = synthesize(make_request(seed=3), ckpt)
    base, dbase = synthesize_baseline(make_request(seed=3), ckpt)
    assert any(n > 0 for n in dfull["p_norms"])
    assert (full.shape != base.shape) or (not np.array_equal(full, base))


def test_output_sample_count_matches_grid():
    ckpt = make_checkpoint()
    wave, diag = synthesize(make_request(), ckpt)
    hop = ckpt.model.cfg.codec.frame_hop
    assert wave.shape == (diag["tokens_len"] * hop,)


def test_max_len_guard_from_phoneme_count():
    ckpt = make_checkpoint()
    req = make_request()
    req.sampling = SamplingConfig(seed=0, max_len=None)
    _, diag = synthesize(req, ckpt)
    assert diag["tokens_len"] <= 20 * len(req.phonemes)


def test_label_bypass_equivalence():
    ckpt = make_checkpoint()
    wave_pred, diag = synthesize(make_request(seed=9), ckpt)
    manual = diag["labels"]  # one phoneme per char, so char == phoneme labels
    wave_manual, diag2 = synthesize(make_request(seed=9, manual=manual), ckpt)
    assert np.array_equal(wave_pred, wave_manual)
    assert diag2["labels"] == diag["labels"]


def test_inference_never_touches_mel_extractor(monkeypatch):
    ckpt = make_checkpoint()

    def boom(*args, **kwargs):
        raise AssertionError("extractor used at inference")

    monkeypatch.setattr(ckpt.model.prosody_extractor, "forward", boom)
    monkeypatch.setattr(ckpt.model.prosody_fuser, "forward", boom)
    wave, _ = synthesize(make_request(), ckpt)
    assert np.isfinite(wave).all()


def test_diagnostics_schema():
    ckpt = make_checkpoint()
    _, diag = synthesize(make_request(), ckpt)
    assert set(diag) == {"labels", "p_norms", "tokens_len", "seed"}
    assert len(diag["labels"]) == 4
    assert len(diag["p_norms"]) == 4
    assert diag["seed"] == 0


def test_codec_substitution_seam():
    ckpt = make_checkpoint()
    codec = MockCodec(ckpt.model.cfg.codec)
    wave_default, _ = synthesize(make_request(seed=4), ckpt)
    wave_injected, _ = synthesize(make_request(seed=4), ckpt, codec=codec)
    assert np.array_equal(wave_default, wave_injected)
