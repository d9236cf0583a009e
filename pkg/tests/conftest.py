import numpy as np
import pytest
import torch

from sponspeech.backbone import ModelConfig
from sponspeech.codec import CodecSpec
from sponspeech.evaluation import MelParams

torch.set_num_threads(1)

PUNCT_CHOICES = ["，", "。", ",", "."]


def tiny_model_config(**overrides) -> ModelConfig:
    """Small dims for fast unit tests; acceptance uses larger configs."""
    defaults = dict(
        d_model=32,
        n_heads=2,
        n_layers_ar=2,
        n_layers_nar=2,
        feedforward_dim=64,
        dropout=0.0,
        text_vocab=52,
        max_seq_len=512,
        n_layers_label_predictor=2,
        n_layers_prosody_predictor=2,
        codec=CodecSpec(num_quantizers=3, vocab_size=17, frame_hop=16,
                        sample_rate=800, codebook_seed=0),
        mel=MelParams(sample_rate=800, n_mels=20, win_length=64, hop_length=16),
    )
    defaults.update(overrides)
    return ModelConfig(**defaults)


def random_record(rng: np.random.Generator, with_tokens=True, num_quantizers=3,
                  vocab=17) -> dict:
    """A schema-valid corpus record with random contents."""
    n_chars = int(rng.integers(1, 7))
    chars = []
    labels = []
    for _ in range(n_chars):
        if rng.random() < 0.15:
            chars.append(str(rng.choice(PUNCT_CHOICES)))
        else:
            chars.append(chr(ord("a") + int(rng.integers(26))))
        labels.append(int(rng.integers(0, 20)))
    counts = [int(rng.integers(1, 4)) for _ in chars]
    n_ph = sum(counts)
    phonemes = [int(rng.integers(0, 40)) for _ in range(n_ph)]
    bounds = []
    start = 0
    for _ in range(n_ph):
        width = int(rng.integers(1, 5))
        bounds.append([start, start + width])
        start += width
    tokens = None
    if with_tokens:
        tokens = rng.integers(0, vocab, size=(start, num_quantizers))
        tokens = [[int(x) for x in row] for row in tokens]
    return {
        "id": f"r{int(rng.integers(1e6))}",
        "chars": chars,
        "char_labels": labels,
        "phonemes": phonemes,
        "char_phoneme_counts": counts,
        "audio_path": None,
        "tokens": tokens,
        "phoneme_boundaries": bounds,
    }


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
