"""Seeded synthetic corpus with documented label -> acoustics rules.

Each character has a fixed one- or two-phoneme pronunciation with phoneme ids
unique to that character. Audio is rendered as a phase-continuous sine per
phoneme (frequency determined by the phoneme id) plus a little noise. A
labeled character stretches the duration of its phonemes by the label's
multiplier and shifts the sine frequency by the label's offset, so behavior
labels have exact, measurable acoustic correlates and phoneme boundaries are
known at construction time.

Label assignment modes:
  * "phoneme_rule": a character either always carries one fixed label or is
    always unlabeled, decided per character identity from the corpus seed.
    The mapping phoneme -> label is therefore deterministic and learnable
    from text alone.
  * "random": each character occurrence is labeled independently at
    `label_rate`, so labels carry information the text does not.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .annotation import AnnotatedUtterance, save_corpus
from .codec import write_wav
from .errors import ValidationError

PAUSE_PHONEME = 0
MID_PUNCT = "，"
END_PUNCT = "。"


@dataclass(frozen=True)
class LabelRule:
    duration_multiplier: float
    pitch_offset_hz: float

    def __post_init__(self):
        if self.duration_multiplier <= 0:
            raise ValidationError("duration multipliers must be positive")


@dataclass(frozen=True)
class GenSpec:
    seed: int = 0
    num_utterances: int = 200
    num_chars: int = 24  # character inventory size
    label_rate: float = 0.3
    label_mode: str = "phoneme_rule"  # or "random"
    min_chars: int = 3
    max_chars: int = 8
    base_frames: int = 4
    sample_rate: int = 8000
    frame_hop: int = 80
    punctuation_prob: float = 0.25
    duration_multiplier: float = 2.0
    pitch_offset_step: float = 8.0
    amplitude: float = 0.35
    noise_level: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.label_rate <= 1.0:
            raise ValidationError("label_rate must lie in [0, 1]")
        if self.duration_multiplier <= 0:
            raise ValidationError("duration multiplier must be positive")
        if self.label_mode not in ("phoneme_rule", "random"):
            raise ValidationError(f"unknown label_mode: {self.label_mode!r}")
        if self.min_chars < 1 or self.max_chars < self.min_chars:
            raise ValidationError("need 1 <= min_chars <= max_chars")

    @property
    def phoneme_vocab_size(self) -> int:
        return 1 + 2 * self.num_chars

    def rule(self, label: int) -> LabelRule:
        return LabelRule(
            duration_multiplier=self.duration_multiplier,
            pitch_offset_hz=self.pitch_offset_step * (1 + label % 3),
        )


def char_symbol(c: int) -> str:
    return chr(ord("a") + c) if c < 26 else f"c{c}"


def char_phonemes(c: int) -> list:
    """Fixed pronunciation; even characters get one phoneme, odd ones two."""
    first = 1 + 2 * c
    return [first] if c % 2 == 0 else [first, first + 1]


def phoneme_frequency(pid: int) -> float:
    """Base sine frequency; kept low so small codec setups retain it."""
    return 60.0 + 5.0 * (pid % 20)


def char_label_rule(spec: GenSpec, c: int) -> int:
    """The deterministic per-character label in "phoneme_rule" mode."""
    gate = np.random.default_rng([spec.seed, 7919 + c]).random()
    if gate < spec.label_rate:
        return 1 + c % 19
    return 0


def generate_utterance(spec: GenSpec, index: int):
    """Build one utterance and its waveform; deterministic in (spec, index)."""
    rng = np.random.default_rng([spec.seed, index])
    n_chars = int(rng.integers(spec.min_chars, spec.max_chars + 1))
    chars = []
    char_labels = []
    for pos in range(n_chars):
        c = int(rng.integers(spec.num_chars))
        chars.append(char_symbol(c))
        if spec.label_mode == "phoneme_rule":
            char_labels.append(char_label_rule(spec, c))
        elif rng.random() < spec.label_rate:
            char_labels.append(int(rng.integers(1, 20)))
        else:
            char_labels.append(0)
        if pos < n_chars - 1 and rng.random() < spec.punctuation_prob:
            chars.append(MID_PUNCT)
            char_labels.append(0)
    chars.append(END_PUNCT)
    char_labels.append(0)

    phonemes = []
    counts = []
    durations = []  # frames per phoneme
    pitches = []
    for ch, lab in zip(chars, char_labels):
        if ch in (MID_PUNCT, END_PUNCT):
            pids = [PAUSE_PHONEME]
        else:
            pids = char_phonemes(ord(ch) - ord("a")) if len(ch) == 1 else char_phonemes(
                int(ch[1:])
            )
        counts.append(len(pids))
        for pid in pids:
            frames = spec.base_frames
            freq = phoneme_frequency(pid)
            if lab != 0:
                rule = spec.rule(lab)
                frames = max(1, int(round(spec.base_frames * rule.duration_multiplier)))
                freq += rule.pitch_offset_hz
            phonemes.append(pid)
            durations.append(frames)
            pitches.append(freq)

    boundaries = []
    start = 0
    for frames in durations:
        boundaries.append((start, start + frames))
        start += frames

    wave = np.zeros(start * spec.frame_hop)
    phase = 0.0
    for pid, (s, e), freq in zip(phonemes, boundaries, pitches):
        n = (e - s) * spec.frame_hop
        t = np.arange(n) / spec.sample_rate
        amp = 0.05 * spec.amplitude if pid == PAUSE_PHONEME else spec.amplitude
        seg = amp * np.sin(2 * np.pi * freq * t + phase)
        seg = seg + spec.noise_level * rng.standard_normal(n)
        wave[s * spec.frame_hop : e * spec.frame_hop] = seg
        phase = (phase + 2 * np.pi * freq * n / spec.sample_rate) % (2 * np.pi)
    wave = np.clip(wave, -1.0, 1.0)

    utt = AnnotatedUtterance(
        id=f"utt_{index:04d}",
        chars=chars,
        char_labels=char_labels,
        phonemes=phonemes,
        char_phoneme_counts=counts,
        phoneme_boundaries=boundaries,
        audio_path=f"wavs/utt_{index:04d}.wav",
    )
    utt.validate()
    return utt, wave


def generate(spec: GenSpec, out_dir) -> list:
    """Write corpus.jsonl plus WAV files under out_dir; returns the records."""
    wav_dir = os.path.join(out_dir, "wavs")
    os.makedirs(wav_dir, exist_ok=True)
    utterances = []
    for i in range(spec.num_utterances):
        utt, wave = generate_utterance(spec, i)
        write_wav(os.path.join(out_dir, utt.audio_path), wave, spec.sample_rate)
        utterances.append(utt)
    save_corpus(utterances, os.path.join(out_dir, "corpus.jsonl"))
    return utterances
