"""Flat key=value run configuration, schema-validated and hashable.

The file format is one `section.key = value` assignment per line with `#`
comments. Unknown keys are rejected. The sha256 hash of the fully resolved
configuration is embedded in checkpoints so downstream commands can refuse
mismatched configs.
"""

from __future__ import annotations

import hashlib
import os

from .backbone import ModelConfig
from .codec import CodecSpec
from .datagen import GenSpec
from .errors import ConfigError
from .evaluation import MelParams
from .training import TrainingConfig

_MISSING = object()


def _bool(text):
    if text in ("true", "True", "1"):
        return True
    if text in ("false", "False", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


SCHEMA = {
    "model.d_model": (int, 128),
    "model.n_heads": (int, 4),
    "model.n_layers_ar": (int, 4),
    "model.n_layers_nar": (int, 4),
    "model.feedforward_dim": (int, 512),
    "model.dropout": (float, 0.1),
    "model.text_vocab": (int, 256),
    "model.max_seq_len": (int, 4096),
    "model.n_layers_label_predictor": (int, 3),
    "model.n_layers_prosody_predictor": (int, 3),
    "model.syntactic_cap": (float, 64.0),
    "model.prompt_frames": (int, 24),
    "codec.num_quantizers": (int, 8),
    "codec.vocab_size": (int, 1024),
    "codec.frame_hop": (int, 320),
    "codec.sample_rate": (int, 24000),
    "codec.codebook_seed": (int, 0),
    "mel.n_mels": (int, 80),
    "mel.win_length": (int, 1024),
    "mel.hop_length": (int, 256),
    "mel.fmin": (float, 0.0),
    "mel.fmax": (float, -1.0),  # -1 selects the Nyquist frequency
    "train.lambda_label": (float, 0.1),
    "train.lr_pretrain": (float, 1e-3),
    "train.lr_stage1": (float, 1e-3),
    "train.lr_stage2": (float, 1e-3),
    "train.lr_stage3": (float, 1e-4),
    "train.beta1": (float, 0.9),
    "train.beta2": (float, 0.95),
    "train.batch_size": (int, 8),
    "train.steps_pretrain": (int, 2000),
    "train.steps_stage1": (int, 2000),
    "train.steps_stage2": (int, 1000),
    "train.steps_stage3": (int, 500),
    "train.seed": (int, 0),
    "train.augment_prob": (float, 0.5),
    "train.nar_stage_mode": (str, "random"),
    "gen.seed": (int, 0),
    "gen.num_utterances": (int, 200),
    "gen.num_chars": (int, 24),
    "gen.label_rate": (float, 0.3),
    "gen.label_mode": (str, "phoneme_rule"),
    "gen.min_chars": (int, 3),
    "gen.max_chars": (int, 8),
    "gen.base_frames": (int, 4),
    "gen.punctuation_prob": (float, 0.25),
    "gen.duration_multiplier": (float, 2.0),
    "gen.pitch_offset_step": (float, 8.0),
    "gen.amplitude": (float, 0.35),
    "gen.noise_level": (float, 0.01),
    "synth.temperature": (float, 1.0),
    "synth.top_k": (int, 10),
    "synth.seed": (int, 0),
}


class RunConfig:
    """Resolved configuration: schema defaults overlaid with file values."""

    def __init__(self, overrides=None):
        self.values = {key: default for key, (_, default) in SCHEMA.items()}
        for key, value in (overrides or {}).items():
            self._set(key, value)

    def _set(self, key, value):
        if key not in SCHEMA:
            raise ConfigError(f"unknown configuration key: {key}")
        kind, _ = SCHEMA[key]
        if isinstance(value, str) and kind is not str:
            try:
                value = _bool(value) if kind is bool else kind(value)
            except ValueError:
                raise ConfigError(f"{key}: cannot parse {value!r} as {kind.__name__}")
        if kind is float and isinstance(value, int):
            value = float(value)
        if not isinstance(value, kind):
            raise ConfigError(f"{key}: expected {kind.__name__}, got {type(value).__name__}")
        self.values[key] = value

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        overrides = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                key, value = (part.strip() for part in line.split("=", 1))
                if key in overrides:
                    raise ConfigError(f"{path}:{lineno}: duplicate key {key}")
                overrides[key] = value
        cfg = cls(overrides)
        return cfg

    def apply_env(self, environ=None):
        """SPON_SEED overrides every seed-like key."""
        environ = os.environ if environ is None else environ
        seed = environ.get("SPON_SEED")
        if seed is not None:
            try:
                seed = int(seed)
            except ValueError:
                raise ConfigError(f"SPON_SEED must be an integer, got {seed!r}")
            for key in ("train.seed", "gen.seed", "synth.seed"):
                self.values[key] = seed
        return self

    def __getitem__(self, key):
        return self.values[key]

    def hash(self) -> str:
        canonical = "\n".join(
            f"{key}={self.values[key]!r}" for key in sorted(self.values)
        )
        return hashlib.sha256(canonical.encode()).hexdigest()

    # ----------------------------------------------------------- builders

    def codec_spec(self) -> CodecSpec:
        return CodecSpec(
            num_quantizers=self["codec.num_quantizers"],
            vocab_size=self["codec.vocab_size"],
            frame_hop=self["codec.frame_hop"],
            sample_rate=self["codec.sample_rate"],
            codebook_seed=self["codec.codebook_seed"],
        )

    def mel_params(self) -> MelParams:
        fmax = self["mel.fmax"]
        return MelParams(
            sample_rate=self["codec.sample_rate"],
            n_mels=self["mel.n_mels"],
            win_length=self["mel.win_length"],
            hop_length=self["mel.hop_length"],
            fmin=self["mel.fmin"],
            fmax=None if fmax < 0 else fmax,
        )

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            d_model=self["model.d_model"],
            n_heads=self["model.n_heads"],
            n_layers_ar=self["model.n_layers_ar"],
            n_layers_nar=self["model.n_layers_nar"],
            feedforward_dim=self["model.feedforward_dim"],
            dropout=self["model.dropout"],
            text_vocab=self["model.text_vocab"],
            max_seq_len=self["model.max_seq_len"],
            n_layers_label_predictor=self["model.n_layers_label_predictor"],
            n_layers_prosody_predictor=self["model.n_layers_prosody_predictor"],
            syntactic_cap=self["model.syntactic_cap"],
            prompt_frames=self["model.prompt_frames"],
            codec=self.codec_spec(),
            mel=self.mel_params(),
        )

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(
            lambda_label=self["train.lambda_label"],
            lr_pretrain=self["train.lr_pretrain"],
            lr_stage1=self["train.lr_stage1"],
            lr_stage2=self["train.lr_stage2"],
            lr_stage3=self["train.lr_stage3"],
            beta1=self["train.beta1"],
            beta2=self["train.beta2"],
            batch_size=self["train.batch_size"],
            steps_pretrain=self["train.steps_pretrain"],
            steps_stage1=self["train.steps_stage1"],
            steps_stage2=self["train.steps_stage2"],
            steps_stage3=self["train.steps_stage3"],
            seed=self["train.seed"],
            augment_prob=self["train.augment_prob"],
            nar_stage_mode=self["train.nar_stage_mode"],
        )

    def gen_spec(self) -> GenSpec:
        return GenSpec(
            seed=self["gen.seed"],
            num_utterances=self["gen.num_utterances"],
            num_chars=self["gen.num_chars"],
            label_rate=self["gen.label_rate"],
            label_mode=self["gen.label_mode"],
            min_chars=self["gen.min_chars"],
            max_chars=self["gen.max_chars"],
            base_frames=self["gen.base_frames"],
            sample_rate=self["codec.sample_rate"],
            frame_hop=self["codec.frame_hop"],
            punctuation_prob=self["gen.punctuation_prob"],
            duration_multiplier=self["gen.duration_multiplier"],
            pitch_offset_step=self["gen.pitch_offset_step"],
            amplitude=self["gen.amplitude"],
            noise_level=self["gen.noise_level"],
        )
