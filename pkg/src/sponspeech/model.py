"""Full model container, parameter-group bookkeeping and checkpoint archives."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor, nn

from .backbone import AcousticBackbone, ModelConfig
from .behavior_encoder import BehaviorEncoder, LabelPredictor
from .codec import CodecSpec
from .errors import StageError, ValidationError
from .evaluation import MelParams
from .prosody import ProsodyExtractor, ProsodyFuser, ProsodyPredictor

STAGES = ("pretrained", "stage1", "stage2", "stage3")

# Stage-3 freezes everything in the "extractor" sense: the convolution trunk
# and the fusion attention both belong to the teacher path.
EXTRACTOR_GROUPS = ("prosody_extractor", "prosody_fuser")


class SponSpeechModel(nn.Module):
    """All trainable components behind one module tree.

    Submodule names double as parameter-group names for the staged
    freeze/train partitions.
    """

    GROUPS = (
        "backbone",
        "behavior_encoder",
        "label_predictor",
        "prosody_extractor",
        "prosody_fuser",
        "prosody_predictor",
    )

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.backbone = AcousticBackbone(cfg)
        self.behavior_encoder = BehaviorEncoder(cfg)
        self.label_predictor = LabelPredictor(cfg)
        self.prosody_extractor = ProsodyExtractor(cfg)
        self.prosody_fuser = ProsodyFuser(cfg)
        self.prosody_predictor = ProsodyPredictor(cfg)

    def group_parameters(self, groups):
        for name in groups:
            if name not in self.GROUPS:
                raise ValueError(f"unknown parameter group: {name}")
            yield from getattr(self, name).parameters()

    def parameter_fingerprints(self) -> dict:
        """sha256 of each group's parameter bytes, for freeze-contract checks."""
        out = {}
        for name in self.GROUPS:
            h = hashlib.sha256()
            module = getattr(self, name)
            for pname, param in sorted(module.named_parameters()):
                h.update(pname.encode())
                h.update(param.detach().cpu().numpy().tobytes())
            out[name] = h.hexdigest()
        return out

    def teacher_p_embeddings(self, mel, mel_bounds, l_emb: Tensor) -> Tensor:
        """Teacher-path P-embeddings for one utterance (extract then fuse)."""
        prosody = self.prosody_extractor(mel, mel_bounds)
        return self.prosody_fuser(l_emb, prosody)


def config_to_dict(cfg: ModelConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(data: dict) -> ModelConfig:
    data = dict(data)
    data["codec"] = CodecSpec(**data["codec"])
    data["mel"] = MelParams(**data["mel"])
    return ModelConfig(**data)


@dataclass
class Checkpoint:
    """A model plus its training-stage tag and the run-config hash."""

    model: SponSpeechModel
    stage: str
    config_hash: str = ""

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValidationError(f"unknown stage tag: {self.stage!r}")

    def require_stage(self, stage: str, action: str):
        if self.stage != stage:
            raise StageError(
                f"{action} requires a {stage!r} checkpoint, got {self.stage!r}"
            )

    def clone(self, stage: str) -> "Checkpoint":
        """Deep-copy the model under a new stage tag."""
        model = SponSpeechModel(self.model.cfg)
        model.load_state_dict(
            {k: v.clone() for k, v in self.model.state_dict().items()}
        )
        return Checkpoint(model=model, stage=stage, config_hash=self.config_hash)

    def save(self, path):
        torch.save(
            {
                "state": self.model.state_dict(),
                "model_config": config_to_dict(self.model.cfg),
                "stage": self.stage,
                "config_hash": self.config_hash,
            },
            path,
        )

    @classmethod
    def load(cls, path, expected_hash=None) -> "Checkpoint":
        data = torch.load(path, map_location="cpu", weights_only=False)
        if expected_hash is not None and data["config_hash"] != expected_hash:
            raise ValidationError(
                f"checkpoint config hash {data['config_hash'][:12]}... does not "
                f"match the provided configuration ({expected_hash[:12]}...)"
            )
        model = SponSpeechModel(config_from_dict(data["model_config"]))
        model.load_state_dict(data["state"])
        return cls(model=model, stage=data["stage"], config_hash=data["config_hash"])
