"""Run configuration: JSON file values overridden by command-line flags."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .model.network import TrainConfig
from .pipeline import RetrievalConfig
from .synthetic import SyntheticSpec

# Small model used for synthetic runs; keeps the full evaluation at desk scale.
SYNTHETIC_MODEL = {
    "d": 32,
    "k": 8,
    "layers": 2,
    "heads": 4,
    "codebook_size": 10,
    "top_p": 4,
    "tau": 0.5,
    "noise_scale": 0.1,
    "lambda_usage": 1.0,
    "lambda_load": 1.0,
    "lr": 0.001,
    "l2": 1e-5,
    "batch_size": 8,
    "dropout": 0.5,
    "epochs": 50,
    "patience": 50,
}


@dataclass
class RunConfig:
    paths: dict[str, Any] = field(default_factory=dict)
    masking: dict[str, Any] = field(default_factory=lambda: {"rate": 0.4, "seed": None})
    retrieval: dict[str, Any] = field(default_factory=dict)
    model: dict[str, Any] = field(default_factory=dict)
    eval: dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    threads: int = 1

    @classmethod
    def load(cls, path: str | Path | None) -> "RunConfig":
        if path is None:
            return cls()
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        base = cls()
        for key, val in raw.items():
            cur = getattr(base, key)
            if isinstance(cur, dict):
                merged = dict(cur)
                merged.update(val or {})
                setattr(base, key, merged)
            else:
                setattr(base, key, val)
        return base

    def mask_seed(self) -> int:
        s = self.masking.get("seed")
        return self.seed if s is None else int(s)

    def train_config(self, synthetic: bool = False) -> TrainConfig:
        raw = dict(SYNTHETIC_MODEL) if synthetic else {}
        raw.update(self.model)
        raw["seed"] = self.seed
        return TrainConfig.from_dict(raw)

    def retrieval_config(self) -> RetrievalConfig:
        fields = RetrievalConfig.__dataclass_fields__
        return RetrievalConfig(**{k: v for k, v in self.retrieval.items() if k in fields})

    def synthetic_spec(self) -> SyntheticSpec:
        raw = dict(self.eval.get("synthetic") or {})
        raw.setdefault("seed", self.seed)
        return SyntheticSpec(**raw)

    def echo(self) -> dict:
        return copy.deepcopy(
            {
                "paths": self.paths,
                "masking": self.masking,
                "retrieval": self.retrieval,
                "model": self.model,
                "eval": self.eval,
                "seed": self.seed,
                "threads": self.threads,
            }
        )
