"""Experiment configuration (JSON file mirroring :class:`ExperimentConfig`)."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Optional

from .data.augment import AugmentConfig
from .data.folds import DEFAULT_RATIOS
from .training import DEFAULT_CLASS_WEIGHTS, LossConfig, TrainPlan


@dataclass
class NetworkConfig:
    name: str
    architecture: str
    plan: TrainPlan
    options: dict = field(default_factory=dict)
    init_weights: Optional[str] = None  # .npz of "layer/param" arrays, e.g. an exported pretrained trunk


@dataclass
class ExperimentConfig:
    manifest: str
    output_dir: str
    image_size: tuple = (224, 224)
    fold_count: int = 5
    fold_ratios: tuple = DEFAULT_RATIOS
    fold_seed: int = 0
    networks: list = field(default_factory=list)
    loss: LossConfig = field(default_factory=LossConfig)
    augment: Optional[AugmentConfig] = field(default_factory=AugmentConfig)
    stacker_lambda: float = 1.0
    bootstrap_resamples: int = 1000
    eval_seed: int = 0
    source: dict = field(default_factory=dict, repr=False)

    @property
    def digest(self) -> str:
        canonical = json.dumps(self.source, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def seeds(self) -> dict:
        seeds = {"folds": self.fold_seed, "evaluation": self.eval_seed}
        seeds.update({f"train.{n.name}": n.plan.seed for n in self.networks})
        if self.augment is not None:
            seeds["augment"] = self.augment.seed
        return seeds

    def provenance(self) -> dict:
        return {"config_digest": self.digest, "seeds": self.seeds()}

    def submodel_numbering(self) -> list:
        """``(network config, [global sub-model numbers])`` in config order, numbered from 1."""
        out, j = [], 1
        for net in self.networks:
            k = len(net.plan.checkpoint_fractions)
            out.append((net, list(range(j, j + k))))
            j += k
        return out

    def network(self, name: str) -> NetworkConfig:
        for net in self.networks:
            if net.name == name:
                return net
        raise ValueError(f"no network named {name!r} in config (have {[n.name for n in self.networks]})")

    @classmethod
    def from_dict(cls, d: dict, base_dir: str = ".") -> "ExperimentConfig":
        def rel(p):
            return p if p is None or os.path.isabs(p) else os.path.normpath(os.path.join(base_dir, p))

        folds = d.get("folds", {})
        nets = []
        entries = d.get("networks", [])
        if isinstance(entries, dict):
            entries = [{"name": k, **v} for k, v in entries.items()]
        for n in entries:
            name, plan = n["name"], n["plan"]
            nets.append(NetworkConfig(
                name=name,
                architecture=n.get("architecture", name),
                plan=TrainPlan(
                    total_iterations=plan["total_iterations"],
                    batch_size=plan.get("batch_size", 16),
                    checkpoint_fractions=tuple(plan.get("checkpoint_fractions", (1.0,))),
                    seed=plan.get("seed", 0),
                    learning_rate=plan.get("learning_rate", 1e-3),
                    freeze_trunk=plan.get("freeze_trunk", False),
                ),
                options=dict(n.get("options", {})),
                init_weights=rel(n.get("init_weights")),
            ))
        aug = d.get("augment", {})
        stacker = d.get("stacker", {})
        evaluation = d.get("evaluation", {})
        cfg = cls(
            manifest=rel(d["manifest"]),
            output_dir=rel(d["output_dir"]),
            image_size=tuple(d.get("image_size", (224, 224))),
            fold_count=folds.get("count", 5),
            fold_ratios=tuple(folds.get("ratios", DEFAULT_RATIOS)),
            fold_seed=folds.get("seed", 0),
            networks=nets,
            loss=LossConfig(tuple(d.get("loss", {}).get("class_weights", DEFAULT_CLASS_WEIGHTS))),
            augment=None if aug is None else AugmentConfig(**aug),
            stacker_lambda=stacker.get("lambda", 1.0),
            bootstrap_resamples=evaluation.get("bootstrap_resamples", 1000),
            eval_seed=evaluation.get("seed", 0),
            source=d,
        )
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        return cls.from_dict(d, os.path.dirname(os.path.abspath(path)))

    def validate(self) -> None:
        if not os.path.exists(self.manifest):
            raise FileNotFoundError(f"manifest not found: {self.manifest}")
        for net in self.networks:
            if net.init_weights and not os.path.exists(net.init_weights):
                raise FileNotFoundError(f"init weights not found: {net.init_weights}")
        names = [n.name for n in self.networks]
        if len(set(names)) != len(names):
            raise ValueError("network names must be unique")


def desk_config(manifest="manifest.csv", output_dir="runs/desk", iterations=200, seed=0) -> dict:
    """Desk-scale experiment: reduced networks, 64x64 inputs, the standard snapshot fractions."""
    return {
        "manifest": manifest,
        "output_dir": output_dir,
        "image_size": [64, 64],
        "folds": {"count": 5, "ratios": list(DEFAULT_RATIOS), "seed": seed},
        "networks": [
            {
                "name": "covnet30",
                "architecture": "covnet30-desk",
                "plan": {"total_iterations": iterations, "batch_size": 16,
                         "checkpoint_fractions": [0.5, 1.0], "seed": seed + 1, "learning_rate": 0.001},
            },
            {
                "name": "companion",
                "architecture": "companion-desk",
                "plan": {"total_iterations": iterations, "batch_size": 16,
                         "checkpoint_fractions": [1 / 3, 2 / 3, 1.0], "seed": seed + 2, "learning_rate": 0.001},
            },
        ],
        "loss": {"class_weights": list(DEFAULT_CLASS_WEIGHTS)},
        "augment": asdict(AugmentConfig(seed=seed + 3)),
        "stacker": {"lambda": 1.0},
        "evaluation": {"bootstrap_resamples": 1000, "seed": seed},
    }
