"""Run configuration: defaults, TOML/JSON files, and CLI flag overrides.

Precedence is defaults < config file < command-line flags. The merged
configuration is serialized next to every artifact (dataset, checkpoint,
report) so any output can be reproduced from the file sitting beside it.

Preset configs for the three reference markets ship inside the package and
can be passed to ``--config`` by bare name (``nasdaq``, ``nyse``, ``sse``).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .data import DEFAULT_INDICATORS, SplitSpec
from .errors import ValidationError
from .graph import EntropyConfig
from .model import ModelConfig
from .training import TrainConfig

PRESETS = ("nasdaq", "nyse", "sse")


@dataclass
class DataSection:
    tau: int = 19
    indicators: list[str] = field(default_factory=lambda: list(DEFAULT_INDICATORS))
    drop_threshold: float = 0.02
    feature_format: str = "binary"
    edge_features: str = "raw"
    train_range: list[str] = field(default_factory=list)
    validation_range: list[str] = field(default_factory=list)
    test_range: list[str] = field(default_factory=list)

    def split_spec(self) -> SplitSpec:
        for name, rng in (("train", self.train_range),
                          ("validation", self.validation_range),
                          ("test", self.test_range)):
            if len(rng) != 2:
                raise ValidationError(
                    f"data.{name}_range must be [start, end], got {rng!r}"
                )
        return SplitSpec(tuple(self.train_range), tuple(self.validation_range),
                         tuple(self.test_range))


@dataclass
class GraphSection:
    bins: int = 64
    self_loops: bool = False

    def entropy_config(self) -> EntropyConfig:
        return EntropyConfig(bins=self.bins, self_loops=self.self_loops)


@dataclass
class ModelSection:
    embed_dim: int = 128
    heads: int = 3
    layers: int = 8
    diffusion_steps: int = 9
    activation_slope: float = 0.01

    def model_config(self, theta_mode: str = "softmax", coupled: bool = False,
                     frozen_onehop: bool = False) -> ModelConfig:
        return ModelConfig(
            embed_dim=self.embed_dim, heads=self.heads, layers=self.layers,
            diffusion_steps=self.diffusion_steps,
            activation_slope=self.activation_slope,
            theta_mode=theta_mode, coupled=coupled, frozen_onehop=frozen_onehop,
        )


@dataclass
class TrainSection:
    alpha: float = 2.9e-3
    lr: float = 2e-4
    weight_decay: float = 1.5e-5
    epochs: int = 1200
    batch_size: int = 0
    patience: int = 100
    penalty_mode: str = "softmax-exact"
    eval_every: int = 1

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            alpha=self.alpha, lr=self.lr, weight_decay=self.weight_decay,
            epochs=self.epochs, batch_size=self.batch_size, seed=seed,
            patience=self.patience, penalty_mode=self.penalty_mode,
            eval_every=self.eval_every,
        )


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    graph: GraphSection = field(default_factory=GraphSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def write(self, path: Path) -> None:
        Path(path).write_text(self.to_json())


_SECTIONS = {"data": DataSection, "graph": GraphSection,
             "model": ModelSection, "train": TrainSection}


def _apply_section(section_obj, values: dict, section_name: str) -> None:
    known = {f.name for f in fields(section_obj)}
    for key, value in values.items():
        if key not in known:
            raise ValidationError(f"unknown config key {section_name}.{key}")
        setattr(section_obj, key, value)


def load_config(source: str | Path | None) -> RunConfig:
    """Build a RunConfig from defaults plus an optional TOML/JSON file.

    ``source`` may be a filesystem path, a bare preset name, or None for
    pure defaults.
    """
    cfg = RunConfig()
    if source is None:
        return cfg
    text, suffix = _read_config_text(source)
    if suffix == ".json":
        raw = json.loads(text)
    else:
        raw = tomllib.loads(text)
    if not isinstance(raw, dict):
        raise ValidationError(f"config {source}: top level must be a table")
    for key, value in raw.items():
        if key == "seed":
            cfg.seed = int(value)
        elif key in _SECTIONS:
            if not isinstance(value, dict):
                raise ValidationError(f"config section {key} must be a table")
            _apply_section(getattr(cfg, key), value, key)
        else:
            raise ValidationError(f"unknown config section {key!r}")
    return cfg


def _read_config_text(source: str | Path) -> tuple[str, str]:
    path = Path(source)
    if path.exists():
        return path.read_text(), path.suffix.lower()
    name = str(source).lower()
    if name in PRESETS:
        ref = resources.files("diffstock").joinpath(f"presets/{name}.toml")
        return ref.read_text(), ".toml"
    raise ValidationError(f"config {source!r}: no such file or preset "
                          f"(presets: {', '.join(PRESETS)})")
