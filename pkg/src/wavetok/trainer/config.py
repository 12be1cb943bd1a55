"""Training and synthetic-data configuration."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema

VARIANTS = ("full", "fixed_patch", "fixed_dwt", "spec_bound", "no_fusion", "no_recon")
MOTIFS = ("square", "damped_sine", "chirp")

DEFAULT_SIGNATURES = (
    ("square",),
    ("damped_sine",),
    ("square", "chirp", "damped_sine"),
    ("chirp", "square", "chirp", "damped_sine"),
)


class ConfigError(ValueError):
    """Raised for configuration values outside their documented ranges."""


@dataclass
class SynthSpec:
    classes: int = 4
    length: int = 512
    channels: int = 1
    n_train: int = 2000
    n_test: int = 400
    noise_std: float = 0.1
    gap_fraction: float = 0.25
    amplitude: tuple[float, float] = (1.0, 2.0)
    duration: tuple[int, int] = (32, 64)
    signatures: list[list[str]] | None = None
    seed: int = 0

    def class_signatures(self) -> list[list[str]]:
        if self.signatures is not None:
            return [list(s) for s in self.signatures]
        base = [list(s) for s in DEFAULT_SIGNATURES]
        return [base[i % len(base)] for i in range(self.classes)]

    def sparse_classes(self) -> list[int]:
        """Classes whose signature has at most half the largest motif count."""
        sigs = self.class_signatures()
        most = max(len(s) for s in sigs)
        return [i for i, s in enumerate(sigs) if len(s) <= most / 2]

    def validate(self) -> "SynthSpec":
        if self.classes < 2:
            raise ConfigError("data.classes must be >= 2")
        if self.length < 8:
            raise ConfigError("data.length must be >= 8")
        if self.channels < 1:
            raise ConfigError("data.channels must be >= 1")
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("data.n_train and data.n_test must be >= 1")
        if self.noise_std < 0:
            raise ConfigError("data.noise_std must be >= 0")
        if not 0 <= self.gap_fraction < 1:
            raise ConfigError("data.gap_fraction must lie in [0, 1)")
        if self.duration[0] < 1 or self.duration[1] < self.duration[0]:
            raise ConfigError("data.duration must be an increasing pair of positive ints")
        sigs = self.class_signatures()
        if len(sigs) != self.classes:
            raise ConfigError("data.signatures must list one signature per class")
        for s in sigs:
            unknown = set(s) - set(MOTIFS)
            if unknown:
                raise ConfigError(f"data.signatures: unknown motifs {sorted(unknown)}")
        return self


@dataclass
class TrainConfig:
    variant: str = "full"
    tau: float = 0.125
    levels: int = 4
    partition: int = 1
    basis: str = "db4"
    detail_dim: int = 32
    context_dim: int = 32
    heads: int = 4
    max_context: int = 128
    kernel: int = 5
    lambda_rec: float = 0.1
    epochs: int = 50
    batch_size: int = 32
    lr_max: float = 1e-4
    lr_min: float = 1e-6
    patch: int = 8
    patch_stride: int = 8
    channel_mode: str = "shared"
    positional: bool = True
    precision: str = "float32"
    seed: int = 0
    data: SynthSpec = field(default_factory=SynthSpec)

    @property
    def dim(self) -> int:
        return self.detail_dim + self.context_dim

    @property
    def effective_lambda(self) -> float:
        return 0.0 if self.variant == "no_recon" else self.lambda_rec

    @property
    def uses_anchors(self) -> bool:
        return self.variant not in ("fixed_patch", "fixed_dwt")

    def validate(self) -> "TrainConfig":
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant: {self.variant!r} not in {VARIANTS}")
        if not 0 < self.tau < 1:
            raise ConfigError("tau: must lie in (0, 1)")
        if self.levels < 1:
            raise ConfigError("levels: must be >= 1")
        if not 1 <= self.partition <= self.levels:
            raise ConfigError("partition: must lie in [1, levels]")
        if self.basis not in ("haar", "db4"):
            raise ConfigError("basis: must be 'haar' or 'db4'")
        for name in ("detail_dim", "context_dim", "heads", "max_context", "epochs", "batch_size", "patch", "patch_stride"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be >= 1")
        if self.kernel % 2 == 0:
            raise ConfigError("kernel: must be odd for same padding")
        if self.context_dim % self.heads or self.dim % self.heads:
            raise ConfigError("heads: must divide context_dim and detail_dim + context_dim")
        if self.dim < 4:
            raise ConfigError("detail_dim + context_dim must be >= 4")
        if self.lambda_rec < 0:
            raise ConfigError("lambda_rec: must be >= 0")
        if not 0 < self.lr_min <= self.lr_max:
            raise ConfigError("lr_min/lr_max: need 0 < lr_min <= lr_max")
        if self.channel_mode not in ("shared", "per_channel"):
            raise ConfigError("channel_mode: must be 'shared' or 'per_channel'")
        if self.precision not in ("float32", "float64"):
            raise ConfigError("precision: must be 'float32' or 'float64'")
        self.data.validate()
        if self.patch > self.data.length:
            raise ConfigError("patch: longer than the signal")
        return self

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["data"]["amplitude"] = list(self.data.amplitude)
        out["data"]["duration"] = list(self.data.duration)
        return out

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> "TrainConfig":
        validate_schema(raw, "train_config.schema.json")
        raw = dict(raw)
        data = dict(raw.pop("data", {}))
        for key in ("amplitude", "duration"):
            if key in data:
                data[key] = tuple(data[key])
        known = {f.name for f in fields(cls)}
        cfg = cls(**{k: v for k, v in raw.items() if k in known}, data=SynthSpec(**data))
        return cfg.validate()

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        return cls.from_dict(raw)


def load_schema(name: str) -> dict[str, Any]:
    return json.loads(resources.files("wavetok.schemas").joinpath(name).read_text())


def validate_schema(document: Any, schema_name: str) -> None:
    """Raise :class:`ConfigError` naming the offending field."""
    schema = load_schema(schema_name)
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(document), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = ".".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {err.message}")
