"""Run configuration: every hyperparameter with its default, loaded from JSON."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

from .completion import CompletionConfig
from .ensemble import EnsembleConfig, SynthesisConfig
from .xattn import XAttnConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # synthetic data
    dims: tuple[int, int, int] = (64, 64, 64)
    noise: float = 0.05
    missing_frac: float = 0.1
    unplayable_frac: float = 0.0
    # model sizes
    d: int = 64
    h: int = 64
    k: int = 10
    synth_hidden: int = 16
    # completion branch
    p: float = 0.3
    lam: float = 0.5
    # optimisation
    lr: float = 3e-3
    epochs: int = 40
    batch_size: int = 64
    patience: int = 8
    synth_lr: float = 1e-2
    synth_epochs: int = 300
    synth_patience: int = 30
    # regime
    min_author_samples: int = 20
    transform: str = "log1p"
    ratio: float = 0.8
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(x) for x in self.dims))
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ConfigError("dims must be three positive integers")
        for name in ("d", "h", "k", "synth_hidden", "epochs", "batch_size", "patience",
                     "synth_epochs", "synth_patience", "min_author_samples", "workers"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        for name in ("lr", "synth_lr"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 <= self.p <= 1:
            raise ConfigError("p must lie in [0, 1]")
        if self.lam < 0 or self.noise < 0:
            raise ConfigError("lam and noise must be >= 0")
        if not 0 < self.ratio < 1:
            raise ConfigError("ratio must lie in (0, 1)")
        if self.transform not in ("log1p", "identity"):
            raise ConfigError(f"transform must be log1p or identity, got {self.transform!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON ({e.msg})") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def override(self, **kw) -> "RunConfig":
        return RunConfig.from_dict({**self.to_dict(), **{k: v for k, v in kw.items() if v is not None}})

    def ensemble(self) -> EnsembleConfig:
        return EnsembleConfig(
            xattn=XAttnConfig(d=self.d, h=self.h, k=self.k, epochs=self.epochs, batch_size=self.batch_size,
                              lr=self.lr, patience=self.patience, seed=self.seed),
            completion=CompletionConfig(d=self.d, h=self.h, p=self.p, lam=self.lam, epochs=self.epochs,
                                        batch_size=self.batch_size, lr=self.lr, patience=self.patience,
                                        seed=self.seed),
            synthesis=SynthesisConfig(h=self.synth_hidden, epochs=self.synth_epochs, lr=self.synth_lr,
                                      patience=self.synth_patience, seed=self.seed),
            min_author_samples=self.min_author_samples,
            transform=self.transform,
            seed=self.seed,
            workers=self.workers,
        )
