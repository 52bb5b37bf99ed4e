"""Run configuration with every default materialized.

The tuning grids below are the ones searched on validation accuracy; values
off-grid are accepted (small smoke runs need them) but reported by
:meth:`RunConfig.off_grid`.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

GRIDS = {
    "lam": (1, 2, 3, 4, 5),
    "n_neg": (1, 5, 10, 20, 50),
    "s": (5, 10, 20),
    "epochs": (50, 100, 150, 200),
    "lr_feat": (0.01, 0.001, 0.0001),
    "lr_struct": (0.01, 0.001, 0.0001),
}
RATIO_GRIDS = {
    "small": (0.005, 0.01, 0.025),
    "medium": (0.001, 0.005, 0.01),
    "large": (0.0005, 0.0025, 0.005),
}
SCHEDULES = ("cosine", "linear", "step")


@dataclass
class EvalConfig:
    hidden: int = 64
    dropout: float = 0.5
    lr: float = 0.01
    weight_decay: float = 5e-4
    max_epochs: int = 500
    patience: int = 50
    sets: int = 5
    repeats: int = 5


@dataclass
class RunConfig:
    ratio: float = 0.01
    lam: float = 2.0
    K: int | None = None
    s: int = 10
    epochs: int = 200
    lr_feat: float = 0.01
    lr_struct: float = 0.001
    tau1: int = 5
    tau2: int = 15
    n_neg: int = 10
    seed: int = 0
    mlp_hidden: int = 256
    delta_init: float = 0.5
    schedule: str = "cosine"
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if isinstance(self.eval, dict):
            self.eval = EvalConfig(**self.eval)
        self.adam_betas = tuple(self.adam_betas)
        self.validate()

    def validate(self):
        def need(cond, path, msg):
            if not cond:
                raise ConfigError(f"{path}: {msg}")

        need(0 < self.ratio < 1, "ratio", f"must lie in (0, 1), got {self.ratio}")
        need(self.lam > 0, "lam", f"must be positive, got {self.lam}")
        need(self.K is None or int(self.K) >= 0, "K", "must be a nonnegative integer")
        for name in ("s", "epochs", "tau1", "n_neg", "mlp_hidden"):
            need(int(getattr(self, name)) >= 1, name, "must be >= 1")
        need(self.tau2 >= 0, "tau2", "must be >= 0")
        need(self.lr_feat > 0 and self.lr_struct > 0, "lr_feat/lr_struct", "must be positive")
        need(self.schedule in SCHEDULES, "schedule", f"must be one of {SCHEDULES}")
        need(self.schedule == "cosine", "schedule",
             f"{self.schedule!r} is reserved but not implemented; use 'cosine'")
        need(0 <= self.eval.dropout < 1, "eval.dropout", "must lie in [0, 1)")
        need(self.eval.sets >= 1 and self.eval.repeats >= 1, "eval.sets/eval.repeats", "must be >= 1")

    def off_grid(self) -> dict:
        return {k: getattr(self, k) for k, grid in GRIDS.items() if getattr(self, k) not in grid}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown config field")
        if "eval" in d:
            ek = {f.name for f in fields(EvalConfig)}
            bad = sorted(set(d["eval"]) - ek)
            if bad:
                raise ConfigError(f"eval.{bad[0]}: unknown config field")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{exc.lineno}: {exc.msg}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be an object")
        return cls.from_dict(doc)


def parse_ratio(text: str) -> float:
    """Accepts '0.01', '1%', '2.5%'."""
    text = str(text).strip()
    try:
        if text.endswith("%"):
            return float(text[:-1]) / 100.0
        return float(text)
    except ValueError:
        raise ConfigError(f"ratio: cannot parse {text!r}") from None
