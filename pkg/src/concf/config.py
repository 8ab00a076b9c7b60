"""Training configuration, validation, and flat key=value config files."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any


@dataclass
class TrainConfig:
    """Hyperparameters for the joint ranking + contrastive objective.

    Loss scaling: the ranking loss and the regularizer are per-batch means,
    the two contrastive terms keep their summed form, so their weights stay
    calibrated against a fixed batch size (recorded in run manifests as
    ``loss_scaling``).
    """

    d: int = 64
    n_layers: int = 3
    k_layer: int = 2          # structure-contrast layer; must be even, <= n_layers
    tau: float = 0.1
    alpha: float = 1.0
    lambda1: float = 1e-7     # structure-contrastive weight
    lambda2: float = 1e-7     # prototype-contrastive weight
    lambda3: float = 1e-4     # L2 regularization weight
    k_users: tuple[int, ...] = (1000,)
    k_items: tuple[int, ...] = (1000,)
    batch_size: int = 4096
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 200
    patience: int = 10
    seed: int = 42
    valid_user_cap: int | None = None
    kmeans_max_iters: int = 100
    kmeans_tol: float = 1e-6
    cluster_source: str = "base"   # "base" clusters the embedding table, "readout" the averaged layers
    dtype: str = "float64"

    def validate(self) -> None:
        """Raise ValueError naming the first offending field."""
        if self.d < 1:
            raise ValueError("d: must be >= 1")
        if self.n_layers < 1:
            raise ValueError("n_layers: must be >= 1")
        if self.k_layer % 2 != 0 or self.k_layer < 2:
            raise ValueError("k_layer: must be a positive even number")
        if self.k_layer > self.n_layers:
            raise ValueError("k_layer: must be <= n_layers")
        if self.tau <= 0:
            raise ValueError("tau: must be > 0")
        if self.alpha < 0:
            raise ValueError("alpha: must be >= 0")
        for name in ("lambda1", "lambda2", "lambda3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name}: must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size: must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr: must be > 0")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ValueError("beta1/beta2: must be in [0, 1)")
        if self.max_epochs < 1:
            raise ValueError("max_epochs: must be >= 1")
        if self.patience < 1:
            raise ValueError("patience: must be >= 1")
        if not self.k_users or any(k < 1 for k in self.k_users):
            raise ValueError("k_users: every cluster count must be >= 1")
        if not self.k_items or any(k < 1 for k in self.k_items):
            raise ValueError("k_items: every cluster count must be >= 1")
        if self.valid_user_cap is not None and self.valid_user_cap < 1:
            raise ValueError("valid_user_cap: must be >= 1 or unset")
        if self.cluster_source not in ("base", "readout"):
            raise ValueError("cluster_source: must be 'base' or 'readout'")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype: must be 'float64' or 'float32'")

    @property
    def backbone_tag(self) -> str:
        """Ablation label: plain ranking backbone when both contrastive weights are zero."""
        return "lightgcn-bpr" if self.lambda1 == 0 and self.lambda2 == 0 else "contrastive"

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, values: dict[str, Any]) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs: dict[str, Any] = {}
        for key, raw in values.items():
            if key not in known:
                raise ValueError(f"{key}: unknown config field")
            kwargs[key] = _coerce(key, raw)
        return cls(**kwargs)


def _coerce(key: str, raw: Any) -> Any:
    """Coerce a raw config value (possibly a string) to the field's type."""
    if key in ("k_users", "k_items"):
        if isinstance(raw, str):
            parts = [p for p in raw.replace(",", " ").split() if p]
            return tuple(int(p) for p in parts)
        return tuple(int(v) for v in raw)
    if key in ("d", "n_layers", "k_layer", "batch_size", "max_epochs", "patience", "seed",
               "kmeans_max_iters"):
        return int(raw)
    if key == "valid_user_cap":
        if raw is None or (isinstance(raw, str) and raw.lower() in ("none", "")):
            return None
        return int(raw)
    if key in ("tau", "alpha", "lambda1", "lambda2", "lambda3", "lr", "beta1", "beta2",
               "adam_eps", "kmeans_tol"):
        return float(raw)
    if key in ("cluster_source", "dtype"):
        return str(raw)
    return raw


def load_config_file(path: str | Path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; '#' starts a comment."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}: line {ln}: expected 'key = value'")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def save_config_file(path: str | Path, config: TrainConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in config.to_dict().items():
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            fh.write(f"{key} = {value}\n")
