"""Training configuration as one JSON document; every field has a default."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..latent import KL_HEAD_STEPS, ConfigError
from ..networks import NetworkSpec
from ..objectives import DISC_ACCURACY_THRESHOLD, CoeffSet


@dataclass
class TrainConfig:
    network: NetworkSpec = field(default_factory=NetworkSpec)
    alpha1: float = 0.0003
    alpha2: float = 0.0002
    beta: float = 0.0125
    kappa: float = 0.02
    lr: float = 0.001
    batch_size: int = 32
    epochs: int = 10
    steps: int | None = None
    seed: int = 0
    flip: bool = True
    kl_head_steps: int = KL_HEAD_STEPS
    disc_threshold: float = DISC_ACCURACY_THRESHOLD
    use_gan: bool = True
    use_mi: bool = True

    def __post_init__(self):
        if isinstance(self.network, dict):
            self.network = NetworkSpec.from_dict(self.network)
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.steps is not None and self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        self.coeffs()

    def coeffs(self) -> CoeffSet:
        """Effective coefficients: ``use_gan``/``use_mi`` switch beta/kappa off."""
        return CoeffSet(self.alpha1, self.alpha2, self.beta if self.use_gan else 0.0,
                        self.kappa if self.use_mi else 0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["network"] = self.network.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(sorted(unknown))}")
        net = d.get("network", {})
        if isinstance(net, dict):
            net_known = {f.name for f in fields(NetworkSpec)}
            bad = set(net) - net_known
            if bad:
                raise ConfigError(f"unknown network fields: {', '.join(sorted(bad))}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        if not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        return cls.from_dict(d)
