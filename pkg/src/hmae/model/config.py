from __future__ import annotations

from dataclasses import asdict, dataclass, fields


class ConfigError(ValueError):
    pass


def _from_dict(cls, data: dict):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    return cls(**kwargs)


@dataclass(frozen=True)
class ModelConfig:
    token_dim: int
    n_sites: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    decoder_layers: int = 2
    dropout: float = 0.1
    max_seq_len: int = 128
    ffn_mult: int = 4

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if min(self.token_dim, self.n_sites, self.d_model, self.n_heads, self.max_seq_len) < 1:
            raise ConfigError("dimensions must be positive")
        if self.n_layers < 0 or self.decoder_layers < 0:
            raise ConfigError("layer counts must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")

    @classmethod
    def full_scale(cls, token_dim: int, n_sites: int) -> "ModelConfig":
        return cls(token_dim, n_sites, d_model=512, n_layers=6, n_heads=8)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return _from_dict(cls, data)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 64
    weight_decay: float = 1e-5
    grad_clip: float = 1.0
    warmup_fraction: float = 0.05
    total_steps: int = 1000
    lambdas: tuple[float, float, float] = (0.6, 0.3, 0.1)
    eps_norm: float = 1e-6
    normalized_loss: bool = True
    seed: int = 0

    def __post_init__(self):
        lam = tuple(float(x) for x in self.lambdas)
        if len(lam) != 3 or min(lam) < 0 or abs(sum(lam) - 1.0) > 1e-9:
            raise ConfigError(f"lambdas must be three non-negative weights summing to 1, got {self.lambdas}")
        object.__setattr__(self, "lambdas", lam)
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.batch_size < 1 or self.total_steps < 0:
            raise ConfigError("batch_size must be >= 1 and total_steps >= 0")
        if not 0 <= self.warmup_fraction < 1:
            raise ConfigError("warmup_fraction must be in [0, 1)")

    @property
    def warmup_steps(self) -> int:
        return int(round(self.warmup_fraction * self.total_steps))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambdas"] = list(self.lambdas)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        return _from_dict(cls, data)
