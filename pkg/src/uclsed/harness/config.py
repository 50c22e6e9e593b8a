import dataclasses
import json
from dataclasses import dataclass

from ..boundary import MARGIN_KINDS, MarginPolicy


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 1500
    gnn_layers: int = 2
    embed_dim: int = 256
    edl_hidden: int = 128
    beta: float = 0.1
    lambda1: float = 1.0
    lambda2: float = 0.1
    lambda3: float = 0.5
    learning_rate: float = 0.001
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    prototype_mode: str = "centroid"
    margin_policy: str = "uncertainty"
    fixed_margin: float = 0.1
    error_rate_scale: float = 0.1
    tau: float = 1.0
    apply_edl_per_view: bool = False
    share_encoder: bool = True
    common_normalization: str = "mean"
    euc_reduction: str = "mean"
    euc_confidence_grad: bool = False
    error_only: bool = False
    eps: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        for name in ("beta", "lambda1", "lambda2", "lambda3", "learning_rate", "fixed_margin",
                     "error_rate_scale", "eps", "adam_eps"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 1 or self.gnn_layers < 1 or self.embed_dim < 1 or self.edl_hidden < 1:
            raise ConfigError("epochs, gnn_layers, embed_dim and edl_hidden must be positive")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.prototype_mode not in ("learned", "centroid"):
            raise ConfigError(f"prototype_mode must be 'learned' or 'centroid', got {self.prototype_mode!r}")
        if self.margin_policy not in MARGIN_KINDS:
            raise ConfigError(f"margin_policy must be one of {MARGIN_KINDS}, got {self.margin_policy!r}")
        if self.common_normalization not in ("mean", "sum"):
            raise ConfigError("common_normalization must be 'mean' or 'sum'")
        if self.euc_reduction not in ("mean", "sum"):
            raise ConfigError("euc_reduction must be 'mean' or 'sum'")
        if not 0 < self.eps < 1:
            raise ConfigError("eps must lie in (0, 1)")

    @property
    def policy(self):
        return MarginPolicy(self.margin_policy, beta=self.beta, margin=self.fixed_margin,
                            scale=self.error_rate_scale)

    @property
    def effective_lambda1(self):
        # the error-rate margin ablation is the uncertainty-free baseline: no calibration loss
        return 0.0 if self.margin_policy == "error_rate" else self.lambda1

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        return cls(**d)

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        return cls.from_dict(d)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)
