"""Settings for the self-supervised model.

``paper`` mirrors the full-size architecture; ``mini`` keeps the same
objective at a size that trains on a laptop CPU in minutes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace


@dataclass(frozen=True)
class SSLConfig:
    preset: str = "paper"
    # quantizer
    G: int = 2
    V: int = 320
    entry_dim: int = 128
    # objective
    kappa: float = 0.1
    tau_start: float = 2.0
    tau_floor: float = 0.5
    tau_factor: float = 0.999995
    alpha: float = 0.1
    beta: float = 10.0
    K: int = 100
    # optimization
    pretrain_epochs: int = 200
    lr: float = 5e-4  # non-paper default
    batch_size: int = 8  # non-paper default
    max_samples: int = 16000  # non-paper default; crop length per utterance
    mask_prob: float = 0.15  # non-paper default
    mask_span: int = 3  # non-paper default
    # architecture
    conv_channels: int = 512
    conv_kernels: tuple[int, ...] = (10, 3, 3, 3, 3, 2, 2)
    conv_strides: tuple[int, ...] = (5, 2, 2, 2, 2, 2, 2)
    dim: int = 512
    ffn_dim: int = 2048
    heads: int = 8
    layers: int = 12
    pos_kernel: int = 127  # non-paper default
    q_dim: int = 256  # non-paper default

    def __post_init__(self):
        if self.G < 1 or self.V < 1 or self.K < 0:
            raise ValueError("require G >= 1, V >= 1 and K >= 0")
        if not 0 < self.tau_floor <= self.tau_start:
            raise ValueError("require 0 < tau_floor <= tau_start")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if len(self.conv_kernels) != len(self.conv_strides):
            raise ValueError("conv_kernels and conv_strides must have equal length")
        if self.dim % self.heads:
            raise ValueError("dim must be divisible by heads")
        if self.pos_kernel % 2 == 0:
            raise ValueError("pos_kernel must be odd")
        if not 0.0 <= self.mask_prob <= 1.0 or self.mask_span < 1:
            raise ValueError("mask_prob must lie in [0, 1] and mask_span >= 1")

    @property
    def total_stride(self) -> int:
        out = 1
        for s in self.conv_strides:
            out *= s
        return out

    @property
    def receptive_field(self) -> int:
        rf, jump = 1, 1
        for k, s in zip(self.conv_kernels, self.conv_strides):
            rf += (k - 1) * jump
            jump *= s
        return rf

    def frames_for(self, n_samples: int) -> int:
        """Encoder output length, applying the conv length formula layer by layer."""
        n = n_samples
        for k, s in zip(self.conv_kernels, self.conv_strides):
            if n < k:
                return 0
            n = (n - k) // s + 1
        return n

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_kernels"] = list(self.conv_kernels)
        d["conv_strides"] = list(self.conv_strides)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SSLConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown SSL config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("conv_kernels", "conv_strides"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


PAPER = SSLConfig()

MINI = replace(
    PAPER,
    preset="mini",
    V=32,
    entry_dim=16,
    K=10,
    conv_channels=64,
    conv_kernels=(10, 8, 4, 4),
    conv_strides=(5, 4, 2, 2),
    dim=64,
    ffn_dim=128,
    heads=2,
    layers=2,
    pos_kernel=15,
    q_dim=32,
)

PRESETS = {"paper": PAPER, "mini": MINI}


def preset(name: str, **overrides) -> SSLConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return replace(PRESETS[name], **overrides)
