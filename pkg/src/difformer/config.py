"""Run configuration: defaults, the tiny CI profile, and key=value config files."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

SELF_ATTENTION_CHOICES = ("hks", "vanilla", "off")


@dataclass
class RunConfig:
    seed: int = 0
    points_per_frame: int = 1024
    k: int = 20
    d: int = 256
    heads: int = 4
    head_dim: int = 0  # 0 derives 2d / heads
    ode_steps: int = 4
    ode_t: float = 1.0
    ode_method: str = "rk4"
    hks_eigs: int = 64
    hks_times: int = 16
    topk_fraction: float = 0.75
    lr: float = 1e-4
    epochs: int = 50
    rr_trans_cm: float = 30.0
    rr_rot_deg: float = 1.0
    self_attention: str = "hks"
    rotation_error: str = "geodesic"  # or "euler"
    translation_error: str = "norm"  # or "per_axis"

    def __post_init__(self):
        if self.head_dim == 0:
            self.head_dim = (2 * self.d) // self.heads
        if self.heads * self.head_dim != 2 * self.d:
            raise ValueError(f"heads ({self.heads}) x head_dim ({self.head_dim}) must "
                             f"equal the attention width 2d = {2 * self.d}")
        if self.self_attention not in SELF_ATTENTION_CHOICES:
            raise ValueError(f"self_attention must be one of {SELF_ATTENTION_CHOICES}")

    @property
    def width(self) -> int:
        return 2 * self.d


# CI-speed profile: small feature width and frames, one integration step
TINY_PROFILE = {"d": 64, "points_per_frame": 256, "ode_steps": 1,
                "hks_eigs": 32, "hks_times": 8}


def make_config(tiny=False, **overrides) -> RunConfig:
    values = dict(TINY_PROFILE) if tiny else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def parse_config_file(path) -> dict:
    """Plain ``key = value`` lines; '#' starts a comment."""
    casts = {"int": int, "float": float, "str": str}
    types = {f.name: casts[f.type] for f in fields(RunConfig)}
    out = {}
    with open(path) as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{ln}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"{path}:{ln}: unknown config key '{key}'")
            out[key] = types[key](value)
    return out


def config_to_text(cfg: RunConfig) -> str:
    lines = [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(cfg)]
    return "\n".join(lines) + "\n"
