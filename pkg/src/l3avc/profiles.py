"""Named size profiles tying together model, front end and sampling settings."""

from __future__ import annotations

from dataclasses import dataclass, field

from .audio import SpectrogramConfig
from .corpus import AugmentConfig, PairConfig, SyntheticSpec
from .model import L3Config


@dataclass(frozen=True)
class Profile:
    name: str
    model: L3Config
    pairs: PairConfig
    synthetic: SyntheticSpec
    batch_size: int
    lr: float = 1e-4
    transfer_size: int = 256   # square input used for visual transfer features
    extra: dict = field(default_factory=dict)


PAPER = Profile(
    name="paper",
    model=L3Config(),
    pairs=PairConfig(SpectrogramConfig(), AugmentConfig(256, 224)),
    synthetic=SyntheticSpec(image_size=(256, 320), sample_rate=48000, clips_per_class=16),
    batch_size=256,
)

# Desk-scale profile: 32 x 32 frames, 1 kHz audio with 64 ms windows (33 bands x
# 30 windows), trunks at 1/8 width.  Sized so a training run fits a single core.
TINY = Profile(
    name="tiny",
    model=L3Config(vision_input=(32, 32), spectrogram_input=(33, 30), width_multiplier=0.125),
    pairs=PairConfig(SpectrogramConfig(sample_rate=1000, window_sec=0.064, fft_size=64),
                     AugmentConfig(resize_short=37, crop=32)),
    synthetic=SyntheticSpec(image_size=(40, 48), sample_rate=1000),
    batch_size=64,
    lr=1e-3,
    transfer_size=36,
)

PROFILES = {p.name: p for p in (PAPER, TINY)}


def get_profile(name):
    try:
        return PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}") from None
