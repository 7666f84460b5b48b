"""Flat ``key = value`` run configuration shared by every CLI command."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # size profile: "paper" (224x224 frames, 257x199 spectrograms) or "tiny"
    profile: str = "paper"
    seed: int = 0
    # optimisation
    lr: float = 1e-4
    weight_decay: float = 1e-5
    batch_size: int = 256
    steps: int = 1000
    workers: int = 0
    eval_every: int = 0
    eval_pairs: int = 512
    bn_recal_batches: int = 16
    freeze_trunks: bool = False
    lr_grid: str = "1e-3,1e-4,1e-5"
    supervised_steps: int = 1000
    # paths
    corpus: str = ""
    out: str = ""
    ckpt: str = ""
    input: str = ""
    folds: str = ""
    # synthetic corpus
    classes: int = 8
    clips_per_class: int = 32
    decorrelated_fraction: float = 0.0
    variants: int = 4
    duration: float = 3.0
    # evaluation
    split: str = "test"
    pairs: int = 2000
    modality: str = "vision"
    start: float = 0.0
    subclips: int = 10
    svm_c: float = 1.0
    probe_steps: int = 500
    probe_lr: float = 1e-2
    # analysis
    top_k: int = 5
    top_n: int = 5
    threshold: int = 4
    kmeans_k: int = 64
    units: str = "0"
    items: int = 10

    def __post_init__(self):
        if self.modality not in ("vision", "audio"):
            raise ConfigError(f"modality must be vision or audio, got {self.modality!r}")
        if self.split not in ("train", "val", "test"):
            raise ConfigError(f"split must be train, val or test, got {self.split!r}")


DOCS = {
    "profile": "size profile: paper or tiny",
    "seed": "seed for every random choice",
    "lr": "Adam learning rate",
    "weight_decay": "L2 weight decay",
    "batch_size": "examples per step (half positive pairs for AVC)",
    "steps": "optimisation steps",
    "workers": "data-loading workers (0 = inline)",
    "eval_every": "val evaluation interval in steps (0 = never)",
    "eval_pairs": "val examples per evaluation",
    "bn_recal_batches": "batches used to re-estimate BN statistics after training",
    "freeze_trunks": "train only the fusion head",
    "lr_grid": "comma-separated learning rates for grid-lr",
    "supervised_steps": "steps for each supervised classifier in eval-baselines",
    "corpus": "corpus directory",
    "out": "output directory (must not already hold outputs)",
    "ckpt": "checkpoint file",
    "input": "input file (WAV for spectrogram)",
    "folds": "fold file, one fold of clip ids per line",
    "classes": "synthetic classes",
    "clips_per_class": "synthetic clips per class",
    "decorrelated_fraction": "fraction of synthetic clips with unrelated audio",
    "variants": "synthetic background/overtone variants per class",
    "duration": "synthetic clip length in seconds",
    "split": "corpus split to evaluate or analyse",
    "pairs": "evaluation pairs",
    "modality": "vision or audio",
    "start": "spectrogram window start in seconds",
    "subclips": "1 s subclips per recording for audio transfer",
    "svm_c": "SVM regularisation constant",
    "probe_steps": "linear-probe optimisation steps",
    "probe_lr": "linear-probe peak learning rate",
    "top_k": "items listed per unit ranking",
    "top_n": "top items inspected per unit for high-preference counting",
    "threshold": "items of one class among top_n that flag a high preference",
    "kmeans_k": "k-means clusters",
    "units": "comma-separated unit indices for heatmaps",
    "items": "items per unit for heatmaps",
}


def _field_types():
    return {f.name: f.type for f in fields(RunConfig)}


def coerce(key, raw):
    """Parse a string value for ``key`` according to its declared type."""
    types = _field_types()
    if key not in types:
        raise ConfigError(f"unknown config key {key!r}")
    kind = types[key]
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r} (expected {kind})") from None


def parse_config_text(text, source="<config>"):
    values = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        try:
            values[key] = coerce(key, raw)
        except ConfigError as exc:
            raise ConfigError(f"{source}:{n}: {exc}") from None
    return values


def load_config(path=None, overrides=None):
    """File values first, then overrides (already typed) on top."""
    values = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"{p}: config file not found")
        values.update(parse_config_text(p.read_text(encoding="utf-8"), str(p)))
    values.update(overrides or {})
    return RunConfig(**values)


def format_config(cfg):
    lines = [f"# schema {SCHEMA_VERSION}"]
    for key, value in asdict(cfg).items():
        if isinstance(value, bool):
            value = str(value).lower()
        lines.append(f"{key} = {value}  # {DOCS[key]}")
    return "\n".join(lines) + "\n"
