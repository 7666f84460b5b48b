"""Video clips, synthetic corpus generation, directory I/O and AVC pair sampling."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, SpectrogramConfig, log_spectrogram, read_wav, resample, volume_jitter, write_wav

SPLITS = ("train", "val", "test")


class CorpusError(ValueError):
    pass


@dataclass
class VideoClip:
    id: str
    duration: float
    frame_times: np.ndarray           # seconds, strictly increasing
    frames: np.ndarray                # F x H x W x 3, float32 in [0, 1]
    audio: AudioBuffer | None = None
    label: int | None = None
    meta: dict = field(default_factory=dict)
    audio_path: Path | None = None
    _resampled: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.frame_times = np.asarray(self.frame_times, dtype=np.float64)
        if len(self.frame_times) == 0:
            raise CorpusError(f"clip {self.id}: no frames")
        if len(self.frame_times) != len(self.frames):
            raise CorpusError(f"clip {self.id}: {len(self.frames)} frames but {len(self.frame_times)} timestamps")
        if np.any(np.diff(self.frame_times) <= 0):
            raise CorpusError(f"clip {self.id}: frame timestamps must be strictly increasing")
        if self.frame_times[0] < 0 or self.frame_times[-1] > self.duration + 1e-9:
            raise CorpusError(f"clip {self.id}: frame timestamps outside [0, {self.duration}]")

    def audio_at(self, rate):
        """Audio track at ``rate`` Hz, loaded and resampled on first use."""
        if rate not in self._resampled:
            buf = self.audio
            if buf is None:
                if self.audio_path is None:
                    raise CorpusError(f"clip {self.id}: no audio")
                buf = self.audio = read_wav(self.audio_path)
            self._resampled[rate] = buf if buf.sample_rate == rate else resample(buf, rate)
        return self._resampled[rate]


@dataclass
class Corpus:
    clips: list
    splits: dict
    class_names: list | None = None

    def __post_init__(self):
        self._index = {c.id: c for c in self.clips}
        if len(self._index) != len(self.clips):
            raise CorpusError("duplicate clip ids")
        seen = []
        for name, ids in self.splits.items():
            seen.extend(ids)
            for i in ids:
                if i not in self._index:
                    raise CorpusError(f"split {name} names unknown clip {i}")
        if len(seen) != len(set(seen)):
            raise CorpusError("splits overlap")
        if set(seen) != set(self._index):
            raise CorpusError("splits do not cover every clip")
        if self.class_names is not None:
            for c in self.clips:
                if c.label is not None and not 0 <= c.label < len(self.class_names):
                    raise CorpusError(f"clip {c.id}: label {c.label} has no class name")

    def __getitem__(self, clip_id):
        return self._index[clip_id]

    def split(self, name):
        if name not in self.splits:
            raise CorpusError(f"unknown split {name!r}")
        return [self._index[i] for i in self.splits[name]]

    @property
    def labelled(self):
        return all(c.label is not None for c in self.clips)

    @property
    def num_classes(self):
        if self.class_names is not None:
            return len(self.class_names)
        return max(c.label for c in self.clips) + 1


# -- synthetic corpus --------------------------------------------------------

# class motif colours and per-variant background colours (RGB in [0, 1])
CLASS_COLOURS = np.array([
    [0.90, 0.10, 0.10], [0.10, 0.70, 0.15], [0.15, 0.25, 0.95], [0.95, 0.85, 0.10],
    [0.85, 0.20, 0.85], [0.10, 0.85, 0.85], [0.95, 0.55, 0.05], [0.55, 0.30, 0.10],
    [0.45, 0.95, 0.45], [0.40, 0.10, 0.55], [1.00, 1.00, 1.00], [0.10, 0.10, 0.10],
])
BACKGROUNDS = np.array([
    [0.30, 0.30, 0.35], [0.70, 0.75, 0.65], [0.35, 0.20, 0.15], [0.15, 0.35, 0.45],
    [0.55, 0.45, 0.60], [0.20, 0.40, 0.20], [0.60, 0.60, 0.40], [0.45, 0.20, 0.35],
])
SHAPES = ("disk", "square", "triangle", "cross", "ring", "diamond", "hbars", "vbars")
CLASS_NAMES = ("playing bass guitar", "lawn mowing", "typing", "playing accordion",
               "bowling", "playing clarinet", "tap dancing", "playing organ")


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 8
    clips_per_class: int = 32
    duration: float = 3.0
    image_size: tuple = (40, 48)
    sample_rate: int = 1000
    seed: int = 0
    decorrelated_fraction: float = 0.0
    variants: int = 4
    fps: float = 2.0
    split_fractions: tuple = (0.7, 0.1, 0.2)
    noise_level: float = 0.05

    def validate(self):
        if self.num_classes < 1 or self.clips_per_class < 1 or self.variants < 1:
            raise CorpusError("class, clip and variant counts must be positive")
        if self.duration < 1.0 or self.fps <= 0 or self.sample_rate <= 0:
            raise CorpusError("duration must be >= 1 s and fps, sample_rate positive")
        if min(self.image_size) < 1:
            raise CorpusError("image size must be positive")
        if not 0 <= self.decorrelated_fraction <= 1:
            raise CorpusError("decorrelated_fraction must lie in [0, 1]")
        if len(self.split_fractions) != 3 or abs(sum(self.split_fractions) - 1) > 1e-9:
            raise CorpusError("split_fractions must be three numbers summing to 1")


def class_fundamental(cls, spec):
    """Fundamental of a class's harmonic stack, as a fraction of Nyquist."""
    step = 0.22 / max(spec.num_classes - 1, 1)
    return 0.08 + step * (cls % max(spec.num_classes, 1))


def variant_tone(variant, spec):
    step = 0.22 / max(spec.variants - 1, 1)
    return 0.70 + step * variant


def _shape_mask(shape, yy, xx, cy, cx, r):
    dy, dx = (yy - cy) / r, (xx - cx) / r
    if shape == "disk":
        return dy ** 2 + dx ** 2 <= 1
    if shape == "square":
        return (np.abs(dy) <= 0.8) & (np.abs(dx) <= 0.8)
    if shape == "triangle":
        return (dy <= 0.8) & (dy >= -0.9 + 2 * np.abs(dx))
    if shape == "cross":
        return ((np.abs(dy) <= 0.3) & (np.abs(dx) <= 1)) | ((np.abs(dx) <= 0.3) & (np.abs(dy) <= 1))
    if shape == "ring":
        d = dy ** 2 + dx ** 2
        return (d <= 1) & (d >= 0.4)
    if shape == "diamond":
        return np.abs(dy) + np.abs(dx) <= 1
    if shape == "hbars":
        return (np.abs(dy) <= 0.9) & (np.abs(dx) <= 0.9) & (np.floor((dy + 1) * 2.5) % 2 == 0)
    if shape == "vbars":
        return (np.abs(dy) <= 0.9) & (np.abs(dx) <= 0.9) & (np.floor((dx + 1) * 2.5) % 2 == 0)
    raise ValueError(shape)


def _render_frames(rng, spec, cls, variant, times):
    h, w = spec.image_size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    bg = BACKGROUNDS[variant % len(BACKGROUNDS)]
    texture = rng.normal(0, 0.04, size=(h, w, 1))
    r = 0.18 * min(h, w)
    motifs = [(rng.uniform(r, h - r), rng.uniform(r, w - r), rng.normal(0, 0.03 * min(h, w), 2))
              for _ in range(2)]
    clutter = [(rng.uniform(0, h), rng.uniform(0, w), rng.uniform(0.04, 0.09) * min(h, w), rng.uniform(0, 1, 3))
               for _ in range(3)]
    shape = SHAPES[cls % len(SHAPES)]
    # 11 * m is never 0 mod 12 for 0 < m < 12: (shape, colour) stays unique below 96 classes
    colour = CLASS_COLOURS[(cls + 3 * (cls // len(SHAPES))) % len(CLASS_COLOURS)]
    frames = np.empty((len(times), h, w, 3), np.float32)
    for f, t in enumerate(times):
        img = np.broadcast_to(bg, (h, w, 3)) + texture
        for cy, cx, s, c in clutter:
            img = np.where(((np.abs(yy - cy) <= s) & (np.abs(xx - cx) <= s))[..., None], c, img)
        for cy, cx, vel in motifs:
            # slow drift, kept inside the frame
            py = np.clip(cy + vel[0] * t, r, h - r)
            px = np.clip(cx + vel[1] * t, r, w - r)
            img = np.where(_shape_mask(shape, yy, xx, py, px, r)[..., None], colour, img)
        frames[f] = np.clip(img, 0, 1)
    return frames


def _render_audio(rng, spec, cls, variant, n):
    nyq = spec.sample_rate / 2
    t = np.arange(n) / spec.sample_rate
    f0 = class_fundamental(cls, spec) * nyq * (1 + rng.uniform(-0.015, 0.015))
    sig = np.zeros(n)
    k = 1
    while k * f0 < 0.62 * nyq:
        sig += (0.8 ** (k - 1)) * np.sin(2 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi))
        k += 1
    sig += 0.6 * np.sin(2 * np.pi * variant_tone(variant, spec) * nyq * t + rng.uniform(0, 2 * np.pi))
    envelope = 1 + 0.3 * np.sin(2 * np.pi * rng.uniform(0.2, 0.6) * t + rng.uniform(0, 2 * np.pi))
    sig = sig * envelope
    sig = 0.5 * sig / np.abs(sig).max()
    sig += rng.normal(0, spec.noise_level, n)
    return np.clip(sig, -1, 1), f0


def generate_synthetic_corpus(spec=SyntheticSpec()):
    """Deterministic labelled corpus of procedural clips.

    Each class pairs a shape/colour motif with a harmonic stack; each clip also
    carries a variant (background colour <-> extra tone) so that negatives from
    the same class are usually still distinguishable.  A ``decorrelated_fraction``
    of clips get the audio of a random other class.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n_frames = max(1, int(math.floor(spec.duration * spec.fps)))
    times = (np.arange(n_frames) + 0.5) / spec.fps
    n_samples = int(round(spec.duration * spec.sample_rate))
    total = spec.num_classes * spec.clips_per_class
    n_decor = int(round(spec.decorrelated_fraction * total))
    decorrelated = set(rng.choice(total, size=n_decor, replace=False).tolist()) if n_decor else set()
    clips = []
    splits = {s: [] for s in SPLITS}
    for cls in range(spec.num_classes):
        order = rng.permutation(spec.clips_per_class)
        n_train = int(round(spec.split_fractions[0] * spec.clips_per_class))
        n_val = int(round(spec.split_fractions[1] * spec.clips_per_class))
        for k in range(spec.clips_per_class):
            idx = cls * spec.clips_per_class + k
            clip_id = f"c{cls:02d}_{k:04d}"
            variant = k % spec.variants
            crng = np.random.default_rng([spec.seed, idx])
            frames = _render_frames(crng, spec, cls, variant, times)
            audio_cls, audio_variant = cls, variant
            if idx in decorrelated and spec.num_classes > 1:
                audio_cls = (cls + 1 + int(crng.integers(spec.num_classes - 1))) % spec.num_classes
                audio_variant = int(crng.integers(spec.variants))
            samples, f0 = _render_audio(crng, spec, audio_cls, audio_variant, n_samples)
            clips.append(VideoClip(
                clip_id, spec.duration, times, frames, AudioBuffer(samples, spec.sample_rate), cls,
                meta={"variant": variant, "audio_class": audio_cls, "audio_variant": audio_variant,
                      "fundamental_hz": f0, "decorrelated": audio_cls != cls}))
            pos = int(np.where(order == k)[0][0])
            split = "train" if pos < n_train else "val" if pos < n_train + n_val else "test"
            splits[split].append(clip_id)
    names = [CLASS_NAMES[i] if i < len(CLASS_NAMES) else f"class {i}" for i in range(spec.num_classes)]
    return Corpus(clips, splits, names)


# -- directory layout --------------------------------------------------------

def write_ppm(path, image):
    img = np.clip(np.round(np.asarray(image) * 255), 0, 255).astype(np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def _ppm_tokens(data, count):
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(data) and chr(data[pos]).isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not chr(data[pos]).isspace():
            pos += 1
        if start == pos:
            break
        tokens.append(data[start:pos])
    return tokens, pos + 1


def read_ppm(path):
    """Binary P6 PPM with maxval 255 -> H x W x 3 float32 in [0, 1]."""
    data = Path(path).read_bytes()
    if data[:2] != b"P6":
        raise CorpusError(f"{path}: not a binary P6 PPM")
    tokens, pos = _ppm_tokens(data, 3)
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise CorpusError(f"{path}: malformed PPM header") from exc
    if maxval != 255 or w < 1 or h < 1:
        raise CorpusError(f"{path}: only 8-bit PPM with positive size is supported")
    pixels = np.frombuffer(data, dtype=np.uint8, count=min(h * w * 3, max(len(data) - pos, 0)), offset=min(pos, len(data)))
    if pixels.size != h * w * 3:
        raise CorpusError(f"{path}: expected {h * w * 3} bytes of pixel data, found {pixels.size}")
    return pixels.reshape(h, w, 3).astype(np.float32) / 255.0


def export_corpus(corpus, root):
    """Write ``<root>/<clip>/audio.wav``, ``frames/<ms>.ppm``, ``label.txt`` plus ``splits.txt``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for clip in corpus.clips:
        d = root / clip.id
        (d / "frames").mkdir(parents=True, exist_ok=True)
        write_wav(d / "audio.wav", clip.audio if clip.audio is not None else read_wav(clip.audio_path))
        for t, img in zip(clip.frame_times, clip.frames):
            write_ppm(d / "frames" / f"{int(round(t * 1000)):08d}.ppm", img)
        if clip.label is not None:
            (d / "label.txt").write_text(f"{clip.label}\n")
    with open(root / "splits.txt", "w") as f:
        for name, ids in corpus.splits.items():
            for i in ids:
                f.write(f"{name}\t{i}\n")
    if corpus.class_names is not None:
        (root / "classes.txt").write_text("".join(f"{n}\n" for n in corpus.class_names))


def _hash_split(clip_id):
    bucket = zlib.crc32(clip_id.encode("utf-8")) % 10
    return "train" if bucket < 8 else "val" if bucket == 8 else "test"


def ingest_directory(path):
    """Load a corpus laid out as written by :func:`export_corpus`.

    ``splits.txt`` and ``classes.txt`` are optional; without a split file each
    clip is assigned by a hash of its id (80/10/10).
    """
    root = Path(path)
    if not root.is_dir():
        raise CorpusError(f"{root}: not a directory")
    clips = []
    for d in sorted(p for p in root.iterdir() if p.is_dir()):
        frame_dir = d / "frames"
        files = sorted(frame_dir.glob("*.ppm"), key=lambda p: int(p.stem)) if frame_dir.is_dir() else []
        if not files:
            raise CorpusError(f"{d}: clip has no frames")
        wav = d / "audio.wav"
        if not wav.is_file():
            raise CorpusError(f"{d}: missing audio.wav for clip {d.name}")
        try:
            times = np.array([int(p.stem) / 1000.0 for p in files])
        except ValueError as exc:
            raise CorpusError(f"{d}: frame names must be integer milliseconds") from exc
        frames = np.stack([read_ppm(p) for p in files])
        audio = read_wav(wav)
        label = None
        if (d / "label.txt").is_file():
            try:
                label = int((d / "label.txt").read_text().strip())
            except ValueError as exc:
                raise CorpusError(f"{d / 'label.txt'}: expected a single integer") from exc
        duration = max(audio.duration, float(times[-1]))
        clips.append(VideoClip(d.name, duration, times, frames, audio, label, audio_path=wav))
    if not clips:
        raise CorpusError(f"{root}: no clip directories")
    splits = {s: [] for s in SPLITS}
    split_file = root / "splits.txt"
    if split_file.is_file():
        for line in split_file.read_text().splitlines():
            if line.strip():
                name, clip_id = line.split("\t")
                splits.setdefault(name, []).append(clip_id)
    else:
        for c in clips:
            splits[_hash_split(c.id)].append(c.id)
    names = None
    if (root / "classes.txt").is_file():
        names = [n for n in (root / "classes.txt").read_text().splitlines() if n]
    return Corpus(clips, splits, names)


# -- augmentation ------------------------------------------------------------

def _resize_axis(img, size, axis):
    n = img.shape[axis]
    if n == size:
        return img
    src = (np.arange(size) + 0.5) * (n / size) - 0.5
    src = np.clip(src, 0, n - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = (src - i0).astype(img.dtype)
    shape = [1] * img.ndim
    shape[axis] = size
    frac = frac.reshape(shape)
    return np.take(img, i0, axis=axis) * (1 - frac) + np.take(img, i1, axis=axis) * frac


def resize_bilinear(img, height, width):
    return _resize_axis(_resize_axis(img, height, 0), width, 1)


def scaled_size(h, w, short_side):
    """Size after scaling so the shorter side equals ``short_side``."""
    if h <= w:
        return short_side, int(round(w * short_side / h))
    return int(round(h * short_side / w)), short_side


@dataclass(frozen=True)
class AugmentConfig:
    resize_short: int = 256
    crop: int = 224
    brightness: float = 0.125
    saturation: float = 0.2


def augment_frame(image, rng, train_mode=True, cfg=AugmentConfig()):
    """Scale shortest side, crop (random or centre), flip and colour-jitter."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3 or image.shape[2] != 3 or min(image.shape[:2]) < 1:
        raise CorpusError(f"expected an H x W x 3 image with H, W >= 1, got {image.shape}")
    h, w = scaled_size(image.shape[0], image.shape[1], cfg.resize_short)
    img = resize_bilinear(image, h, w)
    c = cfg.crop
    if train_mode:
        top = int(rng.integers(0, h - c + 1))
        left = int(rng.integers(0, w - c + 1))
    else:
        top, left = (h - c) // 2, (w - c) // 2
    img = img[top:top + c, left:left + c]
    if train_mode:
        if rng.random() < 0.5:
            img = img[:, ::-1]
        img = img + rng.uniform(-cfg.brightness, cfg.brightness)
        luma = img @ np.array([0.299, 0.587, 0.114], dtype=np.float32)
        s = rng.uniform(1 - cfg.saturation, 1 + cfg.saturation)
        img = luma[..., None] + s * (img - luma[..., None])
    return np.clip(img, 0, 1).astype(np.float32)


# -- pair sampling -----------------------------------------------------------

@dataclass(frozen=True)
class PairConfig:
    spectrogram: SpectrogramConfig = SpectrogramConfig()
    augment: AugmentConfig = AugmentConfig()
    volume_change: float = 0.1


@dataclass
class AVCPair:
    frame: np.ndarray          # crop x crop x 3
    spectrogram: np.ndarray    # bands x windows
    label: int                 # 1 = corresponds, 0 = mismatch
    frame_clip: str
    audio_clip: str
    frame_time: float
    audio_start: float


def _audio_window(clip, rate, clip_samples, rng, lo, hi):
    audio = clip.audio_at(rate)
    last = audio.samples.size - clip_samples
    if last < 0:
        raise CorpusError(f"clip {clip.id} is shorter than {clip_samples / rate:.3f} s")
    i_lo = min(max(math.ceil(lo * rate - 1e-9), 0), last)
    i_hi = max(min(math.floor(hi * rate + 1e-9), last), i_lo)
    i0 = int(rng.integers(i_lo, i_hi + 1))
    return AudioBuffer(audio.samples[i0:i0 + clip_samples], rate), i0 / rate


def sample_avc_pair(corpus, split, positive, rng, cfg=PairConfig(), train_mode=True, clips=None):
    """One (frame, spectrogram) pair; positives overlap in time within one clip."""
    pool = clips if clips is not None else corpus.split(split)
    if not pool or (not positive and len(pool) < 2):
        raise CorpusError(f"split {split!r} has too few clips to sample from")
    spec = cfg.spectrogram
    frame_clip = pool[int(rng.integers(len(pool)))]
    fi = int(rng.integers(len(frame_clip.frame_times)))
    t_f = float(frame_clip.frame_times[fi])
    if positive:
        audio_clip = frame_clip
        lo = max(0.0, t_f - spec.clip_sec)
        hi = min(t_f, audio_clip.duration - spec.clip_sec)
    else:
        j = int(rng.integers(len(pool) - 1))
        audio_clip = pool[j if pool[j] is not frame_clip else len(pool) - 1]
        lo, hi = 0.0, audio_clip.duration - spec.clip_sec
    if audio_clip.duration < spec.clip_sec:
        raise CorpusError(f"clip {audio_clip.id} is shorter than {spec.clip_sec} s")
    buf, start = _audio_window(audio_clip, spec.sample_rate, spec.clip_samples, rng, lo, hi)
    if train_mode:
        buf = volume_jitter(buf, rng, cfg.volume_change)
    frame = augment_frame(frame_clip.frames[fi], rng, train_mode, cfg.augment)
    return AVCPair(frame, log_spectrogram(buf, spec), int(positive),
                   frame_clip.id, audio_clip.id, t_f, start)


@dataclass
class PairBatch:
    images: np.ndarray         # N x 3 x H x W
    spectrograms: np.ndarray   # N x 1 x F x T
    labels: np.ndarray
    provenance: list


def sample_avc_batch(corpus, split, batch_size, rng, cfg=PairConfig(), train_mode=True):
    """Exactly half positives (rounded down), in shuffled order."""
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    clips = corpus.split(split)
    flags = np.zeros(batch_size, dtype=bool)
    flags[: batch_size // 2] = True
    flags = rng.permutation(flags)
    pairs = [sample_avc_pair(corpus, split, bool(p), rng, cfg, train_mode, clips) for p in flags]
    return PairBatch(
        np.stack([p.frame for p in pairs]).transpose(0, 3, 1, 2).copy(),
        np.stack([p.spectrogram for p in pairs])[:, None],
        np.array([p.label for p in pairs]),
        [(p.frame_clip, p.audio_clip, p.frame_time, p.audio_start) for p in pairs])


def worker_rng(seed, worker):
    """Independent stream for data-loading worker ``worker`` under base ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(worker,)))


def separability_accuracy(corpus, cfg=SpectrogramConfig(), train="train", test="test"):
    """Nearest-centroid class accuracy on time-averaged spectrograms.

    Each clip is summarised by the mean spectrogram column of its first second.
    Used as a sanity oracle: a corpus the trained model should find learnable
    scores well above chance here.
    """
    def describe(clips):
        feats = []
        for c in clips:
            buf = c.audio_at(cfg.sample_rate)
            seg = AudioBuffer(buf.samples[: cfg.clip_samples], cfg.sample_rate)
            feats.append(log_spectrogram(seg, cfg).mean(axis=1))
        return np.array(feats), np.array([c.label for c in clips])

    xtr, ytr = describe(corpus.split(train))
    xte, yte = describe(corpus.split(test))
    classes = np.unique(ytr)
    centroids = np.stack([xtr[ytr == k].mean(axis=0) for k in classes])
    d = ((xte[:, None, :] - centroids[None]) ** 2).sum(axis=2)
    return float(np.mean(classes[d.argmin(axis=1)] == yte))


def sample_labelled_batch(corpus, split, modality, batch_size, rng, cfg=PairConfig(), train_mode=True):
    """Class-labelled single-modality batch: frames (N x 3 x H x W) or spectrograms (N x 1 x F x T)."""
    clips = corpus.split(split)
    if not clips:
        raise CorpusError(f"split {split!r} is empty")
    spec = cfg.spectrogram
    xs, ys = [], []
    for _ in range(batch_size):
        clip = clips[int(rng.integers(len(clips)))]
        if clip.label is None:
            raise CorpusError(f"clip {clip.id} has no label")
        if modality == "vision":
            fi = int(rng.integers(len(clip.frame_times)))
            xs.append(augment_frame(clip.frames[fi], rng, train_mode, cfg.augment).transpose(2, 0, 1))
        else:
            buf, _ = _audio_window(clip, spec.sample_rate, spec.clip_samples, rng, 0.0, clip.duration - spec.clip_sec)
            if train_mode:
                buf = volume_jitter(buf, rng, cfg.volume_change)
            xs.append(log_spectrogram(buf, spec)[None])
        ys.append(clip.label)
    return np.stack(xs), np.array(ys)
