"""Video clip storage, ingestion, sampling and a procedural scrolling dataset.

On disk a store is a directory holding ``manifest.json`` and one directory
per clip with ``high/`` and ``low/`` subdirectories of zero-padded PNG frames.
Frames are 8-bit on disk and real-valued in [-1, 1] in memory.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from scipy.ndimage import gaussian_filter

from .layers import prefiltered_downsample

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
FORMAT = "longvideo-clipstore"
VERSION = 1
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}


def to_unit(frames: np.ndarray) -> torch.Tensor:
    """uint8 ``[T, H, W, 3]`` -> float ``[T, 3, H, W]`` in [-1, 1]."""
    x = torch.from_numpy(np.ascontiguousarray(frames)).permute(0, 3, 1, 2).float()
    return x / 127.5 - 1.0


def to_uint8(video: torch.Tensor) -> np.ndarray:
    """float ``[T, 3, H, W]`` in [-1, 1] -> uint8 ``[T, H, W, 3]`` (clamped, rounded)."""
    x = ((video.detach().float().clamp(-1, 1) + 1.0) * 127.5).round()
    return x.to(torch.uint8).permute(0, 2, 3, 1).cpu().numpy()


def derive_low(high: np.ndarray, factor: int) -> np.ndarray:
    """Prefiltered ``factor``x downsample of uint8 frames ``[T, H, W, 3]``."""
    x = torch.from_numpy(high).permute(0, 3, 1, 2).double() / 255.0
    y = prefiltered_downsample(x, factor)
    y = (y.clamp(0, 1) * 255.0).round().to(torch.uint8)
    return y.permute(0, 2, 3, 1).numpy()


@dataclass
class ClipInfo:
    id: str
    frames: int
    fps: float


@dataclass
class ClipStore:
    root: Path
    clips: list[ClipInfo]
    fps: float
    aspect: float
    low: tuple[int, int]
    high: tuple[int, int]
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def factor(self) -> int:
        return self.high[0] // self.low[0]

    def manifest(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "fps": self.fps,
            "aspect": self.aspect,
            "low": list(self.low),
            "high": list(self.high),
            "clips": [asdict(c) for c in self.clips],
        }

    def write_manifest(self):
        with open(self.root / MANIFEST, "w") as f:
            json.dump(self.manifest(), f, indent=2)

    @classmethod
    def open(cls, root: str | os.PathLike, validate: bool = False) -> "ClipStore":
        root = Path(root)
        path = root / MANIFEST
        if not path.exists():
            raise FileNotFoundError(f"no clip store manifest at {path}")
        with open(path) as f:
            m = json.load(f)
        if m.get("format") != FORMAT:
            raise ValueError(f"{path} is not a clip store manifest")
        if m.get("version", 0) > VERSION:
            raise ValueError(f"clip store version {m['version']} is newer than supported ({VERSION})")
        store = cls(root, [ClipInfo(**c) for c in m["clips"]], float(m["fps"]), float(m["aspect"]),
                    tuple(m["low"]), tuple(m["high"]))
        if validate:
            store.validate()
        return store

    def frame_path(self, clip_id: str, level: str, index: int) -> Path:
        return self.root / clip_id / level / f"{index:06d}.png"

    def validate(self):
        for c in self.clips:
            for level in ("high", "low"):
                d = self.root / c.id / level
                n = len([p for p in d.iterdir() if p.suffix == ".png"]) if d.is_dir() else 0
                if n != c.frames:
                    raise ValueError(f"clip {c.id}: {level} has {n} frames, manifest says {c.frames}")

    def read(self, clip_id: str, level: str = "low", start: int = 0, stop: int | None = None) -> np.ndarray:
        """uint8 frames ``[n, H, W, 3]`` of one clip."""
        key = (clip_id, level)
        if key in self._cache:
            return self._cache[key][start:stop]
        info = self.info(clip_id)
        stop = info.frames if stop is None else stop
        if not 0 <= start <= stop <= info.frames:
            raise IndexError(f"frames [{start}, {stop}) out of range for clip {clip_id} ({info.frames} frames)")
        return np.stack([np.asarray(Image.open(self.frame_path(clip_id, level, i)).convert("RGB"))
                         for i in range(start, stop)])

    def info(self, clip_id: str) -> ClipInfo:
        for c in self.clips:
            if c.id == clip_id:
                return c
        raise KeyError(clip_id)

    def preload(self, level: str = "low") -> "ClipStore":
        """Keep every clip of ``level`` in memory for fast sampling."""
        for c in self.clips:
            if (c.id, level) not in self._cache:
                self._cache[(c.id, level)] = self.read(c.id, level)
        return self

    def size(self, level: str) -> tuple[int, int]:
        return self.low if level == "low" else self.high


def sample_clip(store: ClipStore, T: int, rng: np.random.Generator, level: str = "low",
                return_index: bool = False):
    """A uniformly chosen clip of at least T frames, then a uniform start offset."""
    eligible = [c for c in store.clips if c.frames >= T]
    if not eligible:
        raise ValueError(f"no clip in {store.root} has at least {T} frames")
    c = eligible[int(rng.integers(len(eligible)))]
    start = int(rng.integers(c.frames - T + 1))
    video = to_unit(store.read(c.id, level, start, start + T))
    return (video, c.id, start) if return_index else video


def sample_batch(store: ClipStore, batch: int, T: int, rng: np.random.Generator, level: str = "low") -> torch.Tensor:
    return torch.stack([sample_clip(store, T, rng, level) for _ in range(batch)])


# --- ingestion --------------------------------------------------------------


def parse_aspect(aspect) -> float:
    """``"16:9"``, ``"1:1"`` or a number -> width / height."""
    if isinstance(aspect, str):
        if ":" in aspect:
            a, b = aspect.split(":")
            return float(a) / float(b)
        return float(aspect)
    return float(aspect)


def center_crop_to_aspect(img: Image.Image, aspect: float) -> Image.Image:
    W, H = img.size
    if W / H > aspect:
        w = round(H * aspect)
        left = (W - w) // 2
        return img.crop((left, 0, left + w, H))
    h = round(W / aspect)
    top = (H - h) // 2
    return img.crop((0, top, W, top + h))


def _read_source(path: Path) -> tuple[list[Image.Image], float]:
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise ValueError(f"no image frames in {path}")
        fps = 30.0
        meta = path / "fps.txt"
        if meta.exists():
            fps = float(meta.read_text().strip())
        return [Image.open(p).convert("RGB") for p in files], fps
    import imageio.v3 as iio

    frames = iio.imread(path, index=None)
    try:
        fps = float(iio.immeta(path).get("fps", 30.0))
    except Exception:  # metadata is optional
        fps = 30.0
    if frames.ndim == 3:
        frames = frames[None]
    return [Image.fromarray(np.asarray(f)[..., :3]) for f in frames], fps


def ingest(source_dir, out_root, aspect="16:9", low=(36, 64), high=(144, 256), min_frames: int = 128) -> ClipStore:
    """Build a clip store from a directory of videos.

    Each entry of ``source_dir`` is a video file or a directory of frame
    images.  Frames are centre-cropped to ``aspect``, Lanczos-resized to
    ``high`` (H, W), and the low-res copy is a prefiltered integer downsample
    of the stored high-res frames.  Clips shorter than ``min_frames`` are
    dropped; unreadable sources are skipped with a warning.
    """
    source_dir, out_root = Path(source_dir), Path(out_root)
    aspect = parse_aspect(aspect)
    low, high = tuple(low), tuple(high)
    if high[0] % low[0] or high[1] % low[1] or high[0] // low[0] != high[1] // low[1]:
        raise ValueError(f"high {high} must be an integer multiple of low {low}")
    factor = high[0] // low[0]
    out_root.mkdir(parents=True, exist_ok=True)
    clips = []
    fps_seen = None
    for src in sorted(source_dir.iterdir()):
        if src.name.startswith("."):
            continue
        try:
            images, fps = _read_source(src)
        except Exception as e:
            log.warning("skipping unreadable source %s: %s", src, e)
            continue
        if len(images) < min_frames:
            log.info("dropping %s: %d frames < %d", src.name, len(images), min_frames)
            continue
        hi = np.stack([np.asarray(center_crop_to_aspect(im, aspect).resize((high[1], high[0]), Image.LANCZOS))
                       for im in images])
        lo = derive_low(hi, factor)
        clip_id = f"clip_{len(clips):05d}"
        _write_frames(out_root / clip_id, hi, lo)
        clips.append(ClipInfo(clip_id, len(images), fps))
        fps_seen = fps if fps_seen is None else fps_seen
    if not clips:
        raise ValueError(f"no usable clips in {source_dir}")
    store = ClipStore(out_root, clips, fps_seen, aspect, low, high)
    store.write_manifest()
    return store


def _write_frames(clip_dir: Path, high: np.ndarray, low: np.ndarray):
    for level, frames in (("high", high), ("low", low)):
        d = clip_dir / level
        d.mkdir(parents=True, exist_ok=True)
        for i, f in enumerate(frames):
            Image.fromarray(f).save(d / f"{i:06d}.png")


# --- procedural dataset -----------------------------------------------------


@dataclass
class SyntheticSceneSpec:
    """A side-scrolling landscape with sprites crossing it.

    ``velocity`` is in high-res pixels per frame; any non-zero value brings
    new background into view over time.
    """

    seed: int = 0
    velocity: float = 1.0
    sprite_rate: float = 0.05  # expected new sprites per frame
    palette_size: int = 5
    feature_scale: float = 0.35  # background blob size relative to frame height
    shading: float = 0.1
    velocity_jitter: float = 0.25  # per-clip relative speed spread
    edge_softness: float = 1.5 / 128  # blur sigma relative to frame height
    duration: int = 128

    def to_dict(self) -> dict:
        return asdict(self)


def _smooth_field(rng: np.random.Generator, H: int, W: int, sigma: float) -> np.ndarray:
    f = gaussian_filter(rng.standard_normal((H, W)), sigma, mode="wrap")
    f -= f.mean()
    return f / (f.std() + 1e-12)


def render_clip(spec: SyntheticSceneSpec, clip_seed: int, T: int, size: tuple[int, int]) -> np.ndarray:
    """Render one clip as uint8 ``[T, H, W, 3]``."""
    H, W = size
    rng = np.random.default_rng([spec.seed, clip_seed])
    velocity = spec.velocity * (1.0 + spec.velocity_jitter * rng.uniform(-1.0, 1.0))
    travel = int(math.ceil(abs(velocity) * (T - 1))) + 2
    tex_w = W + travel
    sigma = spec.feature_scale * H
    palette = rng.uniform(0.05, 0.95, size=(spec.palette_size, 3))
    # banded colour index along a smooth field, with gentle shading on top
    field = _smooth_field(rng, H, tex_w, sigma)
    edges = np.quantile(field, np.linspace(0, 1, spec.palette_size + 1)[1:-1])
    index = np.searchsorted(edges, field)
    tex = palette[index]
    tex = tex * (1.0 + spec.shading * _smooth_field(rng, H, tex_w, sigma / 3)[..., None])
    # soften band edges to about one low-res pixel so sub-pixel scroll
    # phases do not flicker through the downsampling filter
    soft = spec.edge_softness * H
    tex = gaussian_filter(tex, (soft, soft, 0), mode="wrap")
    if velocity < 0:
        tex = tex[:, ::-1]
    # sprites: (spawn frame, row, size, speed, colour)
    n_sprites = rng.poisson(spec.sprite_rate * (T + W))
    sprites = []
    for _ in range(n_sprites):
        sprites.append((rng.uniform(-W, T), rng.uniform(0, H), rng.uniform(0.12, 0.3) * H,
                        rng.uniform(0.5, 1.5) * max(abs(velocity), 0.5) + 0.5 * W / max(T, 1),
                        rng.uniform(0.0, 1.0, size=3)))
    frames = np.empty((T, H, W, 3))
    for t in range(T):
        shift = abs(velocity) * t
        i0 = int(math.floor(shift))
        frac = shift - i0
        frame = (1 - frac) * tex[:, i0:i0 + W] + frac * tex[:, i0 + 1:i0 + 1 + W]
        for spawn, row, r, speed, color in sprites:
            if t < spawn:
                continue
            cx = W + r - speed * (t - spawn)
            reach = r + 2 * soft
            x0, x1 = max(0, int(cx - reach)), min(W, int(cx + reach) + 2)
            y0, y1 = max(0, int(row - reach)), min(H, int(row + reach) + 2)
            if x0 >= x1 or y0 >= y1:
                continue
            yy, xx = np.mgrid[y0:y1, x0:x1].astype(np.float64)
            dist = np.maximum(np.abs(xx - cx), np.abs(yy - row))
            mask = np.clip((r - dist) / (2 * soft) + 0.5, 0, 1)[..., None]
            patch = frame[y0:y1, x0:x1]
            frame[y0:y1, x0:x1] = patch * (1 - mask) + color * mask
        frames[t] = frame
    return (np.clip(frames, 0, 1) * 255).round().astype(np.uint8)


def generate_synthetic(spec: SyntheticSceneSpec, n_clips: int, T: int | None, root,
                       high: tuple[int, int] = (128, 128), low: tuple[int, int] = (32, 32)) -> ClipStore:
    """Render ``n_clips`` clips of ``T`` frames into a clip store at ``root``."""
    T = T or spec.duration
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    factor = high[0] // low[0]
    if high[0] != low[0] * factor or high[1] != low[1] * factor:
        raise ValueError(f"high {high} must be an integer multiple of low {low}")
    clips = []
    for i in range(n_clips):
        hi = render_clip(spec, i, T, tuple(high))
        lo = derive_low(hi, factor)
        clip_id = f"clip_{i:05d}"
        _write_frames(root / clip_id, hi, lo)
        clips.append(ClipInfo(clip_id, T, 30.0))
    store = ClipStore(root, clips, 30.0, high[1] / high[0], tuple(low), tuple(high))
    store.write_manifest()
    spec_path = root / "synthetic.json"
    with open(spec_path, "w") as f:
        json.dump({"spec": spec.to_dict(), "n_clips": n_clips, "frames": T}, f, indent=2)
    return store


def sample_sr_window(store: ClipStore, rng: np.random.Generator, radius: int = 4, segment: int = 4):
    """One super-res training example.

    Returns ``(low, high, (clip_id, t))`` where ``high`` holds high-res frames
    ``t .. t + segment - 1`` and ``low`` the low-res frames
    ``t - radius .. t + segment - 1 + radius`` (clip edges replicated), so the
    conditioning stack for ``high[i]`` is ``low[i : i + 2 * radius + 1]``.
    """
    eligible = [c for c in store.clips if c.frames >= segment]
    if not eligible:
        raise ValueError(f"no clip in {store.root} has at least {segment} frames")
    c = eligible[int(rng.integers(len(eligible)))]
    t = int(rng.integers(c.frames - segment + 1))
    idx = np.clip(np.arange(t - radius, t + segment + radius), 0, c.frames - 1)
    lo = store.read(c.id, "low", int(idx.min()), int(idx.max()) + 1)[idx - idx.min()]
    hi = store.read(c.id, "high", t, t + segment)
    return to_unit(lo), to_unit(hi), (c.id, t)
