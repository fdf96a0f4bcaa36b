"""Augmentations for both training regimes.

* Low-res discriminator: DiffAug (color, translation, cutout) with one set of
  parameters per clip shared by all its frames, plus fractional time
  stretching.
* Super-res discriminator: a small adaptive (ADA-style) pipeline applied
  identically to the low- and high-res segments, driven by an integral
  controller on the sign of real logits.
* Super-res conditioning: mild corruption of real low-res videos (noise,
  scaling, rotation, fractional translation).

Every function takes an explicit ``torch.Generator`` so callers own the
random streams.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import torch
import torch.nn.functional as F


@dataclass
class AugPolicy:
    color: bool = True
    cutout: bool = True
    translation: bool = True
    max_translation: int = 32  # pixels; 16 for widescreen data
    cutout_ratio: float = 0.5
    brightness: float = 0.5  # shift ~ U(-b, b)
    saturation: float = 1.0  # factor ~ U(1 - s, 1 + s)
    contrast: float = 0.5  # factor ~ U(1 - c, 1 + c)
    time_stretch: bool = True
    stretch_exponent: tuple[float, float] = (-1.0, 1.0)
    noise_std: float = 0.08
    scale_std: float = 0.08
    aniso_std: float = 0.08
    rotate_max: float = 0.016
    xfrac_std: float = 0.016
    corrupt_prob: float = 0.5
    ada_target: float = 0.6
    ada_kimg: float = 500.0
    ada_p_max: float = 0.85

    def __post_init__(self):
        self.stretch_exponent = tuple(float(v) for v in self.stretch_exponent)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stretch_exponent"] = list(self.stretch_exponent)
        return d


def _uniform(n, lo, hi, generator, like):
    return torch.rand(n, generator=generator, dtype=like.dtype) * (hi - lo) + lo


def diffaug_params(batch: int, size: tuple[int, int], policy: AugPolicy, generator=None) -> dict:
    """Draw one set of DiffAug parameters per clip."""
    H, W = size
    p = {}
    ref = torch.zeros(())
    if policy.color:
        p["brightness"] = _uniform(batch, -policy.brightness, policy.brightness, generator, ref)
        p["saturation"] = _uniform(batch, 1 - policy.saturation, 1 + policy.saturation, generator, ref)
        p["contrast"] = _uniform(batch, 1 - policy.contrast, 1 + policy.contrast, generator, ref)
    if policy.translation:
        m = policy.max_translation
        p["shift"] = torch.randint(-m, m + 1, (batch, 2), generator=generator)
    if policy.cutout:
        ch, cw = int(H * policy.cutout_ratio + 0.5), int(W * policy.cutout_ratio + 0.5)
        cy = torch.randint(0, H + (1 - ch % 2), (batch,), generator=generator)
        cx = torch.randint(0, W + (1 - cw % 2), (batch,), generator=generator)
        p["cutout"] = (torch.stack([cy, cx], 1), (ch, cw))
    return p


def apply_diffaug(video: torch.Tensor, params: dict) -> torch.Tensor:
    """Apply per-clip parameters to ``video[B, T, C, H, W]``; every frame of a
    clip gets the same transform."""
    x = video
    B, T, C, H, W = x.shape
    if "brightness" in params:
        x = x + params["brightness"].to(x).view(B, 1, 1, 1, 1)
        mean_c = x.mean(dim=2, keepdim=True)
        x = (x - mean_c) * params["saturation"].to(x).view(B, 1, 1, 1, 1) + mean_c
        # contrast is measured per frame so frames stay independent
        mean_all = x.mean(dim=(2, 3, 4), keepdim=True)
        x = (x - mean_all) * params["contrast"].to(x).view(B, 1, 1, 1, 1) + mean_all
    if "shift" in params:
        x = translate(x, params["shift"])
    if "cutout" in params:
        centers, (ch, cw) = params["cutout"]
        yy = torch.arange(H).view(1, H, 1)
        xx = torch.arange(W).view(1, 1, W)
        cy = centers[:, 0].view(B, 1, 1) - ch // 2
        cx = centers[:, 1].view(B, 1, 1) - cw // 2
        hole = (yy >= cy) & (yy < cy + ch) & (xx >= cx) & (xx < cx + cw)
        x = x * (~hole).to(x).view(B, 1, 1, H, W)
    return x


def translate(x: torch.Tensor, shift: torch.Tensor) -> torch.Tensor:
    """Integer translation by ``shift[B] = (dy, dx)`` with zero fill."""
    B, T, C, H, W = x.shape
    out = torch.zeros_like(x)
    for b in range(B):
        dy, dx = int(shift[b, 0]), int(shift[b, 1])
        ys, yd = (slice(0, H - dy), slice(dy, H)) if dy >= 0 else (slice(-dy, H), slice(0, H + dy))
        xs, xd = (slice(0, W - dx), slice(dx, W)) if dx >= 0 else (slice(-dx, W), slice(0, W + dx))
        if ys.stop > ys.start and xs.stop > xs.start:
            out[b, :, :, yd, xd] = x[b, :, :, ys, xs]
    return out


def diffaug_clip(video: torch.Tensor, policy: AugPolicy, generator=None, return_params=False):
    """DiffAug for a batch of clips ``[B, T, C, H, W]`` (or one clip ``[T, C, H, W]``)."""
    squeeze = video.ndim == 4
    if squeeze:
        video = video[None]
    params = diffaug_params(video.shape[0], tuple(video.shape[-2:]), policy, generator)
    out = apply_diffaug(video, params)
    if squeeze:
        out = out[0]
    return (out, params) if return_params else out


# --- time stretching --------------------------------------------------------


def stretch_positions(T: int, a: float, generator=None) -> tuple[torch.Tensor, torch.Tensor]:
    """Source position (float) for every output frame, and a validity mask.

    Stretching by ``s = 2 ** a`` maps stretched frame ``j`` to source
    ``j / s``.  A longer result is randomly cropped back to ``T`` frames; a
    shorter one is zero-padded by a random amount before and after.
    """
    s = 2.0 ** a
    L = math.floor((T - 1) * s + 1e-9) + 1
    if L >= T:
        offset = int(torch.randint(0, L - T + 1, (1,), generator=generator))
        pos = (torch.arange(T, dtype=torch.float64) + offset) / s
        valid = torch.ones(T, dtype=torch.bool)
    else:
        before = int(torch.randint(0, T - L + 1, (1,), generator=generator))
        pos = torch.zeros(T, dtype=torch.float64)
        pos[before:before + L] = torch.arange(L, dtype=torch.float64) / s
        valid = torch.zeros(T, dtype=torch.bool)
        valid[before:before + L] = True
    return pos.clamp(0, T - 1), valid


def time_stretch(video: torch.Tensor, generator=None, a: float | None = None,
                 exponent_range=(-1.0, 1.0), return_params=False):
    """Fractional time stretch of one clip ``[T, ...]``; output length stays T."""
    T = video.shape[0]
    if a is None:
        lo, hi = exponent_range
        a = float(torch.rand((), generator=generator, dtype=torch.float64)) * (hi - lo) + lo
    pos, valid = stretch_positions(T, a, generator)
    i0 = pos.floor().long().clamp(0, T - 1)
    i1 = (i0 + 1).clamp(max=T - 1)
    frac = (pos - i0).to(video.dtype).view(-1, *([1] * (video.ndim - 1)))
    out = video[i0] * (1 - frac) + video[i1] * frac
    out = out * valid.to(video.dtype).view(-1, *([1] * (video.ndim - 1)))
    return (out, {"a": a, "pos": pos, "valid": valid}) if return_params else out


def augment_lowres(video: torch.Tensor, policy: AugPolicy, generator=None) -> torch.Tensor:
    """Discriminator-side augmentation for low-res clips ``[B, T, C, H, W]``."""
    x = diffaug_clip(video, policy, generator)
    if policy.time_stretch:
        x = torch.stack([time_stretch(clip, generator, exponent_range=policy.stretch_exponent) for clip in x])
    return x


# --- conditioning corruption ------------------------------------------------


def _affine_warp(x: torch.Tensor, theta: torch.Tensor) -> torch.Tensor:
    # x: [N, C, H, W], theta: [2, 3] in normalized coordinates
    grid = F.affine_grid(theta[None].expand(x.shape[0], -1, -1).to(x), list(x.shape), align_corners=False)
    return F.grid_sample(x, grid, mode="bilinear", padding_mode="reflection", align_corners=False)


def corruption_params(policy: AugPolicy, generator=None) -> dict:
    """Draw one corruption; each transform fires with ``policy.corrupt_prob``."""
    def fires():
        return float(torch.rand((), generator=generator)) < policy.corrupt_prob

    def normal():
        return float(torch.randn((), generator=generator))

    p = {}
    if fires():
        p["scale"] = 2.0 ** (normal() * policy.scale_std)
    if fires():
        p["aniso"] = 2.0 ** (normal() * policy.aniso_std)
    if fires():
        p["rotate"] = (float(torch.rand((), generator=generator)) * 2 - 1) * math.pi * policy.rotate_max
    if fires():
        p["xfrac"] = (normal() * policy.xfrac_std, normal() * policy.xfrac_std)
    if fires():
        p["noise_std"] = policy.noise_std
    return p


def corrupt_conditioning(frames: torch.Tensor, policy: AugPolicy, generator=None, return_params=False):
    """Corrupt a low-res stack or video ``[N, C, h, w]``; the same geometric
    transform and noise level hit every frame."""
    p = corruption_params(policy, generator)
    x = frames
    sx = sy = 1.0
    if "scale" in p:
        sx *= p["scale"]
        sy *= p["scale"]
    if "aniso" in p:
        sx *= p["aniso"]
        sy /= p["aniso"]
    rot = p.get("rotate", 0.0)
    tx, ty = p.get("xfrac", (0.0, 0.0))
    if {"scale", "aniso", "rotate", "xfrac"} & p.keys():
        # output->input mapping in normalized coordinates: inverse of scale-rotate-translate
        c, s = math.cos(rot), math.sin(rot)
        A = torch.tensor([[c / sx, s / sx], [-s / sy, c / sy]], dtype=torch.float64)
        t = -A @ torch.tensor([2 * tx, 2 * ty], dtype=torch.float64)
        theta = torch.cat([A, t[:, None]], dim=1)
        x = _affine_warp(x, theta)
    if "noise_std" in p:
        x = x + torch.randn(x.shape, generator=generator, dtype=x.dtype) * p["noise_std"]
    return (x, p) if return_params else x


# --- adaptive augmentation --------------------------------------------------


class AdaController:
    """Integral controller for the augmentation probability.

    ``update(rate)`` adds ``gain * (rate - target)`` and clamps to
    ``[0, p_max]``, where ``rate`` is the running mean of ``sign(D(real))``.
    """

    def __init__(self, target: float = 0.6, gain: float = 0.01, p_max: float = 0.85, p: float = 0.0):
        self.target = target
        self.gain = gain
        self.p_max = p_max
        self.p = p

    @classmethod
    def for_batch(cls, batch_size: int, interval: int = 4, ada_kimg: float = 500.0, **kw) -> "AdaController":
        # p can traverse [0, 1] in ada_kimg thousand images at unit error
        return cls(gain=batch_size * interval / (ada_kimg * 1000), **kw)

    def update(self, rate: float) -> float:
        self.p = min(self.p_max, max(0.0, self.p + self.gain * (rate - self.target)))
        return self.p

    def state_dict(self) -> dict:
        return {"target": self.target, "gain": self.gain, "p_max": self.p_max, "p": self.p}

    def load_state_dict(self, d: dict):
        self.__dict__.update(d)


def ada_controller(controller: AdaController, recent_disc_sign: float) -> float:
    return controller.update(recent_disc_sign)


def ada_augment(low: torch.Tensor, high: torch.Tensor, p: float, generator=None):
    """Apply the same random transforms to paired segments
    ``low[B, F, C, h, w]`` and ``high[B, F, C, H, W]``.

    Each transform fires per sample with probability ``p``: horizontal flip,
    integer translation (up to 1/8 of the image, in low-res pixels scaled to
    the high-res grid), brightness, contrast and saturation.
    """
    if p <= 0:
        return low, high
    B = low.shape[0]
    h, w = low.shape[-2:]
    factor = high.shape[-1] // w

    def gate():
        return torch.rand(B, generator=generator) < p

    flip = gate()
    if flip.any():
        low = torch.where(flip.view(B, 1, 1, 1, 1), low.flip(-1), low)
        high = torch.where(flip.view(B, 1, 1, 1, 1), high.flip(-1), high)
    shift_on = gate()
    m = max(1, w // 8)
    shift = torch.randint(-m, m + 1, (B, 2), generator=generator) * shift_on[:, None]
    if shift.any():
        low = translate(low, shift)
        high = translate(high, shift * factor)
    ref = torch.zeros((), dtype=low.dtype)
    b = torch.randn(B, generator=generator, dtype=ref.dtype) * 0.2 * gate()
    c = torch.exp2(torch.randn(B, generator=generator, dtype=ref.dtype) * 0.5 * gate())
    s = torch.exp2(torch.randn(B, generator=generator, dtype=ref.dtype) * 1.0 * gate())

    def color(x):
        v = (B, 1, 1, 1, 1)
        x = x + b.view(v)
        mean = x.mean(dim=(1, 2, 3, 4), keepdim=True)
        x = (x - mean) * c.view(v) + mean
        gray = x.mean(dim=2, keepdim=True)
        return (x - gray) * s.view(v) + gray

    return color(low), color(high)
