"""Adversarial training for the low-res generator and the super-res network.

Both loops use the non-saturating logistic loss, lazy R1 on real inputs,
Adam with ``betas=(0, 0.99)`` and an EMA copy of the generator.  Each
discriminator and generator sub-step draws fresh noise and fresh real data.
All randomness flows from explicit generators that are saved in checkpoints,
so a run can be stopped and resumed exactly.
"""

from __future__ import annotations

import copy
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .augment import AdaController, AugPolicy, ada_augment, augment_lowres, corrupt_conditioning
from .checkpoint import load_checkpoint, save_checkpoint
from .data import ClipStore, sample_batch, sample_sr_window
from .discriminator import DiscriminatorConfig, VideoDiscriminator
from .filterbank import FilterBank
from .generator import LowResGenerator, SynthesisConfig
from .metrics import ConditionedSegments, GeneratorSegments, RandomVideoExtractor, StoreSegments, fvd
from .superres import (SEGMENT_FRAMES, STACK_RADIUS, SRConfig, SRDiscriminator, SRGenerator, build_stacks,
                       condition_dropout, sr_video)

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class TrainConfig:
    phase: str = "lowres"
    batch: int = 64
    frames: int = 128
    r1_gamma: float = 4.0
    r1_interval: int = 16
    lr_g: float = 0.003
    lr_d: float = 0.002
    betas: tuple[float, float] = (0.0, 0.99)
    ema_beta: float = 0.99985
    steps: int = 100000
    eval_every: int = 1000
    eval_segments: int = 2048
    eval_segment_len: int = 128
    eval_seed: int = 1234
    extractor_seed: int = 0
    ada_interval: int = 4
    log_every: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.phase not in ("lowres", "superres"):
            raise ValueError(f"phase must be 'lowres' or 'superres', got {self.phase!r}")
        self.betas = tuple(float(b) for b in self.betas)
        if self.batch < 1 or self.steps < 0 or self.r1_interval < 1:
            raise ValueError("batch and r1_interval must be positive, steps non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


def lowres_train_config(square: bool = True, **kw) -> TrainConfig:
    """Low-res defaults; R1 weight 4 for square data, 1 otherwise."""
    kw.setdefault("r1_gamma", 4.0 if square else 1.0)
    return TrainConfig(phase="lowres", **kw)


def superres_train_config(**kw) -> TrainConfig:
    base = dict(phase="superres", batch=32, frames=SEGMENT_FRAMES, r1_gamma=1.0, lr_g=0.003, lr_d=0.003,
                steps=275000, eval_segment_len=16)
    base.update(kw)
    return TrainConfig(**base)


# --- losses and updates -----------------------------------------------------


def gan_losses(real_logits: torch.Tensor, fake_logits: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Non-saturating logistic losses ``(loss_G, loss_D)``."""
    loss_g = F.softplus(-fake_logits).mean()
    loss_d = F.softplus(fake_logits).mean() + F.softplus(-real_logits).mean()
    return loss_g, loss_d


def r1_penalty(discriminator, real, gamma: float) -> torch.Tensor:
    """``(gamma / 2) * mean_b |d logit_b / d input_b|^2``.

    ``real`` is a tensor or a tuple of tensors (all passed to the
    discriminator and all penalized).
    """
    inputs = tuple(real) if isinstance(real, (tuple, list)) else (real,)
    inputs = tuple(x.detach().requires_grad_(True) for x in inputs)
    logits = discriminator(*inputs)
    grads = torch.autograd.grad(logits.sum(), inputs, create_graph=True)
    sq = sum(g.square().flatten(1).sum(dim=1) for g in grads)
    return 0.5 * gamma * sq.mean()


@torch.no_grad()
def ema_update(current, ema, beta: float):
    """``ema = beta * ema + (1 - beta) * current`` over parameters (and a
    plain copy of buffers).  Accepts modules or matching tensor sequences."""
    if isinstance(current, nn.Module):
        cur_p, ema_p = list(current.parameters()), list(ema.parameters())
        cur_b, ema_b = list(current.buffers()), list(ema.buffers())
    else:
        cur_p, ema_p, cur_b, ema_b = list(current), list(ema), [], []
    if len(cur_p) != len(ema_p) or len(cur_b) != len(ema_b):
        raise ValueError("parameter sets differ in length")
    for c, e in zip(cur_p, ema_p):
        if c.shape != e.shape:
            raise ValueError(f"shape mismatch {tuple(c.shape)} vs {tuple(e.shape)}")
        e.mul_(beta).add_(c.detach(), alpha=1.0 - beta)
    for c, e in zip(cur_b, ema_b):
        e.copy_(c)
    return ema


def make_ema(model: nn.Module) -> nn.Module:
    ema = copy.deepcopy(model).eval()
    for p in ema.parameters():
        p.requires_grad_(False)
    return ema


def adam(params, lr: float, betas) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=lr, betas=tuple(betas), eps=1e-8)


def _check_finite(step: int, values: dict):
    bad = {k: v for k, v in values.items() if not math.isfinite(v)}
    if bad:
        raise TrainingDiverged(f"non-finite loss at step {step}: {bad}")


def _set_requires_grad(module: nn.Module, flag: bool):
    for p in module.parameters():
        p.requires_grad_(flag)


def _rng_state(gen: torch.Generator, np_rng: np.random.Generator) -> dict:
    return {"torch": gen.get_state(), "numpy": np_rng.bit_generator.state}


def _load_rng(state: dict, gen: torch.Generator, np_rng: np.random.Generator):
    gen.set_state(state["torch"])
    np_rng.bit_generator.state = state["numpy"]


class MetricsLog:
    """Append-only JSON-lines log."""

    def __init__(self, path):
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def write(self, record: dict):
        if self.path:
            with open(self.path, "a") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")


def read_metrics(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


# --- trainers ----------------------------------------------------------------


class _Trainer:
    kind = ""
    eval_key = ""

    def __init__(self, cfg: TrainConfig, store: ClipStore, out_dir=None):
        self.cfg = cfg
        self.store = store
        self.out_dir = Path(out_dir) if out_dir else None
        self.step = 0
        self.best = math.inf
        self.gen = torch.Generator().manual_seed(cfg.seed)
        self.np_rng = np.random.default_rng(cfg.seed)
        self.log = MetricsLog(self.out_dir / "metrics.jsonl" if self.out_dir else None)
        self.extractor = RandomVideoExtractor(seed=cfg.extractor_seed, min_frames=min(16, cfg.eval_segment_len))

    # subclasses provide G, G_ema, D, opt_g, opt_d, configs(), train_step(), evaluate()

    def run(self, steps: int | None = None, callback=None) -> dict:
        """Train until ``steps`` (default ``cfg.steps``) total steps; evaluates
        and checkpoints every ``eval_every`` steps and at the end."""
        target = self.cfg.steps if steps is None else steps
        last = {}
        t0 = time.time()
        while self.step < target:
            last = self.train_step()
            if self.step % self.cfg.log_every == 0 or self.step == target:
                self.log.write({"step": self.step, **last})
                log.info("step %d %s (%.2fs/step)", self.step,
                         " ".join(f"{k}={v:.4g}" for k, v in last.items()), (time.time() - t0) / max(1, self.step))
            if self.cfg.eval_every and (self.step % self.cfg.eval_every == 0 or self.step == target):
                self.evaluate_and_checkpoint()
            if callback:
                callback(self, last)
        return last

    def evaluate_and_checkpoint(self) -> float:
        value = self.evaluate()
        self.log.write({"step": self.step, self.eval_key: value})
        log.info("step %d %s=%.4f", self.step, self.eval_key, value)
        if self.out_dir:
            if value < self.best:
                self.best = value
                self.save(self.out_dir / "best.ckpt")
            self.save(self.out_dir / "last.ckpt")
        else:
            self.best = min(self.best, value)
        return value

    def state(self) -> dict:
        return {
            "G": self.G.state_dict(), "G_ema": self.G_ema.state_dict(), "D": self.D.state_dict(),
            "opt_g": self.opt_g.state_dict(), "opt_d": self.opt_d.state_dict(),
            "rng": _rng_state(self.gen, self.np_rng),
        }

    def load_state(self, weights: dict):
        self.G.load_state_dict(weights["G"])
        self.G_ema.load_state_dict(weights["G_ema"])
        self.D.load_state_dict(weights["D"])
        self.opt_g.load_state_dict(weights["opt_g"])
        self.opt_d.load_state_dict(weights["opt_d"])
        _load_rng(weights["rng"], self.gen, self.np_rng)

    def save(self, path):
        meta = {"step": self.step, "best": self.best if math.isfinite(self.best) else None,
                "metric": self.eval_key}
        save_checkpoint(path, self.kind, self.configs(), self.state(), meta)

    def resume(self, path):
        manifest, weights = load_checkpoint(path, self.kind)
        self.load_state(weights)
        self.step = manifest["meta"]["step"]
        best = manifest["meta"].get("best")
        self.best = math.inf if best is None else best
        return self


class LowResTrainer(_Trainer):
    kind = "lowres"

    def __init__(self, cfg: TrainConfig, store: ClipStore, bank: FilterBank, synthesis: SynthesisConfig,
                 disc: DiscriminatorConfig, policy: AugPolicy | None = None, out_dir=None, level: str = "low"):
        super().__init__(cfg, store, out_dir)
        self.eval_key = f"fvd{cfg.eval_segment_len}"
        self.level = level
        self.policy = policy or AugPolicy()
        if disc.frames != cfg.frames:
            raise ValueError(f"discriminator expects {disc.frames} frames but training uses {cfg.frames}")
        if tuple(disc.resolution) != tuple(store.size(level)) or tuple(synthesis.output_size) != tuple(store.size(level)):
            raise ValueError(f"model resolutions {synthesis.output_size} / {disc.resolution} do not match the "
                             f"{level} data {store.size(level)}")
        if cfg.frames > synthesis.temporal_divisor and cfg.frames % synthesis.temporal_divisor:
            raise ValueError(f"sequence length {cfg.frames} must be a multiple of {synthesis.temporal_divisor}")
        torch.manual_seed(cfg.seed)
        self.G = LowResGenerator(bank, synthesis)
        self.D = VideoDiscriminator(disc)
        self.G_ema = make_ema(self.G)
        self.opt_g = adam(self.G.parameters(), cfg.lr_g, cfg.betas)
        self.opt_d = adam(self.D.parameters(), cfg.lr_d, cfg.betas)
        store.preload(level)

    def configs(self) -> dict:
        return {"bank": self.G.bank.spec(), "synthesis": self.G.config.to_dict(),
                "discriminator": self.D.config.to_dict(), "train": self.cfg.to_dict(),
                "augment": self.policy.to_dict(), "level": self.level}

    def reals(self) -> torch.Tensor:
        return sample_batch(self.store, self.cfg.batch, self.cfg.frames, self.np_rng, self.level)

    def augment(self, video: torch.Tensor) -> torch.Tensor:
        return augment_lowres(video, self.policy, self.gen)

    def fakes(self) -> torch.Tensor:
        """Fresh generated clips of ``cfg.frames``; sequences shorter than the
        generator's temporal divisor are random windows of one block."""
        T = self.cfg.frames
        td = self.G.config.temporal_divisor
        n = max(T, td)
        video = self.G(self.G.sample_noise(self.cfg.batch, n, self.gen))
        if n == T:
            return video
        start = int(torch.randint(0, n - T + 1, (1,), generator=self.gen))
        return video[:, start:start + T]

    def train_step(self) -> dict:
        cfg = self.cfg
        step = self.step + 1
        # discriminator
        _set_requires_grad(self.G, False)
        _set_requires_grad(self.D, True)
        real = self.augment(self.reals())
        with torch.no_grad():
            fake = self.fakes()
        real_logits = self.D(real)
        fake_logits = self.D(self.augment(fake))
        _, loss_d = gan_losses(real_logits, fake_logits)
        self.opt_d.zero_grad(set_to_none=True)
        loss_d.backward()
        out = {"loss_d": loss_d.item(), "real_logit": real_logits.mean().item(),
               "fake_logit": fake_logits.mean().item()}
        if step % cfg.r1_interval == 0 and cfg.r1_gamma > 0:
            r1 = r1_penalty(self.D, real, cfg.r1_gamma)
            (r1 * cfg.r1_interval).backward()
            out["r1"] = r1.item()
        self.opt_d.step()
        # generator
        _set_requires_grad(self.G, True)
        _set_requires_grad(self.D, False)
        fake = self.fakes()
        loss_g = F.softplus(-self.D(self.augment(fake))).mean()
        self.opt_g.zero_grad(set_to_none=True)
        loss_g.backward()
        self.opt_g.step()
        _set_requires_grad(self.D, True)
        ema_update(self.G, self.G_ema, cfg.ema_beta)
        out["loss_g"] = loss_g.item()
        _check_finite(step, out)
        self.step = step
        return out

    def evaluate(self, model: nn.Module | None = None) -> float:
        cfg = self.cfg
        model = model or self.G_ema
        frames = max(cfg.frames, model.config.temporal_divisor * math.ceil(cfg.eval_segment_len / model.config.temporal_divisor))
        gen = GeneratorSegments(model, frames=frames, per_video=max(1, frames // cfg.eval_segment_len))
        return fvd(StoreSegments(self.store, self.level), gen, cfg.eval_segment_len, cfg.eval_segments,
                   self.extractor, seed=cfg.eval_seed)

    @classmethod
    def from_checkpoint(cls, path, store: ClipStore, out_dir=None, **overrides) -> "LowResTrainer":
        manifest, _ = load_checkpoint(path, "lowres")
        c = manifest["configs"]
        cfg = replace(TrainConfig(**c["train"]), **overrides)
        t = cls(cfg, store, FilterBank.from_spec(c["bank"]), SynthesisConfig(**c["synthesis"]),
                DiscriminatorConfig(**c["discriminator"]), AugPolicy(**c["augment"]), out_dir, c.get("level", "low"))
        return t.resume(path)


class SuperResTrainer(_Trainer):
    kind = "superres"

    def __init__(self, cfg: TrainConfig, store: ClipStore, sr: SRConfig, policy: AugPolicy | None = None,
                 out_dir=None):
        super().__init__(cfg, store, out_dir)
        self.eval_key = f"fvd{cfg.eval_segment_len}"
        self.policy = policy or AugPolicy()
        if tuple(sr.low_size) != tuple(store.low) or tuple(sr.high_size) != tuple(store.high):
            raise ValueError(f"super-res sizes {sr.low_size} -> {sr.high_size} do not match the data "
                             f"{store.low} -> {store.high}")
        torch.manual_seed(cfg.seed)
        self.G = SRGenerator(sr)
        self.D = SRDiscriminator(sr)
        self.G_ema = make_ema(self.G)
        self.opt_g = adam(self.G.parameters(), cfg.lr_g, cfg.betas)
        self.opt_d = adam(self.D.parameters(), cfg.lr_d, cfg.betas)
        self.ada = AdaController.for_batch(cfg.batch, cfg.ada_interval, self.policy.ada_kimg,
                                           target=self.policy.ada_target, p_max=self.policy.ada_p_max)
        self.sign_sum = 0.0
        self.sign_count = 0
        self.dropped = 0
        self.seen = 0
        store.preload("low")
        store.preload("high")

    def configs(self) -> dict:
        return {"sr": self.G.config.to_dict(), "train": self.cfg.to_dict(), "augment": self.policy.to_dict()}

    def state(self) -> dict:
        s = super().state()
        s["ada"] = self.ada.state_dict()
        s["counters"] = {"sign_sum": self.sign_sum, "sign_count": self.sign_count,
                         "dropped": self.dropped, "seen": self.seen}
        return s

    def load_state(self, weights: dict):
        super().load_state(weights)
        self.ada.load_state_dict(weights["ada"])
        for k, v in weights["counters"].items():
            setattr(self, k, v)

    def batch(self):
        """Corrupted low-res windows ``[B, 4 + 8, 3, h, w]`` and high-res
        segments ``[B, 4, 3, H, W]``."""
        lows, highs = [], []
        for _ in range(self.cfg.batch):
            low, high, _ = sample_sr_window(self.store, self.np_rng, STACK_RADIUS, SEGMENT_FRAMES)
            lows.append(corrupt_conditioning(low, self.policy, self.gen))
            highs.append(high)
        return torch.stack(lows), torch.stack(highs)

    def fake(self, low_windows: torch.Tensor) -> torch.Tensor:
        B = low_windows.shape[0]
        stacks = torch.stack([build_stacks(w, range(STACK_RADIUS, STACK_RADIUS + SEGMENT_FRAMES)) for w in low_windows])
        z = torch.randn(B, self.G.config.z_dim, generator=self.gen)
        z = z[:, None].expand(-1, SEGMENT_FRAMES, -1).reshape(B * SEGMENT_FRAMES, -1)
        out = self.G(stacks.flatten(0, 1), z)
        return out.unflatten(0, (B, SEGMENT_FRAMES))

    def disc_inputs(self, low4, high4):
        low4, high4 = ada_augment(low4, high4, self.ada.p, self.gen)
        low4, mask = condition_dropout(low4, self.G.config.dropout_p, self.gen)
        self.dropped += int(mask.sum())
        self.seen += mask.numel()
        return low4, high4

    def train_step(self) -> dict:
        cfg = self.cfg
        step = self.step + 1
        _set_requires_grad(self.G, False)
        _set_requires_grad(self.D, True)
        low, high = self.batch()
        low4 = low[:, STACK_RADIUS:STACK_RADIUS + SEGMENT_FRAMES]
        with torch.no_grad():
            fake = self.fake(low)
        real_in = self.disc_inputs(low4, high)
        real_logits = self.D(*real_in)
        fake_logits = self.D(*self.disc_inputs(low4, fake))
        _, loss_d = gan_losses(real_logits, fake_logits)
        self.opt_d.zero_grad(set_to_none=True)
        loss_d.backward()
        out = {"loss_d": loss_d.item(), "real_logit": real_logits.mean().item(),
               "fake_logit": fake_logits.mean().item()}
        if step % cfg.r1_interval == 0 and cfg.r1_gamma > 0:
            r1 = r1_penalty(self.D, real_in, cfg.r1_gamma)
            (r1 * cfg.r1_interval).backward()
            out["r1"] = r1.item()
        self.opt_d.step()
        self.sign_sum += float(torch.sign(real_logits.detach()).sum())
        self.sign_count += real_logits.numel()
        if step % cfg.ada_interval == 0:
            self.ada.update(self.sign_sum / max(1, self.sign_count))
            self.sign_sum, self.sign_count = 0.0, 0
        # generator
        _set_requires_grad(self.G, True)
        _set_requires_grad(self.D, False)
        low, _ = self.batch()
        low4 = low[:, STACK_RADIUS:STACK_RADIUS + SEGMENT_FRAMES]
        fake = self.fake(low)
        loss_g = F.softplus(-self.D(*self.disc_inputs(low4, fake))).mean()
        self.opt_g.zero_grad(set_to_none=True)
        loss_g.backward()
        self.opt_g.step()
        _set_requires_grad(self.D, True)
        ema_update(self.G, self.G_ema, cfg.ema_beta)
        out.update(loss_g=loss_g.item(), ada_p=self.ada.p, dropout_frac=self.dropped / max(1, self.seen))
        _check_finite(step, out)
        self.step = step
        return out

    def evaluate(self, model: nn.Module | None = None) -> float:
        """FVD of super-resolved REAL low-res segments against real high-res."""
        cfg = self.cfg
        model = model or self.G_ema
        gen = ConditionedSegments(self.store, sr_fn(model))
        return fvd(StoreSegments(self.store, "high"), gen, cfg.eval_segment_len, cfg.eval_segments,
                   self.extractor, seed=cfg.eval_seed)

    @classmethod
    def from_checkpoint(cls, path, store: ClipStore, out_dir=None, **overrides) -> "SuperResTrainer":
        manifest, _ = load_checkpoint(path, "superres")
        c = manifest["configs"]
        cfg = replace(TrainConfig(**c["train"]), **overrides)
        t = cls(cfg, store, SRConfig(**c["sr"]), AugPolicy(**c["augment"]), out_dir)
        return t.resume(path)


def sr_fn(model: SRGenerator):
    """``fn(low_video, generator) -> high_video`` with one latent per video."""
    def fn(low, gen):
        z = torch.randn(model.config.z_dim, generator=gen)
        was = model.training
        model.eval()
        try:
            return sr_video(model, low, z)
        finally:
            model.train(was)
    return fn


def bilinear_fn(scale: int):
    def fn(low, gen):
        from .layers import bilinear_resize
        h, w = low.shape[-2:]
        return bilinear_resize(low, (h * scale, w * scale))
    return fn


def train_lowres(cfg: TrainConfig, store: ClipStore, bank: FilterBank, synthesis: SynthesisConfig,
                 disc: DiscriminatorConfig, policy: AugPolicy | None = None, out_dir=None) -> LowResTrainer:
    trainer = LowResTrainer(cfg, store, bank, synthesis, disc, policy, out_dir)
    trainer.run()
    return trainer


def train_superres(cfg: TrainConfig, store: ClipStore, sr: SRConfig, policy: AugPolicy | None = None,
                   out_dir=None) -> SuperResTrainer:
    trainer = SuperResTrainer(cfg, store, sr, policy, out_dir)
    trainer.run()
    return trainer
