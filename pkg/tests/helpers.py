"""Shared builders for CLI-level tests."""

import dataclasses

from longvideo.config import BankConfig, MetricsConfig, desk_config, dump_config
from longvideo.discriminator import desk_discriminator_config
from longvideo.generator import desk_synthesis_config
from longvideo.superres import desk_sr_config


def tiny_config(root, sr_root=None, frames=32, steps=2, **kw):
    """Desk preset shrunk to 16x16 low-res and 16 -> 64 super-res."""
    cfg = desk_config(resolution=16, frames=frames)
    return dataclasses.replace(
        cfg,
        data=dataclasses.replace(cfg.data, root=str(root), sr_root=str(sr_root or root)),
        filterbank=BankConfig(n_filters=4, k_min=4, k_max=16),
        synthesis=desk_synthesis_config(16, channel_divisor=32, w_dim=16),
        discriminator=desk_discriminator_config(frames, 16, channel_divisor=32),
        superres=desk_sr_config(16, channel_divisor=32),
        augment=dataclasses.replace(cfg.augment, max_translation=2),
        train=dataclasses.replace(cfg.train, batch=2, steps=steps, eval_every=steps, eval_segments=8, log_every=1),
        train_superres=dataclasses.replace(cfg.train_superres, batch=2, steps=steps, eval_every=steps,
                                           eval_segments=8, log_every=1),
        metrics=MetricsConfig(segments=8, curve_clips=4, curve_frames=32, fidv_frames=64),
        **kw,
    )


def write_config(path, cfg):
    dump_config(cfg, path)
    return str(path)
