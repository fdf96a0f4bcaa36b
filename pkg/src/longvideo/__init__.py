"""Long video generation with a temporal lowpass filter bank, a fully
convolutional low-res video GAN and a per-frame conditional super-res GAN."""

from .augment import AdaController, AugPolicy, ada_augment, corrupt_conditioning, diffaug_clip, time_stretch
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, desk_config, load_config
from .data import ClipStore, SyntheticSceneSpec, generate_synthetic, ingest, sample_clip
from .discriminator import DiscriminatorConfig, VideoDiscriminator
from .filterbank import FilterBank, NoiseStream, context_padding, design_bank, enrich
from .generator import (LowResGenerator, SynthesisConfig, analytic_receptive_field, generate, generate_window,
                        measure_receptive_field)
from .metrics import (FrechetStats, RandomFrameExtractor, RandomVideoExtractor, color_similarity,
                      feature_distance_curve, fid_v, frechet_distance, fvd, similarity_curve)
from .superres import SRConfig, SRDiscriminator, SRGenerator, condition_dropout, sr_generate, sr_video
from .training import (LowResTrainer, SuperResTrainer, TrainConfig, ema_update, gan_losses, r1_penalty,
                       train_lowres, train_superres)

__version__ = "0.1.0"
