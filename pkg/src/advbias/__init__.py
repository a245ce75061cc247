"""Smooth adversarial bias fields for grayscale radiograph-like images."""

from .attack import (
    ATTACKS,
    AttackConfig,
    AttackResult,
    NoiseAttackConfig,
    advsbf_attack,
    noise_bias_attack_bim,
    noise_bias_attack_fgsm,
    noise_bias_attack_mifgsm,
)
from .biasfield import BiasFieldParams, LogBiasField, eval_bias, param_count, total_variation
from .classifier import MlpClassifier, PhantomDataset, synth_dataset, train
from .imagekit import GrayImage, LogImage, coord_grid, from_log, load_pgm, save_pgm, to_log
from .interpret import InterpretMap, average_maps, optimize_map
from .tps import TpsBasis, TpsDisplacement, apply_tps, build_tps

__version__ = "0.1.0"
