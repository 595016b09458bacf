"""Disable a trained network by perturbing a few salient weights; restore it with a secret key."""

from .attacks import AttackerGuess, AttackReport, adaptive_attack, fine_tune_attack, prune_attack, prune_sweep
from .checkpoint import CheckpointError, digest, load_checkpoint, save_checkpoint
from .data import Dataset, EncryptionSet, load_idx, sample_encryption_set, split_dataset, synth_blobs
from .encryption import (EncryptionConfig, EncryptionOutcome, LayerSnapshot, PerturbRecord, choose_layers,
                         clip, encrypt, layer_gradient, perturbation, select_weight)
from .keystore import DigestMismatch, SecretKey, decrypt, load_key, make_key, save_key
from .metrics import EvalReport, accuracy_drop, stealth_report, weight_stats
from .nn import Network, evaluate_accuracy, mlp, small_cnn, train
from .pipeline import RunConfig, load_config

__version__ = "0.1.0"
