"""Throughput maximisation for an IRS-assisted wireless-powered link.

Modules: :mod:`channel` (fading draws, features, datasets), :mod:`evaluator`
(closed-form throughput), :mod:`autodiff` (reverse-mode engine),
:mod:`irsnet` (the unsupervised network), :mod:`baselines` (GA, random
configuration, grid oracle) and :mod:`bench` (experiments and reports).
"""
from .channel import (ChannelRealization, Dataset, FeatureVector, SystemParams, build_features,
                      dbm_to_watt, feature_length, generate_dataset, pathloss_variance,
                      read_dataset, sample_channels)
from .evaluator import PhaseConfig, batch_loss, sinr, throughput
from .rng import Stream

__version__ = "0.1.0"
