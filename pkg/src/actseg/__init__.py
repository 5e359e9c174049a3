"""Semi-supervised activity segmentation of trajectories with partially
hidden CRFs, MEMMs and a generative PHMM baseline."""

from .seqdata import (ACTIVITY_ALPHABET, LabelAlphabet, LabeledSequence, MaskSpec, SynthConfig,
                      load_dataset, mask_labels, save_dataset, synthesize)
from .features import FeatureConfig, FeatureIndex
from .modelfile import load_model, save_model

__version__ = "0.1.0"

__all__ = [
    "ACTIVITY_ALPHABET", "FeatureConfig", "FeatureIndex", "LabelAlphabet", "LabeledSequence",
    "MaskSpec", "SynthConfig", "load_dataset", "load_model", "mask_labels", "save_dataset",
    "save_model", "synthesize",
]
