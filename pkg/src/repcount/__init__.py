"""Repetition counting from per-frame feature sequences.

A temporal aggregator and multi-stage TCN predict per-frame start
probabilities; training adds a self-similarity regularizer built from the
annotated repetition intervals, and counts come from prominence-filtered
peaks of the predicted series.
"""
from .counting import count_repetitions, find_peaks, make_target
from .data import AnnotationTrack, EmbeddingSequence, SyntheticSpec, generate_sequence
from .metrics import evaluate, mae, oboa
from .network import NetworkConfig, NetworkState, TrainConfig, forward, predict, train
from .similarity import SimilarityMeasure, predicted_tsm, reference_tsm

__version__ = "0.1.0"
