"""Morse: joint lemmatization and morphological tagging with a character-level encoder-decoder.

The numerical core (LSTM forward/backward, softmax cross-entropy, SGD) is
written directly in numpy; see :mod:`morse.kernels`.
"""
__version__ = "0.1.0"

from .data import Sentence, Token, Vocabulary, build_vocab, corpus_stats, parse_conllu, parse_trmor  # noqa: E402
from .model import MorseConfig, MorseParams, load_checkpoint, predict_sentence, save_checkpoint  # noqa: E402
from .training import TrainConfig, train, transfer_init  # noqa: E402
from .evaluation import evaluate, exact_accuracy, feature_f1  # noqa: E402

__all__ = [
    "Sentence", "Token", "Vocabulary", "build_vocab", "corpus_stats", "parse_conllu", "parse_trmor",
    "MorseConfig", "MorseParams", "load_checkpoint", "predict_sentence", "save_checkpoint",
    "TrainConfig", "train", "transfer_init", "evaluate", "exact_accuracy", "feature_f1",
]
