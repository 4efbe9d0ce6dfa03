"""seqevade: insertion-based evasion of RNN sequence classifiers, desk scale.

The package is a small laboratory: a from-scratch reverse-mode autodiff core,
LSTM sequence classifiers in six pooling/direction variants, a generative
insertion model trained through a Gumbel-Softmax relaxation against a
substitute fit to hard labels of a black-box victim, a synthetic motif corpus
to stand in for real API-call data, and evaluation reports.
"""

from . import attack, autodiff, corpus, evaluate, params, seqnets

__version__ = "0.1.0"

__all__ = ["autodiff", "params", "seqnets", "attack", "corpus", "evaluate"]
