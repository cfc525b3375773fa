"""Numerically stable logistic helpers shared by both stages."""

import math

import numpy as np


def sigmoid(z: float) -> float:
    """1 / (1 + exp(-z)), branching on sign so exp never overflows."""
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def expit(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def log1pexp(z) -> np.ndarray:
    """log(1 + exp(z)) without overflow."""
    z = np.asarray(z, dtype=np.float64)
    return np.logaddexp(0.0, z)


def logistic_loss(margin, y) -> float:
    """Mean negative log-likelihood of 0/1 labels under logits ``margin``."""
    margin = np.asarray(margin, dtype=np.float64)
    return float(np.mean(log1pexp(margin) - np.asarray(y) * margin))
