import numpy as np


def random_attention(rng, b, n, l, sharpness=None, sink=None):
    """Causal row-stochastic tensor [b, n, l, l] from random scores."""
    sharp = rng.uniform(0.5, 4.0) if sharpness is None else sharpness
    scores = rng.standard_normal((b, n, l, l)) * sharp
    if sink is None:
        sink = rng.uniform(0, 4)
    scores[..., 0] += sink
    scores[..., np.triu(np.ones((l, l), dtype=bool), 1)] = -np.inf
    scores -= scores.max(axis=-1, keepdims=True)
    w = np.exp(scores)
    return w / w.sum(axis=-1, keepdims=True)
