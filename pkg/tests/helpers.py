"""Shared test utilities."""

import numpy as np

from octdenoise import models


def relu_margin(fn) -> float:
    """Smallest |pre-activation| any relu sees while ``fn`` runs."""
    seen = []
    real = models.relu

    def spy(t):
        seen.append(np.abs(t.data).min())
        return real(t)

    models.relu = spy
    try:
        fn()
    finally:
        models.relu = real
    return float(min(seen))


def kink_free(build, loss_for, margin=0.02, tries=200):
    """First seeded model whose relus all stay ``margin`` away from zero.

    Central differences straddling a relu kink are not gradients, so the
    check is run at a point where a 1e-3 step cannot cross one. Biases are
    drawn at random because zero biases pin dead channels onto the kink.
    """
    for seed in range(tries):
        model = build(seed)
        rng = np.random.default_rng(seed)
        for k, p in model.params.items():
            if k.endswith(".b"):
                p.data = rng.normal(0, 0.5, p.shape)
        if relu_margin(lambda: loss_for(model)) > margin:
            return model
    raise AssertionError("no kink-free point found")
