"""Seeding scheme shared by every stochastic component.

All randomness comes from numpy's PCG64 bit generator. A run seed and a
fixed stream id are combined through ``SeedSequence([seed, stream])``, so
parameter init, data sampling, quantization noise, subsampling and
synthetic data draw from independent, reproducible streams.
"""

from __future__ import annotations

import numpy as np

INIT = 0
DATA = 1
NOISE = 2
SUBSAMPLE = 3
SYNTH = 4


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(stream)])))
