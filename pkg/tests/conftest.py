"""Shared factories for the test suite. Everything is seeded explicitly;
no test depends on global RNG state."""
import dataclasses

import numpy as np
import pytest

from ttt_lm import AttnParams, Tensor
from ttt_lm.layer import InnerModelKind, init_ttt_params


def make_attn_params(rng, hd, ed, scale=None):
    sc = scale if scale is not None else 1.0 / np.sqrt(ed)
    return AttnParams(theta_k=Tensor(rng.normal(0.0, sc, (hd, ed))),
                      theta_q=Tensor(rng.normal(0.0, sc, (hd, ed))),
                      theta_v=Tensor(rng.normal(0.0, sc, (hd, ed))))


def make_layer_params(rng, ed, heads, kind, b, gate_scale=1.0):
    """Random layer parameters with a non-degenerate step-size gate."""
    p = init_ttt_params(rng, ed, heads, kind, b)
    if gate_scale:
        p = dataclasses.replace(
            p, theta_lr=Tensor(rng.normal(0.0, gate_scale, ed)))
    return p


@pytest.fixture
def rng():
    return np.random.default_rng(0)
