"""Bridge from JAX log densities to the sampler's (value, gradient) contract."""

from __future__ import annotations

import math

import numpy as np

import jax

jax.config.update("jax_enable_x64", True)


def logp_and_grad(log_density):
    """Compile a scalar JAX log density into ``f(u) -> (float, ndarray)``.

    Non-finite values map to -inf with a zero gradient so the sampler treats
    them as rejected states.
    """
    vg = jax.jit(jax.value_and_grad(log_density))

    def logp_fn(u):
        v, g = vg(u)
        v = v.item()
        if not math.isfinite(v):
            return -math.inf, np.zeros_like(u)
        return v, np.asarray(g)

    return logp_fn
