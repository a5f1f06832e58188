"""Additive Gaussian mechanism ``z = x + g``, ``g ~ N(0, sigma_z2 I)``.

Noise comes from NumPy's Philox counter-based generator. Each
``(seed, stream_id)`` pair keys an independent stream, so outputs are a pure
function of their inputs and streams can be drawn in any order or in parallel.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from cipgp.trace_io import SanitizedTrace, Trace

GENERATOR_NAME = f"numpy.random.Philox/standard_normal (numpy {np.__version__})"
SANITIZE_STREAM = 0


@dataclass(frozen=True)
class MechanismSpec:
    sigma_z2: float
    seed: int

    def __post_init__(self):
        if not (np.isfinite(self.sigma_z2) and self.sigma_z2 > 0):
            raise ValueError(f"sigma_z2 must be positive, got {self.sigma_z2}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def stream_generator(seed: int, stream_id: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.Philox(ss))


def sample_noise_vector(n: int, spec: MechanismSpec, stream_id: int = 0) -> np.ndarray:
    """``n`` independent ``N(0, sigma_z2)`` draws from stream ``stream_id`` of ``spec.seed``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.sqrt(spec.sigma_z2) * stream_generator(spec.seed, stream_id).standard_normal(n)


def sanitize(trace: Trace, spec: MechanismSpec, budget: Optional[dict] = None) -> SanitizedTrace:
    """Release ``z_i = x_i + g_i``; timestamps pass through unchanged.

    ``budget`` (keys ``epsilon``, ``r``, ``lambda``) is only echoed into the
    metadata.
    """
    noise = sample_noise_vector(trace.d, spec, SANITIZE_STREAM)
    meta = {
        "sigma_z2": float(spec.sigma_z2),
        "seed": int(spec.seed),
        "epsilon": None,
        "r": None,
        "lambda": None,
        "generator": GENERATOR_NAME,
    }
    if budget:
        meta.update({k: (None if budget.get(k) is None else float(budget[k])) for k in ("epsilon", "r", "lambda")})
    return SanitizedTrace(trace.t, trace.x + noise, meta)
