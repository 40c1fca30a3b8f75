"""
Payload sanitization: clip to an L2 bound, then add Gaussian noise.

Applied node-side to logits and discriminator scores before they leave a
node.  No (epsilon, delta) accounting is done here; the config exposes the
raw clip norm and noise multiplier.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NumericalError

logger = logging.getLogger(__name__)


@dataclass
class DpConfig:
    clip_norm: float = 1.0
    noise_multiplier: float = 0.0
    enabled: bool = False
    seed: int = 0
    rng: np.random.Generator = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.enabled and not self.clip_norm > 0:
            raise ValueError(f"clip_norm must be positive, got {self.clip_norm}")
        if self.noise_multiplier < 0:
            raise ValueError(
                f"noise_multiplier must be >= 0, got {self.noise_multiplier}")
        if self.rng is None:
            self.rng = np.random.default_rng(self.seed)

    def spawn(self, stream: int) -> "DpConfig":
        """Same settings, independent noise stream (one per node)."""
        return DpConfig(self.clip_norm, self.noise_multiplier, self.enabled,
                        seed=self.seed,
                        rng=np.random.default_rng([self.seed, stream]))


def clip_factor(v: np.ndarray, clip_norm: float) -> float:
    norm = float(np.linalg.norm(v))
    if norm <= clip_norm or norm == 0.0:
        return 1.0
    return clip_norm / norm


def clipped_norm_bound(v: np.ndarray, clip_norm: float) -> float:
    """Norm of *v* after clipping; never above clip_norm."""
    v = np.asarray(v, dtype=np.float64)
    return float(np.linalg.norm(v * clip_factor(v, clip_norm)))


def sanitize(v: np.ndarray, cfg: DpConfig) -> np.ndarray:
    """v * min(1, C/||v||) + N(0, (sigma*C)^2 I); identity when disabled."""
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise NumericalError("Cannot sanitize a non-finite payload")
    if not cfg.enabled:
        return v.copy()
    out = v * clip_factor(v, cfg.clip_norm)
    sigma = cfg.noise_multiplier * cfg.clip_norm
    if sigma > 0:
        out = out + cfg.rng.normal(0.0, sigma, size=v.shape)
    return out


@dataclass
class Release:
    """A sanitized batch payload, as ``values = raw * scale + noise``."""

    values: np.ndarray
    scale: Optional[np.ndarray] = None
    noise: Optional[np.ndarray] = None

    @property
    def sanitized(self) -> bool:
        return self.scale is not None


def sanitize_rows(rows: np.ndarray, cfg: DpConfig) -> Release:
    """Per-sample sanitization of a batch payload (one row per sample).

    Returns the per-row scale and the additive noise separately so the
    server can carry the released values through its autodiff graph.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(rows)):
        raise NumericalError("Cannot sanitize a non-finite payload")
    if not cfg.enabled:
        return Release(rows.copy())
    flat = rows.reshape(rows.shape[0], -1)
    factors = np.array([clip_factor(r, cfg.clip_norm) for r in flat])
    scale = np.broadcast_to(
        factors.reshape((-1,) + (1,) * (rows.ndim - 1)), rows.shape).copy()
    sigma = cfg.noise_multiplier * cfg.clip_norm
    noise = (cfg.rng.normal(0.0, sigma, size=rows.shape) if sigma > 0
             else np.zeros(rows.shape))
    return Release(rows * scale + noise, scale, noise)
