"""Synthetic listening world: latent factors, logs, audio, labels.

Items carry true latent vectors.  Users interact with items according to
a sigmoid affinity on latent inner products; each item's waveform is a
mixture of band-limited noise (plus faint tones) whose per-band energies
are an affine function of the item latent; task labels derive from the
same latent.  Structure in the logs therefore carries task-relevant
information by construction, which is the premise the transfer regimes
compete over.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit as sigmoid

from .als import ListeningLog
from .features import Waveform

AMPLITUDE = 0.1  # overall output scale, keeps PCM headroom


@dataclass
class WorldConfig:
    n_users: int = 200
    n_items: int = 300
    latent_dim: int = 4
    affinity_scale: float = 3.0
    affinity_offset: float = -1.0
    count_rate: float = 1.0
    sample_rate: int = 16000
    duration: float = 1.875
    band_low: float = 400.0
    band_high: float = 7600.0
    tone_level: float = 0.25
    noise_level: float = 0.4
    task_kind: str = "classification"
    n_classes: int = 4
    label_rule: str = "latent"  # "latent" or "random"
    seed: int = 0

    def __post_init__(self):
        if self.task_kind not in ("classification", "regression"):
            raise ValueError(f"unknown task kind {self.task_kind!r}")
        if self.label_rule not in ("latent", "random"):
            raise ValueError(f"unknown label rule {self.label_rule!r}")
        if self.task_kind == "classification" and not (2 <= self.n_classes <= self.latent_dim):
            raise ValueError("need 2 <= n_classes <= latent_dim for classification worlds")
        n = self.duration * self.sample_rate
        if abs(n - round(n)) > 1e-9:
            raise ValueError("duration must be a whole number of samples")
        if not (0 < self.band_low < self.band_high <= self.sample_rate / 2):
            raise ValueError("invalid band range")
        if self.n_users < 1 or self.n_items < 1 or self.latent_dim < 1:
            raise ValueError("world dimensions must be positive")

    @property
    def n_samples(self) -> int:
        return round(self.duration * self.sample_rate)


@dataclass
class World:
    config: WorldConfig
    logs: list
    waveforms: list
    labels: np.ndarray
    item_ids: list
    user_ids: list
    item_latents: np.ndarray
    user_latents: np.ndarray
    interaction_mask: np.ndarray = field(repr=False, default=None)


def band_energies(latent):
    """Per-band energy profile of an item latent: affine, strictly positive
    for latents in [-1, 1]."""
    return 1.0 + 0.5 * np.asarray(latent, dtype=np.float64)


def interaction_probability(user_latent, item_latent, scale, offset):
    """Sigmoid affinity; approaches hard inner-product thresholding as the
    scale grows."""
    return sigmoid(scale * np.dot(user_latent, item_latent) + offset)


def _band_edges(config: WorldConfig):
    return np.linspace(config.band_low, config.band_high, config.latent_dim + 1)


def _bandlimited_noise(rng, n, f_lo, f_hi, sample_rate):
    """Unit-RMS noise whose spectrum lives in [f_lo, f_hi)."""
    spectrum = np.fft.rfft(rng.standard_normal(n))
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    spectrum[(freqs < f_lo) | (freqs >= f_hi)] = 0.0
    y = np.fft.irfft(spectrum, n)
    rms = np.sqrt(np.mean(y**2))
    return y / rms


def item_waveform(config: WorldConfig, latent, item_index):
    """Deterministic waveform for one item given its latent."""
    rng = np.random.default_rng([config.seed, 3, item_index])
    n = config.n_samples
    edges = _band_edges(config)
    energies = band_energies(latent)
    t = np.arange(n) / config.sample_rate
    wave = np.zeros(n)
    for j in range(config.latent_dim):
        amp = np.sqrt(energies[j])
        wave += amp * _bandlimited_noise(rng, n, edges[j], edges[j + 1], config.sample_rate)
        center = 0.5 * (edges[j] + edges[j + 1])
        phase = rng.uniform(0.0, 2.0 * np.pi)
        wave += config.tone_level * amp * np.sqrt(2.0) * np.sin(2.0 * np.pi * center * t + phase)
    wave += config.noise_level * rng.standard_normal(n)
    return Waveform(AMPLITUDE * wave, config.sample_rate)


def _make_labels(config: WorldConfig, item_latents, rng):
    """Labels and (for the latent rule) latents adjusted so the argmax of
    the first n_classes coordinates equals the class, giving exact balance."""
    n = config.n_items
    if config.task_kind == "regression":
        w = np.ones(config.latent_dim) / np.sqrt(config.latent_dim)
        return item_latents @ w, item_latents
    k = config.n_classes
    if config.label_rule == "random":
        labels = rng.permutation(np.arange(n) % k)
        return labels.astype(np.int64), item_latents
    latents = item_latents.copy()
    labels = np.arange(n) % k
    for i in range(n):
        c = labels[i]
        j = int(np.argmax(latents[i, :k]))
        latents[i, c], latents[i, j] = latents[i, j], latents[i, c]
    return labels.astype(np.int64), latents


def generate_world(config: WorldConfig) -> World:
    """Sample a complete world; deterministic for a given config."""
    rng_lat = np.random.default_rng([config.seed, 0])
    item_latents = rng_lat.uniform(-1.0, 1.0, size=(config.n_items, config.latent_dim))
    user_latents = rng_lat.normal(0.0, 1.0, size=(config.n_users, config.latent_dim))

    labels, item_latents = _make_labels(
        config, item_latents, np.random.default_rng([config.seed, 1])
    )

    rng_int = np.random.default_rng([config.seed, 2])
    probs = sigmoid(
        config.affinity_scale * (user_latents @ item_latents.T) + config.affinity_offset
    )
    if float(probs.max()) <= 0.0:
        raise ValueError("interaction probabilities are all zero; infeasible world")
    mask = rng_int.random(probs.shape) < probs
    for i in range(config.n_items):
        tries = 0
        while not mask[:, i].any():
            mask[:, i] = rng_int.random(config.n_users) < probs[:, i]
            tries += 1
            if tries >= 1000:
                mask[int(np.argmax(probs[:, i])), i] = True
    counts = np.ones(mask.shape, dtype=np.int64)
    counts[mask] += rng_int.poisson(config.count_rate, size=int(mask.sum()))

    item_ids = [f"item_{i:05d}" for i in range(config.n_items)]
    user_ids = [f"user_{u:05d}" for u in range(config.n_users)]
    logs = [
        ListeningLog(user_ids[u], item_ids[i], int(counts[u, i]))
        for u in range(config.n_users)
        for i in range(config.n_items)
        if mask[u, i]
    ]

    waveforms = [
        item_waveform(config, item_latents[i], i) for i in range(config.n_items)
    ]
    return World(
        config=config,
        logs=logs,
        waveforms=waveforms,
        labels=labels,
        item_ids=item_ids,
        user_ids=user_ids,
        item_latents=item_latents,
        user_latents=user_latents,
        interaction_mask=mask,
    )


def mean_canonical_correlation(a, b):
    """Mean canonical correlation between the columns of two matrices.

    Measures alignment up to rotation; used to check that factorized
    embeddings recover the world's true latents.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[0] != b.shape[0]:
        raise ValueError("need the same number of rows")
    a = a - a.mean(axis=0)
    b = b - b.mean(axis=0)
    k = min(a.shape[1], b.shape[1])

    def _whiten(m):
        u, s, _ = np.linalg.svd(m, full_matrices=False)
        rank = int(np.sum(s > s[0] * 1e-10)) if s.size else 0
        return u[:, :rank]

    ua, ub = _whiten(a), _whiten(b)
    corrs = np.linalg.svd(ua.T @ ub, compute_uv=False)
    corrs = np.clip(corrs[:k], 0.0, 1.0)
    if corrs.size < k:
        corrs = np.concatenate([corrs, np.zeros(k - corrs.size)])
    return float(np.mean(corrs))
