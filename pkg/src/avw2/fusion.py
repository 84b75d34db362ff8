"""Stream fusion, span masking, modality/channel dropout, noise augmentation.

Fusion is a plain feature-axis concatenation in the order (video,
channel 0..C-1); a dropped stream contributes an exactly-zero block, which
is also how missing modalities are encoded downstream.  Masked rows are
replaced by a learned embedding, so "masked" stays distinguishable from
"stream dropped".
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from avw2 import autodiff as ad
from avw2.encoders import FeatureSequence

NO_NOISE = math.inf  # SNR sentinel: leave the waveform untouched


@dataclass(frozen=True)
class MaskSpec:
    """Masked time indices plus the span parameters that produced them."""

    indices: tuple       # sorted masked time steps, each in [0, T)
    length: int          # T
    span: int            # M
    start_prob: float    # p
    seed: int

    def __post_init__(self):
        if any(i < 0 or i >= self.length for i in self.indices):
            raise ValueError("mask indices out of range")

    def row_mask(self) -> np.ndarray:
        m = np.zeros(self.length, dtype=bool)
        m[list(self.indices)] = True
        return m


@dataclass(frozen=True)
class DropoutConfig:
    video_prob: float = 0.25
    channel_prob: float = 0.1

    def __post_init__(self):
        for p in (self.video_prob, self.channel_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("drop probabilities must lie in [0, 1]")


@dataclass(frozen=True)
class DropoutDecision:
    """Per-stream drop flags; at least one stream always survives."""

    video_dropped: bool
    channels_dropped: tuple
    seed: int

    def __post_init__(self):
        if self.video_dropped and all(self.channels_dropped):
            raise ValueError("at least one stream must survive")

    @staticmethod
    def keep_all(n_channels: int) -> "DropoutDecision":
        return DropoutDecision(False, (False,) * n_channels, seed=0)


def sample_mask(T: int, span: int, start_prob: float, seed: int,
                force_nonempty: bool = True) -> MaskSpec:
    """Each index starts a span of ``span`` steps with probability ``start_prob``.

    Spans are clipped at T and their union is the masked set.  When
    ``force_nonempty`` and start_prob > 0, empty draws are redrawn.
    """
    if T < 1 or span < 1 or not 0.0 <= start_prob <= 1.0:
        raise ValueError(f"invalid mask parameters T={T} M={span} p={start_prob}")
    rng = np.random.default_rng(seed)
    masked = np.zeros(T, dtype=bool)
    while True:
        starts = np.flatnonzero(rng.random(T) < start_prob)
        if starts.size == 0:
            if start_prob > 0.0 and force_nonempty:
                continue
            break
        for s in starts:
            masked[s:s + span] = True
        break
    return MaskSpec(tuple(np.flatnonzero(masked).tolist()), T, span, start_prob, seed)


def mask_from_starts(starts, span: int, T: int) -> MaskSpec:
    """Expand explicit span starts; handy for tests and fixed schedules."""
    masked = np.zeros(T, dtype=bool)
    for s in starts:
        masked[s:s + span] = True
    return MaskSpec(tuple(np.flatnonzero(masked).tolist()), T, span, 0.0, 0)


def apply_mask(features: FeatureSequence | ad.Tensor, spec: MaskSpec,
               mask_embedding: ad.Tensor) -> ad.Tensor:
    """Replace masked rows by the learned mask embedding."""
    x = features.data if isinstance(features, FeatureSequence) else features
    if mask_embedding.shape != x.shape[-1:]:
        raise ad.ShapeError("apply_mask", x.shape, mask_embedding.shape)
    if x.shape[0] != spec.length:
        raise ad.ShapeError("apply_mask", x.shape, (spec.length,))
    return ad.mask_rows(x, spec.row_mask(), mask_embedding)


def draw_dropout(cfg: DropoutConfig, n_channels: int, seed: int) -> DropoutDecision:
    """Independent Bernoulli per stream, redrawn until one stream survives."""
    if cfg.video_prob >= 1.0 and cfg.channel_prob >= 1.0:
        raise ValueError("configured probabilities drop every stream")
    rng = np.random.default_rng(seed)
    while True:
        video = bool(rng.random() < cfg.video_prob)
        channels = tuple(bool(u) for u in rng.random(n_channels) < cfg.channel_prob)
        if not (video and all(channels)):
            return DropoutDecision(video, channels, seed)


def fuse(z_v: FeatureSequence | None, z_a: list, decision: DropoutDecision,
         video_dim: int | None = None) -> FeatureSequence:
    """Concatenate (video, channel 0..C-1) along the feature axis.

    Dropped streams contribute all-zero blocks.  ``z_v`` may be None for
    audio-only inputs, in which case ``video_dim`` sizes the zero block.
    """
    if len(z_a) != len(decision.channels_dropped):
        raise ad.ShapeError("fuse", (len(z_a),), (len(decision.channels_dropped),))
    lengths = {s.length for s in z_a if s is not None}
    if z_v is not None:
        lengths.add(z_v.length)
    if len(lengths) != 1:
        raise ad.ShapeError("fuse", *[(t,) for t in sorted(lengths)])
    T = lengths.pop()

    dtype = None
    for s in ([z_v] if z_v is not None else []) + [s for s in z_a if s is not None]:
        dtype = s.data.dtype
        break

    blocks = []
    if z_v is None:
        if video_dim is None:
            raise ValueError("video_dim required when no video stream is given")
        blocks.append(ad.zeros((T, video_dim), dtype=dtype or ad.DEFAULT_DTYPE))
    elif decision.video_dropped:
        blocks.append(ad.zeros((T, z_v.dim), dtype=dtype))
    else:
        blocks.append(z_v.data)
    for seq, dropped in zip(z_a, decision.channels_dropped):
        if seq is None or dropped:
            dim = seq.dim if seq is not None else z_a[0].dim
            blocks.append(ad.zeros((T, dim), dtype=dtype))
        else:
            blocks.append(seq.data)
    return FeatureSequence("fused", ad.concat(blocks, axis=-1))


def fuse_single_audio(z_sa: FeatureSequence, n_channels: int, video_dim: int) -> FeatureSequence:
    """Route one audio stream through the fused layout.

    The stream occupies channel slot 0; video and the remaining channel
    slots are zero blocks, matching the zero-vector rule for missing
    modalities, so the fused projection width never changes.
    """
    slots = [z_sa] + [None] * (n_channels - 1)
    decision = DropoutDecision.keep_all(n_channels)
    return fuse(None, slots, decision, video_dim=video_dim)


def add_noise(waveform: np.ndarray, snr_db: float, seed: int) -> np.ndarray:
    """Additive white Gaussian noise scaled so the measured SNR is exact."""
    x = np.asarray(waveform)
    if snr_db == NO_NOISE:
        return x.copy()
    power = float(np.mean(x.astype(np.float64) ** 2))
    if power <= 0.0:
        raise ValueError("cannot set an SNR on a zero-power signal")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(x.shape)
    noise *= np.sqrt(power / 10.0 ** (snr_db / 10.0)) / np.sqrt(np.mean(noise ** 2))
    return (x.astype(np.float64) + noise).astype(x.dtype)


def measured_snr_db(clean: np.ndarray, noisy: np.ndarray) -> float:
    """Power ratio between a clean signal and the additive residual."""
    clean = np.asarray(clean, dtype=np.float64)
    residual = np.asarray(noisy, dtype=np.float64) - clean
    return 10.0 * np.log10(np.mean(clean ** 2) / np.mean(residual ** 2))
