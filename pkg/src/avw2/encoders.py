"""Frame-level feature extraction.

A strided 1-D convolutional audio encoder shared across all microphone
channels (stride product 640 = one output frame per 40 ms at 16 kHz, so
audio frames line up one-to-one with 25 fps video), and a small per-frame
visual encoder over 16x16 grayscale frames.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from avw2 import autodiff as ad

SAMPLE_RATE = 16000
SAMPLES_PER_FRAME = 640  # 40 ms at 16 kHz; equals the stride product below


class InputTooShortError(ValueError):
    """Waveform shorter than the encoder's receptive field."""


@dataclass
class FeatureSequence:
    """A T x D frame-level embedding matrix for one stream."""

    tag: str  # visual | audio-channel-i | single-audio | fused | context
    data: ad.Tensor

    def __post_init__(self):
        if self.data.data.ndim != 2 or self.data.shape[0] < 1:
            raise ValueError(f"feature sequence must be T x D with T >= 1, got {self.data.shape}")
        if not np.all(np.isfinite(self.data.data)):
            raise ad.NumericError(f"feature sequence '{self.tag}' contains non-finite values")

    @property
    def length(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class AudioEncoderConfig:
    """Eight conv layers; kernels equal strides so T == floor(samples / 640)."""

    kernels: tuple = (5, 2, 2, 2, 2, 2, 2, 2)
    strides: tuple = (5, 2, 2, 2, 2, 2, 2, 2)
    width: int = 64

    def __post_init__(self):
        if len(self.kernels) != 8 or len(self.strides) != 8:
            raise ValueError("audio encoder uses exactly 8 conv layers")
        if int(np.prod(self.strides)) != SAMPLES_PER_FRAME:
            raise ValueError(f"stride product must be {SAMPLES_PER_FRAME} (40 ms frame shift)")

    @property
    def out_dim(self) -> int:
        return self.width

    @property
    def min_samples(self) -> int:
        """Smallest input length that produces one output frame."""
        need = 1
        for k, s in zip(reversed(self.kernels), reversed(self.strides)):
            need = (need - 1) * s + k
        return need


@dataclass(frozen=True)
class VisualEncoderConfig:
    """Two-layer conv stem + global average pool + linear map, per frame."""

    frame_height: int = 16
    frame_width: int = 16
    stem_channels: tuple = (8, 16)
    kernel: int = 3
    stride: int = 2
    out_dim: int = 64


def num_frames(n_samples: int, cfg: AudioEncoderConfig | None = None) -> int:
    """Output frame count of the conv stack, by per-layer floor arithmetic."""
    cfg = cfg or AudioEncoderConfig()
    if n_samples < cfg.min_samples:
        raise InputTooShortError(
            f"need at least {cfg.min_samples} samples for one frame, got {n_samples}")
    length = n_samples
    for k, s in zip(cfg.kernels, cfg.strides):
        length = (length - k) // s + 1
    return length


def _init_weight(rng: np.random.Generator, shape, fan_in: int, dtype) -> ad.Tensor:
    data = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape).astype(dtype)
    return ad.Tensor(data, requires_grad=True)


class AudioEncoder:
    """Shared-parameter conv stack mapping waveforms to (T, D_a) features."""

    def __init__(self, cfg: AudioEncoderConfig, rng: np.random.Generator,
                 dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.params: dict[str, ad.Tensor] = {}
        c_in = 1
        for i, (k, _s) in enumerate(zip(cfg.kernels, cfg.strides)):
            c_out = cfg.width
            self.params[f"conv{i}.w"] = _init_weight(rng, (c_in, k, c_out), c_in * k, dtype)
            self.params[f"conv{i}.b"] = ad.Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)
            self.params[f"conv{i}.ln_g"] = ad.Tensor(np.ones(c_out, dtype=dtype), requires_grad=True)
            self.params[f"conv{i}.ln_b"] = ad.Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True)
            c_in = c_out

    def num_frames(self, n_samples: int) -> int:
        return num_frames(n_samples, self.cfg)

    def encode_batch(self, waveforms) -> ad.Tensor:
        """Encode a (B, L) batch of equal-length waveforms to (B, T, D_a)."""
        if isinstance(waveforms, ad.Tensor):
            x = waveforms
        else:
            arr = np.asarray(waveforms, dtype=self.dtype)
            if not np.all(np.isfinite(arr)):
                raise ad.NumericError("waveform batch contains non-finite samples")
            x = ad.Tensor(arr)
        if x.data.ndim != 2:
            raise ad.ShapeError("encode_batch", x.shape)
        self.num_frames(x.shape[1])  # raises when too short
        h = ad.reshape(x, (x.shape[0], x.shape[1], 1))
        for i, (k, s) in enumerate(zip(self.cfg.kernels, self.cfg.strides)):
            h = ad.conv1d(h, self.params[f"conv{i}.w"], stride=s)
            h = ad.add(h, self.params[f"conv{i}.b"])
            h = ad.layer_norm(h, self.params[f"conv{i}.ln_g"], self.params[f"conv{i}.ln_b"])
            h = ad.gelu(h)
        return h

    def encode(self, waveform, tag: str = "single-audio") -> FeatureSequence:
        batch = self.encode_batch(np.asarray(waveform, dtype=self.dtype)[None, :])
        t, d = batch.shape[1], batch.shape[2]
        return FeatureSequence(tag, ad.reshape(batch, (t, d)))

    def encode_channels(self, waveforms) -> list[FeatureSequence]:
        """Encode C equal-length channels with the same parameters."""
        lengths = {len(w) for w in waveforms}
        if len(lengths) != 1:
            raise ad.ShapeError("encode_channels", *[(len(w),) for w in waveforms])
        batch = self.encode_batch(np.stack([np.asarray(w, dtype=self.dtype) for w in waveforms]))
        t, d = batch.shape[1], batch.shape[2]
        out = []
        for i in range(batch.shape[0]):
            row = ad.reshape(ad.narrow(batch, 0, i, 1), (t, d))
            out.append(FeatureSequence(f"audio-channel-{i}", row))
        return out


class VisualEncoder:
    """Per-frame conv stem producing one D_v vector per video frame."""

    def __init__(self, cfg: VisualEncoderConfig, rng: np.random.Generator,
                 dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        k, c1, c2 = cfg.kernel, cfg.stem_channels[0], cfg.stem_channels[1]
        self.params = {
            "conv0.w": _init_weight(rng, (1, k, k, c1), k * k, dtype),
            "conv0.b": ad.Tensor(np.zeros(c1, dtype=dtype), requires_grad=True),
            "conv1.w": _init_weight(rng, (c1, k, k, c2), c1 * k * k, dtype),
            "conv1.b": ad.Tensor(np.zeros(c2, dtype=dtype), requires_grad=True),
            "proj.w": _init_weight(rng, (c2, cfg.out_dim), c2, dtype),
            "proj.b": ad.Tensor(np.zeros(cfg.out_dim, dtype=dtype), requires_grad=True),
        }

    def encode(self, frames) -> FeatureSequence:
        """frames: (T, H, W) stack -> FeatureSequence of shape (T, D_v)."""
        if isinstance(frames, ad.Tensor):
            x = frames
        else:
            arr = np.asarray(frames, dtype=self.dtype)
            if arr.ndim != 3 or arr.shape[0] < 1:
                raise ValueError(f"expected a non-empty (T, H, W) frame stack, got {arr.shape}")
            x = ad.Tensor(arr)
        t, h, w = x.shape
        if (h, w) != (self.cfg.frame_height, self.cfg.frame_width):
            raise ad.ShapeError("encode_video", x.shape,
                                (self.cfg.frame_height, self.cfg.frame_width))
        out = ad.reshape(x, (t, h, w, 1))
        out = ad.gelu(ad.add(ad.conv2d(out, self.params["conv0.w"], stride=self.cfg.stride),
                             self.params["conv0.b"]))
        out = ad.gelu(ad.add(ad.conv2d(out, self.params["conv1.w"], stride=self.cfg.stride),
                             self.params["conv1.b"]))
        pooled = ad.tmean(out, axis=(1, 2))  # (T, C)
        return FeatureSequence("visual", ad.linear(pooled, self.params["proj.w"],
                                                   self.params["proj.b"]))
