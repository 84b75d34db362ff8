"""Contrastive training objectives.

Three InfoNCE-style terms share one core: at every masked time step the
predicted vector must be closer (in cosine similarity, sharpened by a
temperature) to the true target at that step than to negatives drawn from
other masked steps of the same utterance.

  * intra-channel: predict the fused feature from the fused context
  * inter-channel: predict each active channel's encoder feature from the
    fused context, summed over channels; dropped channels contribute zero
  * single-audio: the same shape on audio-only items

The weighted total is  l_c1 + l_c2 + lambda * l_sa  for audio-visual
batches and  lambda * l_sa  for audio-only batches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from avw2 import autodiff as ad


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.1        # kappa
    n_negatives: int = 10           # K
    single_audio_weight: float = 1.0  # lambda
    stop_target_grad: bool = False
    # negatives come from the target stream (the formula) or from the
    # prediction stream (the prose variant)
    negatives_from: str = "targets"

    def __post_init__(self):
        if not np.isfinite(self.temperature) or self.temperature <= 0:
            raise ValueError("temperature must be positive and finite")
        if self.n_negatives < 1:
            raise ValueError("need at least one negative per position")
        if self.negatives_from not in ("targets", "predictions"):
            raise ValueError(f"unknown negative source '{self.negatives_from}'")


@dataclass(frozen=True)
class NegativeSet:
    """K candidate source indices per masked position, none equal to it."""

    positions: tuple   # masked time steps, length N
    indices: tuple     # N tuples of K source time steps
    seed: int

    def __post_init__(self):
        for pos, row in zip(self.positions, self.indices):
            if pos in row:
                raise ValueError(f"negative set for t={pos} contains t itself")
            if set(row) - set(self.positions):
                raise ValueError("negatives must come from masked positions")

    @property
    def k(self) -> int:
        return len(self.indices[0])


@dataclass
class LossBreakdown:
    """Scalar record of one step's objective, for logging and Eq-4 checks."""

    l_c1: float
    l_c2: float
    l_sa: float
    total: float
    per_channel: list = field(default_factory=list)
    masked_positions: int = 0


def sample_negatives(masked_indices, k: int, seed: int) -> NegativeSet:
    """Uniform with replacement from the other masked positions."""
    positions = tuple(int(i) for i in masked_indices)
    if len(positions) < 2:
        raise ValueError("need at least 2 masked positions to draw negatives")
    rng = np.random.default_rng(seed)
    pool = np.asarray(positions)
    rows = []
    for pos in positions:
        others = pool[pool != pos]
        rows.append(tuple(int(x) for x in rng.choice(others, size=k, replace=True)))
    return NegativeSet(positions, tuple(rows), seed)


def cosine_sim(u: ad.Tensor, v: ad.Tensor) -> ad.Tensor:
    """u.v / (|u||v|) for two vectors; errors on zero-norm input."""
    u, v = ad._as_tensor(u), ad._as_tensor(v)
    if u.shape != v.shape or u.data.ndim != 1:
        raise ad.ShapeError("cosine_sim", u.shape, v.shape)
    if not np.linalg.norm(u.data) or not np.linalg.norm(v.data):
        raise ValueError("cosine similarity undefined for zero vectors")
    dot = ad.tsum(ad.mul(u, v))
    norms = ad.mul(ad.tsqrt(ad.tsum(ad.mul(u, u))), ad.tsqrt(ad.tsum(ad.mul(v, v))))
    return ad.div(dot, norms)


def _unit_rows(x: ad.Tensor, what: str) -> ad.Tensor:
    norms = np.linalg.norm(x.data, axis=-1)
    if np.any(norms == 0.0):
        raise ValueError(f"zero-norm {what} row; cosine similarity undefined")
    return ad.div(x, ad.l2norm(x))


def info_nce(pred: ad.Tensor, pos: ad.Tensor, negatives: list, temperature: float) -> ad.Tensor:
    """Single-position contrastive loss: pred vs pos against K negatives."""
    if not negatives:
        raise ValueError("info_nce needs at least one negative")
    sims = [cosine_sim(pred, pos)] + [cosine_sim(pred, n) for n in negatives]
    stacked = ad.concat([ad.reshape(s, (1,)) for s in sims], axis=0)
    scaled = ad.mul(stacked, 1.0 / temperature)
    return ad.reshape(ad.sub(ad.logsumexp(scaled, axis=0), ad.narrow(scaled, 0, 0, 1)), ())


def _masked_info_nce(pred_rows: ad.Tensor, target_rows: ad.Tensor,
                     neg_source: ad.Tensor, negs: NegativeSet,
                     temperature: float) -> ad.Tensor:
    """Mean InfoNCE over all masked positions at once.

    pred_rows/target_rows: (N, D) rows for the masked positions in
    ``negs.positions`` order; negatives are gathered from ``neg_source``
    (a full (T, D) stream) at the drawn indices.
    """
    pred_n = _unit_rows(pred_rows, "prediction")
    pos_sim = ad.tsum(ad.mul(pred_n, _unit_rows(target_rows, "target")), axis=-1)
    neg_idx = np.asarray(negs.indices)  # (N, K)
    cols = [ad.reshape(pos_sim, (-1, 1))]
    for kk in range(neg_idx.shape[1]):
        neg_rows = ad.gather_rows(neg_source, neg_idx[:, kk])
        sim = ad.tsum(ad.mul(pred_n, _unit_rows(neg_rows, "negative")), axis=-1)
        cols.append(ad.reshape(sim, (-1, 1)))
    sims = ad.mul(ad.concat(cols, axis=-1), 1.0 / temperature)  # (N, K+1)
    per_position = ad.sub(ad.logsumexp(sims, axis=-1),
                          ad.reshape(ad.narrow(sims, -1, 0, 1), (-1,)))
    return ad.tmean(per_position)


def _stream_loss(pred: ad.Tensor, targets: ad.Tensor, mask_indices, negs: NegativeSet,
                 cfg: LossConfig, neg_source: ad.Tensor | None = None) -> ad.Tensor:
    if pred.shape != targets.shape:
        raise ad.ShapeError("contrastive_loss", pred.shape, targets.shape)
    positions = tuple(int(i) for i in mask_indices)
    if len(positions) < 2:
        raise ValueError("need at least 2 masked positions (negatives must exist)")
    if positions != negs.positions:
        raise ValueError("negative set was drawn for different masked positions")
    if cfg.stop_target_grad:
        targets = targets.detach()
    if neg_source is None:
        neg_source = pred if cfg.negatives_from == "predictions" else targets
    elif cfg.stop_target_grad and neg_source is not pred:
        neg_source = neg_source.detach()
    idx = np.asarray(positions)
    return _masked_info_nce(ad.gather_rows(pred, idx), ad.gather_rows(targets, idx),
                            neg_source, negs, cfg.temperature)


def loss_c1(c_f: ad.Tensor, z_f: ad.Tensor, mask_indices, negs: NegativeSet,
            cfg: LossConfig) -> ad.Tensor:
    """Intra-channel loss: fused context rows vs fused features."""
    return _stream_loss(c_f, z_f, mask_indices, negs, cfg)


def loss_sa(c_sa: ad.Tensor, z_sa: ad.Tensor, mask_indices, negs: NegativeSet,
            cfg: LossConfig) -> ad.Tensor:
    """Single-audio auxiliary loss; same shape as the intra-channel term."""
    return _stream_loss(c_sa, z_sa, mask_indices, negs, cfg)


def loss_c2(c_f: ad.Tensor, z_channels: list, active: list, mask_indices,
            negs, cfg: LossConfig):
    """Inter-channel loss: sum over active channels of the per-channel term.

    ``negs`` may be one NegativeSet shared by all channels or a list with
    one set per channel.  Returns (total, per-channel terms); dropped
    channels contribute exactly zero and appear as None in the terms.
    """
    if len(z_channels) != len(active):
        raise ad.ShapeError("loss_c2", (len(z_channels),), (len(active),))
    if not any(active):
        raise ValueError("inter-channel loss needs at least one active channel")
    neg_sets = negs if isinstance(negs, (list, tuple)) else [negs] * len(z_channels)
    terms = []
    total = None
    for z_i, keep, negset in zip(z_channels, active, neg_sets):
        if not keep:
            terms.append(None)
            continue
        term = _stream_loss(c_f, z_i, mask_indices, negset, cfg)
        terms.append(term)
        total = term if total is None else ad.add(total, term)
    return total, terms


def total_loss(parts: dict, cfg: LossConfig, batch_kind: str) -> ad.Tensor:
    """Weighted sum for the batch kind: 'av' or 'audio'."""
    lam = cfg.single_audio_weight
    if batch_kind == "av":
        if "l_c1" not in parts or "l_c2" not in parts:
            raise ValueError("audio-visual batch requires l_c1 and l_c2")
        total = ad.add(parts["l_c1"], parts["l_c2"])
        if parts.get("l_sa") is not None:
            total = ad.add(total, ad.mul(parts["l_sa"], lam))
        return total
    if batch_kind == "audio":
        if parts.get("l_sa") is None:
            raise ValueError("audio-only batch requires l_sa")
        return ad.mul(parts["l_sa"], lam)
    raise ValueError(f"unknown batch kind '{batch_kind}'")
