"""CTC loss (log-space forward algorithm), greedy decoding, and CER.

The loss is differentiable by construction: the alpha recursion is built
out of autodiff primitives (gather / shift / logsumexp), so the backward
pass falls out of the tape rather than a hand-written recursion.  Blank is
always class 0 and never appears in transcripts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from avw2 import autodiff as ad

BLANK = 0
_NEG = -1e30  # log-space "impossible", kept finite so forward values stay finite


class InfeasibleTargetError(ValueError):
    """Target cannot be emitted in the given number of frames."""


@dataclass(frozen=True)
class Vocab:
    """Ordered non-blank symbols; symbol i maps to class index i + 1."""

    symbols: tuple

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError("vocabulary symbols must be unique")

    @property
    def n_classes(self) -> int:
        """Including the reserved blank at index 0."""
        return len(self.symbols) + 1

    def index(self, symbol) -> int:
        return self.symbols.index(symbol) + 1


def validate_transcript(target, n_classes: int) -> list:
    tokens = [int(t) for t in target]
    if any(t == BLANK for t in tokens):
        raise ValueError("blank must not appear in transcripts")
    if any(t < 0 or t >= n_classes for t in tokens):
        raise ValueError(f"transcript token out of range for {n_classes} classes")
    return tokens


def min_frames(target) -> int:
    """Feasibility bound: |target| plus one per adjacent repeated pair."""
    tokens = list(target)
    repeats = sum(1 for a, b in zip(tokens, tokens[1:]) if a == b)
    return len(tokens) + repeats


def ctc_loss(log_probs: ad.Tensor, target) -> ad.Tensor:
    """Negative log of the total path probability of ``target``.

    ``log_probs`` is (T, n_classes) with normalized rows (checked to 1e-5).
    """
    lp = log_probs if isinstance(log_probs, ad.Tensor) else ad.Tensor(log_probs)
    if lp.data.ndim != 2:
        raise ad.ShapeError("ctc_loss", lp.shape)
    T, n_classes = lp.shape
    tokens = validate_transcript(target, n_classes)
    if T < min_frames(tokens):
        raise InfeasibleTargetError(
            f"target of length {len(tokens)} needs at least {min_frames(tokens)} frames, got {T}")
    row_sums = np.exp(lp.data.astype(np.float64)).sum(axis=-1)
    if np.any(np.abs(row_sums - 1.0) > 1e-5):
        raise ValueError("log_probs rows must be normalized (exp sums to 1 within 1e-5)")

    ext = [BLANK]
    for t in tokens:
        ext.extend((t, BLANK))
    ext_idx = np.asarray(ext, dtype=np.intp)
    S = len(ext)
    # alpha[s] may come from alpha[s-2] only when skipping a blank between
    # two distinct labels
    no_skip = np.array(
        [s < 2 or ext[s] == BLANK or ext[s] == ext[s - 2] for s in range(S)], dtype=bool)

    def frame_logp(t):
        row = ad.reshape(ad.narrow(lp, 0, t, 1), (n_classes,))
        return ad.gather_rows(row, ext_idx)

    start_blocked = np.arange(S) >= 2
    alpha = ad.masked_fill(frame_logp(0), start_blocked, _NEG)
    neg1 = ad.Tensor(np.full(1, _NEG, dtype=lp.data.dtype))
    neg2 = ad.Tensor(np.full(2, _NEG, dtype=lp.data.dtype))
    for t in range(1, T):
        stay = alpha
        step1 = ad.concat([neg1, ad.narrow(alpha, 0, 0, S - 1)], axis=0) if S > 1 else neg1
        rows = [ad.reshape(stay, (1, S)), ad.reshape(step1, (1, S))]
        if S > 2:
            step2 = ad.concat([neg2, ad.narrow(alpha, 0, 0, S - 2)], axis=0)
            rows.append(ad.reshape(ad.masked_fill(step2, no_skip, _NEG), (1, S)))
        alpha = ad.add(ad.logsumexp(ad.concat(rows, axis=0), axis=0), frame_logp(t))
    if S == 1:
        final = ad.reshape(alpha, ())
    else:
        final = ad.reshape(ad.logsumexp(ad.narrow(alpha, 0, S - 2, 2), axis=0), ())
    return ad.mul(final, -1.0)


def greedy_decode(log_probs) -> list:
    """Per-frame argmax, collapse adjacent repeats, delete blanks."""
    arr = log_probs.data if isinstance(log_probs, ad.Tensor) else np.asarray(log_probs)
    best = np.argmax(arr, axis=-1)
    out = []
    prev = None
    for symbol in best:
        if symbol != prev and symbol != BLANK:
            out.append(int(symbol))
        prev = symbol
    return out


def edit_distance(a, b) -> int:
    """Levenshtein distance via the two-row dynamic program."""
    a, b = list(a), list(b)
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]


def cer(hyp, ref) -> float:
    """Edit distance between token sequences divided by reference length."""
    ref = list(ref)
    if not ref:
        raise ValueError("reference transcript must be non-empty")
    return edit_distance(hyp, ref) / len(ref)
