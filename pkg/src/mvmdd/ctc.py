"""Connectionist Temporal Classification: exact loss, gradient and decoding.

All recursions run in log space over the extended label sequence (blanks
interleaved between targets, blank index 0). The loss is the negative log
likelihood of the target given per-frame label distributions, and the
gradient is taken with respect to the pre-softmax logits.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

BLANK = 0

NEG_INF = -np.inf


class CtcError(ValueError):
    """Malformed CTC input (blank in target, NaN logits, bad shapes)."""


class InfeasibleTargetError(CtcError):
    """Target cannot be emitted in the given number of frames.

    Raised instead of returning an infinite loss: an infeasible target in
    training data is a data bug and must surface loudly.
    """


@dataclass(frozen=True)
class CtcResult:
    loss: float                 # negative log likelihood, nats
    grad_logits: np.ndarray     # T x V, d loss / d logits


def min_frames(target) -> int:
    """Minimum frame count that can emit the target: length plus one extra
    frame per adjacent duplicate pair (a blank must separate repeats)."""
    t = list(target)
    dups = sum(1 for a, b in zip(t, t[1:]) if a == b)
    return len(t) + dups


def is_feasible(n_frames: int, target) -> bool:
    return n_frames >= min_frames(target)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _check_inputs(logits: np.ndarray, target) -> tuple[np.ndarray, list[int]]:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise CtcError(f"logits must be a T x V matrix, got shape {logits.shape}")
    T, V = logits.shape
    if T < 1 or V < 2:
        raise CtcError(f"need T >= 1 and V >= 2, got T={T}, V={V}")
    if not np.isfinite(logits).all():
        raise CtcError("logits contain NaN or inf")
    tgt = [int(v) for v in target]
    if len(tgt) < 1:
        raise CtcError("target must be non-empty")
    for v in tgt:
        if v == BLANK:
            raise CtcError("blank label inside target")
        if not 0 < v < V:
            raise CtcError(f"target label {v} outside 1..{V - 1}")
    if T < min_frames(tgt):
        raise InfeasibleTargetError(
            f"target needs at least {min_frames(tgt)} frames, lattice has {T}"
        )
    return logits, tgt


def _extend(target: list[int]) -> np.ndarray:
    ext = np.full(2 * len(target) + 1, BLANK, dtype=np.int64)
    ext[1::2] = target
    return ext


def _shift(a: np.ndarray, k: int) -> np.ndarray:
    out = np.full_like(a, NEG_INF)
    out[k:] = a[:-k]
    return out


def _shift_left(a: np.ndarray, k: int) -> np.ndarray:
    out = np.full_like(a, NEG_INF)
    out[:-k] = a[k:]
    return out


def _forward_backward(logp: np.ndarray, ext: np.ndarray):
    """Alpha/beta over extended states.

    alpha[t, s] includes the emission at frame t; beta[t, s] covers frames
    t+1..T only, so alpha[t] + beta[t] log-sum-exps to the total log
    likelihood at every frame.
    """
    T = logp.shape[0]
    S = ext.shape[0]
    emit = logp[:, ext]                               # T x S
    # skip transition s-2 -> s allowed into non-blank states with a new label
    skip_ok = np.zeros(S, dtype=bool)
    skip_ok[2:] = (ext[2:] != BLANK) & (ext[2:] != ext[:-2])

    alpha = np.full((T, S), NEG_INF)
    alpha[0, 0] = emit[0, 0]
    alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = alpha[t - 1]
        acc = np.logaddexp(prev, _shift(prev, 1))
        acc = np.logaddexp(acc, np.where(skip_ok, _shift(prev, 2), NEG_INF))
        alpha[t] = acc + emit[t]

    beta = np.full((T, S), NEG_INF)
    beta[T - 1, S - 1] = 0.0
    beta[T - 1, S - 2] = 0.0
    # skip s -> s+2 mirrors skip_ok shifted to the source state
    skip_from = np.zeros(S, dtype=bool)
    skip_from[:-2] = skip_ok[2:]
    for t in range(T - 2, -1, -1):
        nxt = beta[t + 1] + emit[t + 1]
        acc = np.logaddexp(nxt, _shift_left(nxt, 1))
        acc = np.logaddexp(acc, np.where(skip_from, _shift_left(nxt, 2), NEG_INF))
        beta[t] = acc

    log_z = np.logaddexp(alpha[T - 1, S - 1], alpha[T - 1, S - 2])
    return alpha, beta, log_z


def ctc_loss(logits: np.ndarray, target) -> CtcResult:
    """Exact CTC negative log likelihood and its gradient w.r.t. logits.

    The gradient has the softmax-minus-posterior form: for each frame,
    softmax(logits) minus the label occupancy summed over extended states,
    so every gradient row sums to zero.

    Raises:
        InfeasibleTargetError: target cannot fit in the frame count.
        CtcError: blank inside target, NaN input, bad shapes.
    """
    logits, tgt = _check_inputs(logits, target)
    logp = log_softmax(logits)
    ext = _extend(tgt)
    alpha, beta, log_z = _forward_backward(logp, ext)

    occupancy = np.exp(alpha + beta - log_z)          # T x S, rows sum to 1
    T, V = logits.shape
    gamma = np.zeros((T, V))
    np.add.at(gamma.T, ext, occupancy.T)
    grad = np.exp(logp) - gamma

    loss = float(-log_z)
    if not np.isfinite(loss):
        raise CtcError("non-finite CTC loss on feasible input")
    return CtcResult(loss=loss, grad_logits=grad)


def collapse(path, blank: int = BLANK) -> list[int]:
    """CTC collapse: merge consecutive repeats, then drop blanks."""
    out = []
    prev = None
    for v in path:
        if v != prev:
            out.append(v)
        prev = v
    return [v for v in out if v != blank]


def ctc_brute_force(probs: np.ndarray, target, max_frames: int = 12) -> float:
    """Enumeration oracle: sum the probability of every frame-label path
    whose collapse equals the target, return the negative log of the sum.

    Exponential in T; refuses T beyond ``max_frames``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise CtcError(f"probs must be a T x V matrix, got shape {probs.shape}")
    T, V = probs.shape
    if T > max_frames:
        raise CtcError(f"brute force limited to T <= {max_frames}, got T={T}")
    row_sums = probs.sum(axis=1)
    if not np.allclose(row_sums, 1.0, atol=1e-6):
        raise CtcError("probability rows must sum to 1")
    tgt = [int(v) for v in target]
    total = 0.0
    for path in itertools.product(range(V), repeat=T):
        if collapse(path) == tgt:
            p = 1.0
            for t, v in enumerate(path):
                p *= probs[t, v]
            total += p
    if total <= 0.0:
        raise InfeasibleTargetError("no admissible path for target")
    return float(-np.log(total))


def greedy_decode(logits: np.ndarray, blank: int = BLANK) -> list[int]:
    """Best-path decoding: per-frame argmax (ties to the smaller index),
    collapse consecutive repeats, remove blanks."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[0] < 1:
        raise CtcError(f"logits must be a non-empty T x V matrix, got shape {logits.shape}")
    if not np.isfinite(logits).all():
        raise CtcError("logits contain NaN or inf")
    return collapse(np.argmax(logits, axis=1), blank=blank)
