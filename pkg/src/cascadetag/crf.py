"""Linear-chain CRF: sequence scoring, exact log-partition, NLL, Viterbi.

The pair potential is parameterized the standard way for neural chain CRFs:
a per-position emission score (linear projection of the encoder state) plus a
label-pair transition matrix, with explicit start/stop boundary scores.  All
partition computations run in log space with per-step logsumexp.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    Tensor,
    add,
    logsumexp,
    matmul,
    mul,
    reshape,
    slice_axis,
    sub,
    sum_all,
)

__all__ = [
    "CrfParameters",
    "EmissionSequence",
    "sequence_score",
    "log_partition",
    "nll",
    "viterbi",
    "project_emissions",
    "batch_project_emissions",
    "batch_nll_total",
]


@dataclass
class CrfParameters:
    """Per-task decoder parameters.

    w_emit: [hidden x L] emission projection
    b_emit: [L]          emission bias
    trans:  [L x L]      trans[prev, next] transition score
    start:  [L]          score of starting in each label
    stop:   [L]          score of ending in each label
    """

    w_emit: Tensor
    b_emit: Tensor
    trans: Tensor
    start: Tensor
    stop: Tensor

    @property
    def n_labels(self) -> int:
        return self.b_emit.data.shape[0]


@dataclass
class EmissionSequence:
    """Per-position label scores [T x L] with a validity mask.

    The mask marks real positions; padding must be a contiguous False
    suffix, and masked positions are excluded from every score.
    """

    scores: Tensor
    mask: np.ndarray | None = field(default=None)

    def __post_init__(self):
        t_len = self.scores.data.shape[0]
        if self.mask is None:
            self.mask = np.ones(t_len, dtype=bool)
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != (t_len,):
                raise ValueError(f"mask length {self.mask.shape} != sequence length {t_len}")
            n = int(self.mask.sum())
            if not self.mask[:n].all():
                raise ValueError("mask must be a contiguous True prefix")

    @property
    def length(self) -> int:
        return int(self.mask.sum())


def _onehot(index: int, n: int) -> np.ndarray:
    row = np.zeros(n)
    row[index] = 1.0
    return row


def _check_labels(labels, n_labels: int, t_len: int, t_full: int):
    """Labels may cover the real positions only or the full padded length;
    entries at masked positions are dropped."""
    labels = [int(y) for y in labels]
    if len(labels) not in (t_len, t_full):
        raise ValueError(f"label sequence length {len(labels)} != sequence length {t_len}")
    labels = labels[:t_len]
    for y in labels:
        if not 0 <= y < n_labels:
            raise ValueError(f"label {y} out of range [0, {n_labels})")
    return labels


def sequence_score(e: EmissionSequence, labels, p: CrfParameters) -> Tensor:
    """Log-domain score of one label sequence:
    start[y_0] + sum_i e[i, y_i] + sum_{i>=1} trans[y_{i-1}, y_i] + stop[y_last]."""
    t_len = e.length
    n = p.n_labels
    labels = _check_labels(labels, n, t_len, e.scores.data.shape[0])
    if t_len == 0:
        raise ValueError("sequence_score: empty sequence")
    emis_onehot = np.zeros((e.scores.data.shape[0], n))
    for t, y in enumerate(labels):
        emis_onehot[t, y] = 1.0
    trans_count = np.zeros((n, n))
    for t in range(1, t_len):
        trans_count[labels[t - 1], labels[t]] += 1.0
    total = sum_all(mul(e.scores, Tensor(emis_onehot)))
    total = add(total, sum_all(mul(p.trans, Tensor(trans_count))))
    total = add(total, sum_all(mul(p.start, Tensor(_onehot(labels[0], n)))))
    total = add(total, sum_all(mul(p.stop, Tensor(_onehot(labels[t_len - 1], n)))))
    return total


def _emission_row(e: EmissionSequence, t: int, n: int) -> Tensor:
    return reshape(slice_axis(e.scores, 0, t, t + 1), (n,))


def log_partition(e: EmissionSequence, p: CrfParameters) -> Tensor:
    """log of the sum over all L^T label sequences of exp(sequence_score),
    by the forward algorithm in log space; differentiable."""
    t_len = e.length
    if t_len < 1:
        raise ValueError("log_partition: empty sequence")
    n = p.n_labels
    alpha = add(p.start, _emission_row(e, 0, n))
    for t in range(1, t_len):
        inner = add(reshape(alpha, (n, 1)), p.trans)
        alpha = add(logsumexp(inner, axis=0), _emission_row(e, t, n))
    return logsumexp(add(alpha, p.stop), axis=0)


def nll(e: EmissionSequence, gold_labels, p: CrfParameters) -> Tensor:
    """Negative log-likelihood of the gold sequence; >= 0 up to rounding."""
    return sub(log_partition(e, p), sequence_score(e, gold_labels, p))


def viterbi(e: EmissionSequence, p: CrfParameters) -> tuple[list[int], float]:
    """Highest-scoring label sequence and its score.

    Ties are broken toward the lowest label index at every backtrack step
    (np.argmax returns the first maximizer), so decoding is deterministic.
    """
    t_len = e.length
    if t_len < 1:
        raise ValueError("viterbi: empty sequence")
    scores = np.asarray(e.scores.data, dtype=np.float64)[:t_len]
    trans = p.trans.data
    dp = p.start.data + scores[0]
    backptr = np.zeros((t_len, p.n_labels), dtype=np.intp)
    for t in range(1, t_len):
        candidates = dp[:, None] + trans
        backptr[t] = np.argmax(candidates, axis=0)
        dp = candidates[backptr[t], np.arange(p.n_labels)] + scores[t]
    final = dp + p.stop.data
    last = int(np.argmax(final))
    path = [last]
    for t in range(t_len - 1, 0, -1):
        path.append(int(backptr[t, path[-1]]))
    path.reverse()
    return path, float(final[last])


# ---------------------------------------------------------------------------
# Emission projection and batched training loss
# ---------------------------------------------------------------------------


def project_emissions(hidden: Tensor, p: CrfParameters, mask=None) -> EmissionSequence:
    """Project encoder states [T x hidden] to label scores [T x L]."""
    return EmissionSequence(add(matmul(hidden, p.w_emit), p.b_emit), mask)


def batch_project_emissions(hidden_by_pos: list[Tensor], p: CrfParameters) -> list[Tensor]:
    """Per-position projection for a batch: list of [B x hidden] -> list of [B x L]."""
    return [add(matmul(h, p.w_emit), p.b_emit) for h in hidden_by_pos]


def batch_nll_total(
    emissions: list[Tensor], labels: np.ndarray, mask: np.ndarray, p: CrfParameters
) -> Tensor:
    """Sum of per-sequence NLLs over a padded batch.

    emissions: per-position [B x L] tensors; labels: [B x T] int array
    (entries at masked positions are ignored); mask: [B x T] bool with
    contiguous True prefixes and every row nonempty.
    """
    batch, t_len = mask.shape
    n = p.n_labels
    if len(emissions) != t_len:
        raise ValueError(f"batch_nll_total: {len(emissions)} emission steps != mask width {t_len}")
    if not mask[:, 0].all():
        raise ValueError("batch_nll_total: every sequence must have length >= 1")
    dtype = emissions[0].dtype

    # forward algorithm, carrying alpha through padding unchanged
    alpha = add(p.start, emissions[0])  # [B x L] via broadcast
    for t in range(1, t_len):
        inner = add(reshape(alpha, (batch, n, 1)), p.trans)
        new_alpha = add(logsumexp(inner, axis=1), emissions[t])
        m = Tensor(mask[:, t : t + 1].astype(dtype))
        alpha = add(mul(new_alpha, m), mul(alpha, Tensor(1.0 - m.data)))
    log_z = logsumexp(add(alpha, p.stop), axis=1)  # [B]

    # gold path score via constant one-hot/count tensors
    lengths = mask.sum(axis=1)
    rows = np.arange(batch)
    gold = sum_all(mul(p.start, Tensor(_counts(labels[:, 0], n))))
    gold = add(gold, sum_all(mul(p.stop, Tensor(_counts(labels[rows, lengths - 1], n)))))
    trans_count = np.zeros((n, n))
    for t in range(1, t_len):
        live = mask[:, t]
        if live.any():
            np.add.at(trans_count, (labels[live, t - 1], labels[live, t]), 1.0)
    gold = add(gold, sum_all(mul(p.trans, Tensor(trans_count))))
    for t in range(t_len):
        live = mask[:, t]
        onehot = np.zeros((batch, n))
        onehot[rows[live], labels[live, t]] = 1.0
        gold = add(gold, sum_all(mul(emissions[t], Tensor(onehot))))

    return sub(sum_all(log_z), gold)


def _counts(label_column: np.ndarray, n: int) -> np.ndarray:
    counts = np.zeros(n)
    np.add.at(counts, label_column, 1.0)
    return counts
