"""Hierarchical mispronunciation scoring: alignment, TA/FR/FA/TR, PER.

Scoring compares three sequences per utterance. The canonical phones are
what the prompt should elicit, the perceived phones are what the annotator
heard, and the predicted phones are the decoder output. Each canonical
position is judged twice: correct vs mispronounced (canonical against
perceived) and accepted vs rejected (canonical against predicted). The
four-way counts combine those judgments; recall, precision and F1 follow
the standard definitions R = TR/(TR+FA), P = TR/(TR+FR).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .af_inventory import PhoneInventory

MATCH = "match"
SUB = "sub"
DELETE = "del"
INSERT = "ins"


@dataclass(frozen=True)
class EditOp:
    kind: str                # match | sub | del | ins
    ref_index: Optional[int]  # None for insertions
    hyp_index: Optional[int]  # None for deletions


def align(ref: Sequence, hyp: Sequence) -> list[EditOp]:
    """Minimal unit-cost edit alignment of hyp against ref.

    Backtrace ties are broken preferring match > substitute > delete >
    insert so counts are deterministic across platforms.
    """
    n, m = len(ref), len(hyp)
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dp[i][0] = i
    for j in range(1, m + 1):
        dp[0][j] = j
    for i in range(1, n + 1):
        row, prev = dp[i], dp[i - 1]
        for j in range(1, m + 1):
            cost = 0 if ref[i - 1] == hyp[j - 1] else 1
            row[j] = min(prev[j - 1] + cost, prev[j] + 1, row[j - 1] + 1)
    ops = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and dp[i][j] == dp[i - 1][j - 1]:
            ops.append(EditOp(MATCH, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and j > 0 and dp[i][j] == dp[i - 1][j - 1] + 1:
            ops.append(EditOp(SUB, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and dp[i][j] == dp[i - 1][j] + 1:
            ops.append(EditOp(DELETE, i - 1, None))
            i -= 1
        else:
            ops.append(EditOp(INSERT, None, j - 1))
            j -= 1
    ops.reverse()
    return ops


def edit_counts(ops: Iterable[EditOp]) -> tuple[int, int, int]:
    """(substitutions, deletions, insertions) in an alignment."""
    s = d = ins = 0
    for op in ops:
        if op.kind == SUB:
            s += 1
        elif op.kind == DELETE:
            d += 1
        elif op.kind == INSERT:
            ins += 1
    return s, d, ins


def per(ref: Sequence, hyp: Sequence) -> float:
    """Phoneme error rate: (S + D + I) / |ref| from the minimal alignment."""
    if len(ref) == 0:
        raise ValueError("PER needs a non-empty reference")
    s, d, ins = edit_counts(align(ref, hyp))
    return (s + d + ins) / len(ref)


def corpus_per(pairs: Iterable[tuple[Sequence, Sequence]]) -> float:
    """Micro-averaged PER: total edits over total reference length."""
    edits = 0
    ref_len = 0
    for ref, hyp in pairs:
        s, d, ins = edit_counts(align(ref, hyp))
        edits += s + d + ins
        ref_len += len(ref)
    if ref_len == 0:
        raise ValueError("corpus PER needs at least one non-empty reference")
    return edits / ref_len


@dataclass
class MddCounts:
    ta: int = 0                # correct and accepted
    fr: int = 0                # correct but rejected
    fa: int = 0                # mispronounced but accepted
    tr: int = 0                # mispronounced and rejected
    tr_correct_diag: int = 0   # TR where the predicted phone equals the perceived one
    insertions: int = 0        # inserted phones (both alignments), outside the four-way counts

    def __post_init__(self):
        if min(self.ta, self.fr, self.fa, self.tr, self.tr_correct_diag, self.insertions) < 0:
            raise ValueError("counts must be non-negative")
        if self.tr_correct_diag > self.tr:
            raise ValueError("tr_correct_diag cannot exceed tr")

    def __add__(self, other: "MddCounts") -> "MddCounts":
        return MddCounts(
            ta=self.ta + other.ta,
            fr=self.fr + other.fr,
            fa=self.fa + other.fa,
            tr=self.tr + other.tr,
            tr_correct_diag=self.tr_correct_diag + other.tr_correct_diag,
            insertions=self.insertions + other.insertions,
        )

    def scored_positions(self) -> int:
        return self.ta + self.fr + self.fa + self.tr


@dataclass(frozen=True)
class MddMetrics:
    recall: float
    precision: float
    f1: float
    per: float
    degenerate: bool = False   # some denominator was zero and the value was forced to 0


def _aligned_hyp(ops: list[EditOp], hyp: Sequence) -> dict[int, Optional[object]]:
    """Map each covered ref index to the hyp token aligned to it (None = deleted)."""
    out = {}
    for op in ops:
        if op.kind == MATCH or op.kind == SUB:
            out[op.ref_index] = hyp[op.hyp_index]
        elif op.kind == DELETE:
            out[op.ref_index] = None
    return out


def _insertion_gaps(ops: list[EditOp], hyp: Sequence) -> dict[int, list]:
    """Inserted hyp tokens grouped by the ref gap they fall into.

    Gap g holds insertions that occur after ref position g-1 (g=0 :
    before the first ref token).
    """
    gaps: dict[int, list] = {}
    next_ref = 0
    for op in ops:
        if op.kind == INSERT:
            gaps.setdefault(next_ref, []).append(hyp[op.hyp_index])
        else:
            next_ref = op.ref_index + 1
    return gaps


def mdd_counts(canonical: Sequence[str], perceived: Sequence[str],
               predicted: Sequence[str],
               inventory: PhoneInventory | None = None,
               insertion_mode: str = "exclude") -> MddCounts:
    """Three-way comparison realized as two alignments against canonical.

    ``insertion_mode="exclude"`` (default) tallies inserted phones
    separately and keeps the four-way counts defined over canonical
    positions only. ``"score"`` additionally pairs perceived-side and
    predicted-side insertions per canonical gap and counts the pairs into
    TR/FA/FR (the alternative reading of the hierarchical scheme).
    """
    if insertion_mode not in ("exclude", "score"):
        raise ValueError(f"unknown insertion_mode {insertion_mode!r}")
    inventory = inventory or PhoneInventory()
    for seq in (canonical, perceived, predicted):
        for p in seq:
            if p not in inventory:
                raise KeyError(f"phone {p!r} outside the inventory")

    ops_perc = align(canonical, perceived)
    ops_pred = align(canonical, predicted)
    heard = _aligned_hyp(ops_perc, perceived)
    decoded = _aligned_hyp(ops_pred, predicted)

    counts = MddCounts()
    for i, canon in enumerate(canonical):
        actually_correct = heard.get(i) == canon
        accepted = decoded.get(i) == canon
        if actually_correct and accepted:
            counts.ta += 1
        elif actually_correct:
            counts.fr += 1
        elif accepted:
            counts.fa += 1
        else:
            counts.tr += 1
            if heard.get(i) == decoded.get(i):
                counts.tr_correct_diag += 1

    gaps_perc = _insertion_gaps(ops_perc, perceived)
    gaps_pred = _insertion_gaps(ops_pred, predicted)
    n_ins_perc = sum(len(v) for v in gaps_perc.values())
    n_ins_pred = sum(len(v) for v in gaps_pred.values())

    if insertion_mode == "exclude":
        counts.insertions = n_ins_perc + n_ins_pred
        return counts

    # score mode: pair insertions gap by gap; an actual insertion the
    # decoder also produced is a rejection of that (non-canonical) sound
    for g in sorted(set(gaps_perc) | set(gaps_pred)):
        ins_p = gaps_perc.get(g, [])
        ins_d = gaps_pred.get(g, [])
        paired = min(len(ins_p), len(ins_d))
        counts.tr += paired
        counts.tr_correct_diag += sum(1 for a, b in zip(ins_p, ins_d) if a == b)
        counts.fa += len(ins_p) - paired
        counts.fr += len(ins_d) - paired
    counts.insertions = n_ins_perc + n_ins_pred
    return counts


def metrics(counts: MddCounts, per_value: float) -> MddMetrics:
    """Recall, precision and F1 from the four-way counts.

    Zero denominators yield 0 for the affected value and set the
    degenerate flag rather than raising.
    """
    degenerate = False
    if counts.tr + counts.fa > 0:
        recall = counts.tr / (counts.tr + counts.fa)
    else:
        recall, degenerate = 0.0, True
    if counts.tr + counts.fr > 0:
        precision = counts.tr / (counts.tr + counts.fr)
    else:
        precision, degenerate = 0.0, True
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1, degenerate = 0.0, True
    return MddMetrics(recall=recall, precision=precision, f1=f1,
                      per=per_value, degenerate=degenerate)


def score_corpus(triples: Iterable[tuple[Sequence[str], Sequence[str], Sequence[str]]],
                 inventory: PhoneInventory | None = None,
                 insertion_mode: str = "exclude",
                 average: str = "micro") -> dict:
    """Score a corpus of (canonical, perceived, predicted) triples.

    Micro averaging (default) pools counts and edit totals before computing
    the metrics; macro averaging computes per-utterance metrics and means
    them. Returns the scoring-report dict; per-utterance rows are under
    ``"per_utterance"`` for the optional TSV.
    """
    if average not in ("micro", "macro"):
        raise ValueError(f"unknown average {average!r}")
    inventory = inventory or PhoneInventory()
    pooled = MddCounts()
    rows = []
    utt_metrics = []
    edits = 0
    ref_len = 0
    for idx, (canonical, perceived, predicted) in enumerate(triples):
        c = mdd_counts(canonical, perceived, predicted, inventory, insertion_mode)
        u_per = per(perceived, predicted)
        pooled = pooled + c
        s, d, ins = edit_counts(align(perceived, predicted))
        edits += s + d + ins
        ref_len += len(perceived)
        utt_metrics.append(metrics(c, u_per))
        rows.append({
            "index": idx, "ta": c.ta, "fr": c.fr, "fa": c.fa, "tr": c.tr,
            "tr_correct_diag": c.tr_correct_diag, "insertions": c.insertions,
            "per": u_per,
        })
    if ref_len == 0:
        raise ValueError("empty corpus")
    if average == "micro":
        m = metrics(pooled, edits / ref_len)
    else:
        n = len(utt_metrics)
        m = MddMetrics(
            recall=sum(x.recall for x in utt_metrics) / n,
            precision=sum(x.precision for x in utt_metrics) / n,
            f1=sum(x.f1 for x in utt_metrics) / n,
            per=sum(x.per for x in utt_metrics) / n,
            degenerate=any(x.degenerate for x in utt_metrics),
        )
    return {
        "ta": pooled.ta, "fr": pooled.fr, "fa": pooled.fa, "tr": pooled.tr,
        "tr_correct_diag": pooled.tr_correct_diag, "insertions": pooled.insertions,
        "recall": m.recall, "precision": m.precision, "f1": m.f1, "per": m.per,
        "degenerate": m.degenerate, "average": average,
        "utterances": len(rows), "per_utterance": rows,
    }


def per_utterance_tsv(report: dict) -> str:
    """Render the per-utterance rows of a scoring report as TSV."""
    cols = ["index", "ta", "fr", "fa", "tr", "tr_correct_diag", "insertions", "per"]
    lines = ["\t".join(cols)]
    for row in report["per_utterance"]:
        lines.append("\t".join(f"{row[c]:.6f}" if c == "per" else str(row[c]) for c in cols))
    return "\n".join(lines) + "\n"
