"""Segment-level evaluation: Pearson, Kendall tau-b, MAE, macro-averaged.

Correlations that are undefined for a language pair (constant inputs) are
reported as missing, never as zero, and the macro average skips them with a
note. Macro averages are unweighted means over language pairs with at least
two segments, aggregated in sorted key order for determinism.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

# Above this size the pairwise O(n^2) tau-b pass switches to the
# merge-sort inversion count; both produce identical values.
TAU_B_QUADRATIC_MAX = 50_000


def pearson(x, y) -> Optional[float]:
    """Sample Pearson correlation with 64-bit accumulation.

    Returns None when undefined: fewer than two points or zero variance in
    either argument.
    """
    xv = np.asarray(x, dtype=np.float64)
    yv = np.asarray(y, dtype=np.float64)
    if xv.shape != yv.shape or xv.ndim != 1:
        raise ValueError(f"shape mismatch: {xv.shape} vs {yv.shape}")
    if xv.size < 2:
        return None
    xm = xv - xv.mean()
    ym = yv - yv.mean()
    sxx = float(xm @ xm)
    syy = float(ym @ ym)
    if sxx == 0.0 or syy == 0.0:
        return None
    r = float(xm @ ym) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def _tau_b_counts_quadratic(x: np.ndarray, y: np.ndarray) -> tuple[int, int, int, int]:
    """(concordant, discordant, pairs tied in x, pairs tied in y) by full pairwise pass."""
    n = x.size
    concordant = discordant = tied_x = tied_y = 0
    for i in range(n - 1):
        dx = np.sign(x[i + 1 :] - x[i])
        dy = np.sign(y[i + 1 :] - y[i])
        prod = dx * dy
        concordant += int(np.count_nonzero(prod > 0))
        discordant += int(np.count_nonzero(prod < 0))
        tied_x += int(np.count_nonzero(dx == 0))
        tied_y += int(np.count_nonzero(dy == 0))
    return concordant, discordant, tied_x, tied_y


def _merge_count_inversions(seq: list[float]) -> int:
    """Strict inversions (left > right) counted by merge sort."""
    n = len(seq)
    if n < 2:
        return 0
    mid = n // 2
    left, right = seq[:mid], seq[mid:]
    inversions = _merge_count_inversions(left) + _merge_count_inversions(right)
    merged = []
    i = j = 0
    while i < len(left) and j < len(right):
        if left[i] <= right[j]:
            merged.append(left[i])
            i += 1
        else:
            inversions += len(left) - i
            merged.append(right[j])
            j += 1
    merged.extend(left[i:])
    merged.extend(right[j:])
    seq[:] = merged
    return inversions


def _tie_pairs(sorted_vals: np.ndarray) -> int:
    _, counts = np.unique(sorted_vals, return_counts=True)
    return int(np.sum(counts * (counts - 1) // 2))


def _tau_b_counts_mergesort(x: np.ndarray, y: np.ndarray) -> tuple[int, int, int, int]:
    """Same four counts as the quadratic pass, in O(n log n)."""
    n = x.size
    order = np.lexsort((y, x))
    xs, ys = x[order], y[order]
    total = n * (n - 1) // 2
    tied_x = _tie_pairs(xs)
    tied_y = _tie_pairs(np.sort(y))
    tied_both = 0
    run = 1
    for i in range(1, n + 1):
        if i < n and xs[i] == xs[i - 1] and ys[i] == ys[i - 1]:
            run += 1
        else:
            tied_both += run * (run - 1) // 2
            run = 1
    # After lexsort, equal-x runs are y-sorted, so strict y-inversions occur
    # only across strictly increasing x: these are exactly the discordant pairs.
    discordant = _merge_count_inversions(list(ys))
    concordant = total - tied_x - tied_y + tied_both - discordant
    return concordant, discordant, tied_x, tied_y


def kendall_tau_b(x, y, quadratic_max: int = TAU_B_QUADRATIC_MAX) -> Optional[float]:
    """Kendall rank correlation with tie correction in both variables.

    tau_b = (C - D) / sqrt((C + D + Tx)(C + D + Ty)) with concordant C,
    discordant D, and T* the pairs tied in one variable only. Returns None
    when undefined (fewer than two points, or all ties in either vector).
    """
    xv = np.asarray(x, dtype=np.float64)
    yv = np.asarray(y, dtype=np.float64)
    if xv.shape != yv.shape or xv.ndim != 1:
        raise ValueError(f"shape mismatch: {xv.shape} vs {yv.shape}")
    n = xv.size
    if n < 2:
        return None
    if n <= quadratic_max:
        concordant, discordant, tied_x, tied_y = _tau_b_counts_quadratic(xv, yv)
    else:
        concordant, discordant, tied_x, tied_y = _tau_b_counts_mergesort(xv, yv)
    total = n * (n - 1) // 2
    if tied_x == total or tied_y == total:
        return None
    denom = float(np.sqrt(float(total - tied_x) * float(total - tied_y)))
    return (concordant - discordant) / denom


def mae(pred, gold) -> float:
    """Mean absolute difference on the 0-100 score scale."""
    pv = np.asarray(pred, dtype=np.float64)
    gv = np.asarray(gold, dtype=np.float64)
    if pv.shape != gv.shape or pv.ndim != 1:
        raise ValueError(f"shape mismatch: {pv.shape} vs {gv.shape}")
    if pv.size == 0:
        raise ValueError("mae of an empty sequence is undefined")
    return float(np.mean(np.abs(pv - gv)))


@dataclass(frozen=True)
class PairMetrics:
    n: int
    pearson: Optional[float]
    tau_b: Optional[float]
    mae: float


@dataclass
class EvalReport:
    per_pair: dict[str, PairMetrics]
    macro_pearson: Optional[float]
    macro_tau_b: Optional[float]
    macro_mae: Optional[float]
    notes: list[str] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    _COLUMNS = ("langpair", "n", "pearson", "tau_b", "mae")

    def rows(self) -> list[tuple]:
        rows = [
            (lp, pm.n, pm.pearson, pm.tau_b, pm.mae)
            for lp, pm in sorted(self.per_pair.items())
        ]
        rows.append(("macro", sum(pm.n for pm in self.per_pair.values()),
                     self.macro_pearson, self.macro_tau_b, self.macro_mae))
        return rows

    def to_table(self) -> str:
        def fmt(value) -> str:
            if value is None:
                return "-"
            if isinstance(value, float):
                return f"{value:.4f}"
            return str(value)

        body = [[fmt(v) for v in row] for row in self.rows()]
        widths = [max(len(h), *(len(r[i]) for r in body)) for i, h in enumerate(self._COLUMNS)]
        lines = ["  ".join(h.ljust(w) for h, w in zip(self._COLUMNS, widths))]
        lines.extend("  ".join(cell.ljust(w) for cell, w in zip(row, widths)) for row in body)
        lines.extend(f"# {note}" for note in self.notes)
        return "\n".join(lines)

    def to_jsonl(self) -> str:
        lines = []
        for row in self.rows():
            record = dict(zip(self._COLUMNS, row))
            if row[0] == "macro":
                record["notes"] = self.notes
                record["metadata"] = self.metadata
            lines.append(json.dumps(record, ensure_ascii=False))
        return "\n".join(lines)

    def to_csv(self) -> str:
        lines = [",".join(self._COLUMNS)]
        for row in self.rows():
            lines.append(",".join("" if v is None else str(v) for v in row))
        return "\n".join(lines)


def evaluate(scored: Sequence[tuple[float, float, str]], metadata: Optional[dict] = None) -> EvalReport:
    """Per-language-pair metrics plus unweighted macro averages.

    ``scored`` holds (prediction, gold, langpair) triples on the 0-100
    scale. Pairs with a single segment and pairs where a correlation is
    undefined are excluded from that macro mean, with a note.
    """
    groups: dict[str, tuple[list[float], list[float]]] = {}
    for pred, gold, langpair in scored:
        preds, golds = groups.setdefault(langpair, ([], []))
        preds.append(float(pred))
        golds.append(float(gold))
    if not groups:
        raise ValueError("no language pairs to evaluate")

    per_pair: dict[str, PairMetrics] = {}
    notes: list[str] = []
    macro_inputs: dict[str, list[float]] = {"pearson": [], "tau_b": [], "mae": []}
    for langpair in sorted(groups):
        preds, golds = groups[langpair]
        rho = pearson(preds, golds)
        tau = kendall_tau_b(preds, golds)
        err = mae(preds, golds)
        per_pair[langpair] = PairMetrics(n=len(preds), pearson=rho, tau_b=tau, mae=err)
        if len(preds) < 2:
            notes.append(f"{langpair}: n < 2, excluded from macro averages")
            continue
        for name, value in (("pearson", rho), ("tau_b", tau), ("mae", err)):
            if value is None:
                notes.append(f"{langpair}: {name} undefined, excluded from its macro mean")
            else:
                macro_inputs[name].append(value)

    def macro(name: str) -> Optional[float]:
        values = macro_inputs[name]
        if not values:
            notes.append(f"macro {name} undefined: no language pair contributed")
            return None
        return float(np.mean(values))

    return EvalReport(
        per_pair=per_pair,
        macro_pearson=macro("pearson"),
        macro_tau_b=macro("tau_b"),
        macro_mae=macro("mae"),
        notes=notes,
        metadata=metadata or {},
    )
