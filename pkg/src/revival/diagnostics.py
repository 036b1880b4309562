"""Alignment diagnostics: are outcomes better organized by forward time or by
time remaining before death?

Outcomes are averaged in a lower-triangular table indexed by survival-time
bin (rows) and appointment-time bin (columns).  Columns group cells by
forward time ``t``; diagonals ``row - column`` group them by ``T - t``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import check_dataset


@dataclass
class TimeTable:
    """Cell means and counts; ``means`` is NaN where a cell is empty."""

    means: np.ndarray
    counts: np.ndarray
    bin_width: float = 1.0

    @classmethod
    def from_means(cls, means, counts=None, bin_width=1.0) -> "TimeTable":
        means = np.asarray(means, dtype=float)
        if counts is None:
            counts = np.where(np.isnan(means), 0, 1)
        return cls(means, np.asarray(counts), bin_width)

    @property
    def n_bins(self):
        return self.means.shape[0]

    def labels(self):
        w = self.bin_width
        out = [f"{i * w:g}-{(i + 1) * w:g}" for i in range(self.n_bins - 1)]
        return out + [f"{(self.n_bins - 1) * w:g}+"]

    def cells(self):
        """``(row, column, mean, count)`` for every non-empty cell."""
        i, j = np.nonzero(~np.isnan(self.means))
        return i, j, self.means[i, j], self.counts[i, j]


def t_by_T_table(dataset, bin_width=1.0, n_bins=9) -> TimeTable:
    """Mean outcome by survival-time bin and appointment-time bin.

    The last row and column are open-ended.  Censored records are skipped.
    """
    dataset = check_dataset(dataset, uncensored=True)
    sums = np.zeros((n_bins, n_bins))
    counts = np.zeros((n_bins, n_bins), dtype=int)
    for rec in dataset:
        i = min(int(rec.T // bin_width), n_bins - 1)
        j = np.minimum((rec.times // bin_width).astype(int), n_bins - 1)
        np.add.at(sums, (np.full(j.size, i), j), rec.values)
        np.add.at(counts, (np.full(j.size, i), j), 1)
    with np.errstate(invalid="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return TimeTable(means, counts, bin_width)


def _between_ss(groups, values, weights):
    keys = np.unique(groups)
    if keys.size < 2:
        raise ValueError("need at least two non-empty groups")
    grand = np.sum(weights * values) / np.sum(weights)
    ss = 0.0
    for g in keys:
        m = groups == g
        w = weights[m]
        ss += w.sum() * (np.sum(w * values[m]) / w.sum() - grand) ** 2
    return float(ss)


def alignment_ss(table: TimeTable, weighting="cells"):
    """Between-group sums of squares of cell means by column and by diagonal.

    With ``weighting="cells"`` every non-empty cell counts once: group means
    are plain averages of cell means and each group contributes its number of
    cells times its squared deviation from the mean of all cells.
    ``weighting="observations"`` weights cells by their observation counts.

    Returns ``(ss_forward, ss_reverse)``.
    """
    i, j, v, n = table.cells()
    if weighting == "cells":
        w = np.ones_like(v)
    elif weighting == "observations":
        w = n.astype(float)
    else:
        raise ValueError("weighting must be 'cells' or 'observations'")
    return _between_ss(j, v, w), _between_ss(i - j, v, w)


def _additive_rss(a, b, v):
    ka, kb_ = np.unique(a), np.unique(b)
    X = np.column_stack([(a[:, None] == ka[None, :]).astype(float),
                         (b[:, None] == kb_[None, :]).astype(float)])
    coef, *_ = np.linalg.lstsq(X, v, rcond=None)
    r = v - X @ coef
    rank = np.linalg.matrix_rank(X)
    return float(r @ r), int(v.size - rank)


def additivity_check(table: TimeTable) -> dict:
    """Residual sums of squares of two-way additive fits to the cell means.

    ``forward`` fits ``a(T) + b(t)``; ``reverse`` fits ``a(T) + c(T - t)``.
    """
    i, j, v, _ = table.cells()
    if v.size < 3:
        raise ValueError("too few cells for an additive fit")
    rss_f, df_f = _additive_rss(i, j, v)
    rss_r, df_r = _additive_rss(i, i - j, v)
    total = float(np.sum((v - v.mean()) ** 2))
    return {"rss_forward": rss_f, "rss_reverse": rss_r, "df_forward": df_f,
            "df_reverse": df_r, "total_ss": total}
