"""
This Source Code Form is subject to the terms of the Mozilla Public
License, v. 2.0. If a copy of the MPL was not distributed with this
file, You can obtain one at http://mozilla.org/MPL/2.0/.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence


class plural:
    def __init__(self, value):
        self.value = value

    def __format__(self, format_spec):
        v = self.value
        singular, sep, plural = format_spec.partition("|")
        plural = plural or f"{singular}s"
        if abs(v) != 1:
            return f"{v} {plural}"
        return f"{v} {singular}"


def human_join(seq: Sequence[str], delim: str = ", ", final: str = "or") -> str:
    size = len(seq)
    if size == 0:
        return ""

    if size == 1:
        return seq[0]

    if size == 2:
        return f"{seq[0]} {final} {seq[1]}"

    return delim.join(seq[:-1]) + f" {final} {seq[-1]}"


def estimate_cell(value: float, t_stat: Optional[float] = None) -> str:
    """Formats an estimate the way the estimation tables print it: ``-0.096 (-4.21)``."""
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    if t_stat is None or math.isnan(t_stat):
        return f"{value:.3f} (-)"
    return f"{value:.3f} ({t_stat:.2f})"


class TabularData:
    """Grid table with a left-aligned label column and right-aligned value columns.

    Short rows are padded with blanks so every line has the same width.
    """

    def __init__(self):
        self._widths = []
        self._columns = []
        self._rows = []

    def set_columns(self, columns):
        self._columns = [str(c) for c in columns]
        self._widths = [len(c) + 2 for c in self._columns]

    def add_row(self, row):
        cells = [str(r) for r in row]
        if len(cells) > len(self._columns):
            raise ValueError(f"Row has {len(cells)} cells for {len(self._columns)} columns.")
        cells += [""] * (len(self._columns) - len(cells))
        self._rows.append(cells)
        self._widths = [max(w, len(c) + 2) for w, c in zip(self._widths, cells)]

    def add_rows(self, rows):
        for row in rows:
            self.add_row(row)

    def _line(self, cells):
        label, *values = cells
        widths = [w - 2 for w in self._widths]
        padded = [f" {label:<{widths[0]}} "] + [f" {v:>{w}} " for v, w in zip(values, widths[1:])]
        return "|" + "|".join(padded) + "|"

    def render(self):
        """
        +-----------+----------------+
        | Parameter |        Class 1 |
        +-----------+----------------+
        | time      | -0.096 (-4.21) |
        +-----------+----------------+
        """
        sep = "+" + "+".join("-" * w for w in self._widths) + "+"
        return "\n".join([sep, self._line(self._columns), sep, *(self._line(r) for r in self._rows), sep])
