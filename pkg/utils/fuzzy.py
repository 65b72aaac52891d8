"""
This Source Code Form is subject to the terms of the Mozilla Public
License, v. 2.0. If a copy of the MPL was not distributed with this
file, You can obtain one at http://mozilla.org/MPL/2.0/.
"""

from __future__ import annotations

import heapq
from difflib import SequenceMatcher
from typing import Iterable, List, Tuple


def ratio(a: str, b: str) -> int:
    m = SequenceMatcher(None, a, b)
    return int(round(100 * m.ratio()))


def _extraction_generator(query, choices, scorer=ratio, score_cutoff=0):
    for choice in choices:
        score = scorer(query, choice)
        if score >= score_cutoff:
            yield (choice, score)


def extract(
    query: str,
    choices: Iterable[str],
    *,
    scorer=ratio,
    score_cutoff: int = 0,
    limit: int = 3,
) -> List[Tuple[str, int]]:
    it = _extraction_generator(query.lower(), choices, scorer, score_cutoff)

    def key(t):
        return t[1]

    if limit is not None:
        return heapq.nlargest(limit, it, key=key)
    return sorted(it, key=key, reverse=True)


def suggest(query: str, choices: Iterable[str], *, limit: int = 3) -> List[str]:
    """Closest matches for a misspelt name, best first."""
    return [name for name, _ in extract(query, choices, score_cutoff=60, limit=limit)]
