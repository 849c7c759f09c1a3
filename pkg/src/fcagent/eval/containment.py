"""Scan logged contexts for any long substring of a document body.

Window hashes are polynomial hashes mod 2**64 computed in one vectorized
pass: with prefix sums of ``s[j] * B**-j`` the hash of ``s[i:i+n]`` is
``(Q[i+n] - Q[i]) * B**(i+n-1)``.  Hash hits are confirmed by direct
comparison, so collisions cannot produce false reports.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ..errors import ParameterError

WINDOW = 64
_BASE = 1_000_003
_BASE_INV = pow(_BASE, -1, 2**64)


def _codes(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-32-le"), dtype=np.uint32).astype(np.uint64)


def _powers(base: int, count: int) -> np.ndarray:
    out = np.full(count, base, dtype=np.uint64)
    out[0] = 1
    return np.cumprod(out, dtype=np.uint64)


def window_hashes(text: str, n: int = WINDOW) -> np.ndarray:
    """Hash of every length-``n`` window of ``text`` (empty if shorter)."""
    if n < 1:
        raise ParameterError("window must be >= 1")
    m = len(text)
    if m < n:
        return np.empty(0, dtype=np.uint64)
    s = _codes(text)
    with np.errstate(over="ignore"):
        q = np.zeros(m + 1, dtype=np.uint64)
        np.cumsum(s * _powers(_BASE_INV, m), dtype=np.uint64, out=q[1:])
        up = _powers(_BASE, m)
        return (q[n:] - q[:-n]) * up[n - 1:]


@dataclass(frozen=True)
class SharedSpan:
    offset: int      # in the scanned text
    doc: int         # index of the indexed document
    doc_offset: int
    text: str


class SubstringIndex:
    """All length-``n`` windows of a set of documents, searchable by hash."""

    def __init__(self, docs: Iterable[str], n: int = WINDOW):
        self.n = n
        self.docs = list(docs)
        hashes, owners, offsets = [], [], []
        for i, d in enumerate(self.docs):
            h = window_hashes(d, n)
            hashes.append(h)
            owners.append(np.full(len(h), i, dtype=np.int64))
            offsets.append(np.arange(len(h), dtype=np.int64))
        h = np.concatenate(hashes) if hashes else np.empty(0, dtype=np.uint64)
        order = np.argsort(h, kind="stable")
        self._hashes = h[order]
        self._owner = np.concatenate(owners)[order] if owners else np.empty(0, dtype=np.int64)
        self._offset = np.concatenate(offsets)[order] if offsets else np.empty(0, dtype=np.int64)

    def find(self, text: str, limit: int | None = None) -> list[SharedSpan]:
        """Verified windows of ``text`` that also occur in an indexed document."""
        h = window_hashes(text, self.n)
        if not len(h) or not len(self._hashes):
            return []
        lo = np.searchsorted(self._hashes, h, side="left")
        hi = np.searchsorted(self._hashes, h, side="right")
        found: list[SharedSpan] = []
        for pos in np.nonzero(hi > lo)[0]:
            window = text[pos:pos + self.n]
            for k in range(lo[pos], hi[pos]):
                doc, off = int(self._owner[k]), int(self._offset[k])
                if self.docs[doc][off:off + self.n] == window:
                    found.append(SharedSpan(int(pos), doc, off, window))
                    break
            if limit is not None and len(found) >= limit:
                break
        return found

    def contains_any(self, text: str) -> bool:
        return bool(self.find(text, limit=1))
