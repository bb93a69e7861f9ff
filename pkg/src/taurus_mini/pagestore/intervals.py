"""Sets of LSNs kept as merged half-open intervals ``(lo, hi]``."""

from __future__ import annotations

from bisect import bisect_left
from typing import Iterable, Iterator


class IntervalSet:
    __slots__ = ("_los", "_his")

    def __init__(self, intervals: Iterable[tuple[int, int]] = ()):
        self._los: list[int] = []
        self._his: list[int] = []
        for lo, hi in intervals:
            self.add(lo, hi)

    def add(self, lo: int, hi: int) -> bool:
        """Cover ``(lo, hi]``; return True if anything new was covered."""
        if hi <= lo:
            return False
        los, his = self._los, self._his
        # first interval that could touch (lo, hi]: its hi >= lo
        i = bisect_left(his, lo)
        j = i
        new_lo, new_hi = lo, hi
        while j < len(los) and los[j] <= hi:
            new_lo = min(new_lo, los[j])
            new_hi = max(new_hi, his[j])
            j += 1
        if j - i == 1 and los[i] <= lo and his[i] >= hi:
            return False
        los[i:j] = [new_lo]
        his[i:j] = [new_hi]
        return True

    def contains(self, lsn: int) -> bool:
        i = bisect_left(self._his, lsn)
        return i < len(self._los) and self._los[i] < lsn

    def prefix_end(self, start: int = 0) -> int:
        """Largest L with every LSN in ``(start, L]`` covered."""
        i = bisect_left(self._his, start)
        if i < len(self._los) and self._los[i] <= start:
            return self._his[i]
        return start

    def bounds(self) -> tuple[list[int], list[int]]:
        """Exclusive lower and inclusive upper ends of the merged intervals."""
        return self._los, self._his

    @property
    def max(self) -> int:
        return self._his[-1] if self._his else 0

    def missing(self, lo: int, hi: int) -> list[tuple[int, int]]:
        """Uncovered sub-intervals of ``(lo, hi]``."""
        out = []
        pos = lo
        for a, b in self:
            if b <= pos:
                continue
            if a >= hi:
                break
            if a > pos:
                out.append((pos, min(a, hi)))
            pos = max(pos, b)
            if pos >= hi:
                break
        if pos < hi:
            out.append((pos, hi))
        return out

    def intersect(self, lo: int, hi: int) -> list[tuple[int, int]]:
        """Covered sub-intervals of ``(lo, hi]``."""
        out = []
        for a, b in self:
            a2, b2 = max(a, lo), min(b, hi)
            if a2 < b2:
                out.append((a2, b2))
        return out

    def gaps(self, start: int = 0) -> list[tuple[int, int]]:
        """Holes between the contiguous prefix from ``start`` and ``max``."""
        return self.missing(start, self.max) if self.max > start else []

    def copy(self) -> "IntervalSet":
        out = IntervalSet()
        out._los = list(self._los)
        out._his = list(self._his)
        return out

    def __iter__(self) -> Iterator[tuple[int, int]]:
        return iter(zip(self._los, self._his))

    def __len__(self) -> int:
        return len(self._los)

    def __eq__(self, other) -> bool:
        return isinstance(other, IntervalSet) and self._los == other._los and self._his == other._his

    def __repr__(self) -> str:
        return "IntervalSet(" + ", ".join(f"({a},{b}]" for a, b in self) + ")"
