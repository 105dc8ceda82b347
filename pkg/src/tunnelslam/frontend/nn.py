"""Uniform spatial hash grid for neighbor queries.

Cells are cubes at the query radius, so scanning the 27 cells around a
query covers every point within that radius; results are exact. Cell keys
are packed into int64 after shifting to a non-negative range, target
indices are sorted by key, and all queries run as vectorized range
lookups, which keeps results independent of input order.
"""

import numpy as np


class HashGrid:
    def __init__(self, points, cell_size: float):
        if cell_size <= 0:
            raise ValueError("cell_size must be > 0")
        self.points = np.asarray(points, dtype=float).reshape(-1, 3)
        self.cell = float(cell_size)
        if len(self.points) == 0:
            self._keys = np.empty(0, dtype=np.int64)
            self._order = np.empty(0, dtype=np.int64)
            self._origin = np.zeros(3, dtype=np.int64)
            self._span = np.ones(3, dtype=np.int64)
            return
        coords = np.floor(self.points / self.cell).astype(np.int64)
        self._origin = coords.min(axis=0) - 1
        self._span = coords.max(axis=0) - self._origin + 3
        keys = self._pack(coords)
        self._order = np.argsort(keys, kind="stable")
        self._keys = keys[self._order]

    def _pack(self, coords):
        rel = coords - self._origin
        return (rel[:, 0] * self._span[1] + rel[:, 1]) * self._span[2] + rel[:, 2]

    def _candidate_ranges(self, queries):
        """(query_idx, start, end) ranges into the sorted target order for
        all occupied cells within one cell of each query."""
        if len(self._keys) == 0 or len(queries) == 0:
            z = np.empty(0, dtype=np.int64)
            return z, z, z
        qc = np.floor(np.asarray(queries, dtype=float) / self.cell).astype(np.int64)
        qi_all, starts_all, ends_all = [], [], []
        offsets = np.array(
            [[dx, dy, dz] for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)],
            dtype=np.int64,
        )
        for off in offsets:
            cells = qc + off
            valid = np.all((cells > self._origin - 1) & (cells < self._origin + self._span), axis=1)
            if not np.any(valid):
                continue
            keys = self._pack(cells[valid])
            start = np.searchsorted(self._keys, keys, side="left")
            end = np.searchsorted(self._keys, keys, side="right")
            nonempty = end > start
            if not np.any(nonempty):
                continue
            qi_all.append(np.nonzero(valid)[0][nonempty])
            starts_all.append(start[nonempty])
            ends_all.append(end[nonempty])
        if not qi_all:
            z = np.empty(0, dtype=np.int64)
            return z, z, z
        return np.concatenate(qi_all), np.concatenate(starts_all), np.concatenate(ends_all)

    def _expand(self, qi, starts, ends):
        counts = ends - starts
        total = int(counts.sum())
        if total == 0:
            z = np.empty(0, dtype=np.int64)
            return z, z
        qrep = np.repeat(qi, counts)
        base = np.repeat(starts, counts)
        shift = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        tidx = self._order[base + shift]
        return qrep, tidx

    def nearest(self, queries, radius: float):
        """Index and distance of the closest target within radius of each
        query; index -1 and distance inf where none exists. Exact when
        radius <= cell_size."""
        queries = np.asarray(queries, dtype=float).reshape(-1, 3)
        n = len(queries)
        idx = np.full(n, -1, dtype=np.int64)
        dist = np.full(n, np.inf)
        qrep, tidx = self._expand(*self._candidate_ranges(queries))
        if len(qrep) == 0:
            return idx, dist
        d2 = np.sum((queries[qrep] - self.points[tidx]) ** 2, axis=1)
        ok = d2 <= radius * radius
        qrep, tidx, d2 = qrep[ok], tidx[ok], d2[ok]
        if len(qrep) == 0:
            return idx, dist
        # first row per query after sorting by (query, distance, target)
        order = np.lexsort((tidx, d2, qrep))
        qs, first = np.unique(qrep[order], return_index=True)
        idx[qs] = tidx[order][first]
        dist[qs] = np.sqrt(d2[order][first])
        return idx, dist

    def pairs_within(self, queries, radius: float):
        """All (query, target, distance) pairs within radius, sorted by
        query then target index. Exact when radius <= cell_size."""
        queries = np.asarray(queries, dtype=float).reshape(-1, 3)
        qrep, tidx = self._expand(*self._candidate_ranges(queries))
        if len(qrep) == 0:
            z = np.empty(0, dtype=np.int64)
            return z, z, np.empty(0)
        d2 = np.sum((queries[qrep] - self.points[tidx]) ** 2, axis=1)
        ok = d2 <= radius * radius
        qrep, tidx, d2 = qrep[ok], tidx[ok], d2[ok]
        order = np.lexsort((tidx, qrep))
        return qrep[order], tidx[order], np.sqrt(d2[order])
