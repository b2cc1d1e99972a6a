"""Average-linkage (UPGMA) clustering of binary occupancy vectors.

The merge loop tracks exact sums of original pairwise distances per
cluster pair, so merged-cluster distances are the unweighted mean over
all member pairs. Determinism contract: at every step the minimum-
distance pair is merged, where any pair within TIE_TOL of the minimum
counts as tied and ties resolve to the lexicographically smallest
(left, right) node-id pair. Leaves are nodes 0..n-1; the merge at step t
creates node n+t.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import InputError, InvariantError
from .features import ClassCharacterization, characterize_class

METRICS = ("euclidean", "manhattan", "cosine")

# Pairs whose average distances differ by less than this are treated as
# exactly tied; keeps the merge order independent of float summation order.
TIE_TOL = 1e-9


@dataclass
class DistanceMatrix:
    """Condensed pairwise distances: entry (i < j) at i*n - i*(i+1)/2 + j-i-1."""

    n: int
    condensed: np.ndarray
    metric: str

    def __post_init__(self):
        expected = self.n * (self.n - 1) // 2
        if len(self.condensed) != expected:
            raise InvariantError(f"condensed length {len(self.condensed)} != {expected}")
        if not np.all(np.isfinite(self.condensed)) or np.any(self.condensed < 0):
            raise InvariantError("distances must be finite and non-negative")

    def get(self, i: int, j: int) -> float:
        if i == j:
            return 0.0
        if i > j:
            i, j = j, i
        return float(self.condensed[i * self.n - i * (i + 1) // 2 + (j - i - 1)])

    def square(self) -> np.ndarray:
        m = np.zeros((self.n, self.n))
        iu = np.triu_indices(self.n, k=1)
        m[iu] = self.condensed
        return m + m.T


@dataclass(frozen=True)
class Merge:
    left: int    # node id, always < right
    right: int
    height: float
    size: int


@dataclass
class Dendrogram:
    n_items: int
    merges: list[Merge]

    def __post_init__(self):
        if len(self.merges) != self.n_items - 1:
            raise InvariantError("dendrogram must contain n-1 merges")
        prev = -np.inf
        for m in self.merges:
            if m.height < prev - 1e-9:
                raise InvariantError("average-linkage heights must be non-decreasing")
            prev = max(prev, m.height)


@dataclass
class MobilityClass:
    """One cluster of users sharing an occupancy profile."""

    class_id: int
    member_ids: list[str]
    mean_profile: list[float]
    std_profile: list[float]
    size: int
    characterization: Optional[ClassCharacterization] = None


def pairwise_distance(bits: np.ndarray, metric: str = "euclidean",
                      user_ids: Optional[Sequence[str]] = None) -> DistanceMatrix:
    """Pairwise distances between 12-bit occupancy vectors.

    euclidean = sqrt(Hamming), manhattan = Hamming,
    cosine = 1 - a.b/(|a||b|) (requires non-zero vectors).
    """
    if metric not in METRICS:
        raise InputError(f"unknown metric {metric!r}; expected one of {METRICS}")
    bits = np.asarray(bits, dtype=float)
    if bits.ndim != 2 or bits.shape[0] < 2:
        raise InputError("need at least 2 vectors")
    gram = bits @ bits.T
    ones = np.diag(gram).copy()
    if metric == "cosine" and np.any(ones == 0):
        idx = int(np.argmax(ones == 0))
        who = user_ids[idx] if user_ids is not None else f"index {idx}"
        raise InputError(f"cosine distance undefined for all-zero vector of {who}")
    iu = np.triu_indices(bits.shape[0], k=1)
    hamming = ones[:, None] + ones[None, :] - 2.0 * gram
    if metric == "manhattan":
        condensed = hamming[iu]
    elif metric == "euclidean":
        condensed = np.sqrt(hamming[iu])
    else:
        norms = np.sqrt(ones)
        cos = 1.0 - gram / (norms[:, None] * norms[None, :])
        condensed = np.clip(cos[iu], 0.0, None)
    return DistanceMatrix(bits.shape[0], condensed, metric)


def upgma(dm: DistanceMatrix) -> Dendrogram:
    """Unweighted average-linkage hierarchical clustering.

    The distance between clusters is the plain mean of all original
    member-pair distances, maintained exactly as a running sum divided by
    the pair count. Ties (within TIE_TOL) merge the pair with the
    smallest (left, right) node ids, making the tree reproducible.
    """
    n = dm.n
    if n < 2:
        raise InputError("need at least 2 items to cluster")
    dsum = dm.square()
    mean = dsum.copy()
    np.fill_diagonal(mean, np.inf)
    node_id = np.arange(n, dtype=np.int64)
    size = np.ones(n, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    merges: list[Merge] = []
    prev_height = -np.inf

    # key[i, j] encodes the tie-break rank of pair (i, j): the
    # lexicographic (left, right) node-id order collapses to a single
    # integer because node ids stay below the stride. Large blocks of
    # identical vectors produce huge tie sets, so selection must stay
    # vectorized.
    sentinel = np.iinfo(np.int64).max
    stride = np.int64(2 * n)
    key = np.minimum(node_id[:, None], node_id[None, :]) * stride \
        + np.maximum(node_id[:, None], node_id[None, :])
    np.fill_diagonal(key, sentinel)

    for step in range(n - 1):
        m_min = mean.min()
        cand_keys = np.where(mean <= m_min + TIE_TOL, key, sentinel)
        flat = int(np.argmin(cand_keys))
        si, sj = divmod(flat, n)
        left = int(min(node_id[si], node_id[sj]))
        right = int(max(node_id[si], node_id[sj]))
        height = float(mean[si, sj])
        if height < prev_height - 1e-9:
            raise InvariantError("UPGMA produced decreasing merge heights")
        prev_height = max(prev_height, height)
        new_size = int(size[si] + size[sj])
        merges.append(Merge(left, right, height, new_size))

        # fold cluster sj into slot si; cross sums add exactly
        active[sj] = False
        dsum[si, :] += dsum[sj, :]
        dsum[:, si] = dsum[si, :]
        with np.errstate(invalid="ignore", divide="ignore"):
            mean[si, :] = dsum[si, :] / (size.astype(float) * new_size)
        mean[si, ~active] = np.inf
        mean[si, si] = np.inf
        mean[:, si] = mean[si, :]
        mean[sj, :] = np.inf
        mean[:, sj] = np.inf
        new_id = np.int64(n + step)
        key[si, :] = node_id * stride + new_id  # new id exceeds all others
        key[si, ~active] = sentinel
        key[si, si] = sentinel
        key[:, si] = key[si, :]
        key[sj, :] = sentinel
        key[:, sj] = sentinel
        size[si] = new_size
        size[sj] = 0
        node_id[si] = new_id
    return Dendrogram(n, merges)


def cut(dendrogram: Dendrogram, k: int) -> list[list[int]]:
    """Cut the tree into k classes by undoing the last k-1 merges.

    Returns member-index lists, ordered (and therefore labeled) by each
    class's smallest member index.
    """
    n = dendrogram.n_items
    if not (1 <= k <= n):
        raise InputError(f"k must be in 1..{n}, got {k}")
    components: dict[int, list[int]] = {i: [i] for i in range(n)}
    for t, merge in enumerate(dendrogram.merges[: n - k]):
        merged = components.pop(merge.left) + components.pop(merge.right)
        components[n + t] = merged
    classes = [sorted(m) for m in components.values()]
    classes.sort(key=lambda m: m[0])
    return classes


def build_classes(classes: list[list[int]], bits: np.ndarray,
                  user_ids: Sequence[str],
                  buvs: Optional[Mapping[str, Mapping]] = None
                  ) -> list[MobilityClass]:
    """Attach profiles and behavioral statistics to cut results.

    Args:
        classes: member-index lists from cut().
        bits: the clustered (n, 12) occupancy matrix.
        buvs: optional user id -> indicator -> BUV for characterization.
    """
    bits = np.asarray(bits, dtype=float)
    out = []
    for cid, members in enumerate(classes):
        block = bits[members]
        member_ids = sorted(user_ids[m] for m in members)
        mean = block.mean(axis=0)
        std = block.std(axis=0)  # population convention
        if np.any(mean < -1e-12) or np.any(mean > 1 + 1e-12):
            raise InvariantError("mean occupancy profile left [0, 1]")
        char = None
        if buvs is not None:
            char = characterize_class(cid, member_ids, buvs)
        out.append(MobilityClass(
            class_id=cid, member_ids=member_ids,
            mean_profile=[float(v) for v in mean],
            std_profile=[float(v) for v in std],
            size=len(members), characterization=char))
    return out
