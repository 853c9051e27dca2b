"""Event-based scoring: IoU candidate matching, maximum bipartite matching,
POS/UNK handling, per-dataset F-scores and harmonic-mean aggregation.

Per file the procedure is:

0. drop predictions and POS/UNK references ending at or before the support
   region's end (the task only asks for events after the provided shots);
1. match predictions against POS references (IoU >= threshold edges, maximum
   bipartite matching); matches are the true positives;
2. match the leftover predictions against UNK references the same way;
   UNK-matched predictions are exempt from false-positive counting;
3. FP = predictions matched to neither POS nor UNK;
4. FN = POS references left unmatched.

Step 2 depends on which maximum matching step 1 picked, so the counts are
pinned by the lexicographic optimum: maximize TP first, then UNK absorption.
Both quantities are plain matching cardinalities (TP on the POS graph, total
absorption on the POS+UNK graph: any maximum combined matching can be
rearranged to keep the POS side maximum), so TP/FP/FN never depend on
tie-breaking inside the matcher.

Counts are pooled (micro) across the files of a dataset before the F-score;
across datasets the overall score is the harmonic mean of dataset F-scores,
so one weak dataset drags the overall score down hard.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

Interval = tuple[float, float]

DEFAULT_MIN_IOU = 0.3


@dataclass(frozen=True)
class MatchCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "MatchCounts") -> "MatchCounts":
        return MatchCounts(self.tp + other.tp, self.fp + other.fp,
                           self.fn + other.fn)


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f: float


def iou(a: Interval, b: Interval) -> float:
    """Intersection over union of two time intervals, in [0, 1]."""
    if a[1] <= a[0] or b[1] <= b[0]:
        raise ValueError(f"invalid interval: {a if a[1] <= a[0] else b}")
    inter = min(a[1], b[1]) - max(a[0], b[0])
    if inter <= 0:
        return 0.0
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union


def candidate_edges(preds: list[Interval], refs: list[Interval],
                    min_iou: float = DEFAULT_MIN_IOU) -> list[tuple[int, int]]:
    """Edges (pred index, ref index) with IoU at or above the threshold."""
    if not (0 < min_iou <= 1):
        raise ValueError(f"min_iou must be in (0, 1], got {min_iou}")
    return [(i, j)
            for i, p in enumerate(preds)
            for j, r in enumerate(refs)
            if iou(p, r) >= min_iou]


def max_bipartite_matching(edges: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Maximum-cardinality matching via Hopcroft-Karp.

    The particular pairing may vary with input order but the cardinality is
    unique; iteration orders are fixed so results are reproducible.
    """
    adjacency: dict[int, list[int]] = {}
    for left, right in edges:
        adjacency.setdefault(left, []).append(right)
    lefts = sorted(adjacency)
    for left in lefts:
        adjacency[left] = sorted(set(adjacency[left]))

    INF = float("inf")
    match_left: dict[int, int] = {}
    match_right: dict[int, int] = {}
    dist: dict[int, float] = {}

    def bfs() -> bool:
        queue: deque[int] = deque()
        for left in lefts:
            if left not in match_left:
                dist[left] = 0
                queue.append(left)
            else:
                dist[left] = INF
        reachable_free = False
        while queue:
            left = queue.popleft()
            for right in adjacency[left]:
                nxt = match_right.get(right)
                if nxt is None:
                    reachable_free = True
                elif dist[nxt] == INF:
                    dist[nxt] = dist[left] + 1
                    queue.append(nxt)
        return reachable_free

    def dfs(root: int) -> bool:
        # iterative alternating-path search along the BFS layering
        stack = [root]
        edge_idx = {root: 0}
        parent_left: dict[int, int] = {}
        parent_right: dict[int, int] = {}
        while stack:
            left = stack[-1]
            i = edge_idx[left]
            if i >= len(adjacency[left]):
                dist[left] = INF   # dead end for this phase
                stack.pop()
                continue
            edge_idx[left] = i + 1
            right = adjacency[left][i]
            nxt = match_right.get(right)
            if nxt is None:
                # free right vertex: flip matched/unmatched along the path
                match_left[left] = right
                match_right[right] = left
                while left != root:
                    prev, via = parent_left[left], parent_right[left]
                    match_left[prev] = via
                    match_right[via] = prev
                    left = prev
                return True
            if dist.get(nxt) == dist[left] + 1 and nxt not in edge_idx:
                parent_left[nxt] = left
                parent_right[nxt] = right
                edge_idx[nxt] = 0
                stack.append(nxt)
        return False

    while bfs():
        for left in lefts:
            if left not in match_left:
                dfs(left)
    return sorted(match_left.items())


def score_file(preds: list[Interval], pos_refs: list[Interval],
               unk_refs: list[Interval] = (), support_end: float = 0.0,
               min_iou: float = DEFAULT_MIN_IOU) -> MatchCounts:
    """TP/FP/FN for one file following the four-step matching procedure."""
    preds = sorted(p for p in preds if p[1] > support_end)
    pos = sorted(r for r in pos_refs if r[1] > support_end)
    unk = sorted(r for r in unk_refs if r[1] > support_end)

    pos_edges = candidate_edges(preds, pos, min_iou)
    tp = len(max_bipartite_matching(pos_edges))

    # lexicographic step 2: predictions absorbed by UNK on top of maximum TP
    combined = pos_edges + [(i, len(pos) + j)
                            for i, j in candidate_edges(preds, unk, min_iou)]
    matched_total = len(max_bipartite_matching(combined))

    fp = len(preds) - matched_total
    fn = len(pos) - tp
    return MatchCounts(tp=tp, fp=fp, fn=fn)


def fscore(counts: MatchCounts) -> PRF:
    """Precision/recall/F from counts; 0/0 ratios are defined as 0."""
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return PRF(precision=precision, recall=recall, f=f)


def dataset_fscore(file_counts: list[MatchCounts]) -> PRF:
    """Pool counts across a dataset's files, then apply the F formula."""
    if not file_counts:
        raise ValueError("dataset has no file counts")
    total = MatchCounts()
    for c in file_counts:
        total = total + c
    return fscore(total)


def overall_harmonic_mean(dataset_fs: list[float]) -> float:
    """Harmonic mean of dataset F-scores; any zero forces the result to 0."""
    if not dataset_fs:
        raise ValueError("no dataset scores to aggregate")
    if any(f < 0 or f > 1 for f in dataset_fs):
        raise ValueError(f"scores must be in [0, 1], got {dataset_fs}")
    if any(f == 0.0 for f in dataset_fs):
        return 0.0
    return len(dataset_fs) / sum(1.0 / f for f in dataset_fs)


def overall_score(counts_by_dataset: dict[str, list[MatchCounts]]) -> float:
    """Dataset-pooled F-scores combined by harmonic mean."""
    return overall_harmonic_mean(
        [dataset_fscore(counts).f for counts in counts_by_dataset.values()])


def bootstrap_ci(counts_by_dataset: dict[str, list[MatchCounts]],
                 n_resamples: int = 1000, confidence: float = 0.95,
                 seed: int = 0) -> tuple[float, float]:
    """Percentile bootstrap interval for the overall score.

    Files are resampled with replacement within their dataset (keeping every
    dataset populated). The interval is widened to contain the point estimate,
    which percentile intervals do not guarantee on their own.
    """
    if not (0 < confidence < 1):
        raise ValueError(f"confidence must be in (0, 1), got {confidence}")
    n_files = sum(len(v) for v in counts_by_dataset.values())
    if n_files < 2:
        raise ValueError(f"bootstrap needs at least 2 files, got {n_files}")
    rng = np.random.default_rng(seed)
    names = sorted(counts_by_dataset)
    scores = np.empty(n_resamples)
    for b in range(n_resamples):
        resampled = {}
        for name in names:
            files = counts_by_dataset[name]
            idx = rng.integers(0, len(files), size=len(files))
            resampled[name] = [files[i] for i in idx]
        scores[b] = overall_score(resampled)
    point = overall_score(counts_by_dataset)
    alpha = 100.0 * (1.0 - confidence) / 2.0
    low = float(np.percentile(scores, alpha))
    high = float(np.percentile(scores, 100.0 - alpha))
    return (min(low, point), max(high, point))
