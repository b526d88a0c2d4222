"""Unsupervised label generation from on-plane gaze points.

Confidence filtering, OPTICS clustering (reachability ordering followed by
xi-extraction of steep areas, with predecessor correction of cluster
boundaries), selection of the cluster nearest the camera origin as the
device cluster, and binary label assignment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NoDeviceCluster, PipelineError
from .gaze import GazePoint2D

NOISE = -1


@dataclass
class ClusterAssignment:
    """Flat clustering plus the reachability metadata it came from."""

    labels: np.ndarray                  # (N,) cluster id >= 0, or NOISE
    ordering: np.ndarray                # (N,) point indices in processing order
    reachability: np.ndarray            # (N,) per point (inf = never reached)
    clusters: list = field(default_factory=list)  # (start, end) ordering slices
    centroids: dict = field(default_factory=dict)  # id -> GazePoint2D
    sizes: dict = field(default_factory=dict)      # id -> member count

    @property
    def n_clusters(self) -> int:
        return len(self.centroids)

    @property
    def reachability_plot(self) -> np.ndarray:
        return self.reachability[self.ordering]


def filter_confidence(records, tau: float = 0.9):
    """Keep records with a detected face and confidence >= tau (inclusive);
    a missing confidence counts as 0."""
    return [
        r
        for r in records
        if r.face_detected and (r.face_confidence if r.face_confidence is not None else 0.0) >= tau
    ]


def _optics_order(points: np.ndarray, min_pts: int, max_eps: float):
    """Reachability ordering: core distances from the min_pts-th nearest
    neighbor (self included), expansion by smallest reachability, ties by
    lowest point index.  Also tracks each point's predecessor (the point
    that last improved its reachability)."""
    n = len(points)
    dist = np.sqrt(np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=2))

    kth = np.partition(dist, min_pts - 1, axis=1)[:, min_pts - 1]
    core = np.where(kth <= max_eps, kth, np.inf)

    reach = np.full(n, np.inf)
    predecessor = np.full(n, -1, dtype=int)
    processed = np.zeros(n, dtype=bool)
    order = np.empty(n, dtype=int)

    for pos in range(n):
        unproc = ~processed
        finite = np.where(unproc & np.isfinite(reach))[0]
        if finite.size:
            current = int(finite[np.argmin(reach[finite])])
        else:
            current = int(np.argmax(unproc))  # new start, reachability undefined
        processed[current] = True
        order[pos] = current
        if not np.isfinite(core[current]):
            continue
        neighbors = np.where(~processed & (dist[current] <= max_eps))[0]
        if neighbors.size:
            new_reach = np.maximum(core[current], dist[current, neighbors])
            better = new_reach < reach[neighbors]
            reach[neighbors[better]] = new_reach[better]
            predecessor[neighbors[better]] = current
    return order, reach, predecessor


def _extend_region(steep, other_way, start, min_pts):
    """Longest steep area from start: steep points reset the run of merely
    monotone points, which may not exceed min_pts in a row."""
    n = len(steep)
    index, end, slack = start, start, 0
    while index < n:
        if steep[index]:
            slack = 0
            end = index
        elif not other_way[index]:
            slack += 1
            if slack > min_pts:
                break
        else:
            return end
        index += 1
    return end


def _filter_sdas(sdas, mib, xic, r):
    if np.isinf(mib):
        return []
    kept = [s for s in sdas if mib <= r[s["start"]] * xic]
    for s in kept:
        s["mib"] = max(s["mib"], mib)
    return kept


def _correct_predecessor(r, pred_plot, ordering, s, e):
    """Shrink the cluster end until it is reachable from inside the cluster
    (Schubert & Gertz boundary correction)."""
    while s < e:
        if r[s] > r[e]:
            return s, e
        p_e = pred_plot[e]
        if p_e in ordering[s:e]:
            return s, e
        e -= 1
    return None, None


def _xi_extract(plot, pred_plot, ordering, xi, min_pts, min_cluster_size):
    """Cluster intervals (inclusive ordering positions) from the reachability
    plot via the steep-area method; nested clusters precede their parents."""
    n = len(plot)
    r = np.concatenate([plot, [np.inf]])
    xic = 1.0 - xi

    with np.errstate(invalid="ignore"):
        ratio = r[:-1] / r[1:]
        steep_up = ratio <= xic
        steep_down = ratio >= 1.0 / xic
        downward = ratio > 1.0
        upward = ratio < 1.0

    sdas: list[dict] = []
    clusters: list[tuple[int, int]] = []
    index = 0
    mib = 0.0
    for steep_index in np.flatnonzero(steep_up | steep_down):
        if steep_index < index:
            continue
        mib = max(mib, float(np.max(r[index : steep_index + 1])))

        if steep_down[steep_index]:
            sdas = _filter_sdas(sdas, mib, xic, r)
            d_start = int(steep_index)
            d_end = _extend_region(steep_down, upward, d_start, min_pts)
            sdas.append({"start": d_start, "end": d_end, "mib": 0.0})
            index = d_end + 1
            mib = float(r[index])
        else:
            sdas = _filter_sdas(sdas, mib, xic, r)
            u_start = int(steep_index)
            u_end = _extend_region(steep_up, downward, u_start, min_pts)
            index = u_end + 1
            mib = float(r[index])

            u_clusters = []
            for area in sdas:
                c_start, c_end = area["start"], u_end
                if r[c_end + 1] * xic < area["mib"]:
                    continue
                # trim the flank that overshoots the other side's level
                d_max = r[area["start"]]
                if d_max * xic >= r[c_end + 1]:
                    while r[c_start + 1] > r[c_end + 1] and c_start < area["end"]:
                        c_start += 1
                elif r[c_end + 1] * xic >= d_max:
                    while r[c_end - 1] > d_max and c_end > u_start:
                        c_end -= 1
                c_start, c_end = _correct_predecessor(r, pred_plot, ordering, c_start, c_end)
                if c_start is None:
                    continue
                if c_end - c_start + 1 < min_cluster_size:
                    continue
                if c_start > area["end"]:
                    continue
                if c_end < u_start:
                    continue
                u_clusters.append((c_start, c_end))
            u_clusters.reverse()   # nested clusters first
            clusters.extend(u_clusters)
    return clusters


def _children_of(parent, intervals):
    """Maximal intervals strictly contained in parent; partial overlaps are
    resolved greedily by size, then position."""
    inside = [
        c for c in intervals if c != parent and c[0] >= parent[0] and c[1] <= parent[1]
    ]
    maximal = [
        c
        for c in inside
        if not any(o != c and o[0] <= c[0] and o[1] >= c[1] for o in inside)
    ]
    maximal.sort(key=lambda c: (-(c[1] - c[0]), c[0]))
    chosen = []
    for c in maximal:
        if all(c[1] < o[0] or c[0] > o[1] for o in chosen):
            chosen.append(c)
    chosen.sort()
    return chosen


def _flatten_hierarchy(intervals, n, split_coverage=0.75):
    """Flatten the nested xi-extraction intervals into disjoint clusters.

    Walks the containment hierarchy top-down and replaces an interval by
    its children only when the children describe a genuine density split:
    at least two of them, jointly covering most of the parent's span.
    Shallow dips inside one blob therefore do not fragment it, while well
    separated blobs under the umbrella root are split apart.
    """
    intervals = sorted(set(map(tuple, intervals)))
    if not intervals:
        return []

    flat = []

    def emit(report, probe):
        while True:
            kids = _children_of(probe, intervals)
            if len(kids) == 1:
                probe = kids[0]     # trimming artifact: descend, report outer
                continue
            covered = sum(k[1] - k[0] + 1 for k in kids)
            span = probe[1] - probe[0] + 1
            if len(kids) >= 2 and covered >= split_coverage * span:
                for kid in kids:
                    emit(kid, kid)
            else:
                flat.append(report)
            return

    for root in _children_of((-1, n), intervals):
        emit(root, root)
    flat.sort()
    return flat


def auto_min_pts(n: int) -> int:
    """Default OPTICS neighborhood size: 5% of the sample count, at least 10.
    Smaller values let in-blob density fluctuations fragment the clusters."""
    return max(10, n // 20)


def optics_cluster(points, min_pts: int | None = None, max_eps: float = math.inf, xi: float = 0.05) -> ClusterAssignment:
    """Cluster 2D gaze points with OPTICS and xi-extraction.

    The nested intervals found by xi-extraction are flattened top-down
    (see _flatten_hierarchy) so that well separated blobs come out as one
    cluster each; points outside every flat cluster are NOISE.
    Deterministic for identical input.  Memory is O(N^2).

    Args:
        points: (N, 2) array or sequence of GazePoint2D, N >= min_pts.
        min_pts: neighborhood size for core/reachability distances; also
            the minimum cluster size.  None picks auto_min_pts(N).
        max_eps: neighborhood radius cap in mm (inf = unbounded).
        xi: minimum relative steepness delimiting cluster boundaries.
    """
    pts = np.asarray(
        [p.as_array() if isinstance(p, GazePoint2D) else p for p in points], dtype=float
    )
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise PipelineError("points must be N x 2")
    if min_pts is None:
        min_pts = auto_min_pts(len(pts))
    if min_pts < 2:
        raise PipelineError("min_pts must be >= 2")
    if len(pts) < min_pts:
        raise PipelineError(f"need at least min_pts={min_pts} points, got {len(pts)}")
    if not 0.0 < xi < 1.0:
        raise PipelineError("xi must be in (0, 1)")

    order, reach, predecessor = _optics_order(pts, min_pts, max_eps)
    intervals = _xi_extract(
        reach[order], predecessor[order], order, xi, min_pts, min_cluster_size=min_pts
    )
    clusters = _flatten_hierarchy(intervals, len(pts))

    labels_pos = np.full(len(pts), NOISE, dtype=int)
    next_id = 0
    for start, end in clusters:
        labels_pos[start : end + 1] = next_id
        next_id += 1
    labels = np.full(len(pts), NOISE, dtype=int)
    labels[order] = labels_pos

    centroids, sizes = {}, {}
    for cid in range(next_id):
        members = pts[labels == cid]
        mean = members.mean(axis=0)
        centroids[cid] = GazePoint2D(float(mean[0]), float(mean[1]))
        sizes[cid] = len(members)

    return ClusterAssignment(
        labels=labels,
        ordering=order,
        reachability=reach,
        clusters=clusters,
        centroids=centroids,
        sizes=sizes,
    )


def select_device_cluster(assignment: ClusterAssignment) -> int:
    """The cluster whose centroid is nearest the camera origin; ties go to
    the larger cluster, then the lower id.  Raises NoDeviceCluster when
    everything is noise."""
    if assignment.n_clusters == 0:
        raise NoDeviceCluster("no clusters found (all points are noise)")
    return min(
        assignment.centroids,
        key=lambda cid: (
            float(np.hypot(assignment.centroids[cid].x, assignment.centroids[cid].y)),
            -assignment.sizes[cid],
            cid,
        ),
    )


def assign_labels(records, assignment: ClusterAssignment, device_cluster: int, include_noise: bool = True):
    """Pair each record with +1 (device cluster) or -1 (anything else).

    Args:
        records: the confidence-filtered records, aligned with the points
            that were clustered.
        include_noise: keep noise points as negatives (default) or drop
            them from the training set.
    """
    if device_cluster is None or device_cluster not in assignment.centroids:
        raise NoDeviceCluster(f"invalid device cluster id: {device_cluster!r}")
    records = list(records)
    if len(records) != len(assignment.labels):
        raise PipelineError("records do not align with the cluster assignment")
    out = []
    for rec, cid in zip(records, assignment.labels):
        if cid == device_cluster:
            out.append((rec, 1))
        elif cid != NOISE or include_noise:
            out.append((rec, -1))
    return out
