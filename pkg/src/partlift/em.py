"""Alternating refinement of 3D instance labels against multi-view 2D masks.

State is a logit matrix with one row per labeled unit (superpoint, or point
under an identity partition) and one column per 3D instance label; row
softmax gives the membership probabilities. Each iteration picks a view,
matches that view's 2D masks one-to-one to instance labels by minimum
total binary cross-entropy between each mask and the label's projected
probability map (solved as a rectangular assignment problem), then runs a
fixed number of gradient-descent steps on the logits under the matched
costs. Unoccupied pixels carry no probability and are excluded from every
cost sum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import PipelineError
from .geometry import PointCloud, ViewRender
from .grouping import NONE_INSTANCE, Instance, InstanceSegmentation
from .masks import InstanceMask2D, MaskSet
from .superpoints import SuperpointPartition

UNMATCHED = -1

DEFAULT_SPLIT_RADIUS = 0.05
DEFAULT_MIN_CLUSTER = 10

# Penalty added to cross-category cells when category_restricted matching
# is enabled; large enough to dominate any realistic pixel-sum cost.
_CATEGORY_PENALTY = 1e15


@dataclass
class EMConfig:
    iterations: int = 10
    learning_rate: float = 1.0
    grad_steps_per_m: int = 20
    prob_clamp_eps: float = 1e-6
    seed: int = 0
    view_schedule: str = "random"  # "random" | "round-robin"
    slack_labels: int = 0
    category_restricted: bool = False

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 < self.prob_clamp_eps < 0.5:
            raise ValueError("prob_clamp_eps must be in (0, 0.5)")
        if self.view_schedule not in ("random", "round-robin"):
            raise ValueError("view_schedule must be 'random' or 'round-robin'")
        if self.slack_labels < 0:
            raise ValueError("slack_labels must be >= 0")


@dataclass
class LogitMatrix:
    """Per-unit instance-label logits plus the unit/point correspondence."""

    theta: np.ndarray  # (U, l) float64
    point_to_unit: np.ndarray  # (n,) int64
    unit_sizes: np.ndarray  # (U,) int64

    @property
    def n_units(self) -> int:
        return self.theta.shape[0]

    @property
    def n_labels(self) -> int:
        return self.theta.shape[1]

    def probs(self) -> np.ndarray:
        """Row softmax of the logits."""
        return softmax_rows(self.theta)

    def copy(self) -> "LogitMatrix":
        return LogitMatrix(self.theta.copy(), self.point_to_unit, self.unit_sizes)


@dataclass
class ViewAssignment:
    """One-to-one matching of one view's masks to instance labels.

    mask_to_label[i] is the label matched to the view's i-th mask, or
    UNMATCHED; total_cost is the summed cost of the matched cells.
    """

    view_id: int
    mask_to_label: np.ndarray
    total_cost: float
    cost_matrix: np.ndarray


def softmax_rows(theta: np.ndarray) -> np.ndarray:
    shifted = theta - theta.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def init_logits(
    init: InstanceSegmentation,
    partition: SuperpointPartition,
    slack_labels: int = 0,
) -> LogitMatrix:
    """Seed the logits from an initial instance segmentation.

    With m instances found, label columns 0..m-1 correspond to them; a unit
    whose points belong to instance j starts at log(m) in column j and 0
    elsewhere, and unlabeled units start all-zero (uniform membership).
    A unit spanning several instances takes the most common one.
    """
    m = init.n_instances
    if m == 0:
        raise PipelineError("cannot initialize refinement from zero instances")
    n_labels = m + slack_labels
    u = partition.n_superpoints
    theta = np.zeros((u, n_labels), dtype=np.float64)
    for s, pts in enumerate(partition.superpoints):
        inst_ids = init.point_instance[pts]
        inst_ids = inst_ids[inst_ids != NONE_INSTANCE]
        if inst_ids.size == 0:
            continue
        ids, counts = np.unique(inst_ids, return_counts=True)
        j = int(ids[np.lexsort((ids, -counts))][0])
        theta[s, j] = np.log(m)
    return LogitMatrix(
        theta=theta,
        point_to_unit=partition.assignment,
        unit_sizes=partition.sizes,
    )


def project_scores(logits: LogitMatrix, label: int, render: ViewRender) -> np.ndarray:
    """Per-pixel membership probability of one label: each occupied pixel
    reads the softmax score of the unit owning its z-buffer point; empty
    pixels are NaN."""
    if not 0 <= label < logits.n_labels:
        raise ValueError(f"label {label} out of range")
    probs = logits.probs()
    p2p = render.pixel_to_point
    out = np.full(p2p.shape, np.nan, dtype=np.float64)
    occ = p2p >= 0
    out[occ] = probs[logits.point_to_unit[p2p[occ]], label]
    return out


def bce_cost(projected: np.ndarray, mask: InstanceMask2D, eps: float = 1e-6) -> float:
    """Binary cross-entropy of a projected probability map against a mask,
    summed over occupied pixels with probabilities clamped to
    [eps, 1 - eps]. Empty (NaN) pixels contribute nothing."""
    if projected.shape != mask.bitmap.shape:
        raise ValueError("projected map and mask dimensions differ")
    occ = ~np.isnan(projected)
    if not occ.any():
        return 0.0
    p = np.clip(projected[occ], eps, 1.0 - eps)
    m = mask.bitmap[occ].astype(np.float64)
    return float(-np.sum(m * np.log(p) + (1.0 - m) * np.log(1.0 - p)))


@dataclass
class _ViewPixels:
    """Flattened occupied-pixel data of one render, reused across steps."""

    units: np.ndarray  # (N_occ,) unit index per occupied pixel, row-major
    mask_rows: np.ndarray  # (n_masks, N_occ) float64 mask membership


def _view_pixels(logits: LogitMatrix, render: ViewRender, masks_in_view: list[InstanceMask2D]) -> _ViewPixels:
    flat_p2p = render.pixel_to_point.ravel()
    occ = np.flatnonzero(flat_p2p >= 0)
    units = logits.point_to_unit[flat_p2p[occ]]
    rows = np.stack(
        [m.bitmap.ravel()[occ].astype(np.float64) for m in masks_in_view], axis=0
    ) if masks_in_view else np.zeros((0, occ.size))
    return _ViewPixels(units=units, mask_rows=rows)


def _cost_matrix(probs: np.ndarray, pix: _ViewPixels, eps: float) -> np.ndarray:
    """(n_masks, n_labels) BCE costs between each mask and each label's
    projected probabilities over the view's occupied pixels."""
    p = np.clip(probs[pix.units, :], eps, 1.0 - eps)  # (N_occ, l)
    log_p = np.log(p)
    log_not = np.log(1.0 - p)
    base = log_not.sum(axis=0)  # (l,)
    return -(base[None, :] + pix.mask_rows @ (log_p - log_not))


def solve_assignment(cost: np.ndarray) -> tuple[np.ndarray, float]:
    """Minimum-total-cost one-to-one matching of rows (masks) to columns
    (labels); surplus rows stay UNMATCHED. Returns (row_to_col, total)."""
    n_rows = cost.shape[0]
    row_ind, col_ind = linear_sum_assignment(cost)
    out = np.full(n_rows, UNMATCHED, dtype=np.int64)
    out[row_ind] = col_ind
    total = float(np.sum(cost[row_ind, col_ind]))
    return out, total


def e_step(
    logits: LogitMatrix,
    render: ViewRender,
    masks_in_view: list[InstanceMask2D],
    eps: float = 1e-6,
    category_restricted: bool = False,
    label_categories: np.ndarray | None = None,
) -> ViewAssignment:
    """Match one view's masks to instance labels by Hungarian assignment on
    the BCE cost matrix. The reported total sums the raw (unpenalized)
    costs of the matched cells."""
    if not masks_in_view:
        raise ValueError("e_step requires at least one mask in the view")
    pix = _view_pixels(logits, render, masks_in_view)
    cost = _cost_matrix(logits.probs(), pix, eps)
    solve_on = cost
    if category_restricted:
        if label_categories is None:
            raise ValueError("category_restricted matching needs label categories")
        mask_cats = np.array([m.category for m in masks_in_view])
        penalty = (mask_cats[:, None] != label_categories[None, :]) * _CATEGORY_PENALTY
        solve_on = cost + penalty
    mask_to_label, _ = solve_assignment(solve_on)
    matched = mask_to_label != UNMATCHED
    total = float(np.sum(cost[np.flatnonzero(matched), mask_to_label[matched]]))
    return ViewAssignment(
        view_id=render.view_id,
        mask_to_label=mask_to_label,
        total_cost=total,
        cost_matrix=cost,
    )


def _rival_softmax(theta: np.ndarray, j: int) -> np.ndarray:
    """Softmax of each row with column j excluded (renormalized over the
    rival labels); column j of the result is zero."""
    masked = theta.copy()
    masked[:, j] = -np.inf
    shifted = masked - masked.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _matched_cost_and_grad(
    theta: np.ndarray,
    pix: _ViewPixels,
    mask_to_label: np.ndarray,
    eps: float,
    want_grad: bool = True,
) -> tuple[float, np.ndarray | None]:
    """Total matched BCE cost and its gradient w.r.t. the logits.

    The gradient flows through the row softmax analytically. For a pixel of
    unit u matched to label j with target m, the chain rule collapses to

        dC/dtheta[u, j]    = p_j - m
        dC/dtheta[u, c!=j] = (m - p_j) * p_c / (1 - p_j)

    where p_c / (1 - p_j) is the softmax over the rival labels; this form
    stays finite and informative even when p_j saturates, unlike the naive
    product of the clamped-cost slope with the softmax Jacobian.
    """
    probs = softmax_rows(theta)
    grad = np.zeros_like(theta) if want_grad else None
    single_label = theta.shape[1] == 1  # softmax is constant 1, flat cost
    total = 0.0
    for i, j in enumerate(mask_to_label):
        if j == UNMATCHED:
            continue
        m = pix.mask_rows[i]
        p_raw = probs[pix.units, j]
        p = np.clip(p_raw, eps, 1.0 - eps)
        total += float(-np.sum(m * np.log(p) + (1.0 - m) * np.log(1.0 - p)))
        if not want_grad or single_label:
            continue
        residual = np.bincount(
            pix.units, weights=p_raw - m, minlength=theta.shape[0]
        )  # sum of (p_j - target) over each unit's pixels
        rivals = _rival_softmax(theta, j)
        grad -= residual[:, None] * rivals
        grad[:, int(j)] += residual
    return total, grad


def m_step(
    logits: LogitMatrix,
    assignment: ViewAssignment,
    render: ViewRender,
    masks_in_view: list[InstanceMask2D],
    config: EMConfig,
) -> LogitMatrix:
    """Plain gradient descent on the logits under a fixed matching."""
    pix = _view_pixels(logits, render, masks_in_view)
    theta = logits.theta.copy()
    for _ in range(config.grad_steps_per_m):
        _, grad = _matched_cost_and_grad(
            theta, pix, assignment.mask_to_label, config.prob_clamp_eps
        )
        if not np.all(np.isfinite(grad)):
            raise ValueError("non-finite gradient; probabilities saturated without clamping")
        theta -= config.learning_rate * grad
    return LogitMatrix(theta=theta, point_to_unit=logits.point_to_unit, unit_sizes=logits.unit_sizes)


def matched_cost(
    logits: LogitMatrix,
    assignment: ViewAssignment,
    render: ViewRender,
    masks_in_view: list[InstanceMask2D],
    eps: float = 1e-6,
) -> float:
    """Total BCE cost of a matching at the current logits."""
    pix = _view_pixels(logits, render, masks_in_view)
    total, _ = _matched_cost_and_grad(
        logits.theta, pix, assignment.mask_to_label, eps, want_grad=False
    )
    return total


@dataclass
class TraceRow:
    iteration: int
    view_id: int
    matched_cost: float


def run_em(
    init: InstanceSegmentation,
    partition: SuperpointPartition,
    renders: list[ViewRender],
    masks: MaskSet,
    config: EMConfig | None = None,
) -> tuple[InstanceSegmentation, list[TraceRow]]:
    """Iterate view selection, mask-to-label matching, and logit descent,
    then read the refined instances off the final logits.

    Every unit ends at its argmax label (ties to the lower column); each
    label keeps the category of the initial instance it started from, and
    slack columns (extra labels beyond the initial instances) yield
    unlabeled points. Instance confidence is the mean winning softmax
    score over member units.
    """
    if config is None:
        config = EMConfig()
    if masks.m == 0:
        raise ValueError("run_em requires a non-empty mask set")
    logits = init_logits(init, partition, slack_labels=config.slack_labels)
    label_categories = np.array(
        [inst.category for inst in init.instances] + [-1] * config.slack_labels,
        dtype=np.int64,
    )

    renders_by_id = {r.view_id: r for r in renders}
    view_ids = [v for v in masks.view_ids if v in renders_by_id]
    if not view_ids:
        raise ValueError("no rendered view has masks")
    rng = np.random.default_rng(config.seed)

    trace: list[TraceRow] = []
    for t in range(config.iterations):
        if config.view_schedule == "round-robin":
            vid = view_ids[t % len(view_ids)]
        else:
            vid = view_ids[int(rng.integers(len(view_ids)))]
        render = renders_by_id[vid]
        in_view = masks.in_view(vid)
        assignment = e_step(
            logits,
            render,
            in_view,
            eps=config.prob_clamp_eps,
            category_restricted=config.category_restricted,
            label_categories=label_categories,
        )
        trace.append(TraceRow(iteration=t, view_id=vid, matched_cost=assignment.total_cost))
        logits = m_step(logits, assignment, render, in_view, config)

    return segmentation_from_logits(logits, label_categories), trace


def segmentation_from_logits(
    logits: LogitMatrix, label_categories: np.ndarray
) -> InstanceSegmentation:
    """Argmax decode of the logits into an instance segmentation."""
    winners = np.argmax(logits.theta, axis=1)
    probs = logits.probs()
    win_prob = probs[np.arange(logits.n_units), winners]
    point_label = winners[logits.point_to_unit]

    n_points = logits.point_to_unit.shape[0]
    point_instance = np.full(n_points, NONE_INSTANCE, dtype=np.int64)
    instances = []
    for j in range(logits.n_labels):
        if label_categories[j] < 0:
            continue
        unit_ids = np.flatnonzero(winners == j)
        if unit_ids.size == 0:
            continue
        pts = np.flatnonzero(point_label == j)
        point_instance[pts] = len(instances)
        instances.append(
            Instance(
                category=int(label_categories[j]),
                points=pts,
                confidence=float(win_prob[unit_ids].mean()),
            )
        )
    return InstanceSegmentation(point_instance=point_instance, instances=instances)


def split_disconnected(
    seg: InstanceSegmentation,
    cloud: PointCloud,
    radius: float = DEFAULT_SPLIT_RADIUS,
    min_cluster: int = DEFAULT_MIN_CLUSTER,
) -> InstanceSegmentation:
    """Split every instance into spatially connected components.

    Points closer than ``radius`` are linked; each connected component with
    at least ``min_cluster`` points becomes its own instance with the
    parent's category and confidence, smaller components are dropped.
    """
    if radius <= 0:
        raise ValueError("radius must be > 0")
    point_instance = np.full(seg.n_points, NONE_INSTANCE, dtype=np.int64)
    instances = []
    for inst in seg.instances:
        pts = inst.points
        if pts.size == 0:
            continue
        if pts.size > 1:
            tree = cKDTree(cloud.positions[pts])
            pairs = tree.query_pairs(radius, output_type="ndarray")
            graph = coo_matrix(
                (np.ones(pairs.shape[0]), (pairs[:, 0], pairs[:, 1])),
                shape=(pts.size, pts.size),
            )
            _, labels = connected_components(graph, directed=False)
        else:
            labels = np.zeros(1, dtype=np.int64)
        comps = [np.flatnonzero(labels == c) for c in range(labels.max() + 1)]
        comps.sort(key=lambda c: int(c[0]))
        for comp in comps:
            if comp.size < min_cluster:
                continue
            members = pts[comp]
            point_instance[members] = len(instances)
            instances.append(
                Instance(category=inst.category, points=members, confidence=inst.confidence)
            )
    return InstanceSegmentation(point_instance=point_instance, instances=instances)


def save_trace_csv(path, trace: list[TraceRow]) -> None:
    with open(path, "w") as f:
        f.write("iteration,view_id,matched_cost\n")
        for row in trace:
            f.write(f"{row.iteration},{row.view_id},{row.matched_cost!r}\n")
