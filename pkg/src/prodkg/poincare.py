"""Unit-ball geometry for the category hierarchy.

Categories are embedded in the open unit ball, trained on child->parent
edges with a sampled softmax over negative candidates ranked by ball
distance.  Updates rescale the Euclidean gradient by the inverse metric
factor ((1-|x|^2)^2 / 4) and project back inside the ball.  After
pre-training the category table is frozen; products are then tied to their
category labels through a plain inner-product classification loss whose
gradient flows only to the product side.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import PAD_ID, EmbeddingTable, NumericalError, log_sigmoid, sigmoid

# Guards the arcosh derivative near coincident points.
_GAMMA_FLOOR = 1e-12


@dataclass
class BallConfig:
    """Knobs for ball-geometry training."""

    eps_ball: float = 1e-5
    burn_in_epochs: int = 10
    lr: float = 0.1

    def __post_init__(self) -> None:
        if not 0.0 < self.eps_ball < 1.0:
            raise ValueError("eps_ball must lie in (0, 1)")


def _check_inside(vec: np.ndarray, label: str) -> float:
    sq = float(vec @ vec)
    if sq >= 1.0:
        raise ValueError(f"{label} lies on or outside the unit ball (|x|^2 = {sq:.6f})")
    return sq


def poincare_distance(x: np.ndarray, y: np.ndarray) -> float:
    """arcosh(1 + 2 |x-y|^2 / ((1-|x|^2)(1-|y|^2))) for points inside the ball."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sq_x = _check_inside(x, "x")
    sq_y = _check_inside(y, "y")
    diff = x - y
    gamma = 1.0 + 2.0 * float(diff @ diff) / ((1.0 - sq_x) * (1.0 - sq_y))
    return float(np.arccosh(gamma))


def poincare_distance_grad(x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Distance plus its Euclidean partial derivatives w.r.t. both points.

    The derivative of arcosh degenerates as the points coincide; the
    1/sqrt(gamma^2 - 1) factor is floored to keep the step finite there.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    sq_x = _check_inside(x, "x")
    sq_y = _check_inside(y, "y")
    alpha = 1.0 - sq_x
    beta = 1.0 - sq_y
    diff = x - y
    sq_diff = float(diff @ diff)
    gamma = 1.0 + 2.0 * sq_diff / (alpha * beta)
    dist = float(np.arccosh(gamma))

    root = np.sqrt(max(gamma * gamma - 1.0, _GAMMA_FLOOR))
    dot = float(x @ y)
    grad_x = (4.0 / (beta * root)) * (((sq_y - 2.0 * dot + 1.0) / alpha**2) * x - y / alpha)
    grad_y = (4.0 / (alpha * root)) * (((sq_x - 2.0 * dot + 1.0) / beta**2) * y - x / beta)
    return dist, grad_x, grad_y


def riemannian_update(row: np.ndarray, euclidean_grad: np.ndarray, lr: float,
                      config: BallConfig) -> np.ndarray:
    """One metric-rescaled gradient step with hard projection into the ball."""
    if not np.all(np.isfinite(euclidean_grad)):
        raise NumericalError("non-finite gradient in ball update")
    sq = float(row @ row)
    if sq >= 1.0:
        raise ValueError("row lies on or outside the unit ball")
    factor = (1.0 - sq) ** 2 / 4.0
    updated = row - lr * factor * np.asarray(euclidean_grad, dtype=float)
    norm = float(np.linalg.norm(updated))
    limit = 1.0 - config.eps_ball
    if norm >= limit:
        updated = updated * (limit / norm)
    return updated


def check_forest(edges: list[tuple[int, int]]) -> dict[int, int]:
    """Validate child->parent edges form a forest; returns the parent map."""
    parent: dict[int, int] = {}
    for child, par in edges:
        if child == par:
            raise ValueError(f"self-edge on category {child}")
        if child in parent and parent[child] != par:
            raise ValueError(f"category {child} has two parents")
        parent[child] = par
    for start in parent:
        seen = {start}
        node = start
        while node in parent:
            node = parent[node]
            if node in seen:
                raise ValueError(f"cycle detected through category {node}")
            seen.add(node)
    return parent


def hierarchy_loss_grad(
    parent: int,
    candidates: np.ndarray,
    true_index: int,
    table: EmbeddingTable,
) -> tuple[float, dict[int, np.ndarray]]:
    """Sampled-softmax loss of picking the true child among candidates.

    Candidate logits are negative ball distances to the parent; the loss is
    the negative log-probability of ``candidates[true_index]``.  Returns
    per-row Euclidean gradients (softmax weights chained through the
    distance derivatives) for the parent and every candidate.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    parent_vec = table.values[parent]
    dists = np.empty(len(candidates))
    grad_cand = np.empty((len(candidates), table.dim))
    grad_par = np.empty((len(candidates), table.dim))
    for j, cand in enumerate(candidates):
        dists[j], grad_cand[j], grad_par[j] = poincare_distance_grad(
            table.values[cand], parent_vec)
    logits = -dists
    peak = logits.max()
    probs = np.exp(logits - peak)
    probs /= probs.sum()
    loss = float(-np.log(probs[true_index]))

    # d loss / d dist_j = 1[j = true] - p_j  (sign flip of the logit derivative)
    coeffs = -probs
    coeffs[true_index] += 1.0

    grads: dict[int, np.ndarray] = {}
    for j, cand in enumerate(candidates):
        key = int(cand)
        grads[key] = grads.get(key, 0.0) + coeffs[j] * grad_cand[j]
    grads[parent] = grads.get(parent, 0.0) + coeffs @ grad_par
    return loss, grads


def hierarchy_pretrain(
    edges: list[tuple[int, int]],
    table: EmbeddingTable,
    config: BallConfig,
    epochs: int = 50,
    negatives: int = 10,
    seed: int = 0,
) -> list[float]:
    """Train the category table on child->parent edges; returns per-epoch losses.

    Negatives are drawn uniformly over categories that are neither the edge
    endpoints nor siblings (other children of the same parent).  The first
    ``burn_in_epochs`` run at a tenth of the learning rate.  The table is
    updated in place and is meant to be frozen afterwards.
    """
    if table.geometry != "poincare":
        raise ValueError("hierarchy pre-training expects a ball-geometry table")
    parent_map = check_forest(edges)
    children_of: dict[int, set[int]] = {}
    for child, par in edges:
        children_of.setdefault(par, set()).add(child)

    all_ids = np.arange(1, table.rows)
    rng = np.random.default_rng(seed)
    edge_list = list(edges)
    losses: list[float] = []
    for epoch in range(epochs):
        lr = config.lr / 10.0 if epoch < config.burn_in_epochs else config.lr
        order = rng.permutation(len(edge_list))
        total = 0.0
        for idx in order:
            child, par = edge_list[idx]
            banned = {child, par} | children_of.get(par, set())
            pool = np.array([i for i in all_ids if i not in banned], dtype=np.int64)
            if pool.size == 0:
                continue
            negs = rng.choice(pool, size=min(negatives, pool.size), replace=False)
            candidates = np.concatenate(([child], negs))
            loss, grads = hierarchy_loss_grad(par, candidates, 0, table)
            total += loss
            for row, grad in grads.items():
                table.values[row] = riemannian_update(table.values[row], grad, lr, config)
        losses.append(total / max(len(edge_list), 1))
    table.validate(config.eps_ball)
    return losses


def isa_loss(
    item_vec: np.ndarray,
    labels: list[int] | np.ndarray,
    category_table: EmbeddingTable,
    negatives: list[np.ndarray],
) -> tuple[float, np.ndarray]:
    """Product-to-category classification loss; gradient w.r.t. the product only.

    One logistic negative-sampling term per label, scored by the plain inner
    product with the (frozen) category rows.  ``negatives[i]`` holds the
    negative category ids for ``labels[i]``.
    """
    labels = list(labels)
    if not labels:
        raise ValueError("empty label set")
    if len(negatives) != len(labels):
        raise ValueError("need one negative set per label")
    item_vec = np.asarray(item_vec, dtype=float)
    loss = 0.0
    grad = np.zeros_like(item_vec)
    for label, negs in zip(labels, negatives):
        if label == PAD_ID:
            raise ValueError("PAD id among labels")
        c_pos = category_table.values[label]
        score = float(item_vec @ c_pos)
        loss -= log_sigmoid(score)
        grad += -sigmoid(-score) * c_pos
        for neg in np.asarray(negs, dtype=np.int64):
            if neg == label:
                raise ValueError("label present among its negatives")
            c_neg = category_table.values[neg]
            s_neg = float(item_vec @ c_neg)
            loss -= log_sigmoid(-s_neg)
            grad += sigmoid(s_neg) * c_neg
    return float(loss), grad
