"""Euclidean embedding tables, negative sampling and skip-gram style losses.

All parameters live in named :class:`EmbeddingTable` objects (dense float64
matrices tagged with their geometry).  Losses return the value together with
hand-derived analytic gradients collected in a :class:`GradStore`; the SGD
updater consumes those stores.  A full-softmax log-probability is kept as a
slow oracle against which the sampled estimators are tested.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

EUCLIDEAN = "euclidean"
POINCARE = "poincare"

PAD_ID = 0

# Bounded retries before the sampler falls back to exact rejection.
_MAX_RESAMPLE_TRIES = 32


class NumericalError(RuntimeError):
    """Raised when a loss or update encounters non-finite values."""


@dataclass
class EmbeddingTable:
    """Entity-by-dimension parameter matrix with a geometry tag.

    Row 0 is the reserved PAD row: it is zero-initialised, never sampled
    and never touched by any loss or update.
    """

    name: str
    values: np.ndarray
    geometry: str = EUCLIDEAN

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.name, self.values.copy(), self.geometry)

    def validate(self, eps_ball: float = 1e-5) -> None:
        if not np.all(np.isfinite(self.values)):
            raise NumericalError(f"table {self.name!r} contains non-finite values")
        if self.geometry == POINCARE:
            norms = np.linalg.norm(self.values, axis=1)
            if np.any(norms > 1.0 - eps_ball + 1e-12):
                raise NumericalError(f"table {self.name!r} has rows outside the unit ball")


def new_table(name: str, rows: int, dim: int, rng: np.random.Generator,
              geometry: str = EUCLIDEAN) -> EmbeddingTable:
    """Create a freshly initialised table.

    Euclidean coordinates are uniform in ``(-0.5/dim, 0.5/dim)``; ball
    coordinates are uniform in ``(-0.001, 0.001)`` so every row starts well
    inside the unit ball.  The PAD row is zeroed after drawing so the RNG
    stream does not depend on the PAD policy.
    """
    if rows <= 0 or dim <= 0:
        raise ValueError(f"table {name!r} needs positive shape, got {rows}x{dim}")
    if geometry == EUCLIDEAN:
        half = 0.5 / dim
        values = rng.uniform(-half, half, size=(rows, dim))
    elif geometry == POINCARE:
        values = rng.uniform(-0.001, 0.001, size=(rows, dim))
    else:
        raise ValueError(f"unknown geometry {geometry!r}")
    values[PAD_ID] = 0.0
    return EmbeddingTable(name, values, geometry)


class GradStore:
    """Accumulator for sparse per-row table gradients and dense array gradients."""

    def __init__(self) -> None:
        self.rows: dict[str, dict[int, np.ndarray]] = {}
        self.dense: dict[str, np.ndarray] = {}

    def add_row(self, table: str, row: int, grad: np.ndarray) -> None:
        if row == PAD_ID:
            raise ValueError(f"gradient routed to PAD row of table {table!r}")
        per_table = self.rows.setdefault(table, {})
        existing = per_table.get(row)
        if existing is None:
            per_table[row] = np.array(grad, dtype=float, copy=True)
        else:
            existing += grad

    def add_dense(self, name: str, grad: np.ndarray) -> None:
        existing = self.dense.get(name)
        if existing is None:
            self.dense[name] = np.array(grad, dtype=float, copy=True)
        else:
            existing += grad

    def scale(self, factor: float) -> None:
        for per_table in self.rows.values():
            for grad in per_table.values():
                grad *= factor
        for grad in self.dense.values():
            grad *= factor

    def merge(self, other: "GradStore") -> None:
        for table, per_table in other.rows.items():
            for row, grad in per_table.items():
                self.add_row(table, row, grad)
        for name, grad in other.dense.items():
            self.add_dense(name, grad)

    def is_empty(self) -> bool:
        return not self.rows and not self.dense


class NegativeSampler:
    """Smoothed-unigram sampler over one entity namespace.

    Sampling probabilities are proportional to ``count ** exponent``
    (0.75 by default).  PAD and explicitly excluded ids are never returned:
    collisions are resampled a bounded number of times, after which the
    sampler falls back to exact rejection over the remaining mass.
    """

    def __init__(self, counts: np.ndarray, exponent: float = 0.75, seed: int = 0):
        counts = np.asarray(counts, dtype=float)
        if counts.ndim != 1 or counts.shape[0] < 2:
            raise ValueError("counts must be a 1-d array covering the namespace incl. PAD")
        weights = np.where(counts > 0, counts, 0.0) ** exponent
        weights[PAD_ID] = 0.0
        if weights.sum() <= 0:
            raise ValueError("sampler needs at least one entity with positive count")
        self.exponent = exponent
        self.weights = weights
        self.cumulative = np.cumsum(weights)
        self.total = float(self.cumulative[-1])
        self.rng = np.random.default_rng(seed)

    @property
    def probabilities(self) -> np.ndarray:
        return self.weights / self.total

    def sample(self, k: int, exclude: frozenset | set | tuple = ()) -> np.ndarray:
        if k < 1:
            raise ValueError("k must be >= 1")
        excluded = set(exclude)
        out = np.empty(k, dtype=np.int64)
        for slot in range(k):
            picked = -1
            for _ in range(_MAX_RESAMPLE_TRIES):
                u = self.rng.random() * self.total
                candidate = int(np.searchsorted(self.cumulative, u, side="right"))
                if candidate not in excluded:
                    picked = candidate
                    break
            if picked < 0:
                picked = self._rejection_sample(excluded)
            out[slot] = picked
        return out

    def _rejection_sample(self, excluded: set) -> int:
        allowed = self.weights.copy()
        for idx in excluded:
            if 0 <= idx < allowed.shape[0]:
                allowed[idx] = 0.0
        total = allowed.sum()
        if total <= 0:
            raise ValueError("exclusions cover the entire vocabulary")
        cumulative = np.cumsum(allowed)
        u = self.rng.random() * total
        return int(np.searchsorted(cumulative, u, side="right"))


def log_sigmoid(x: float | np.ndarray) -> float | np.ndarray:
    """Numerically stable log(sigmoid(x)) = -log(1 + exp(-x))."""
    return -np.logaddexp(0.0, -x)


def sigmoid(x: float | np.ndarray) -> float | np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=float)))


def softmax_logprob_full(query: np.ndarray, table: EmbeddingTable, target: int) -> float:
    """Exact log p(target | query) with the normaliser summed over the whole table.

    The sum runs over every non-PAD row.  Only used as a desk-scale oracle;
    max-subtraction guards the exponentials.
    """
    if target == PAD_ID or not 0 < target < table.rows:
        raise ValueError(f"invalid target id {target}")
    query = np.asarray(query, dtype=float)
    if not np.all(np.isfinite(query)):
        raise NumericalError("non-finite query vector")
    logits = table.values[1:] @ query
    peak = logits.max()
    log_norm = peak + np.log(np.exp(logits - peak).sum())
    return float(logits[target - 1] - log_norm)


def softmax_full_loss_grad(
    query: np.ndarray, table: EmbeddingTable, target: int
) -> tuple[float, np.ndarray, GradStore]:
    """Negative full-softmax log-likelihood with analytic gradients.

    Companion to :func:`softmax_logprob_full` for training the oracle side
    of tiny-vocabulary comparisons.  Returns ``(loss, grad_query, grads)``
    where ``grads`` carries per-row gradients for the output table.
    """
    logp = softmax_logprob_full(query, table, target)
    query = np.asarray(query, dtype=float)
    logits = table.values[1:] @ query
    peak = logits.max()
    probs = np.exp(logits - peak)
    probs /= probs.sum()

    grads = GradStore()
    # d(-logp)/dq = E_p[z] - z_target
    grad_query = probs @ table.values[1:] - table.values[target]
    for offset, p in enumerate(probs):
        row = offset + 1
        coeff = p - (1.0 if row == target else 0.0)
        grads.add_row(table.name, row, coeff * query)
    return -logp, grad_query, grads


def sampled_softmax_loss_grad(
    query: np.ndarray,
    table: EmbeddingTable,
    target: int,
    negatives: np.ndarray,
) -> tuple[float, np.ndarray, GradStore]:
    """Negative-sampling estimator of the softmax objective.

    loss = -log s(q.z_t) - sum_n log s(-q.z_n)   with s the logistic function.

    Returns ``(loss, grad_query, grads)``; ``grads`` holds the per-row
    gradients for the target and each negative in ``table``.
    """
    query = np.asarray(query, dtype=float)
    if not np.all(np.isfinite(query)):
        raise NumericalError("non-finite query vector")
    if target == PAD_ID or not 0 < target < table.rows:
        raise ValueError(f"invalid target id {target}")
    negatives = np.asarray(negatives, dtype=np.int64)
    if np.any(negatives == target):
        raise ValueError("target id present among negatives")
    if np.any(negatives == PAD_ID):
        raise ValueError("PAD id present among negatives")

    z_target = table.values[target]
    score_t = float(query @ z_target)
    loss = -log_sigmoid(score_t)
    grads = GradStore()
    coeff_t = -sigmoid(-score_t)
    grad_query = coeff_t * z_target
    grads.add_row(table.name, target, coeff_t * query)

    for neg in negatives:
        z_neg = table.values[neg]
        score_n = float(query @ z_neg)
        loss -= log_sigmoid(-score_n)
        coeff_n = sigmoid(score_n)
        grad_query = grad_query + coeff_n * z_neg
        grads.add_row(table.name, int(neg), coeff_n * query)

    return float(loss), grad_query, grads


def sgd_update(tables: dict[str, EmbeddingTable], grads: GradStore, lr: float,
               dense_params: dict[str, np.ndarray] | None = None) -> None:
    """Apply one plain gradient step in place.

    Only Euclidean tables may be touched here; rows of ball-geometry tables
    go through the Riemannian update instead.  ``dense_params`` receives the
    dense (non-table) gradients, e.g. attention parameters.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    for table_name, per_table in grads.rows.items():
        table = tables[table_name]
        if table.geometry != EUCLIDEAN:
            raise ValueError(
                f"table {table_name!r} has geometry {table.geometry!r}; use the Riemannian update"
            )
        for row, grad in per_table.items():
            if not np.all(np.isfinite(grad)):
                raise NumericalError(f"non-finite gradient for table {table_name!r} row {row}")
            table.values[row] -= lr * grad
    if grads.dense:
        if dense_params is None:
            raise ValueError("dense gradients present but no dense parameter dict given")
        for name, grad in grads.dense.items():
            if not np.all(np.isfinite(grad)):
                raise NumericalError(f"non-finite gradient for parameter {name!r}")
            dense_params[name] -= lr * grad


def write_table_tsv(path, table: EmbeddingTable, keys: list[str]) -> None:
    """Export a table as TSV: metadata line, header, then one row per entity.

    ``keys[i]`` is the raw string key of row ``i``; the PAD row is skipped.
    Values are written with nine significant digits.
    """
    if len(keys) != table.rows:
        raise ValueError("key list length does not match table rows")
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"# geometry={table.geometry}\n")
        handle.write(f"entity\t{table.dim}\n")
        for row in range(1, table.rows):
            vector = " ".join(f"{v:.9g}" for v in table.values[row])
            handle.write(f"{keys[row]}\t{vector}\n")


def read_table_tsv(path, name: str) -> tuple[EmbeddingTable, list[str]]:
    """Inverse of :func:`write_table_tsv`; restores the PAD row as zeros."""
    with open(path, "r", encoding="utf-8") as handle:
        meta = handle.readline().strip()
        if not meta.startswith("# geometry="):
            raise ValueError(f"{path}: missing geometry metadata line")
        geometry = meta.split("=", 1)[1]
        header = handle.readline().strip().split("\t")
        dim = int(header[1])
        keys = ["<pad>"]
        rows = [np.zeros(dim)]
        for line in handle:
            line = line.rstrip("\n")
            if not line:
                continue
            key, vector = line.split("\t")
            keys.append(key)
            rows.append(np.array([float(v) for v in vector.split(" ")]))
    return EmbeddingTable(name, np.vstack(rows), geometry), keys
