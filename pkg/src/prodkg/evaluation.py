"""Candidate ranking, ranking metrics, the category classification probe,
and the full evaluation protocol.

Ranking contracts: candidates default to the full item vocabulary minus
PAD, scores are whatever monotone quantity the relation defines (inner
products; exponentiating them cannot change any metric), and ties break
deterministically towards the smaller entity id.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .attention import context_for_ranking
from .baselines import KgModel, score_tails
from .model import PkgParams

PKG_RELATIONS = ("substitute", "complement", "co_view", "search", "describe", "isa", "recommend")


@dataclass
class RankingResult:
    """Ordered candidates with the gold entity ranks (1-based)."""

    query: str
    candidates: np.ndarray   # top of the ordering, possibly truncated
    scores: np.ndarray       # non-increasing, aligned with candidates
    gold: tuple
    gold_ranks: tuple        # ranks of every gold id within the full ordering
    n_candidates: int

    @property
    def gold_rank(self) -> int:
        return min(self.gold_ranks)


def rank_candidates(candidates: np.ndarray, scores: np.ndarray, gold,
                    query: str = "", keep: int | None = None) -> RankingResult:
    """Sort by descending score with ascending-id tie-break; locate the gold ids."""
    candidates = np.asarray(candidates, dtype=np.int64)
    scores = np.asarray(scores, dtype=float)
    if candidates.shape != scores.shape or candidates.ndim != 1 or candidates.size == 0:
        raise ValueError("candidates and scores must be matching nonempty 1-d arrays")
    order = np.lexsort((candidates, -scores))
    ranked_ids = candidates[order]
    ranked_scores = scores[order]
    gold = tuple(int(g) for g in (gold if hasattr(gold, "__iter__") else (gold,)))
    position = {int(c): i + 1 for i, c in enumerate(ranked_ids)}
    gold_ranks = tuple(position[g] for g in gold if g in position)
    if gold and not gold_ranks:
        raise ValueError("no gold id present among candidates")
    cut = len(ranked_ids) if keep is None else min(keep, len(ranked_ids))
    return RankingResult(
        query=query,
        candidates=ranked_ids[:cut],
        scores=ranked_scores[:cut],
        gold=gold,
        gold_ranks=gold_ranks,
        n_candidates=int(candidates.size),
    )


def pkg_candidate_scores(params: PkgParams, relation: str, head) -> tuple[np.ndarray, np.ndarray]:
    """Score every non-PAD item as tail for one query, per the trained model.

    ``head`` is an item id (substitute/complement/co_view), a category id
    (isa), or an id sequence (search/describe over words, recommend over
    items).  Returns (candidate ids, scores).
    """
    tables = params.tables
    items = tables["item_in"]
    candidates = np.arange(1, items.rows, dtype=np.int64)
    if relation == "substitute":
        scores = items.values[candidates] @ items.values[int(head)]
    elif relation == "complement":
        scores = tables["item_out_buy"].values[candidates] @ items.values[int(head)]
    elif relation == "co_view":
        scores = tables["item_out_view"].values[candidates] @ items.values[int(head)]
    elif relation in ("search", "describe"):
        context = context_for_ranking(np.asarray(head), tables, params.attn[relation], relation)
        scores = items.values[candidates] @ context
    elif relation == "isa":
        scores = items.values[candidates] @ tables["category"].values[int(head)]
    elif relation == "recommend":
        context = context_for_ranking(
            np.asarray(head), tables, params.attn["complement"], "complement")
        combined = tables["item_out_buy"].values + tables["item_out_view"].values
        scores = combined[candidates] @ context
    else:
        raise ValueError(f"unknown relation {relation!r}")
    return candidates, scores


def rank_tail(scorer, relation, head, gold=(), keep: int | None = None,
              candidates: np.ndarray | None = None, query: str = "") -> RankingResult:
    """Rank tail candidates for one query under a trained scorer.

    ``scorer`` is either the proposed model's parameter bundle or a triple
    baseline; for the latter ``relation`` must already be a relation index
    and ``candidates`` the candidate entity ids.
    """
    if isinstance(scorer, PkgParams):
        cand, scores = pkg_candidate_scores(scorer, relation, head)
        if candidates is not None:
            mask = np.isin(cand, candidates)
            cand, scores = cand[mask], scores[mask]
    elif isinstance(scorer, KgModel):
        cand = candidates if candidates is not None else np.arange(scorer.n_entities)
        scores = score_tails(scorer, int(head), int(relation), cand)
    else:
        raise TypeError(f"cannot rank with {type(scorer).__name__}")
    label = query or f"{relation}:{head}"
    return rank_candidates(cand, scores, gold, query=label, keep=keep)


def ranking_metrics(results: list[RankingResult], k: int = 10) -> dict:
    """HIT@K, NDCG@K, R@K and MAP@K averaged over queries.

    Single-gold queries follow the reduced forms: NDCG is 1/log2(rank+1)
    with ideal DCG 1, and average precision is 1/rank for ranks within K.
    """
    if k <= 0:
        raise ValueError("k must be positive")
    if not results:
        raise ValueError("no ranking results to aggregate")
    hits, ndcgs, recalls, maps = [], [], [], []
    for result in results:
        ranks = sorted(r for r in result.gold_ranks)
        within = [r for r in ranks if r <= k]
        hits.append(1.0 if within else 0.0)
        dcg = sum(1.0 / np.log2(r + 1) for r in within)
        ideal = sum(1.0 / np.log2(i + 2) for i in range(min(len(ranks), k)))
        ndcgs.append(dcg / ideal if ideal > 0 else 0.0)
        recalls.append(len(within) / len(ranks) if ranks else 0.0)
        precision_sum = sum((i + 1) / rank for i, rank in enumerate(within))
        maps.append(precision_sum / min(len(ranks), k) if ranks else 0.0)
    return {
        f"hit@{k}": float(np.mean(hits)),
        f"ndcg@{k}": float(np.mean(ndcgs)),
        f"recall@{k}": float(np.mean(recalls)),
        f"map@{k}": float(np.mean(maps)),
    }


def classification_probe(
    features: np.ndarray,
    labels: np.ndarray,
    train_idx: np.ndarray,
    test_idx: np.ndarray,
    l2: float = 1e-4,
    lr: float = 0.5,
    iterations: int = 300,
) -> tuple[float, float]:
    """Multinomial logistic regression probe; returns (micro-F1, macro-F1).

    Trained full-batch from zero weights (deterministic), with L2 penalty.
    Classes absent from the training rows are excluded from the macro
    average with a warning.
    """
    features = np.asarray(features, dtype=float)
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels)
    class_index = {c: i for i, c in enumerate(classes)}
    y = np.array([class_index[c] for c in labels])
    n_classes = classes.size

    x_train = features[train_idx]
    y_train = y[train_idx]
    weights = np.zeros((features.shape[1] + 1, n_classes))
    x1 = np.hstack([x_train, np.ones((x_train.shape[0], 1))])
    onehot = np.zeros((x_train.shape[0], n_classes))
    onehot[np.arange(x_train.shape[0]), y_train] = 1.0
    for _ in range(iterations):
        logits = x1 @ weights
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        grad = x1.T @ (probs - onehot) / x1.shape[0] + l2 * weights
        weights -= lr * grad

    x_test = np.hstack([features[test_idx], np.ones((len(test_idx), 1))])
    predictions = np.argmax(x_test @ weights, axis=1)
    truth = y[test_idx]

    trained_classes = np.unique(y_train)
    missing = set(range(n_classes)) - set(trained_classes.tolist())
    if missing:
        warnings.warn(f"{len(missing)} class(es) absent from probe training; excluded from macro-F1")

    tp = np.zeros(n_classes)
    fp = np.zeros(n_classes)
    fn = np.zeros(n_classes)
    for cls in range(n_classes):
        tp[cls] = np.sum((predictions == cls) & (truth == cls))
        fp[cls] = np.sum((predictions == cls) & (truth != cls))
        fn[cls] = np.sum((predictions != cls) & (truth == cls))
    micro_p = tp.sum() / max(tp.sum() + fp.sum(), 1e-12)
    micro_r = tp.sum() / max(tp.sum() + fn.sum(), 1e-12)
    micro = 0.0 if micro_p + micro_r == 0 else 2 * micro_p * micro_r / (micro_p + micro_r)

    f1s = []
    for cls in trained_classes:
        p = tp[cls] / max(tp[cls] + fp[cls], 1e-12)
        r = tp[cls] / max(tp[cls] + fn[cls], 1e-12)
        f1s.append(0.0 if p + r == 0 else 2 * p * r / (p + r))
    macro = float(np.mean(f1s)) if f1s else 0.0
    return float(micro), macro


# --- relation-graph splitting with the connectivity condition ---

@dataclass
class GraphSplit:
    relation: str
    train: list
    validation: list
    test: list


def split_relation_graph(edges: list, fractions=(0.8, 0.1, 0.1), seed: int = 0,
                         relation: str = "related") -> GraphSplit:
    """Random edge split; eval edges touching train-isolated nodes move back.

    Validation/test get floor(fraction * n) edges each.  Afterwards, while
    some node appears only in evaluation edges, the smallest such offending
    edge returns to train (deterministic repair order).
    """
    edges = list(edges)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(edges))
    shuffled = [edges[i] for i in order]
    n = len(edges)
    n_val = int(fractions[1] * n)
    n_test = int(fractions[2] * n)
    n_train = n - n_val - n_test
    train = shuffled[:n_train]
    validation = shuffled[n_train:n_train + n_val]
    test = shuffled[n_train + n_val:]

    while True:
        covered = set()
        for h, t in train:
            covered.add(h)
            covered.add(t)
        offending = [e for e in validation + test if e[0] not in covered or e[1] not in covered]
        if not offending:
            break
        move = min(offending)
        if move in validation:
            validation.remove(move)
        else:
            test.remove(move)
        train.append(move)
    return GraphSplit(relation=relation, train=train, validation=validation, test=test)


def drop_leaky_examples(examples: list, eval_edges: set) -> list:
    """Remove (context, target) examples that would reveal a held-out edge.

    An example leaks when its target forms a held-out edge (in either
    orientation) with any of its context items: training on it would
    directly optimise the exact score ranked at evaluation time.
    """
    undirected = set()
    for h, t in eval_edges:
        undirected.add((h, t))
        undirected.add((t, h))
    kept = []
    for context, target in examples:
        if any((c, target) in undirected for c in context):
            continue
        kept.append((context, target))
    return kept


def remove_leaky_pairs(pairs, eval_edges: set):
    kept = []
    for pair in pairs:
        key = (pair.accepted_for, pair.substitute)
        if key not in eval_edges and key[::-1] not in eval_edges:
            kept.append(pair)
    return kept


# --- report assembly ---

ROW_LABELS = {
    ("complement", "hit@10"): "a1",
    ("complement", "ndcg@10"): "a2",
    ("co_view", "hit@10"): "a3",
    ("co_view", "ndcg@10"): "a4",
    ("substitute", "hit@10"): "a5",
    ("substitute", "ndcg@10"): "a6",
    ("isa_category", "micro_f1"): "a7",
    ("isa_category", "macro_f1"): "a8",
    ("isa_department", "micro_f1"): "a9",
    ("isa_department", "macro_f1"): "a10",
    ("recommend", "hit@10"): "a11",
    ("recommend", "ndcg@10"): "a12",
    ("search_encountered", "recall@10"): "a13",
    ("search_encountered", "map@10"): "a14",
    ("search_new", "recall@10"): "a15",
    ("search_new", "map@10"): "a16",
}


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)   # (model, task, metric, value or None)
    meta: dict = field(default_factory=dict)

    def add(self, model: str, task: str, metric: str, value) -> None:
        if value is not None and not 0.0 <= value <= 1.0 + 1e-9:
            raise ValueError(f"metric {metric} for {task} out of [0, 1]: {value}")
        self.rows.append((model, task, metric, value))

    def value(self, model: str, task: str, metric: str):
        for m, t, name, v in self.rows:
            if (m, t, name) == (model, task, metric):
                return v
        return None

    def to_tsv(self) -> str:
        lines = ["model\ttask\tmetric\tvalue"]
        for model, task, metric, value in self.rows:
            rendered = "absent" if value is None else f"{value:.9g}"
            lines.append(f"{model}\t{task}\t{metric}\t{rendered}")
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        lines = ["== evaluation summary =="]
        for key, value in sorted(self.meta.items()):
            lines.append(f"   {key}: {value}")
        for model, task, metric, value in self.rows:
            label = ROW_LABELS.get((task, metric), "  -")
            rendered = "absent" if value is None else f"{100 * value:7.2f}%"
            lines.append(f"({label:>3}) {model:<16} {task:<18} {metric:<10} {rendered}")
        return "\n".join(lines) + "\n"


def _ranking_rows(report: MetricsReport, model_name: str, task: str,
                  results: list, k: int, metrics=("hit", "ndcg")) -> None:
    if not results:
        for metric in metrics:
            report.add(model_name, task, f"{metric}@{k}", None)
        return
    values = ranking_metrics(results, k=k)
    for metric in metrics:
        key = f"{metric}@{k}"
        report.add(model_name, task, key, values[key])


def evaluate_all(
    params: PkgParams,
    graph_splits: dict | None = None,
    search_test: list | None = None,
    train_queries: set | None = None,
    recommend_sessions: list | None = None,
    probe_features: np.ndarray | None = None,
    probe_labels: dict | None = None,
    probe_test_rows: np.ndarray | None = None,
    kg_models: dict | None = None,
    kg_space=None,
    k: int = 10,
    recommend_min_prefix: int = 1,
    query_cap: int | None = None,
) -> MetricsReport:
    """Full protocol: knowledge completion, search ranking, recommendation,
    and the category/department classification probe.

    Knowledge completion ranks each held-out relation-graph edge's tail as
    a single-gold query, for the proposed model and every baseline.  Search
    queries split into encountered (exact word multiset seen in training)
    and new.  Recommendation predicts each next impression in the pooled
    test sessions from its prefix.  Absent inputs produce absent report
    cells rather than errors.
    """
    from .baselines import query_head_parts, score_tails_vector

    report = MetricsReport()
    report.meta["k"] = k
    kg_models = kg_models or {}

    # knowledge completion over held-out relation-graph edges
    if graph_splits:
        for relation in sorted(graph_splits):
            split = graph_splits[relation]
            edges = split.test if query_cap is None else split.test[:query_cap]
            results = [rank_tail(params, relation, h, gold=(t,), keep=k) for h, t in edges]
            _ranking_rows(report, "proposed", relation, results, k)
            for name in sorted(kg_models):
                model = kg_models[name]
                rel_idx = kg_space.relation_index(relation)
                cand = kg_space.item_entities()
                results = [
                    rank_tail(model, rel_idx, kg_space.item(h),
                              gold=(kg_space.item(t),), keep=k, candidates=cand)
                    for h, t in edges
                ]
                _ranking_rows(report, name, relation, results, k)

    # search ranking, split by whether the exact query was seen in training
    if search_test is not None:
        train_queries = train_queries or set()
        groups = {"search_encountered": [], "search_new": []}
        for record in (search_test if query_cap is None else search_test[:query_cap]):
            key = tuple(sorted(record.query_words))
            bucket = "search_encountered" if key in train_queries else "search_new"
            groups[bucket].append(record)
        for bucket, records in groups.items():
            results = [
                rank_tail(params, "search", np.asarray(r.query_words),
                          gold=(r.clicked_item,), keep=k)
                for r in records
            ]
            _ranking_rows(report, "proposed", bucket, results, k, metrics=("recall", "map"))
            for name in sorted(kg_models):
                model = kg_models[name]
                rel_idx = kg_space.relation_index("search")
                cand = kg_space.item_entities()
                kg_results = []
                for r in records:
                    parts = query_head_parts(model, kg_space, r.query_words)
                    scores = score_tails_vector(model, parts, rel_idx, cand)
                    kg_results.append(rank_candidates(
                        cand, scores, (kg_space.item(r.clicked_item),), keep=k))
                _ranking_rows(report, name, bucket, kg_results, k, metrics=("recall", "map"))

    # next-impression recommendation over pooled test sessions
    if recommend_sessions is not None:
        results = []
        sessions = (recommend_sessions if query_cap is None
                    else recommend_sessions[:query_cap])
        for session in sessions:
            items = list(session)
            for position in range(recommend_min_prefix, len(items)):
                prefix = np.asarray(items[:position])
                results.append(rank_tail(params, "recommend", prefix,
                                         gold=(items[position],), keep=k))
        _ranking_rows(report, "proposed", "recommend", results, k)

    # classification probe on the masked products
    if probe_features is not None and probe_labels and probe_test_rows is not None:
        all_rows = np.arange(probe_features.shape[0])
        train_rows = np.setdiff1d(all_rows, probe_test_rows)
        for level in sorted(probe_labels):
            labels = probe_labels[level]
            if probe_test_rows.size == 0 or train_rows.size == 0:
                report.add("proposed", f"isa_{level}", "micro_f1", None)
                report.add("proposed", f"isa_{level}", "macro_f1", None)
                continue
            micro, macro = classification_probe(probe_features, labels,
                                                train_rows, probe_test_rows)
            report.add("proposed", f"isa_{level}", "micro_f1", micro)
            report.add("proposed", f"isa_{level}", "macro_f1", macro)
            for name in sorted(kg_models):
                model = kg_models[name]
                features = model.params["ent"][kg_space.item_entities()]
                if features.shape[0] != probe_features.shape[0]:
                    continue
                micro, macro = classification_probe(features, labels,
                                                    train_rows, probe_test_rows)
                report.add(name, f"isa_{level}", "micro_f1", micro)
                report.add(name, f"isa_{level}", "macro_f1", macro)
    return report
