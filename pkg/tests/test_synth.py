"""Synthetic dataset generator and its planted ground truth."""

import filecmp

import numpy as np
import pytest

from prodkg import data as dm
from prodkg.synth import GroundTruth, SynthConfig, generate, load_ground_truth


def small_config(**overrides):
    base = dict(n_items=100, n_words=80, n_clusters=20, n_sessions=600,
                n_searches=200, n_substitutions=150, seed=7)
    base.update(overrides)
    return SynthConfig(**base)


class TestGenerate:
    def test_byte_identical_under_fixed_seed(self, tmp_path):
        paths_a, _ = generate(small_config(), str(tmp_path / "a"))
        paths_b, _ = generate(small_config(), str(tmp_path / "b"))
        for name in paths_a:
            assert filecmp.cmp(paths_a[name], paths_b[name], shallow=False), name

    def test_noise_zero_buy_sessions_are_pure_complement_chains(self, tmp_path):
        config = small_config(noise_rate=0.0)
        paths, truth = generate(config, str(tmp_path / "clean"))
        with open(paths["buy_sessions"], encoding="utf-8") as handle:
            for line in handle:
                tokens = line.rstrip("\n").split("\t")[1].split(" ")
                for a, b in zip(tokens, tokens[1:]):
                    assert b in truth.oracle_rank("complement", a)

    def test_noise_fraction_concentrates(self, tmp_path):
        config = SynthConfig(n_items=400, n_clusters=40, n_words=200,
                             n_sessions=10_000, n_searches=1000,
                             n_substitutions=300, noise_rate=0.2, seed=3)
        _, truth = generate(config, str(tmp_path / "noisy"))
        fraction = truth.stats["noise_tokens"] / truth.stats["total_tokens"]
        assert abs(fraction - 0.2) < 0.01

    def test_generated_files_pass_ingestion(self, tmp_path):
        paths, _ = generate(small_config(), str(tmp_path / "d"))
        dataset = dm.ingest_dataset(paths)
        assert len(dataset.buy_sessions) > 0
        assert len(dataset.catalog) == 100
        assert all(len(s.items) >= 2 for s in dataset.buy_sessions)
        assert all(1 <= len(e.category_path) <= 4 for e in dataset.catalog)

    def test_planted_substitutes_coview_more_than_random(self, tmp_path):
        paths, truth = generate(small_config(noise_rate=0.1), str(tmp_path / "cv"))
        dataset = dm.ingest_dataset(paths)
        vocab = dataset.vocab[dm.ITEM]
        pair_counts = {}
        for session in dataset.view_sessions:
            distinct = sorted(set(session.items))
            for i, a in enumerate(distinct):
                for b in distinct[i + 1:]:
                    pair_counts[(a, b)] = pair_counts.get((a, b), 0) + 1

        def mean_count(pairs):
            return np.mean([pair_counts.get((min(a, b), max(a, b)), 0) for a, b in pairs])

        rng = np.random.default_rng(0)
        planted, random_pairs = [], []
        for head in truth.item_keys[:50]:
            for tail in truth.oracle_rank("substitute", head):
                planted.append((vocab.id(head), vocab.id(tail)))
            other = truth.item_keys[int(rng.integers(len(truth.item_keys)))]
            if truth.cluster_of[other] != truth.cluster_of[head]:
                random_pairs.append((vocab.id(head), vocab.id(other)))
        assert mean_count(planted) > mean_count(random_pairs)

    def test_cluster_shares_subcategory(self, tmp_path):
        paths, truth = generate(small_config(), str(tmp_path / "cat"))
        dataset = dm.ingest_dataset(paths)
        vocab = dataset.vocab[dm.ITEM]
        leaf_of = {}
        for entry in dataset.catalog:
            leaf_of[entry.item] = entry.category_path[0]
        by_cluster = {}
        for key, cluster in truth.cluster_of.items():
            by_cluster.setdefault(cluster, set()).add(leaf_of[vocab.id(key)])
        assert all(len(leaves) == 1 for leaves in by_cluster.values())

    def test_infeasible_config_rejected(self):
        with pytest.raises(ValueError, match="two items"):
            SynthConfig(n_items=10, n_clusters=8)

    def test_noise_rate_bounds(self):
        with pytest.raises(ValueError, match="noise"):
            SynthConfig(noise_rate=1.0)


class TestOracle:
    @pytest.fixture
    def truth(self, tmp_path):
        _, truth = generate(small_config(n_items=25, n_clusters=5, n_sessions=300,
                                         n_substitutions=60, n_searches=100),
                            str(tmp_path / "o"))
        return truth

    def test_substitute_head_in_five_item_cluster(self, truth):
        head = truth.item_keys[0]
        tails = truth.oracle_rank("substitute", head)
        assert len(tails) == 4
        assert head not in tails
        assert all(truth.cluster_of[t] == truth.cluster_of[head] for t in tails)

    def test_complement_targets_rule_cluster(self, truth):
        head = truth.item_keys[0]
        tails = truth.oracle_rank("complement", head)
        assert len(tails) == 5
        target_clusters = {truth.cluster_of[t] for t in tails}
        assert len(target_clusters) == 1
        assert truth.cluster_of[head] not in target_clusters

    def test_unknown_head_rejected(self, truth):
        with pytest.raises(ValueError, match="unknown head"):
            truth.oracle_rank("substitute", "no_such_item")

    def test_unplanted_relation_rejected(self, truth):
        with pytest.raises(ValueError, match="not planted"):
            truth.oracle_rank("friendship", truth.item_keys[0])

    def test_empty_edge_set_for_head_without_edges(self):
        truth = GroundTruth(relations={"substitute": {}}, item_keys=["i1"],
                            cluster_of={"i1": 0}, keyword_pool={})
        assert truth.oracle_rank("substitute", "i1") == set()

    def test_ground_truth_file_round_trip(self, tmp_path):
        paths, truth = generate(small_config(), str(tmp_path / "rt"))
        loaded = load_ground_truth(paths["ground_truth"])
        head = truth.item_keys[3]
        assert loaded.relations["substitute"][head] == truth.relations["substitute"][head]
        assert loaded.relations["complement"][head] == truth.relations["complement"][head]
