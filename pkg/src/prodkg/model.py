"""Parameter bundle for the multi-relation product embedding model.

Holds the five embedding tables (product input, two product output tables
for co-buy/co-view, words, ball-geometry categories) plus one attention
block per sequence task, with deterministic seeded initialisation and
checkpoint save/load.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .attention import TASK_WIRING, AttentionParams
from .data import CATEGORY, ITEM, WORD
from .embeddings import POINCARE, new_table, read_table_tsv, write_table_tsv

TABLE_NAMES = ("item_in", "item_out_buy", "item_out_view", "word", "category")

DEFAULT_SEQ_LENS = {"complement": 20, "co_view": 50, "search": 10, "describe": 200}


@dataclass
class ModelConfig:
    dim: int = 100
    seq_lens: dict = field(default_factory=lambda: dict(DEFAULT_SEQ_LENS))
    seed: int = 7


@dataclass
class PkgParams:
    tables: dict        # name -> EmbeddingTable
    attn: dict          # task -> AttentionParams
    dim: int

    def copy(self) -> "PkgParams":
        return PkgParams(
            tables={name: table.copy() for name, table in self.tables.items()},
            attn={task: params.copy() for task, params in self.attn.items()},
            dim=self.dim,
        )

    def dense_dict(self) -> dict:
        """Flat name -> array view over all attention parameters (shared memory)."""
        out: dict[str, np.ndarray] = {}
        for task, params in self.attn.items():
            out.update(params.as_dict(task))
        return out

    def equal(self, other: "PkgParams") -> bool:
        if set(self.tables) != set(other.tables) or set(self.attn) != set(other.attn):
            return False
        for name in self.tables:
            if not np.array_equal(self.tables[name].values, other.tables[name].values):
                return False
        mine, theirs = self.dense_dict(), other.dense_dict()
        return all(np.array_equal(mine[k], theirs[k]) for k in mine)


def init_params(config: ModelConfig, n_items: int, n_words: int, n_categories: int) -> PkgParams:
    """Seed-deterministic initialisation of every table and attention block."""
    rng = np.random.default_rng(config.seed)
    d = config.dim
    tables = {
        "item_in": new_table("item_in", n_items, d, rng),
        "item_out_buy": new_table("item_out_buy", n_items, d, rng),
        "item_out_view": new_table("item_out_view", n_items, d, rng),
        "word": new_table("word", n_words, d, rng),
        "category": new_table("category", n_categories, d, rng, geometry=POINCARE),
    }
    attn = {
        task: AttentionParams.init(config.seq_lens[task], d, rng)
        for task in sorted(TASK_WIRING)
    }
    return PkgParams(tables=tables, attn=attn, dim=d)


def save_checkpoint(directory: str, params: PkgParams, vocab: dict) -> None:
    """Write embedding TSVs per table plus the attention parameters and a config echo."""
    os.makedirs(directory, exist_ok=True)
    table_ns = {"item_in": ITEM, "item_out_buy": ITEM, "item_out_view": ITEM,
                "word": WORD, "category": CATEGORY}
    for name, table in params.tables.items():
        keys = list(vocab[table_ns[name]].id_to_key)
        write_table_tsv(os.path.join(directory, f"embeddings_{name}.tsv"), table, keys)
    arrays = {}
    for task, block in params.attn.items():
        for key, value in block.as_dict(task).items():
            arrays[key.replace(".", "__")] = value
    np.savez(os.path.join(directory, "attention_params.npz"), **arrays)
    echo = {
        "dim": params.dim,
        "tables": {name: [table.rows, table.dim, table.geometry]
                   for name, table in params.tables.items()},
        "seq_lens": {task: block.max_len for task, block in params.attn.items()},
    }
    with open(os.path.join(directory, "checkpoint.json"), "w", encoding="utf-8") as handle:
        json.dump(echo, handle, indent=1, sort_keys=True)
        handle.write("\n")


def load_checkpoint(directory: str) -> tuple[PkgParams, dict]:
    """Inverse of :func:`save_checkpoint`; returns params and per-table key lists."""
    with open(os.path.join(directory, "checkpoint.json"), "r", encoding="utf-8") as handle:
        echo = json.load(handle)
    tables = {}
    keys_by_table = {}
    for name in TABLE_NAMES:
        table, keys = read_table_tsv(os.path.join(directory, f"embeddings_{name}.tsv"), name)
        tables[name] = table
        keys_by_table[name] = keys
    blob = np.load(os.path.join(directory, "attention_params.npz"))
    attn = {}
    for task in echo["seq_lens"]:
        attn[task] = AttentionParams(
            positions=blob[f"{task}__positions"],
            theta1=blob[f"{task}__theta1"],
            b1=blob[f"{task}__b1"],
            theta2=blob[f"{task}__theta2"],
            b2=blob[f"{task}__b2"],
        )
    return PkgParams(tables=tables, attn=attn, dim=int(echo["dim"])), keys_by_table
