"""Synthetic cold-start dataset with planted user clusters and item-preference blocks."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from coldstart_lab.errors import ConfigError

logger = logging.getLogger(__name__)

_MIN_POS, _MAX_POS = 30, 55
_NOISE_RATINGS = 5
_AGES = ("18", "25", "35", "45")
_TAGS = tuple(f"t{i}" for i in range(6))


@dataclass
class SynthDataset:
    """Paths of the generated files and the planted cluster of every user."""

    interactions: Path
    user_attributes: Path
    item_attributes: Path
    truth: Path
    user_cluster: np.ndarray

    def overrides(self) -> dict[str, str]:
        """Config overrides pointing ingestion at these files."""
        return {
            "interactions_path": str(self.interactions),
            "interactions_format": "tsv",
            "user_attributes_path": str(self.user_attributes),
            "item_attributes_path": str(self.item_attributes),
        }


def generate(out_dir: str | Path, n_users: int = 400, n_items: int = 200, k_true: int = 4,
             in_block: float = 0.9, seed: int = 0) -> SynthDataset:
    """Write interactions and attribute files for ``k_true`` planted clusters.

    Items are cut into ``k_true`` contiguous blocks; user ``u`` belongs to cluster
    ``u % k_true`` and draws ``in_block`` of its positives (ratings 4-5) from its block,
    the rest uniformly elsewhere. A few low ratings per user are added as noise. User
    attributes carry the cluster through a noisy ``group`` field.
    """
    if k_true > n_items or k_true > n_users:
        raise ConfigError(f"cannot plant {k_true} clusters in {n_users} users x {n_items} items")
    rng = np.random.default_rng([seed, 60])
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    blocks = np.array_split(np.arange(n_items), k_true)
    block_of = np.empty(n_items, dtype=np.int64)
    for b, items in enumerate(blocks):
        block_of[items] = b
    clusters = np.arange(n_users) % k_true

    rows = []
    for u in range(n_users):
        own = blocks[clusters[u]]
        n_pos = int(rng.integers(_MIN_POS, _MAX_POS + 1))
        n_own = min(int(round(in_block * n_pos)), len(own))
        others = np.flatnonzero(block_of != clusters[u])
        n_other = min(n_pos - n_own, len(others))
        liked = np.concatenate([rng.choice(own, n_own, replace=False), rng.choice(others, n_other, replace=False)])
        start = int(rng.integers(0, 1_000_000))
        times = start + np.sort(rng.integers(0, 100_000, size=len(liked)))
        ratings = rng.integers(4, 6, size=len(liked))
        rows.extend(zip([u] * len(liked), liked.tolist(), ratings.tolist(), times.tolist()))
        unliked = np.setdiff1d(np.arange(n_items), liked)
        noise = rng.choice(unliked, min(_NOISE_RATINGS, len(unliked)), replace=False)
        rows.extend((u, int(i), int(rng.integers(1, 4)), start + int(rng.integers(0, 100_000))) for i in noise)

    frame = pd.DataFrame(rows, columns=["user", "item", "rating", "timestamp"])
    frame["user"] = frame["user"] + 1
    frame["item"] = frame["item"] + 1
    interactions = out / "interactions.tsv"
    frame.to_csv(interactions, sep="\t", header=False, index=False)

    user_lines = []
    for u in range(n_users):
        group = clusters[u] if rng.random() < in_block else int(rng.integers(0, k_true))
        age = _AGES[int(rng.integers(0, len(_AGES)))]
        user_lines.append(f"{u + 1}\tgroup:g{group}\tage:{age}")
    user_attributes = out / "users.tsv"
    user_attributes.write_text("\n".join(user_lines) + "\n", encoding="utf-8")

    item_lines = []
    for i in range(n_items):
        tags = ",".join(sorted(rng.choice(_TAGS, 2, replace=False).tolist()))
        item_lines.append(f"{i + 1}\tcategory:c{block_of[i]}\ttag:{tags}")
    item_attributes = out / "items.tsv"
    item_attributes.write_text("\n".join(item_lines) + "\n", encoding="utf-8")

    truth = out / "truth.tsv"
    pd.DataFrame({"user": np.arange(n_users) + 1, "cluster": clusters}).to_csv(
        truth, sep="\t", header=False, index=False
    )
    logger.info("synthetic dataset: %d users, %d items, %d ratings, %d planted clusters",
                n_users, n_items, len(frame), k_true)
    return SynthDataset(interactions, user_attributes, item_attributes, truth, clusters)
