"""Interaction-log ingestion, k-core filtering, splitting, and negative sampling.

The on-disk split layout is three delimited files (train.tsv, valid.tsv,
test.tsv; one ``user_id<TAB>item_id`` per line) plus a header.json with
{n_users, n_items, counts, seed, min_count}.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np

from .seeding import rng_stream

_SPLIT_FILES = {"train": "train.tsv", "valid": "valid.tsv", "test": "test.tsv"}
_MAX_REJECTION_ROUNDS = 100_000


class ParseError(ValueError):
    """Malformed interaction file."""


@dataclass(frozen=True)
class RawInteractions:
    """Deduplicated (user_key, item_key) records in stable input order.

    Timestamps are kept when present but nothing downstream consumes them;
    splitting is random, not temporal.
    """

    users: tuple[str, ...]
    items: tuple[str, ...]
    timestamps: tuple[float, ...] | None = None

    def __len__(self) -> int:
        return len(self.users)

    def pairs(self) -> Iterator[tuple[str, str]]:
        return zip(self.users, self.items)


class TrainingTriple(NamedTuple):
    user_id: int
    pos_item_id: int
    neg_item_id: int


@dataclass(frozen=True)
class TripleBatch:
    """Column layout for (user, positive item, negative item) triples."""

    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray

    def __len__(self) -> int:
        return len(self.users)

    def __getitem__(self, idx) -> "TrainingTriple | TripleBatch":
        if isinstance(idx, (int, np.integer)):
            return TrainingTriple(
                int(self.users[idx]), int(self.pos_items[idx]), int(self.neg_items[idx])
            )
        return TripleBatch(self.users[idx], self.pos_items[idx], self.neg_items[idx])

    def __iter__(self) -> Iterator[TrainingTriple]:
        for u, p, n in zip(self.users, self.pos_items, self.neg_items):
            yield TrainingTriple(int(u), int(p), int(n))


@dataclass
class DatasetSplit:
    """Contiguous-ID interaction sets partitioned into train/valid/test.

    ``train``/``valid``/``test`` are (m, 2) int64 arrays of (user_id, item_id).
    ``user_map``/``item_map`` are present when the split was built from raw
    keys and None when loaded back from disk.
    """

    n_users: int
    n_items: int
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    user_map: dict[str, int] | None = None
    item_map: dict[str, int] | None = None
    meta: dict = field(default_factory=dict)
    train_items_by_user: list[np.ndarray] = field(init=False, repr=False)
    _train_keys: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        by_user: list[list[int]] = [[] for _ in range(self.n_users)]
        for u, i in self.train:
            by_user[int(u)].append(int(i))
        self.train_items_by_user = [
            np.array(sorted(items), dtype=np.int64) for items in by_user
        ]
        # flat sorted u * n_items + i keys for O(log nnz) membership tests
        keys = self.train[:, 0].astype(np.int64) * self.n_items + self.train[:, 1]
        self._train_keys = np.sort(keys)

    @property
    def n_interactions(self) -> int:
        return len(self.train) + len(self.valid) + len(self.test)

    def train_degrees(self) -> np.ndarray:
        """Per-user train interaction counts."""
        return np.bincount(self.train[:, 0], minlength=self.n_users).astype(np.int64)

    def is_train_pair(self, users: np.ndarray, items: np.ndarray) -> np.ndarray:
        """Vectorized membership test against the train set."""
        keys = np.asarray(users, dtype=np.int64) * self.n_items + np.asarray(items)
        pos = np.searchsorted(self._train_keys, keys)
        pos = np.minimum(pos, len(self._train_keys) - 1)
        return self._train_keys[pos] == keys

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, fname in _SPLIT_FILES.items():
            arr = getattr(self, name)
            with open(out / fname, "w", encoding="utf-8") as fh:
                for u, i in arr:
                    fh.write(f"{u}\t{i}\n")
        header = {
            "n_users": self.n_users,
            "n_items": self.n_items,
            "counts": {name: int(len(getattr(self, name))) for name in _SPLIT_FILES},
            "seed": self.meta.get("seed"),
            "min_count": self.meta.get("min_count"),
        }
        with open(out / "header.json", "w", encoding="utf-8") as fh:
            json.dump(header, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, split_dir: str | Path) -> "DatasetSplit":
        src = Path(split_dir)
        with open(src / "header.json", encoding="utf-8") as fh:
            header = json.load(fh)
        parts = {}
        for name, fname in _SPLIT_FILES.items():
            pairs = []
            with open(src / fname, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if line:
                        u, _, i = line.partition("\t")
                        pairs.append((int(u), int(i)))
            rows = (
                np.array(pairs, dtype=np.int64)
                if pairs
                else np.empty((0, 2), dtype=np.int64)
            )
            parts[name] = rows
            if len(rows) != header["counts"][name]:
                raise ValueError(
                    f"{fname}: {len(rows)} rows but header says {header['counts'][name]}"
                )
        return cls(
            n_users=header["n_users"],
            n_items=header["n_items"],
            train=parts["train"],
            valid=parts["valid"],
            test=parts["test"],
            meta={"seed": header.get("seed"), "min_count": header.get("min_count")},
        )


def load_interactions(path: str | Path, fmt: str = "tsv") -> RawInteractions:
    """Read a delimited interaction log.

    Each line is ``user<sep>item[<sep>rating][<sep>timestamp]``; lines starting
    with '#' and blank lines are skipped. Exact duplicate (user, item) pairs
    are dropped, keeping the first occurrence.
    """
    if fmt not in ("tsv", "csv"):
        raise ValueError(f"unknown format {fmt!r}, expected 'tsv' or 'csv'")
    sep = "\t" if fmt == "tsv" else ","
    users: list[str] = []
    items: list[str] = []
    stamps: list[float] = []
    any_stamp = False
    seen: set[tuple[str, str]] = set()
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line or line.startswith("#"):
                continue
            fields = line.split(sep)
            if len(fields) < 2:
                raise ParseError(f"{path}: line {ln}: expected at least 2 fields, got {len(fields)}")
            user, item = fields[0], fields[1]
            if not user or not item:
                raise ParseError(f"{path}: line {ln}: empty user or item key")
            ts = math.nan
            if len(fields) >= 4:
                try:
                    ts = float(fields[3])
                except ValueError as exc:
                    raise ParseError(f"{path}: line {ln}: bad timestamp {fields[3]!r}") from exc
                any_stamp = True
            if (user, item) in seen:
                continue
            seen.add((user, item))
            users.append(user)
            items.append(item)
            stamps.append(ts)
    if not users:
        raise ParseError(f"{path}: no interactions found")
    return RawInteractions(
        users=tuple(users),
        items=tuple(items),
        timestamps=tuple(stamps) if any_stamp else None,
    )


def k_core_filter(raw: RawInteractions, min_count: int) -> RawInteractions:
    """Iteratively remove users and items with degree < min_count until fixpoint.

    min_count of 0 or 1 is a no-op (every present node has degree >= 1).
    """
    if min_count < 0:
        raise ValueError("min_count must be >= 0")
    if min_count <= 1:
        return raw
    keep = list(range(len(raw)))
    while True:
        u_deg = Counter(raw.users[i] for i in keep)
        i_deg = Counter(raw.items[i] for i in keep)
        survivors = [
            i for i in keep
            if u_deg[raw.users[i]] >= min_count and i_deg[raw.items[i]] >= min_count
        ]
        if len(survivors) == len(keep):
            break
        keep = survivors
    if not keep:
        raise ValueError("k-core eliminated all data")
    return RawInteractions(
        users=tuple(raw.users[i] for i in keep),
        items=tuple(raw.items[i] for i in keep),
        timestamps=tuple(raw.timestamps[i] for i in keep) if raw.timestamps else None,
    )


def build_split(
    raw: RawInteractions,
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> DatasetSplit:
    """Per-user random split into train/valid/test.

    IDs are assigned by sorted key order. For a user with n interactions,
    valid and test get floor(ratio * n) each and train gets the remainder,
    so every user keeps at least one train interaction.
    """
    if len(raw) == 0:
        raise ValueError("empty interaction set")
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three nonnegative values summing to 1, got {ratios}")
    user_keys = sorted(set(raw.users))
    item_keys = sorted(set(raw.items))
    user_map = {k: idx for idx, k in enumerate(user_keys)}
    item_map = {k: idx for idx, k in enumerate(item_keys)}
    n_users, n_items = len(user_keys), len(item_keys)

    items_of_user: list[list[int]] = [[] for _ in range(n_users)]
    for u_key, i_key in raw.pairs():
        items_of_user[user_map[u_key]].append(item_map[i_key])

    rng = rng_stream(seed)
    train_rows: list[tuple[int, int]] = []
    valid_rows: list[tuple[int, int]] = []
    test_rows: list[tuple[int, int]] = []
    for uid in range(n_users):
        items = items_of_user[uid]
        n = len(items)
        # guard against 0.3*10 == 2.9999... style representation undershoot
        n_valid = math.floor(ratios[1] * n + 1e-12)
        n_test = math.floor(ratios[2] * n + 1e-12)
        n_train = n - n_valid - n_test
        perm = rng.permutation(n)
        for j in perm[:n_train]:
            train_rows.append((uid, items[j]))
        for j in perm[n_train:n_train + n_valid]:
            valid_rows.append((uid, items[j]))
        for j in perm[n_train + n_valid:]:
            test_rows.append((uid, items[j]))

    def _arr(rows: list[tuple[int, int]]) -> np.ndarray:
        if not rows:
            return np.empty((0, 2), dtype=np.int64)
        return np.array(rows, dtype=np.int64)

    return DatasetSplit(
        n_users=n_users,
        n_items=n_items,
        train=_arr(train_rows),
        valid=_arr(valid_rows),
        test=_arr(test_rows),
        user_map=user_map,
        item_map=item_map,
        meta={"seed": seed, "ratios": tuple(ratios)},
    )


def sample_negatives(split: DatasetSplit, epoch_seed: int) -> TripleBatch:
    """One uniformly sampled negative item per train interaction.

    Negatives are rejection-sampled from items outside the user's train set,
    which yields the exact uniform distribution over the complement.
    """
    degrees = split.train_degrees()
    max_deg = int(degrees.max()) if len(degrees) else 0
    if max_deg >= split.n_items:
        raise ValueError(
            f"a user interacted with all {split.n_items} items in train; no negative exists"
        )
    users = split.train[:, 0].copy()
    pos = split.train[:, 1].copy()
    rng = rng_stream(epoch_seed)
    neg = rng.integers(0, split.n_items, size=len(users), dtype=np.int64)
    bad = np.flatnonzero(split.is_train_pair(users, neg))
    rounds = 0
    while bad.size:
        rounds += 1
        if rounds > _MAX_REJECTION_ROUNDS:
            raise RuntimeError("negative sampling did not converge")
        neg[bad] = rng.integers(0, split.n_items, size=bad.size, dtype=np.int64)
        bad = bad[split.is_train_pair(users[bad], neg[bad])]
    return TripleBatch(users=users, pos_items=pos, neg_items=neg)
