"""Interaction and attribute ingestion, binarisation and cold-start partitioning."""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.sparse as sp

from coldstart_lab.errors import DataError

logger = logging.getLogger(__name__)

_COLUMNS = ["user", "item", "rating", "timestamp"]
_SEPARATORS = {"tsv": "\t", "movielens_dat": "::"}


@dataclass
class InteractionLog:
    """Deduplicated rating records with dense 0-based ids.

    ``frame`` has columns user, item, rating, timestamp. ``user_ids[u]`` is the raw
    id of dense user ``u`` (same for items).
    """

    frame: pd.DataFrame
    user_ids: np.ndarray
    item_ids: np.ndarray

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    def user_map(self) -> dict[str, int]:
        return {raw: dense for dense, raw in enumerate(self.user_ids)}

    def item_map(self) -> dict[str, int]:
        return {raw: dense for dense, raw in enumerate(self.item_ids)}


@dataclass
class ImplicitMatrix:
    """Binary user-item matrix R.

    Rows and columns are local indices; ``user_ids``/``item_ids`` map them back to
    the dense ids of the InteractionLog they came from.
    """

    matrix: sp.csr_matrix
    user_ids: np.ndarray
    item_ids: np.ndarray

    def __post_init__(self) -> None:
        m = sp.csr_matrix(self.matrix, dtype=np.float64)
        m.sum_duplicates()
        m.data[:] = 1.0
        m.eliminate_zeros()
        m.sort_indices()
        self.matrix = m

    @classmethod
    def from_pairs(cls, users, items, n_users: int, n_items: int,
                   user_ids: np.ndarray | None = None, item_ids: np.ndarray | None = None) -> ImplicitMatrix:
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if users.size and (users.min() < 0 or users.max() >= n_users or items.min() < 0 or items.max() >= n_items):
            raise DataError("interaction pair out of bounds")
        data = np.ones(len(users), dtype=np.float64)
        matrix = sp.csr_matrix((data, (users, items)), shape=(n_users, n_items))
        return cls(
            matrix=matrix,
            user_ids=np.arange(n_users) if user_ids is None else np.asarray(user_ids),
            item_ids=np.arange(n_items) if item_ids is None else np.asarray(item_ids),
        )

    @property
    def n_users(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_items(self) -> int:
        return self.matrix.shape[1]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Row-major (users, items) arrays of every positive."""
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order].astype(np.int64), coo.col[order].astype(np.int64)

    def pair_set(self) -> set[tuple[int, int]]:
        users, items = self.pairs()
        return set(zip(users.tolist(), items.tolist()))

    def degrees(self) -> np.ndarray:
        return np.diff(self.matrix.indptr)

    def row(self, user: int) -> np.ndarray:
        start, end = self.matrix.indptr[user], self.matrix.indptr[user + 1]
        return self.matrix.indices[start:end].astype(np.int64)

    def users_with_positives(self) -> np.ndarray:
        return np.flatnonzero(self.degrees() > 0)

    def like(self, users, items) -> ImplicitMatrix:
        """A matrix of the same shape and id maps holding the given pairs."""
        return ImplicitMatrix.from_pairs(users, items, self.n_users, self.n_items, self.user_ids, self.item_ids)

    def restrict(self, users=None, items=None) -> ImplicitMatrix:
        """Keep positives whose user is in ``users`` and item in ``items`` (None = all)."""
        u, i = self.pairs()
        keep = np.ones(len(u), dtype=bool)
        if users is not None:
            keep &= np.isin(u, np.asarray(users, dtype=np.int64))
        if items is not None:
            keep &= np.isin(i, np.asarray(items, dtype=np.int64))
        return self.like(u[keep], i[keep])

    def union(self, other: ImplicitMatrix) -> ImplicitMatrix:
        if other.matrix.shape != self.matrix.shape:
            raise DataError("cannot union matrices of different shapes")
        return ImplicitMatrix(self.matrix + other.matrix, self.user_ids, self.item_ids)


@dataclass
class ColdStartPartition:
    """Existing/new splits of users and items and the four interaction blocks."""

    existing_users: np.ndarray
    new_users: np.ndarray
    existing_items: np.ndarray
    new_items: np.ndarray
    meta_train: ImplicitMatrix
    task1: ImplicitMatrix
    task2: ImplicitMatrix
    task3: ImplicitMatrix

    def task(self, number: int) -> ImplicitMatrix:
        return {1: self.task1, 2: self.task2, 3: self.task3}[number]

    def candidate_items(self, number: int) -> np.ndarray:
        """Task1 ranks existing items; Task2 and Task3 rank new items."""
        return self.existing_items if number == 1 else self.new_items

    def task_users(self, number: int) -> np.ndarray:
        return self.new_users if number in (1, 3) else self.existing_users


def parse_interactions(path: str | Path, fmt: str = "tsv", save_maps_to: str | Path | None = None) -> InteractionLog:
    """Read `user item rating timestamp` records, re-index ids densely and deduplicate.

    Ids are numbered in order of first appearance. Duplicate (user, item) pairs keep
    the record with the latest timestamp.
    """
    if fmt not in _SEPARATORS:
        raise DataError(f"unknown interaction format: {fmt}")
    p = Path(path)
    if not p.exists():
        raise DataError(f"interaction file not found: {p}")
    try:
        raw = pd.read_csv(
            p,
            sep=_SEPARATORS[fmt],
            header=None,
            names=_COLUMNS,
            dtype=str,
            engine="python" if fmt == "movielens_dat" else "c",
            skip_blank_lines=False,
            keep_default_na=False,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError:
        raise DataError(f"empty interaction file: {p}") from None
    except pd.errors.ParserError as exc:
        raise DataError(f"{p}: {exc}") from exc
    if raw.empty:
        raise DataError(f"empty interaction file: {p}")

    frame = pd.DataFrame({"user": raw["user"].str.strip(), "item": raw["item"].str.strip()})
    frame["rating"] = pd.to_numeric(raw["rating"], errors="coerce")
    frame["timestamp"] = pd.to_numeric(raw["timestamp"], errors="coerce")
    bad = (
        frame["user"].isna() | (frame["user"] == "") | frame["item"].isna() | (frame["item"] == "")
        | frame["rating"].isna() | frame["timestamp"].isna()
    )
    if bad.any():
        lineno = int(np.flatnonzero(bad.to_numpy())[0]) + 1
        raise DataError(f"{p}: line {lineno}: expected user, item, numeric rating and timestamp")
    out_of_range = (frame["rating"] < 1) | (frame["rating"] > 5)
    if out_of_range.any():
        lineno = int(np.flatnonzero(out_of_range.to_numpy())[0]) + 1
        raise DataError(f"{p}: line {lineno}: rating outside [1, 5]")

    user_codes, user_ids = pd.factorize(frame["user"], sort=False)
    item_codes, item_ids = pd.factorize(frame["item"], sort=False)
    frame["user"] = user_codes.astype(np.int64)
    frame["item"] = item_codes.astype(np.int64)
    frame["timestamp"] = frame["timestamp"].astype(np.int64)

    latest = frame.sort_values("timestamp", kind="mergesort").drop_duplicates(["user", "item"], keep="last")
    frame = latest.sort_index().reset_index(drop=True)

    log = InteractionLog(frame=frame, user_ids=np.asarray(user_ids, dtype=object),
                         item_ids=np.asarray(item_ids, dtype=object))
    if save_maps_to is not None:
        out = Path(save_maps_to)
        save_id_map(log.user_ids, out / "user_ids.tsv")
        save_id_map(log.item_ids, out / "item_ids.tsv")
    logger.info("parsed %d interactions: %d users, %d items", len(frame), log.n_users, log.n_items)
    return log


def write_interactions(log: InteractionLog, path: str | Path) -> None:
    """Write the log with dense ids, one tab-separated record per line."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    log.frame[_COLUMNS].to_csv(p, sep="\t", header=False, index=False)


def save_id_map(raw_ids: np.ndarray, path: str | Path) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({"raw_id": raw_ids, "dense_id": np.arange(len(raw_ids))}).to_csv(
        p, sep="\t", header=False, index=False
    )


def load_id_map(path: str | Path) -> np.ndarray:
    """Raw ids indexed by dense id."""
    frame = pd.read_csv(path, sep="\t", header=None, names=["raw_id", "dense_id"], dtype={"raw_id": str})
    ids = np.empty(len(frame), dtype=object)
    ids[frame["dense_id"].to_numpy()] = frame["raw_id"].to_numpy()
    return ids


def binarize(log: InteractionLog, threshold: float = 3.0) -> ImplicitMatrix:
    """Keep a pair iff its rating is strictly above ``threshold``."""
    if not 1 <= threshold <= 5:
        raise DataError(f"threshold {threshold} outside [1, 5]")
    positive = log.frame[log.frame["rating"] > threshold]
    return ImplicitMatrix.from_pairs(positive["user"].to_numpy(), positive["item"].to_numpy(),
                                     log.n_users, log.n_items)


def filter_users(m: ImplicitMatrix, min_inter: int = 13, max_inter: int = 100) -> ImplicitMatrix:
    """Drop users whose positive count lies outside [min_inter, max_inter]; re-densify rows."""
    if min_inter > max_inter:
        raise DataError(f"min_inter {min_inter} exceeds max_inter {max_inter}")
    degree = m.degrees()
    keep = np.flatnonzero((degree >= min_inter) & (degree <= max_inter))
    if keep.size == 0:
        raise DataError(f"no user has between {min_inter} and {max_inter} positives")
    logger.info("kept %d of %d users after interaction-count filter", keep.size, m.n_users)
    return ImplicitMatrix(m.matrix[keep], m.user_ids[keep], m.item_ids)


def _split_counts(total: int, ratio: float, kind: str) -> int:
    existing = min(math.floor(ratio * total), total - 1)
    if existing < 1:
        raise DataError(f"cannot split {total} {kind} into non-empty existing and new sets")
    return existing


def _raw_order_key(raw_ids: np.ndarray) -> np.ndarray:
    """Sort key for raw ids: numeric when every id parses as a number, else lexicographic."""
    numeric = pd.to_numeric(pd.Series(raw_ids, dtype=object), errors="coerce")
    if not numeric.isna().any():
        return numeric.to_numpy(dtype=np.float64)
    return pd.Series(raw_ids, dtype=str).rank(method="dense").to_numpy()


def _order_split(times: np.ndarray | None, raw_ids: np.ndarray, n_existing: int,
                 rng: np.random.Generator, kind: str) -> tuple[np.ndarray, np.ndarray]:
    n = len(raw_ids)
    if times is None or np.isnan(times).any():
        if times is not None:
            logger.warning("%s without timestamps: falling back to a random split", kind)
        order = rng.permutation(n)
    else:
        # latest entities become new; ties broken by raw id ascending
        order = np.lexsort((_raw_order_key(raw_ids), times))
    return np.sort(order[:n_existing]), np.sort(order[n_existing:])


def split_cold_start(
    log: InteractionLog,
    m: ImplicitMatrix,
    user_rule: str = "first_rating_time",
    item_rule: str = "first_rated_time",
    ratio: float = 0.8,
    seed: int = 0,
    item_release: dict[str, float] | None = None,
) -> ColdStartPartition:
    """Split users and items into existing/new and cut R into the four blocks.

    Existing count is ``floor(ratio * total)`` with at least one new entity.
    """
    if not 0 < ratio < 1:
        raise DataError(f"ratio {ratio} outside (0, 1)")
    n_exist_users = _split_counts(m.n_users, ratio, "users")
    n_exist_items = _split_counts(m.n_items, ratio, "items")
    user_rng = np.random.default_rng([seed, 0])
    item_rng = np.random.default_rng([seed, 1])

    user_raw = log.user_ids[m.user_ids]
    item_raw = log.item_ids[m.item_ids]

    user_times = None
    if user_rule == "first_rating_time":
        first = log.frame.groupby("user")["timestamp"].min()
        user_times = first.reindex(m.user_ids).to_numpy(dtype=np.float64)
    elif user_rule != "random":
        raise DataError(f"unknown user split rule: {user_rule}")

    item_times = None
    if item_rule == "first_rated_time":
        first = log.frame.groupby("item")["timestamp"].min()
        item_times = first.reindex(m.item_ids).to_numpy(dtype=np.float64)
    elif item_rule == "release_year":
        if item_release is None:
            logger.warning("no release years supplied: falling back to a random item split")
        else:
            item_times = np.array([item_release.get(str(raw), np.nan) for raw in item_raw], dtype=np.float64)
    elif item_rule != "random":
        raise DataError(f"unknown item split rule: {item_rule}")

    existing_users, new_users = _order_split(user_times, user_raw, n_exist_users, user_rng, "users")
    existing_items, new_items = _order_split(item_times, item_raw, n_exist_items, item_rng, "items")

    return ColdStartPartition(
        existing_users=existing_users,
        new_users=new_users,
        existing_items=existing_items,
        new_items=new_items,
        meta_train=m.restrict(existing_users, existing_items),
        task1=m.restrict(new_users, existing_items),
        task2=m.restrict(existing_users, new_items),
        task3=m.restrict(new_users, new_items),
    )


def holdout_validation(users: np.ndarray, fraction: float = 0.1, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Randomly hold out ``fraction`` of ``users``; returns (train_users, validation_users)."""
    users = np.sort(np.asarray(users, dtype=np.int64))
    n_val = min(int(round(fraction * len(users))), len(users) - 1)
    if n_val <= 0:
        return users, users[:0]
    rng = np.random.default_rng([seed, 2])
    picked = rng.permutation(len(users))[:n_val]
    mask = np.zeros(len(users), dtype=bool)
    mask[picked] = True
    return users[~mask], users[mask]


def eligible_users(m: ImplicitMatrix, users, query_size: int) -> np.ndarray:
    """Users with strictly more than ``query_size`` positives in ``m``."""
    users = np.asarray(users, dtype=np.int64)
    return users[m.degrees()[users] > query_size]


def build_support_query(m: ImplicitMatrix, users, query_size: int = 10,
                        seed: int = 0) -> tuple[ImplicitMatrix, ImplicitMatrix]:
    """Per user, move ``query_size`` random positives to the query set; the rest is support."""
    users = np.sort(np.unique(np.asarray(users, dtype=np.int64)))
    degree = m.degrees()
    offenders = users[degree[users] <= query_size]
    if offenders.size:
        shown = ", ".join(str(u) for u in offenders[:20])
        more = f" and {offenders.size - 20} more" if offenders.size > 20 else ""
        raise DataError(f"users with <= {query_size} positives cannot be split: {shown}{more}")

    rng = np.random.default_rng(seed)
    s_users, s_items, q_users, q_items = [], [], [], []
    for u in users:
        items = m.row(u)
        perm = rng.permutation(len(items))
        query = items[perm[:query_size]]
        support = items[perm[query_size:]]
        q_users.append(np.full(len(query), u))
        q_items.append(query)
        s_users.append(np.full(len(support), u))
        s_items.append(support)
    support = m.like(_concat(s_users), _concat(s_items))
    query = m.like(_concat(q_users), _concat(q_items))
    return support, query


def truncate_support(support: ImplicitMatrix, max_per_user: int, seed: int = 0) -> ImplicitMatrix:
    """Keep at most ``max_per_user`` random positives per user (0 keeps everything)."""
    if max_per_user <= 0:
        return support
    rng = np.random.default_rng([seed, 3])
    users, items = [], []
    for u in support.users_with_positives():
        row = support.row(u)
        if len(row) > max_per_user:
            row = np.sort(rng.choice(row, size=max_per_user, replace=False))
        users.append(np.full(len(row), u))
        items.append(row)
    return support.like(_concat(users), _concat(items))


def drop_interactions(m: ImplicitMatrix, fraction: float, seed: int = 0) -> ImplicitMatrix:
    """Remove a random ``fraction`` of positives."""
    if fraction <= 0:
        return m
    users, items = m.pairs()
    rng = np.random.default_rng([seed, 4])
    keep = rng.random(len(users)) >= fraction
    return m.like(users[keep], items[keep])


def _concat(parts: list[np.ndarray]) -> np.ndarray:
    return np.concatenate(parts).astype(np.int64) if parts else np.zeros(0, dtype=np.int64)


# --- attributes ---------------------------------------------------------------


@dataclass(frozen=True)
class AttributeField:
    """One categorical field; its segment ends with a reserved UNK slot."""

    name: str
    vocab: tuple[str, ...]
    multi_hot: bool = False

    @property
    def width(self) -> int:
        return len(self.vocab) + 1

    @property
    def unk_index(self) -> int:
        return len(self.vocab)

    def index(self, value: str) -> int:
        try:
            return self.vocab.index(value)
        except ValueError:
            return self.unk_index


@dataclass(frozen=True)
class AttributeSchema:
    """Frozen field vocabularies for one entity kind (users or items)."""

    fields: tuple[AttributeField, ...]
    _offsets: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        offsets, total = [], 0
        for f in self.fields:
            offsets.append(total)
            total += f.width
        object.__setattr__(self, "_offsets", tuple(offsets))

    @property
    def width(self) -> int:
        return sum(f.width for f in self.fields)

    def offset(self, name: str) -> int:
        for f, off in zip(self.fields, self._offsets):
            if f.name == name:
                return off
        raise DataError(f"unknown attribute field: {name}")

    def get(self, name: str) -> AttributeField:
        for f in self.fields:
            if f.name == name:
                return f
        raise DataError(f"unknown attribute field: {name}")

    @classmethod
    def from_records(cls, records: dict[str, dict[str, list[str]]]) -> AttributeSchema:
        """Infer sorted vocabularies; a field is multi-hot if any entity lists several values."""
        values: dict[str, set[str]] = {}
        multi: dict[str, bool] = {}
        for fields in records.values():
            for name, vals in fields.items():
                values.setdefault(name, set()).update(vals)
                multi[name] = multi.get(name, False) or len(vals) > 1
        return cls(tuple(AttributeField(n, tuple(sorted(values[n])), multi[n]) for n in sorted(values)))

    @classmethod
    def from_file(cls, path: str | Path) -> AttributeSchema:
        return cls.from_records(read_attribute_records(path))


def read_attribute_records(path: str | Path) -> dict[str, dict[str, list[str]]]:
    """Parse `entity_id<TAB>field:value[,value...]<TAB>...` lines."""
    p = Path(path)
    if not p.exists():
        raise DataError(f"attribute file not found: {p}")
    records: dict[str, dict[str, list[str]]] = {}
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        entity, *cells = line.rstrip("\n").split("\t")
        fields: dict[str, list[str]] = {}
        for cell in cells:
            if not cell:
                continue
            if ":" not in cell:
                raise DataError(f"{p}: line {lineno}: expected field:value, got {cell!r}")
            name, raw_values = cell.split(":", 1)
            fields[name.strip()] = [v.strip() for v in raw_values.split(",") if v.strip()]
        records[entity.strip()] = fields
    return records


def encode_attributes(schema: AttributeSchema, raw: str | Path | dict[str, dict[str, list[str]]],
                      id_map: dict[str, int], n_entities: int) -> np.ndarray:
    """Encode every entity as concatenated one-hot / multi-hot segments.

    Entities absent from the file get an all-zero row; unseen values map to the
    field's UNK slot; an unknown field name is an error.
    """
    records = raw if isinstance(raw, dict) else read_attribute_records(raw)
    table = np.zeros((n_entities, schema.width), dtype=np.float64)
    for entity, fields in records.items():
        row = id_map.get(entity)
        if row is None:
            continue
        for name, values in fields.items():
            fld = schema.get(name)
            if not fld.multi_hot and len(values) > 1:
                raise DataError(f"one-hot field {name} has several values for entity {entity}")
            base = schema.offset(name)
            for value in values:
                table[row, base + fld.index(value)] = 1.0
    return table


# --- MovieLens-1M side information ---------------------------------------------

_YEAR = re.compile(r"\((\d{4})\)\s*$")


def convert_movielens_users(users_dat: str | Path, out_path: str | Path) -> None:
    """users.dat (UserID::Gender::Age::Occupation::Zip) → attribute TSV."""
    frame = pd.read_csv(users_dat, sep="::", engine="python", header=None, dtype=str,
                        names=["user", "gender", "age", "occupation", "zip"], encoding="latin-1")
    lines = [
        f"{r.user}\tgender:{r.gender}\tage:{r.age}\toccupation:{r.occupation}\tzip:{str(r.zip)[:2]}"
        for r in frame.itertuples(index=False)
    ]
    Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def convert_movielens_movies(movies_dat: str | Path, out_path: str | Path, release_path: str | Path) -> None:
    """movies.dat (MovieID::Title (Year)::Genre|Genre) → attribute TSV plus release years."""
    frame = pd.read_csv(movies_dat, sep="::", engine="python", header=None, dtype=str,
                        names=["item", "title", "genres"], encoding="latin-1")
    lines, releases = [], []
    for r in frame.itertuples(index=False):
        match = _YEAR.search(str(r.title))
        year = match.group(1) if match else ""
        genres = ",".join(g for g in str(r.genres).split("|") if g)
        decade = f"\tdecade:{year[:3]}0" if year else ""
        lines.append(f"{r.item}\tgenre:{genres}{decade}")
        if year:
            releases.append(f"{r.item}\t{year}")
    Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    Path(release_path).write_text("\n".join(releases) + "\n", encoding="utf-8")


def load_release_years(path: str | Path) -> dict[str, float]:
    frame = pd.read_csv(path, sep="\t", header=None, names=["item", "year"], dtype={"item": str})
    return dict(zip(frame["item"], frame["year"].astype(float)))
