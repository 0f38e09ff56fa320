"""Review datasets: ingestion, per-node documents, splits and negative sampling."""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_KEYS = {
    "user": "reviewerID",
    "item": "asin",
    "rating": "overall",
    "text": "reviewText",
}
DEFAULT_DOC_LEN = 256
POSITIVE_MIN_RATING = 4
NEGATIVE_MAX_RATING = 3

_TOKEN_RE = re.compile(r"[a-z0-9]+")


class DatasetError(ValueError):
    pass


class EmptyDatasetError(DatasetError):
    pass


class SamplingExhaustedError(DatasetError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase, split on runs of non-alphanumeric characters."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Interaction:
    user: int
    item: int
    rating: int
    review: str
    domain: str = "target"

    def __post_init__(self):
        if self.rating not in (1, 2, 3, 4, 5):
            raise DatasetError(f"rating must be an integer in 1..5, got {self.rating!r}")


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.8
    valid: float = 0.1
    test: float = 0.1
    seed: int = 0

    def __post_init__(self):
        fracs = (self.train, self.valid, self.test)
        if any(f < 0 for f in fracs) or abs(sum(fracs) - 1.0) > 1e-9:
            raise DatasetError(f"split fractions must be non-negative and sum to 1, got {fracs}")


@dataclass
class DomainDataset:
    """One domain's interactions plus the id index and training degree table.

    ``user_ids``/``item_ids`` map dense integer ids back to raw identifiers and are
    shared between the partitions produced by :func:`split_dataset`.  Degrees are
    counts over ``degree_source`` (the training partition once split).
    """

    domain: str
    interactions: list[Interaction]
    user_ids: list[str]
    item_ids: list[str]
    user_degree: np.ndarray = field(default=None)
    item_degree: np.ndarray = field(default=None)
    skipped: int = 0

    def __post_init__(self):
        if self.user_degree is None or self.item_degree is None:
            self.user_degree, self.item_degree = degree_tables(
                self.interactions, self.n_users, self.n_items
            )

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    def __len__(self) -> int:
        return len(self.interactions)

    def with_interactions(self, interactions: list[Interaction], degrees_from=None) -> "DomainDataset":
        src = degrees_from if degrees_from is not None else interactions
        ud, idg = degree_tables(src, self.n_users, self.n_items)
        return DomainDataset(self.domain, interactions, self.user_ids, self.item_ids, ud, idg)


def degree_tables(interactions: Iterable[Interaction], n_users: int, n_items: int):
    ud = np.zeros(n_users, dtype=np.int64)
    idg = np.zeros(n_items, dtype=np.int64)
    for it in interactions:
        ud[it.user] += 1
        idg[it.item] += 1
    return ud, idg


class _Interner:
    def __init__(self, initial: Sequence[str] = ()):
        self.ids: list[str] = list(initial)
        self.index = {k: i for i, k in enumerate(self.ids)}

    def __call__(self, key: str) -> int:
        idx = self.index.get(key)
        if idx is None:
            idx = self.index[key] = len(self.ids)
            self.ids.append(key)
        return idx


def _parse_rating(value) -> int:
    r = float(value)
    if r != int(r) or not 1 <= r <= 5:
        raise DatasetError(f"rating {value!r} is not an integer in 1..5")
    return int(r)


def read_records(path, domain: str, keys: dict | None = None, interner=None):
    """Yield (raw_user, raw_item, rating, text) per valid line; returns the skip count."""
    keys = {**DEFAULT_KEYS, **(keys or {})}
    records, skipped = [], 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                user = str(obj[keys["user"]])
                item = str(obj[keys["item"]])
                rating = _parse_rating(obj[keys["rating"]])
                text = obj.get(keys["text"], "")
                if not isinstance(text, str):
                    raise DatasetError("review text is not a string")
            except (ValueError, KeyError, TypeError, AttributeError) as exc:
                skipped += 1
                log.debug("%s:%d skipped (%s)", path, lineno, exc)
                continue
            records.append((user, item, rating, text))
    return records, skipped


def load_reviews(path, domain: str, keys: dict | None = None) -> DomainDataset:
    """Parse line-delimited JSON reviews into a dataset.

    Malformed lines are counted in ``dataset.skipped`` and dropped; identifiers are
    interned to dense ids in first-seen order.
    """
    records, skipped = read_records(path, domain, keys)
    if not records:
        raise EmptyDatasetError(f"{path}: no valid review records")
    ds = from_records(records, domain)
    ds.skipped = skipped
    if skipped:
        log.warning("%s: skipped %d malformed lines", path, skipped)
    return ds


def from_records(records, domain: str, user_ids=(), item_ids=()) -> DomainDataset:
    users, items = _Interner(user_ids), _Interner(item_ids)
    inter = [Interaction(users(u), items(i), r, t, domain) for u, i, r, t in records]
    return DomainDataset(domain, inter, users.ids, items.ids)


def split_dataset(dataset: DomainDataset, spec: SplitSpec = SplitSpec()):
    """Seeded uniform shuffle, then an 80/10/10-style partition (no temporal order).

    All three parts share the id index and carry the degree table of the train part.
    """
    n = len(dataset)
    order = np.random.default_rng(spec.seed).permutation(n)
    n_train = int(round(spec.train * n))
    n_valid = int(round(spec.valid * n))
    parts = np.split(order, [n_train, n_train + n_valid])
    chunks = [[dataset.interactions[k] for k in sorted(p)] for p in parts]
    train = dataset.with_interactions(chunks[0])
    return (
        train,
        dataset.with_interactions(chunks[1], degrees_from=chunks[0]),
        dataset.with_interactions(chunks[2], degrees_from=chunks[0]),
    )


class DocumentStore:
    """Per-node review documents built from one (training) partition.

    Reviews of a node are concatenated longest first, then truncated to
    ``doc_len`` tokens; excluding a pair drops that single review first.
    """

    def __init__(self, dataset: DomainDataset, doc_len: int = DEFAULT_DOC_LEN):
        self.doc_len = doc_len
        self.n_users, self.n_items = dataset.n_users, dataset.n_items
        by_user: dict[int, list] = {}
        by_item: dict[int, list] = {}
        for k, it in enumerate(dataset.interactions):
            toks = tokenize(it.review)
            by_user.setdefault(it.user, []).append((it.item, k, toks))
            by_item.setdefault(it.item, []).append((it.user, k, toks))
        self._user = {u: self._order(v) for u, v in by_user.items()}
        self._item = {i: self._order(v) for i, v in by_item.items()}

    @staticmethod
    def _order(reviews):
        # longest first; stable on original order for equal lengths
        return sorted(reviews, key=lambda r: (-len(r[2]), r[1]))

    def _doc(self, reviews, exclude_other) -> list[str]:
        out: list[str] = []
        for other, _, toks in reviews or ():
            if other == exclude_other:
                continue
            out.extend(toks)
            if len(out) >= self.doc_len:
                break
        return out[: self.doc_len]

    def user_doc(self, u: int, exclude_item: int | None = None) -> list[str]:
        return self._doc(self._user.get(u), exclude_item)

    def item_doc(self, i: int, exclude_user: int | None = None) -> list[str]:
        return self._doc(self._item.get(i), exclude_user)


def aggregate_documents(dataset: DomainDataset, u: int, i: int, exclude: Interaction | None = None,
                        doc_len: int = DEFAULT_DOC_LEN):
    """Return (R_u, R_i) token lists, leaving out the review of ``exclude`` if given."""
    if not (0 <= u < dataset.n_users and 0 <= i < dataset.n_items):
        raise DatasetError(f"unknown user {u} or item {i}")
    store = DocumentStore(dataset, doc_len)
    ex_item = exclude.item if exclude is not None and exclude.user == u else None
    ex_user = exclude.user if exclude is not None and exclude.item == i else None
    return store.user_doc(u, ex_item), store.item_doc(i, ex_user)


class NegativeSampler:
    """Draws j with y_{u,j} <= 3 when such items exist, else an untouched item.

    Built once per training partition; each draw is O(1) expected time.
    """

    def __init__(self, dataset: DomainDataset, max_rating: int = NEGATIVE_MAX_RATING):
        self.n_items = dataset.n_items
        low: dict[int, list[int]] = {}
        seen: dict[int, set[int]] = {}
        for it in dataset.interactions:
            seen.setdefault(it.user, set()).add(it.item)
            if it.rating <= max_rating:
                low.setdefault(it.user, []).append(it.item)
        self._low = {u: np.array(sorted(set(v))) for u, v in low.items()}
        self._seen = seen

    def sample(self, u: int, rng: np.random.Generator, positive: int | None = None) -> int:
        low = self._low.get(u)
        if low is not None:
            if positive is not None:
                low = low[low != positive]
            if len(low):
                return int(low[rng.integers(len(low))])
        seen = self._seen.get(u, set())
        blocked = len(seen | ({positive} if positive is not None else set()))
        if blocked >= self.n_items:
            raise SamplingExhaustedError(f"user {u} has no candidate negative item")
        while True:
            j = int(rng.integers(self.n_items))
            if j not in seen and j != positive:
                return j


def sample_negative(dataset: DomainDataset, u: int, rng: np.random.Generator,
                    positive: int | None = None) -> int:
    return NegativeSampler(dataset).sample(u, rng, positive)


def positives(dataset: DomainDataset, min_rating: int = POSITIVE_MIN_RATING) -> list[Interaction]:
    return [it for it in dataset.interactions if it.rating >= min_rating]


def write_records(path, interactions: Sequence[Interaction], dataset: DomainDataset,
                  keys: dict | None = None) -> None:
    keys = {**DEFAULT_KEYS, **(keys or {})}
    with open(path, "w", encoding="utf-8") as fh:
        for it in interactions:
            fh.write(json.dumps({
                keys["user"]: dataset.user_ids[it.user],
                keys["item"]: dataset.item_ids[it.item],
                keys["rating"]: float(it.rating),
                keys["text"]: it.review,
            }, sort_keys=True) + "\n")


def write_degrees(path, datasets: dict[str, DomainDataset]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("domain,kind,id,degree\n")
        for name, ds in datasets.items():
            for u, d in enumerate(ds.user_degree):
                fh.write(f"{name},user,{ds.user_ids[u]},{int(d)}\n")
            for i, d in enumerate(ds.item_degree):
                fh.write(f"{name},item,{ds.item_ids[i]},{int(d)}\n")


def vocabulary(datasets: Iterable[DomainDataset]) -> list[str]:
    """Tokens of all reviews, most frequent first, ties alphabetical."""
    counts: Counter = Counter()
    for ds in datasets:
        for it in ds.interactions:
            counts.update(tokenize(it.review))
    return sorted(counts, key=lambda t: (-counts[t], t))


def load_partitions(paths: Sequence, domain: str, keys: dict | None = None):
    """Load several partition files into datasets sharing one id index.

    The first path is the training partition; every returned dataset carries its
    degree table.
    """
    parts = []
    user_ids: list[str] = []
    item_ids: list[str] = []
    for p in paths:
        records, _ = read_records(p, domain, keys)
        parts.append(records)
    users, items = _Interner(user_ids), _Interner(item_ids)
    interactions = [[Interaction(users(u), items(i), r, t, domain) for u, i, r, t in recs]
                    for recs in parts]
    if not interactions[0]:
        raise EmptyDatasetError(f"{paths[0]}: no valid review records")
    train = DomainDataset(domain, interactions[0], users.ids, items.ids)
    out = [train]
    for inter in interactions[1:]:
        out.append(train.with_interactions(inter, degrees_from=interactions[0]))
    return out


def file_sha256(path) -> str:
    import hashlib

    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
