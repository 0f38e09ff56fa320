"""Seeded two-domain review benchmark with power-law item popularity.

Users and items get latent preference vectors.  The first ``shared_dims``
coordinates are written about with the same words in both domains; the remaining
coordinates use words private to each domain.  Interactions are drawn with
probability increasing in user-item affinity, ratings threshold the noisy
affinity, and every review mixes item-topic, user-topic and filler words, so the
text carries the preference signal.

Popular items are generic: an item's latent vector and its share of topic words
shrink as ``(min_degree / degree) ** niche``, so heavily reviewed items attract
broad audiences and mostly generic vocabulary while rare items stay niche.
``niche=0`` removes the link between popularity and content.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from .data import DomainDataset, from_records

RATING_QUANTILES = (0.05, 0.09, 0.15, 0.35)


@dataclass(frozen=True)
class SyntheticSpec:
    n_src_users: int = 600
    n_src_items: int = 300
    n_tgt_users: int = 300
    n_tgt_items: int = 150
    exponent: float = 2.0
    min_degree: int = 3
    max_degree: int = 60
    shared_dims: int = 4
    specific_dims: int = 2
    noise: float = 0.3
    seed: int = 0
    words_per_pole: int = 6
    filler_words: int = 40
    review_len: int = 10
    affinity: float = 2.0
    item_word_prob: float = 0.45
    user_word_prob: float = 0.3
    shared_filler: bool = True
    niche: float = 0.5


def powerlaw_pmf(exponent: float, lo: int, hi: int) -> tuple[np.ndarray, np.ndarray]:
    support = np.arange(lo, hi + 1)
    w = support.astype(np.float64) ** -exponent
    return support, w / w.sum()


def sample_powerlaw(rng, n: int, exponent: float, lo: int, hi: int) -> np.ndarray:
    support, pmf = powerlaw_pmf(exponent, lo, hi)
    return rng.choice(support, size=n, p=pmf)


def powerlaw_ks(degrees, exponent: float, lo: int, hi: int) -> tuple[float, float]:
    """KS distance between observed degrees and the truncated discrete power law,
    with the 1% critical value 1.63/sqrt(n)."""
    d = np.sort(np.asarray(degrees))
    support, pmf = powerlaw_pmf(exponent, lo, hi)
    cdf = np.cumsum(pmf)
    emp = np.searchsorted(d, support, side="right") / len(d)
    return float(np.max(np.abs(emp - cdf))), 1.63 / np.sqrt(len(d))


def _words(prefix: str, dims: range, per_pole: int):
    return {k: ([f"{prefix}{k}p{m}" for m in range(per_pole)],
                [f"{prefix}{k}n{m}" for m in range(per_pole)]) for k in dims}


def _topic_words(rng, latent, lexicon, count):
    w = np.abs(latent) ** 2
    w = w / w.sum()
    dims = rng.choice(len(latent), size=count, p=w)
    out = []
    for k in dims:
        pos, neg = lexicon[k]
        pool = pos if latent[k] >= 0 else neg
        out.append(pool[rng.integers(len(pool))])
    return out


def generate_domain(spec: SyntheticSpec, name: str, n_users: int, n_items: int,
                    rng: np.random.Generator) -> tuple[DomainDataset, np.ndarray]:
    K = spec.shared_dims + spec.specific_dims
    lexicon = _words("s", range(spec.shared_dims), spec.words_per_pole)
    lexicon.update(_words(f"{name}", range(spec.shared_dims, K), spec.words_per_pole))
    filler_prefix = "f" if spec.shared_filler else f"{name}f"
    filler = [f"{filler_prefix}{m}" for m in range(spec.filler_words)]

    users = rng.normal(size=(n_users, K))
    items = rng.normal(size=(n_items, K))
    activity = rng.lognormal(0.0, 0.5, size=n_users)
    degrees = sample_powerlaw(rng, n_items, spec.exponent, spec.min_degree,
                              min(spec.max_degree, n_users))
    specificity = (spec.min_degree / degrees) ** spec.niche
    items *= specificity[:, None]
    pairs = []
    for i in range(n_items):
        logits = spec.affinity * users @ items[i] / np.sqrt(K) + np.log(activity)
        p = np.exp(logits - logits.max())
        p /= p.sum()
        chosen = rng.choice(n_users, size=int(degrees[i]), replace=False, p=p)
        pairs.extend((int(u), i) for u in chosen)
    pairs.sort()
    aff = np.array([users[u] @ items[i] / np.sqrt(K) for u, i in pairs])
    aff = aff + spec.noise * rng.normal(size=len(aff))
    cuts = np.quantile(aff, RATING_QUANTILES)
    ratings = 1 + np.searchsorted(cuts, aff, side="right")

    records = []
    for (u, i), r in zip(pairs, ratings):
        length = max(3, int(rng.integers(spec.review_len // 2, spec.review_len * 3 // 2 + 1)))
        kinds = rng.random(length)
        p_item = spec.item_word_prob * specificity[i]
        n_item = int((kinds < p_item).sum())
        n_user = int(((kinds >= spec.item_word_prob)
                      & (kinds < spec.item_word_prob + spec.user_word_prob)).sum())
        toks = (_topic_words(rng, items[i], lexicon, n_item)
                + _topic_words(rng, users[u], lexicon, n_user)
                + [filler[k] for k in rng.integers(len(filler), size=length - n_item - n_user)])
        rng.shuffle(toks)
        records.append((f"{name}_u{u}", f"{name}_i{i}", int(r), " ".join(toks)))
    ds = from_records(records, "source" if name == "src" else "target")
    return ds, degrees


def generate_synthetic(spec: SyntheticSpec) -> tuple[DomainDataset, DomainDataset]:
    """(source, target) datasets; identical specs give identical datasets."""
    rng = np.random.default_rng(spec.seed)
    src, _ = generate_domain(spec, "src", spec.n_src_users, spec.n_src_items, rng)
    tgt, _ = generate_domain(spec, "tgt", spec.n_tgt_users, spec.n_tgt_items, rng)
    return src, tgt
