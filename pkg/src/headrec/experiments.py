"""Desk-scale experiments on the synthetic benchmark.

Each function trains small models and returns plain numbers so the acceptance
suite and the CLI can share them.  Sizes are chosen so a single run takes tens
of seconds on one CPU core.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .data import SplitSpec, split_dataset, vocabulary
from .embedding import EmbeddingTable
from .evaluation import evaluate_ranking, fidelity_of
from .objectives import LossWeights
from .synthetic import SyntheticSpec, generate_synthetic
from .training import CrossDomainData, FitResult, TrainConfig, fit, grid_search

DESK_EMBED_DIM = 16
LAMBDA_GRID = (0.01, 0.05, 0.1, 0.5, 1.0)
FIDELITY_LAMBDA1 = 1.0
FIDELITY_ITERS = 1200
GRID_ITERS = 500


def desk_spec(seed: int = 0, **overrides) -> SyntheticSpec:
    return SyntheticSpec(seed=seed, **overrides)


def dissimilar_spec(seed: int = 0, **overrides) -> SyntheticSpec:
    """Domains that share one preference axis and no vocabulary beyond it."""
    base = dict(shared_dims=1, specific_dims=5, shared_filler=False)
    base.update(overrides)
    return SyntheticSpec(seed=seed, **base)


def desk_config(seed: int = 0, **overrides) -> TrainConfig:
    base = dict(batch_size=32, max_iters=600, doc_len=40, feature_dim=24, lr=3e-3,
                embed_dim=DESK_EMBED_DIM, seed=seed)
    base.update(overrides)
    return TrainConfig(**base)


def build_data(spec: SyntheticSpec, doc_len: int = 40, embed_dim: int = DESK_EMBED_DIM
               ) -> CrossDomainData:
    """Generate, split the target 80/10/10 and attach a seeded synthetic embedding."""
    src, tgt = generate_synthetic(spec)
    train, valid, test = split_dataset(tgt, SplitSpec(seed=spec.seed))
    table = EmbeddingTable.synthetic(vocabulary([src, train]), dim=embed_dim, seed=spec.seed)
    return CrossDomainData(src, train, valid, test, table, doc_len=doc_len)


@dataclass
class RunSummary:
    valid_ndcg: float
    test_ndcg: float
    test_hr: float
    disc_bce: float
    rho: float
    iterations: int
    seconds: float
    result: FitResult = field(repr=False, default=None)


def run(data: CrossDomainData, cfg: TrainConfig, weights: LossWeights | None = None
        ) -> RunSummary:
    weights = weights or LossWeights()
    t0 = time.perf_counter()
    res = fit(data, cfg, weights)
    test = evaluate_ranking(res.params, data, "test", cfg.candidates, seed=cfg.seed)
    rho = fidelity_of(res.params, data).rho
    return RunSummary(res.best_score, test.ndcg, test.hr, res.final_disc_bce(), rho,
                      res.iterations, time.perf_counter() - t0, res)


def alignment_bce(seed: int, **cfg_overrides) -> tuple[float, float]:
    """Final discriminator BCE with and without scale alignment on the dissimilar pair."""
    data = build_data(dissimilar_spec(seed))
    out = []
    for aligned in (True, False):
        cfg = desk_config(seed, aligned=aligned, patience=10 ** 9, **cfg_overrides)
        res = fit(data, cfg, LossWeights())
        out.append(res.final_disc_bce())
    return out[0], out[1]


def degree_fidelity(seed: int, lambda1: float = FIDELITY_LAMBDA1, max_iters: int = FIDELITY_ITERS,
                    **cfg_overrides) -> tuple[float, float]:
    """Hierarchy fidelity with degree-normalised vs plain root alignment.

    The embedding term needs a large weight and a long run before the radial
    ordering separates from what max-pooling alone produces.
    """
    data = build_data(desk_spec(seed))
    out = []
    for norm in (True, False):
        cfg = desk_config(seed, degree_norm=norm, patience=10 ** 9, max_iters=max_iters,
                          **cfg_overrides)
        res = fit(data, cfg, LossWeights(lambda1=lambda1))
        out.append(fidelity_of(res.final_params, data).rho)
    return out[0], out[1]


def lambda_grid(seed: int, grid=LAMBDA_GRID, max_iters: int = GRID_ITERS, **cfg_overrides):
    data = build_data(desk_spec(seed))
    return grid_search(data, grid, grid, desk_config(seed, max_iters=max_iters, **cfg_overrides))


def ablation(seed: int, **cfg_overrides) -> dict:
    """Test NDCG@10 of the full model and the two single ablations."""
    data = build_data(desk_spec(seed))
    variants = {"full": {}, "no_align": {"aligned": False}, "no_degree": {"degree_norm": False}}
    return {name: run(data, desk_config(seed, **{**cfg_overrides, **kw})).test_ndcg
            for name, kw in variants.items()}


def transfer_gain(seed: int, shared_dims: int = 0, noise: float = 0.0, **cfg_overrides
                  ) -> tuple[float, float]:
    """(with source, target only) test NDCG@10 on a benchmark with ``shared_dims``."""
    spec = desk_spec(seed, shared_dims=shared_dims, specific_dims=6 - shared_dims,
                     noise=noise, shared_filler=False)
    data = build_data(spec)
    with_src = run(data, desk_config(seed, **cfg_overrides)).test_ndcg
    tgt_only = run(data, desk_config(seed, use_source=False, **cfg_overrides)).test_ndcg
    return with_src, tgt_only


def no_significant_gain(with_src, tgt_only, alpha: float = 0.05) -> tuple[bool, float]:
    """Paired one-sided t-test for with_src > tgt_only; True when not significant."""
    diff = np.asarray(with_src) - np.asarray(tgt_only)
    if np.allclose(diff, diff[0]):
        return bool(diff[0] <= 0), 0.0 if diff[0] > 0 else 1.0
    p = stats.ttest_rel(with_src, tgt_only, alternative="greater").pvalue
    return bool(p >= alpha), float(p)


def step_time(n_tgt_users: int, n_tgt_items: int, steps: int = 60, seed: int = 0,
              warmup: int = 10) -> float:
    """Median seconds per training step for a target domain of the given size."""
    spec = desk_spec(seed, n_tgt_users=n_tgt_users, n_tgt_items=n_tgt_items)
    data = build_data(spec)
    cfg = desk_config(seed, max_iters=steps + warmup, eval_every=10 ** 9, patience=10 ** 9)
    res = fit(data, cfg, LossWeights(), validate=False)
    return float(np.median(res.step_seconds[warmup:]))
