"""Ranking metrics, hierarchy diagnostics and the theorem-check harness."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import autodiff as ad
from . import geometry
from . import model as M
from . import objectives as O

DEFAULT_K = 10


# -- metrics -------------------------------------------------------------------------

@dataclass
class RankedList:
    """Candidates ordered by ascending score; ties broken by item id ascending."""

    items: np.ndarray
    positive: int

    @classmethod
    def from_scores(cls, items, scores, positive: int) -> "RankedList":
        items = np.asarray(items)
        scores = np.asarray(scores, dtype=np.float64)
        if items.size == 0:
            raise ValueError("empty candidate list")
        order = np.lexsort((items, scores))
        return cls(items[order], int(positive))

    @property
    def rank(self) -> int:
        """1-based position of the held-out positive."""
        if self.items.size == 0:
            raise ValueError("empty candidate list")
        hit = np.flatnonzero(self.items == self.positive)
        if hit.size != 1:
            raise ValueError("the positive must appear exactly once")
        return int(hit[0]) + 1


def _rank_of(x) -> int:
    if isinstance(x, RankedList):
        return x.rank
    r = int(x)
    if r < 1:
        raise ValueError("ranks are 1-based")
    return r


def ndcg_at_k(ranked, k: int = DEFAULT_K) -> float:
    """Single-relevant NDCG: 1/log2(rank+1) inside the cutoff, else 0."""
    r = _rank_of(ranked)
    return 1.0 / math.log2(r + 1) if r <= k else 0.0


def hr_at_k(ranked, k: int = DEFAULT_K) -> float:
    return 1.0 if _rank_of(ranked) <= k else 0.0


def mean_metric(lists, metric, k: int = DEFAULT_K) -> float:
    lists = list(lists)
    if not lists:
        raise ValueError("no evaluation lists")
    return float(np.mean([metric(x, k) for x in lists]))


def rank_positive(scores: np.ndarray, items: np.ndarray, pos_index: int = 0) -> int:
    """Rank of ``items[pos_index]`` under ascending score with id tie-breaking."""
    s = scores[pos_index]
    i = items[pos_index]
    better = (scores < s) | ((scores == s) & (items < i))
    return int(better.sum()) + 1


# -- ranking protocol ----------------------------------------------------------------

@dataclass
class CandidateSet:
    users: np.ndarray        # (L,)
    items: np.ndarray        # (L, 1 + n) with the held-out positive at column 0
    cold: int = 0            # lists whose user or positive item has no training data


def build_candidates(data, ds, n_candidates: int, seed: int) -> CandidateSet:
    """Held-out positive vs ``n_candidates`` items the user never interacted with."""
    rng = np.random.default_rng(seed + 7919)
    n_items = data.target.n_items
    seen: dict[int, set] = {}
    for part in (data.target, data.valid, data.test):
        for it in part.interactions:
            seen.setdefault(it.user, set()).add(it.item)
    users, rows, cold = [], [], 0
    width = None
    for it in ds.interactions:
        if it.rating < data.min_rating:
            continue
        pool = np.setdiff1d(np.arange(n_items), np.fromiter(seen[it.user], dtype=np.int64))
        take = min(n_candidates, len(pool))
        width = take if width is None else min(width, take)
        negs = rng.choice(pool, size=take, replace=False)
        users.append(it.user)
        rows.append(np.concatenate([[it.item], negs]))
        if data.target.user_degree[it.user] == 0 or data.target.item_degree[it.item] == 0:
            cold += 1
    if not rows:
        raise ValueError(f"{ds.domain}: no held-out positives to evaluate")
    items = np.stack([r[: width + 1] for r in rows])
    return CandidateSet(np.array(users), items, cold)


def _const_params(tape: ad.Tape, params: dict) -> dict:
    return {k: tape.const(v) for k, v in params.items()}


def node_features(params: dict, data, kind: str, ids, domain: str = "tgt",
                  chunk: int = 512) -> tuple[np.ndarray, np.ndarray]:
    """(specific, shared) extractor outputs for whole training documents."""
    side = data.tgt if domain == "tgt" else data.src
    getter = side.docs.user if kind == "user" else side.docs.item
    ids = np.asarray(ids, dtype=np.int64)
    spec, shared = [], []
    for start in range(0, len(ids), chunk):
        part = ids[start:start + chunk]
        docs = data.table.tangent[np.stack([getter(int(n)) for n in part])]
        tape = ad.Tape()
        P = _const_params(tape, params)
        spec.append(M.extract_tangent(tape, docs, P, domain).value)
        shared.append(M.extract_tangent(tape, docs, P, "shared").value)
    df = params["disc.b1"].shape[0]
    if not spec:
        return np.zeros((0, df)), np.zeros((0, df))
    return np.concatenate(spec), np.concatenate(shared)


def score_pairs(params: dict, su, shu, pu, si, shi, pi) -> np.ndarray:
    tape = ad.Tape()
    P = _const_params(tape, params)
    c = tape.const
    return M.score(c(su), c(shu), c(si), c(shi), c(pu), c(pi), P).value[:, 0]


@dataclass
class RankingResult:
    ndcg: float
    hr: float
    n_lists: int
    cold: int
    ranks: np.ndarray = field(repr=False, default=None)


def evaluate_ranking(params: dict, data, split: str = "test", n_candidates: int = 99,
                     seed: int = 0, k: int = DEFAULT_K, scorer=None) -> RankingResult:
    """NDCG@k / HR@k on the target ``split`` under the sampled-candidate protocol.

    ``scorer(users, items) -> scores`` overrides the model (used for oracle fixtures).
    """
    cand = data.candidates(split, n_candidates, seed)
    L, C = cand.items.shape
    flat_users = np.repeat(cand.users, C)
    flat_items = cand.items.reshape(-1)
    if scorer is None:
        uu = np.unique(cand.users)
        ii = np.unique(cand.items)
        us, uh = node_features(params, data, "user", uu)
        is_, ih = node_features(params, data, "item", ii)
        upos = np.searchsorted(uu, flat_users)
        ipos = np.searchsorted(ii, flat_items)
        scores = score_pairs(
            params, us[upos], uh[upos], params["latent.tgt_user"][flat_users],
            is_[ipos], ih[ipos], params["latent.tgt_item"][flat_items])
    else:
        scores = np.asarray(scorer(flat_users, flat_items), dtype=np.float64)
    scores = scores.reshape(L, C)
    ranks = np.array([rank_positive(scores[r], cand.items[r]) for r in range(L)])
    return RankingResult(
        ndcg=float(np.mean([ndcg_at_k(r, k) for r in ranks])),
        hr=float(np.mean([hr_at_k(r, k) for r in ranks])),
        n_lists=L, cold=cand.cold, ranks=ranks,
    )


# -- hierarchy diagnostics -------------------------------------------------------------

@dataclass
class Fidelity:
    rho: float
    flagged: bool
    n_items: int


def ball_radius(features) -> np.ndarray:
    """Poincare radius of exp_o(v) for each tangent row, strictly below 1."""
    n = np.linalg.norm(np.asarray(features, dtype=np.float64), axis=-1)
    r = np.linalg.norm(geometry.lorentz_to_poincare(geometry.lift(features)), axis=-1)
    # saturates to 1.0 in floating point for large norms; keep the ball bound
    return np.where(r >= 1.0, np.nextafter(1.0, 0.0), np.where(n == 0, 0.0, r))


def hierarchy_fidelity(features, degrees) -> Fidelity:
    """Spearman rank correlation between degree and negative Poincare radius.

    Ranks use the tangent norm, a strictly increasing function of the radius that
    does not saturate in floating point.
    """
    f = np.asarray(features, dtype=np.float64)
    d = np.asarray(degrees, dtype=np.float64)
    if f.shape[0] != d.shape[0]:
        raise ValueError("features and degrees must align")
    if f.shape[0] < 2:
        raise ValueError("need at least two items")
    norms = np.linalg.norm(f, axis=-1)
    if np.all(norms == norms[0]) or np.all(d == d[0]):
        return Fidelity(0.0, True, f.shape[0])
    rho = stats.spearmanr(d, -norms).statistic
    if not np.isfinite(rho):
        return Fidelity(0.0, True, f.shape[0])
    return Fidelity(float(rho), False, f.shape[0])


def item_hierarchy_features(params: dict, data) -> tuple[np.ndarray, np.ndarray]:
    """Averaged (S_i + S_i-hat)/2 for every target item with training reviews."""
    items = np.flatnonzero(data.target.item_degree > 0)
    spec, shared = node_features(params, data, "item", items)
    return items, 0.5 * (spec + shared)


def fidelity_of(params: dict, data) -> Fidelity:
    items, feats = item_hierarchy_features(params, data)
    return hierarchy_fidelity(feats, data.target.item_degree[items])


def viz_rows(params: dict, data, sample: int = 1000, seed: int = 0):
    """(item id, degree, radius, x, y) for up to ``sample`` target items.

    (x, y) are Poincare coordinates of the features projected onto their top two
    principal directions in the tangent space.
    """
    items, feats = item_hierarchy_features(params, data)
    rng = np.random.default_rng(seed)
    if len(items) > sample:
        pick = np.sort(rng.choice(len(items), size=sample, replace=False))
        items, feats = items[pick], feats[pick]
    centred = feats - feats.mean(axis=0)
    if len(items) >= 2:
        _, _, vt = np.linalg.svd(centred, full_matrices=False)
        dirs = vt[:2]
    else:
        dirs = np.eye(2, feats.shape[1])
    if dirs.shape[0] < 2:
        dirs = np.vstack([dirs, np.zeros((2 - dirs.shape[0], feats.shape[1]))])
    xy = geometry.lorentz_to_poincare(geometry.lift(feats @ dirs.T))
    radius = ball_radius(feats)
    return [(data.target.item_ids[i], int(data.target.item_degree[i]), float(r), float(p[0]),
             float(p[1])) for i, r, p in zip(items, radius, xy)]


# -- theorem checks --------------------------------------------------------------------

@dataclass
class Check:
    name: str
    theorem: str
    passed: bool
    detail: str


@dataclass
class TheoremReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def lines(self) -> list[str]:
        return [f"{c.name}={'pass' if c.passed else 'FAIL'} [{c.theorem}] {c.detail}"
                for c in self.checks]


def _fixture_params(seed: int, embed_dim: int = 8, feature_dim: int = 12):
    rng = np.random.default_rng(seed)
    cfg = M.ModelConfig(embed_dim=embed_dim, doc_len=12, feature_dim=feature_dim,
                        n_src_users=4, n_src_items=4, n_tgt_users=4, n_tgt_items=4)
    return cfg, M.init_params(cfg, rng)


def check_degree_ratio(params: dict | None = None, seed: int = 0, max_degree: int = 30,
                       tol: float = 1e-6) -> Check:
    """Per-node gradient-norm ratio of weighted vs unweighted deviation equals
    (max(d) - d)/max(d), both w.r.t. the node's feature and the extractor weights."""
    rng = np.random.default_rng(seed)
    if params is None:
        cfg, params = _fixture_params(seed)
        dim, doc_len = cfg.embed_dim, cfg.doc_len
    else:
        dim = params["src.conv3.weight"].shape[1]
        doc_len = 12
    degrees = np.array([0, max_degree // 3, 2 * max_degree // 3, max_degree])
    expect = O.degree_weights(degrees, max_degree)
    space = rng.normal(0.0, 0.5, size=(len(degrees), doc_len, dim))
    docs = geometry.lift(space)
    worst, parts = 0.0, []
    for n, (d, w) in enumerate(zip(degrees, expect)):
        norms = []
        for weights in (np.where(np.arange(len(degrees)) == n, w, 0.0),
                        (np.arange(len(degrees)) == n).astype(float)):
            tape = ad.Tape()
            P = M.bind(tape, params)
            S = M.extract(tape, docs, P, "src")
            H = M.extract(tape, docs, P, "shared")
            feat = tape.leaf(S.value)  # node features as their own leaves
            grp = O.NodeGroup(feat, H, weights)
            grp_p = O.NodeGroup(S, H, weights)
            g_feat = tape.backward(O.weighted_deviation(grp))[feat][n]
            gp = tape.backward(O.weighted_deviation(grp_p))
            g_par = np.concatenate([gp[P[k]].ravel() for k in sorted(P) if k.startswith("src.")])
            norms.append((np.linalg.norm(g_feat), np.linalg.norm(g_par)))
        (fw, pw), (f1, p1) = norms
        ratio_f = fw / f1 if f1 > 0 else 0.0
        ratio_p = pw / p1 if p1 > 0 else 0.0
        err = max(abs(ratio_f - w), abs(ratio_p - w))
        worst = max(worst, err)
        parts.append(f"d={d}:{ratio_f:.6f}/{ratio_p:.6f}(expect {w:.6f})")
    return Check("degree_gradient_ratio", "degree weighting", worst <= tol,
                 f"max_err={worst:.2e} " + " ".join(parts))


def antipodal_step(step: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """One ascent step on ||d_S - d_T||^2 from d_S=(1,0), d_T=(-1,0)."""
    tape = ad.Tape()
    dS = tape.leaf([1.0, 0.0])
    dT = tape.leaf([-1.0, 0.0])
    sep = ad.sum(ad.square(dS - dT))
    g = tape.backward(sep)
    return dS.value + step * g[dS], dT.value + step * g[dT]


def check_scale_preservation(seed: int = 0, steps: int = 200, tol: float = 1e-9) -> Check:
    new_s, _ = antipodal_step(0.1)
    grows = np.linalg.norm(new_s) > 1.0 and abs(new_s[0] - 1.4) < 1e-12 and new_s[1] == 0.0
    # repeated raw ascent grows the raw norm while the aligned inputs stay unit length
    rng = np.random.default_rng(seed)
    dS = rng.normal(size=6)
    dT = -dS + rng.normal(scale=0.1, size=6)
    cfg, params = _fixture_params(seed, feature_dim=3)
    raw_norms, worst = [], 0.0
    for _ in range(steps):
        tape = ad.Tape()
        a, b = tape.leaf(dS[None, :]), tape.leaf(dT[None, :])
        ua, _ = M.scale_align(a)
        ub, _ = M.scale_align(b)
        worst = max(worst, abs(np.linalg.norm(ua.value) - 1.0), abs(np.linalg.norm(ub.value) - 1.0))
        g = tape.backward(ad.sum(ad.square(a - b)))
        dS = dS + 0.1 * g[a][0]
        dT = dT + 0.1 * g[b][0]
        raw_norms.append(np.linalg.norm(dS))
    monotone = bool(np.all(np.diff(raw_norms) > 0))
    ok = bool(grows and monotone and worst <= tol)
    return Check("scale_preservation", "scale growth", ok,
                 f"antipodal |d'_S|={np.linalg.norm(new_s):.6f} raw_growth={raw_norms[-1]:.3e} "
                 f"aligned_unit_err={worst:.2e}")


def _disc_run(params, feats, aligned, reverse=True):
    tape = ad.Tape()
    P = M.bind(tape, params)
    leaves = [tape.leaf(f) for f in feats]
    lg = M.discriminate_features(*leaves, P, aligned=aligned, reverse=reverse)
    loss = O.domain_loss(lg.d_S, lg.d_T, lg.d_S_tilde, lg.d_T_tilde)
    g = tape.backward(loss)
    dgrads = {k: g[P[k]] for k in P if k.startswith("disc.")}
    fgrads = [g[v] for v in leaves]
    return lg.values(), dgrads, fgrads


def dyadic_features(rng, rows: int, dim: int) -> np.ndarray:
    """Signed powers of two: scaling by any constant is exact in floating point."""
    return rng.choice([-1.0, 1.0], size=(rows, dim)) * 2.0 ** rng.integers(-4, 4, size=(rows, dim))


def check_scale_invariance(seed: int = 0, scales=(0.1, 10.0, 1000.0), tol: float = 1e-10) -> Check:
    cfg, params = _fixture_params(seed)
    rng = np.random.default_rng(seed + 1)
    # perturb the discriminator away from its zero biases so the check is not trivial
    params = dict(params)
    params["disc.b1"] = rng.normal(scale=0.1, size=params["disc.b1"].shape)
    dim = 2 * cfg.feature_dim
    feats = [dyadic_features(rng, 5, dim) for _ in range(4)]
    base_out, base_g, base_f = _disc_run(params, feats, True)
    bitwise, worst, sensitive = True, 0.0, False
    for c in (1.0,) + tuple(scales):
        out, g, _ = _disc_run(params, [c * f for f in feats], True)
        bitwise &= all(np.array_equal(a, b) for a, b in zip(out, base_out))
        for k in g:
            denom = max(np.linalg.norm(base_g[k]), 1e-300)
            worst = max(worst, np.linalg.norm(g[k] - base_g[k]) / denom)
        raw_base, _, _ = _disc_run(params, feats, False)
        raw, _, _ = _disc_run(params, [c * f for f in feats], False)
        if c != 1.0:
            sensitive |= any(not np.allclose(a, b, rtol=1e-6) for a, b in zip(raw, raw_base))
    # gradient reversal: the shareable-path gradient is the exact negation of an identity edge
    _, g_id, f_id = _disc_run(params, feats, True, reverse=False)
    sign_ok = all(np.array_equal(a, -b) for a, b in zip(base_f[2:], f_id[2:]))
    sign_ok &= all(np.array_equal(a, b) for a, b in zip(base_f[:2], f_id[:2]))
    sign_ok &= all(np.array_equal(base_g[k], g_id[k]) for k in base_g)
    ok = bool(bitwise and worst <= tol and sensitive and sign_ok)
    return Check("scale_invariance", "scale invariance", ok,
                 f"bitwise_forward={bitwise} grad_rel_err={worst:.2e} "
                 f"unaligned_scale_sensitive={sensitive} grl_sign={sign_ok}")


def check_theorems(params: dict | None = None, seed: int = 0) -> TheoremReport:
    return TheoremReport([
        check_degree_ratio(params, seed),
        check_scale_preservation(seed),
        check_scale_invariance(seed),
    ])
