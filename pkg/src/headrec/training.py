"""Mini-batch optimisation with Adam, early stopping and the (lambda1, lambda2) grid."""

from __future__ import annotations

import copy
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import model as M
from . import objectives as O
from .data import (
    POSITIVE_MIN_RATING,
    DocumentStore,
    DomainDataset,
    NegativeSampler,
    positives,
)
from .embedding import EmbeddingTable

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    max_iters: int = 5000
    patience: int = 300
    eval_every: int = 50
    seed: int = 0
    aligned: bool = True
    degree_norm: bool = True
    use_source: bool = True
    candidates: int = 99
    embed_dim: int = 100
    doc_len: int = 256
    feature_dim: int = 96
    grad_norm_every: int = 0

    def model_config(self, data: "CrossDomainData") -> M.ModelConfig:
        return M.ModelConfig(
            embed_dim=data.table.dim,
            doc_len=self.doc_len,
            feature_dim=self.feature_dim,
            n_src_users=data.source.n_users,
            n_src_items=data.source.n_items,
            n_tgt_users=data.target.n_users,
            n_tgt_items=data.target.n_items,
        )


class TokenIdDocs:
    """Token-id documents per node for fast batch assembly."""

    def __init__(self, store: DocumentStore, table: EmbeddingTable):
        self.doc_len = store.doc_len
        vocab = table.vocab

        def conv(reviews):
            return [(other, np.array([vocab.get(t, 0) for t in toks], dtype=np.int64))
                    for other, _, toks in reviews]

        self._user = {u: conv(r) for u, r in store._user.items()}
        self._item = {i: conv(r) for i, r in store._item.items()}
        self._full_user: dict = {}
        self._full_item: dict = {}

    def _doc(self, reviews, exclude) -> np.ndarray:
        out = np.zeros(self.doc_len, dtype=np.int64)
        pos = 0
        for other, ids in reviews or ():
            if other == exclude:
                continue
            take = min(len(ids), self.doc_len - pos)
            out[pos:pos + take] = ids[:take]
            pos += take
            if pos >= self.doc_len:
                break
        return out

    def user(self, u: int, exclude_item: int | None = None) -> np.ndarray:
        if exclude_item is None:
            if u not in self._full_user:
                self._full_user[u] = self._doc(self._user.get(u), None)
            return self._full_user[u]
        return self._doc(self._user.get(u), exclude_item)

    def item(self, i: int, exclude_user: int | None = None) -> np.ndarray:
        if exclude_user is None:
            if i not in self._full_item:
                self._full_item[i] = self._doc(self._item.get(i), None)
            return self._full_item[i]
        return self._doc(self._item.get(i), exclude_user)


class DomainSide:
    """Training-side view of one domain: positives, negatives, documents."""

    def __init__(self, train: DomainDataset, table: EmbeddingTable, doc_len: int,
                 min_rating: int = POSITIVE_MIN_RATING):
        self.train = train
        self.docs = TokenIdDocs(DocumentStore(train, doc_len), table)
        pos = positives(train, min_rating)
        if not pos:
            raise ValueError(f"{train.domain}: no training interactions with rating >= {min_rating}")
        self.pos_users = np.array([it.user for it in pos], dtype=np.int64)
        self.pos_items = np.array([it.item for it in pos], dtype=np.int64)
        self.sampler = NegativeSampler(train)
        self.reviewed = {}
        for it in train.interactions:
            self.reviewed.setdefault(it.user, set()).add(it.item)

    def batch(self, rng: np.random.Generator, size: int):
        rows = rng.integers(len(self.pos_users), size=size)
        users = self.pos_users[rows]
        items = self.pos_items[rows]
        negs = np.array([self.sampler.sample(int(u), rng, int(i)) for u, i in zip(users, items)],
                        dtype=np.int64)
        seen = self.reviewed
        udocs = np.stack([self.docs.user(int(u), int(i)) for u, i in zip(users, items)])
        idocs = np.stack([self.docs.item(int(i), int(u)) for u, i in zip(users, items)])
        jdocs = np.stack([self.docs.item(int(j), int(u) if int(j) in seen.get(int(u), ()) else None)
                          for u, j in zip(users, negs)])
        return DomainBatch(users, items, negs, udocs, idocs, jdocs)


@dataclass
class DomainBatch:
    users: np.ndarray
    items: np.ndarray
    negs: np.ndarray
    user_docs: np.ndarray
    item_docs: np.ndarray
    neg_docs: np.ndarray


@dataclass
class Batch:
    source: DomainBatch | None
    target: DomainBatch


class CrossDomainData:
    """Source training data plus target train/valid/test, sharing one embedding table."""

    def __init__(self, source: DomainDataset, target: DomainDataset, valid: DomainDataset,
                 test: DomainDataset, table: EmbeddingTable, doc_len: int,
                 min_rating: int = POSITIVE_MIN_RATING):
        self.source = source
        self.target = target
        self.valid = valid
        self.test = test
        self.table = table
        self.doc_len = doc_len
        self.min_rating = min_rating
        self.src = DomainSide(source, table, doc_len, min_rating)
        self.tgt = DomainSide(target, table, doc_len, min_rating)
        self._candidates: dict = {}

    def sample(self, rng: np.random.Generator, size: int, use_source: bool = True) -> Batch:
        src = self.src.batch(rng, size) if use_source else None
        return Batch(src, self.tgt.batch(rng, size))

    def cold_masks(self) -> dict:
        return {
            "latent.src_user": self.source.user_degree == 0,
            "latent.src_item": self.source.item_degree == 0,
            "latent.tgt_user": self.target.user_degree == 0,
            "latent.tgt_item": self.target.item_degree == 0,
        }

    def candidates(self, split: str, n_candidates: int, seed: int):
        from .evaluation import build_candidates

        key = (split, n_candidates, seed)
        if key not in self._candidates:
            ds = {"valid": self.valid, "test": self.test, "train": self.target}[split]
            self._candidates[key] = build_candidates(self, ds, n_candidates, seed)
        return self._candidates[key]


class Adam:
    """Adam with bias-corrected moments, applied to a dict of arrays."""

    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps

    def update(self, params: dict, grads: dict, m: dict, v: dict, t: int) -> None:
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for k in sorted(params):
            g = grads[k]
            m[k] = b1 * m[k] + (1.0 - b1) * g
            v[k] = b2 * v[k] + (1.0 - b2) * g * g
            mhat = m[k] / c1
            vhat = v[k] / c2
            params[k] = params[k] - self.lr * mhat / (np.sqrt(vhat) + self.eps)


@dataclass
class TrainState:
    params: dict
    m: dict
    v: dict
    iteration: int = 0
    best_score: float = -math.inf
    best_iteration: int = 0
    since_best: int = 0
    best_params: dict | None = None

    @classmethod
    def fresh(cls, params: dict) -> "TrainState":
        return cls(params, {k: np.zeros_like(a) for k, a in params.items()},
                   {k: np.zeros_like(a) for k, a in params.items()})

    def copy(self) -> "TrainState":
        return copy.deepcopy(self)


def _rows(x: ad.Var, start: int, stop: int) -> ad.Var:
    return ad.gather(x, np.arange(start, stop))


def _domain_forward(tape, P, table, b: DomainBatch, ext: str, shared_all: ad.Var,
                    offset: int, prefix: str, widths):
    B = len(b.users)
    docs = table.tangent[np.concatenate([b.user_docs, b.item_docs, b.neg_docs])]
    spec = M.extract_tangent(tape, docs, P, ext, widths)
    f = {
        "S_u": _rows(spec, 0, B),
        "S_i": _rows(spec, B, 2 * B),
        "S_j": _rows(spec, 2 * B, 3 * B),
        "S_items": _rows(spec, B, 3 * B),
        "H_u": _rows(shared_all, offset, offset + B),
        "H_i": _rows(shared_all, offset + B, offset + 2 * B),
        "H_j": _rows(shared_all, offset + 2 * B, offset + 3 * B),
        "H_items": _rows(shared_all, offset + B, offset + 3 * B),
    }
    p_u = ad.gather(P[f"latent.{prefix}_user"], b.users)
    p_i = ad.gather(P[f"latent.{prefix}_item"], b.items)
    p_j = ad.gather(P[f"latent.{prefix}_item"], b.negs)
    f["pos"] = M.score(f["S_u"], f["H_u"], f["S_i"], f["H_i"], p_u, p_i, P)
    f["neg"] = M.score(f["S_u"], f["H_u"], f["S_j"], f["H_j"], p_u, p_j, P)
    return f


def _weights(ds: DomainDataset, users, items, degree_norm: bool):
    if not degree_norm:
        return np.ones(len(users)), np.ones(len(items))
    return (O.degree_weights(ds.user_degree[users], ds.user_degree.max()),
            O.degree_weights(ds.item_degree[items], ds.item_degree.max()))


def forward_losses(params: dict, data: CrossDomainData, batch: Batch, weights: O.LossWeights,
                   cfg: TrainConfig, reverse: bool = True):
    """Build the full training graph; returns (tape, P, terms dict, logits)."""
    tape = ad.Tape()
    P = M.bind(tape, params)
    widths = M.ModelConfig().widths
    table = data.table
    tb, sb = batch.target, batch.source
    shared_docs = [tb.user_docs, tb.item_docs, tb.neg_docs]
    if sb is not None:
        shared_docs = [sb.user_docs, sb.item_docs, sb.neg_docs] + shared_docs
    shared_all = M.extract_tangent(tape, table.tangent[np.concatenate(shared_docs)], P, "shared",
                                    widths)
    t_off = 3 * len(sb.users) if sb is not None else 0
    tf = _domain_forward(tape, P, table, tb, "tgt", shared_all, t_off, "tgt", widths)
    L_pred = ad.mean(O.ranking_loss(tf["pos"], tf["neg"], weights.margin))

    tgt_items = np.concatenate([tb.items, tb.negs])
    wu, wi = _weights(data.target, tb.users, tgt_items, cfg.degree_norm)
    groups = [O.NodeGroup(tf["S_u"], tf["H_u"], wu), O.NodeGroup(tf["S_items"], tf["H_items"], wi)]
    logits = None
    if sb is not None:
        sf = _domain_forward(tape, P, table, sb, "src", shared_all, 0, "src", widths)
        L_pred = L_pred + ad.mean(O.ranking_loss(sf["pos"], sf["neg"], weights.margin))
        src_items = np.concatenate([sb.items, sb.negs])
        su, si = _weights(data.source, sb.users, src_items, cfg.degree_norm)
        groups = [O.NodeGroup(sf["S_u"], sf["H_u"], su), O.NodeGroup(sf["S_items"], sf["H_items"], si)] + groups
        bundle = M.FeatureBundle(sf["S_u"], sf["S_i"], sf["H_u"], sf["H_i"],
                                 tf["S_u"], tf["S_i"], tf["H_u"], tf["H_i"])
        logits = M.discriminate(bundle, P, aligned=cfg.aligned, reverse=reverse)
        L_d = O.domain_loss(logits.d_S, logits.d_T, logits.d_S_tilde, logits.d_T_tilde)
    else:
        L_d = tape.const(0.0)
    L_emb, clamped = O.hierarchy_embedding_loss(groups)
    theta = M.param_norm(P) if weights.delta > 0 else tape.const(0.0)
    total = O.total_loss(L_emb, L_d, L_pred, theta, weights)
    terms = {"L_emb": L_emb, "L_d": L_d, "L_pred": L_pred, "theta": theta, "total": total,
             "emb_clamped": clamped}
    return tape, P, terms, logits


def train_step(state: TrainState, batch: Batch, weights: O.LossWeights, data: CrossDomainData,
               cfg: TrainConfig, optimizer: Adam | None = None, grad_norms: bool = False
               ) -> O.BatchLossReport:
    """One forward/backward/Adam update on the weighted total loss."""
    tape, P, terms, logits = forward_losses(state.params, data, batch, weights, cfg)
    grads = tape.backward(terms["total"])
    g = {k: grads[v] for k, v in P.items()}
    for k, a in g.items():
        if not np.all(np.isfinite(a)):
            raise O.NonFiniteLossError(f"gradient of {k}")
    norms = {}
    if grad_norms:
        scale = {"L_emb": weights.lambda1, "L_d": weights.lambda2, "L_pred": 1.0,
                 "theta": weights.delta}
        for name, s in scale.items():
            var = terms[name]
            if var.kind == "const" or s == 0:
                norms[name] = 0.0
                continue
            gt = tape.backward(var)
            norms[name] = float(s * math.sqrt(sum(float(np.sum(gt[v] ** 2)) for v in P.values())))
    opt = optimizer or Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    state.iteration += 1
    opt.update(state.params, g, state.m, state.v, state.iteration)
    val = {k: float(np.asarray(terms[k].value).sum()) for k in ("L_emb", "L_d", "L_pred", "theta", "total")}
    return O.BatchLossReport(
        L_emb=val["L_emb"], L_d=val["L_d"], L_pred=val["L_pred"],
        L_reg=weights.delta * val["theta"], L_total=val["total"],
        grad_norms=norms,
        disc_input_norms=[np.linalg.norm(x, axis=-1) for x in logits.inputs] if logits else [],
        degenerate=logits.degenerate if logits else 0,
        emb_clamped=terms["emb_clamped"],
        bce_specific=O.specific_bce(*logits.values()[:2]) if logits else float("nan"),
        bce_shared=O.specific_bce(*logits.values()[2:]) if logits else float("nan"),
    )


@dataclass
class FitResult:
    params: dict
    history: list = field(default_factory=list)
    evals: list = field(default_factory=list)
    best_score: float = -math.inf
    best_iteration: int = 0
    iterations: int = 0
    initial_score: float = float("nan")
    step_seconds: list = field(default_factory=list)
    final_params: dict | None = None

    def final_disc_bce(self, window: int = 50) -> float:
        """Mean discriminator BCE (L_d / 4) over the last ``window`` steps."""
        vals = [h["disc_bce"] for h in self.history[-window:]]
        return float(np.mean(vals)) if vals else float("nan")


def fit(data: CrossDomainData, cfg: TrainConfig, weights: O.LossWeights,
        params: dict | None = None, on_step=None, validate: bool = True) -> FitResult:
    """Train until validation NDCG@10 stalls for ``patience`` iterations.

    Validation runs every ``eval_every`` steps (and at iteration 0); the returned
    parameters are those of the best validation score.  ``validate=False`` skips
    validation altogether (timing runs) and returns the last parameters.
    """
    from .evaluation import evaluate_ranking

    rng = np.random.default_rng(cfg.seed)
    mcfg = cfg.model_config(data)
    if params is None:
        params = M.init_params(mcfg, rng, data.cold_masks())
    state = TrainState.fresh({k: v.copy() for k, v in params.items()})
    opt = Adam(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)

    def score_valid():
        if not validate:
            return 0.0
        return evaluate_ranking(state.params, data, "valid", cfg.candidates, seed=cfg.seed).ndcg

    result = FitResult(params=state.params)
    score = score_valid()
    result.initial_score = score
    result.evals.append({"iteration": 0, "ndcg": score})
    state.best_score, state.best_iteration = score, 0
    state.best_params = {k: v.copy() for k, v in state.params.items()}
    while state.iteration < cfg.max_iters:
        batch = data.sample(rng, cfg.batch_size, cfg.use_source)
        want_norms = bool(cfg.grad_norm_every) and (state.iteration + 1) % cfg.grad_norm_every == 0
        t0 = time.perf_counter()
        rep = train_step(state, batch, weights, data, cfg, opt, grad_norms=want_norms)
        result.step_seconds.append(time.perf_counter() - t0)
        result.history.append({
            "iteration": state.iteration, "L_emb": rep.L_emb, "L_d": rep.L_d,
            "L_pred": rep.L_pred, "L_total": rep.L_total, "disc_bce": rep.L_d / 4.0,
            "bce_specific": rep.bce_specific, "bce_shared": rep.bce_shared,
            "grad_norms": rep.grad_norms,
        })
        if on_step is not None:
            on_step(state, rep)
        if state.iteration % cfg.eval_every == 0:
            score = score_valid()
            result.evals.append({"iteration": state.iteration, "ndcg": score})
            if score > state.best_score:
                state.best_score, state.best_iteration = score, state.iteration
                state.best_params = {k: v.copy() for k, v in state.params.items()}
            state.since_best = state.iteration - state.best_iteration
            if state.since_best >= cfg.patience:
                log.info("early stop at iteration %d (best %d)", state.iteration, state.best_iteration)
                break
    result.params = state.best_params
    result.final_params = state.params
    result.best_score = state.best_score
    result.best_iteration = state.best_iteration
    result.iterations = state.iteration
    return result


@dataclass
class GridResult:
    lambda1: list
    lambda2: list
    matrix: np.ndarray
    best: tuple

    def to_csv(self) -> str:
        lines = ["lambda1\\lambda2," + ",".join(f"{b:g}" for b in self.lambda2)]
        for a, row in zip(self.lambda1, self.matrix):
            lines.append(f"{a:g}," + ",".join(f"{x:.6f}" for x in row))
        return "\n".join(lines) + "\n"


def grid_search(data: CrossDomainData, grid1, grid2, cfg: TrainConfig,
                base: O.LossWeights | None = None, fitter=None) -> GridResult:
    """Validation NDCG@10 for every (lambda1, lambda2); rows follow lambda1."""
    base = base or O.LossWeights()
    fitter = fitter or fit
    if not len(grid1) or not len(grid2):
        raise ValueError("grids must be non-empty")
    mat = np.zeros((len(grid1), len(grid2)))
    for a, l1 in enumerate(grid1):
        for b, l2 in enumerate(grid2):
            w = dataclasses.replace(base, lambda1=float(l1), lambda2=float(l2))
            mat[a, b] = fitter(data, cfg, w).best_score
    return GridResult(list(grid1), list(grid2), mat, best_cell(mat, grid1, grid2))


def best_cell(mat: np.ndarray, grid1, grid2) -> tuple:
    """Argmax; ties go to the smaller (lambda1, lambda2) pair."""
    order = sorted(((float(grid1[a]), float(grid2[b]), a, b)
                    for a in range(len(grid1)) for b in range(len(grid2))))
    best = None
    for l1, l2, a, b in order:
        if best is None or mat[a, b] > mat[best[2], best[3]]:
            best = (l1, l2, a, b)
    return best[0], best[1]
