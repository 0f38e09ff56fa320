"""Feature extractors, scale alignment, the domain discriminator and the scorer.

Parameters live in a flat ``dict[str, np.ndarray]``.  A forward pass wraps them as
tape leaves (see :func:`bind`) and the functions here build the graph on that tape.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import geometry

EXTRACTORS = ("src", "tgt", "shared")
LOGIT_EPS = 1e-7
DEGENERATE_NORM = 1e-12
CHECKPOINT_MAGIC = b"HEADCKPT"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    embed_dim: int = 100
    doc_len: int = 256
    widths: tuple = (3, 4, 5)
    feature_dim: int = 96
    latent_std: float = 0.01
    n_src_users: int = 0
    n_src_items: int = 0
    n_tgt_users: int = 0
    n_tgt_items: int = 0

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.feature_dim % len(self.widths):
            raise ValueError("feature_dim must be divisible by the number of kernel widths")
        if self.doc_len < max(self.widths):
            raise ValueError("doc_len must be at least the widest kernel")

    @property
    def filters(self) -> int:
        return self.feature_dim // len(self.widths)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d


def _glorot(rng, shape, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: ModelConfig, rng: np.random.Generator, cold: dict | None = None) -> dict:
    """Fresh parameters.  ``cold`` maps latent table names to boolean masks of nodes
    with no training interactions; their latents start at exactly zero."""
    p: dict[str, np.ndarray] = {}
    d, f, df = cfg.embed_dim, cfg.filters, cfg.feature_dim
    for ext in EXTRACTORS:
        for w in cfg.widths:
            p[f"{ext}.conv{w}.weight"] = _glorot(rng, (w, d, f), w * d, f)
            p[f"{ext}.conv{w}.bias"] = np.zeros(f)
    p["disc.w1"] = _glorot(rng, (2 * df, df), 2 * df, df)
    p["disc.b1"] = np.zeros(df)
    p["disc.w2"] = _glorot(rng, (df, 1), df, 1)
    p["disc.b2"] = np.zeros(1)
    gin = 2 * (df + 1)
    p["gate.w1"] = _glorot(rng, (gin, df), gin, df)
    p["gate.b1"] = np.zeros(df)
    p["gate.w2"] = _glorot(rng, (df, 1), df, 1)
    p["gate.b2"] = np.zeros(1)
    for name, n in (("latent.src_user", cfg.n_src_users), ("latent.src_item", cfg.n_src_items),
                    ("latent.tgt_user", cfg.n_tgt_users), ("latent.tgt_item", cfg.n_tgt_items)):
        table = rng.normal(0.0, cfg.latent_std, size=(n, df))
        if cold and name in cold:
            table[np.asarray(cold[name], dtype=bool)] = 0.0
        p[name] = table
    return p


def bind(tape: ad.Tape, params: dict) -> dict:
    """Register every parameter array as a leaf on ``tape``."""
    return {k: tape.leaf(v, name=k) for k, v in params.items()}


def param_norm(P: dict) -> ad.Var:
    """||theta||_2 over all parameters."""
    total = None
    for k in sorted(P):
        s = ad.sum(ad.square(P[k]))
        total = s if total is None else total + s
    return ad.sqrt(total)


# -- feature extraction ------------------------------------------------------------

def tangent_rows(hyperbolic_docs: np.ndarray) -> np.ndarray:
    """log_o applied row-wise, spatial coordinates only: (B, n, d+1) -> (B, n, d)."""
    return geometry.unlift(hyperbolic_docs)


def extract(tape: ad.Tape, hyperbolic_docs: np.ndarray, P: dict, extractor: str,
            widths=(3, 4, 5)) -> ad.Var:
    """Multi-width text CNN over log_o of the lifted document rows -> (B, d_f)."""
    if extractor not in EXTRACTORS:
        raise ValueError(f"extractor must be one of {EXTRACTORS}")
    docs = np.asarray(hyperbolic_docs)
    if docs.ndim == 2:
        docs = docs[None]
    return extract_tangent(tape, tangent_rows(docs), P, extractor, widths)


def extract_tangent(tape: ad.Tape, tangent_docs: np.ndarray, P: dict, extractor: str,
                    widths=(3, 4, 5)) -> ad.Var:
    """Text CNN on documents already mapped to the tangent space, (B, n, d)."""
    if extractor not in EXTRACTORS:
        raise ValueError(f"extractor must be one of {EXTRACTORS}")
    x = tape.const(tangent_docs)
    pooled = []
    for w in widths:
        h = ad.conv1d(x, P[f"{extractor}.conv{w}.weight"], P[f"{extractor}.conv{w}.bias"])
        pooled.append(ad.maxpool_time(ad.tanh(h)))
    return ad.concat(pooled, axis=1)


# -- scale alignment and discrimination ---------------------------------------------

def scale_align(v: ad.Var) -> tuple[ad.Var, int]:
    """Row-wise v / ||v||.  Returns the aligned variable and the number of rows whose
    norm was below 1e-12; those rows pass through unchanged."""
    vals = v.value
    peak = np.max(np.abs(vals), axis=-1, keepdims=True)
    degenerate = np.sqrt(np.sum(vals * vals, axis=-1, keepdims=True)) < DEGENERATE_NORM
    # a positive constant prescale leaves v/||v|| and its gradient unchanged
    peak = np.where(degenerate | (peak == 0), 1.0, peak)
    u = v / v.tape.const(peak)
    n = ad.norm2(u, axis=-1, keepdims=True)
    if degenerate.any():
        keep = v.tape.const(degenerate.astype(np.float64))
        n = n * (1.0 - keep) + keep
    return u / n, int(degenerate.sum())


def discriminator(x: ad.Var, P: dict) -> ad.Var:
    """Two affine layers with relu between; sigmoid probability of 'target'."""
    h = ad.relu(x @ P["disc.w1"] + P["disc.b1"])
    return ad.sigmoid(h @ P["disc.w2"] + P["disc.b2"])


@dataclass
class FeatureBundle:
    S_u: ad.Var
    S_i: ad.Var
    S_u_hat: ad.Var
    S_i_hat: ad.Var
    T_u: ad.Var
    T_i: ad.Var
    T_u_hat: ad.Var
    T_i_hat: ad.Var

    @property
    def S(self):
        return ad.concat([self.S_u, self.S_i], axis=1)

    @property
    def T(self):
        return ad.concat([self.T_u, self.T_i], axis=1)

    @property
    def S_tilde(self):
        return ad.concat([self.S_u_hat, self.S_i_hat], axis=1)

    @property
    def T_tilde(self):
        return ad.concat([self.T_u_hat, self.T_i_hat], axis=1)


@dataclass
class DomainLogits:
    d_S: ad.Var
    d_T: ad.Var
    d_S_tilde: ad.Var
    d_T_tilde: ad.Var
    # arrays that actually reached the discriminator, for the unit-norm contract
    inputs: list = field(default_factory=list)
    degenerate: int = 0

    def values(self):
        return tuple(v.value for v in (self.d_S, self.d_T, self.d_S_tilde, self.d_T_tilde))


def discriminate_features(S, T, S_tilde, T_tilde, P: dict, aligned: bool = True,
                          reverse: bool = True) -> DomainLogits:
    """Domain probabilities for specific (S, T) and shareable (S~, T~) features.

    Shareable features pass through gradient reversal after alignment.
    ``reverse=False`` swaps the reversal for an identity edge (used only to check
    the sign contract of the reversal).
    """
    degenerate = 0

    def prep(v):
        nonlocal degenerate
        if aligned:
            v, bad = scale_align(v)
            degenerate += bad
        return v

    flip = ad.grl if reverse else ad.identity
    ins = [prep(S), prep(T), flip(prep(S_tilde)), flip(prep(T_tilde))]
    outs = [discriminator(x, P) for x in ins]
    return DomainLogits(*outs, inputs=[x.value for x in ins], degenerate=degenerate)


def discriminate(bundle: FeatureBundle, P: dict, aligned: bool = True,
                 reverse: bool = True) -> DomainLogits:
    return discriminate_features(bundle.S, bundle.T, bundle.S_tilde, bundle.T_tilde,
                                 P, aligned, reverse)


# -- scoring -------------------------------------------------------------------------

def lorentz_lift(v: ad.Var) -> ad.Var:
    """exp_o on the tape: (B, d) -> (B, d+1)."""
    n = ad.norm2(v, axis=-1, keepdims=True)
    safe = ad.clip(n, DEGENERATE_NORM)
    return ad.concat([ad.cosh(n), ad.sinh(n) * (v / safe)], axis=1)


def lorentz_distance(x: ad.Var, y: ad.Var) -> ad.Var:
    """Row-wise arcosh(-<x,y>_L), shape (B, 1)."""
    neg_inner = (
        _col(x, 0) * _col(y, 0)
        - ad.sum(_rest(x) * _rest(y), axis=1, keepdims=True)
    )
    return ad.arcosh(neg_inner)


def _col(x: ad.Var, k: int) -> ad.Var:
    mask = np.zeros((1, x.shape[1]))
    mask[0, k] = 1.0
    return ad.sum(x * mask, axis=1, keepdims=True)


def _rest(x: ad.Var) -> ad.Var:
    mask = np.ones((1, x.shape[1]))
    mask[0, 0] = 0.0
    return x * mask


def gate(hu: ad.Var, hi: ad.Var, P: dict) -> ad.Var:
    """M(hu (+) hi) in [0, 1], shape (B, 1)."""
    h = ad.relu(ad.concat([hu, hi], axis=1) @ P["gate.w1"] + P["gate.b1"])
    return ad.sigmoid(h @ P["gate.w2"] + P["gate.b2"])


def aggregate(specific: ad.Var, shared: ad.Var, latent: ad.Var) -> ad.Var:
    return 0.5 * (specific + shared) + latent


def score(S_u: ad.Var, S_u_hat: ad.Var, S_i: ad.Var, S_i_hat: ad.Var,
          p_u: ad.Var, p_i: ad.Var, P: dict, gate_override=None) -> ad.Var:
    """Gated Lorentz distance between the lifted user and item aggregates (lower is better)."""
    hu = lorentz_lift(aggregate(S_u, S_u_hat, p_u))
    hi = lorentz_lift(aggregate(S_i, S_i_hat, p_i))
    g = gate(hu, hi, P) if gate_override is None else gate_override
    return g * lorentz_distance(hu, hi)


# -- checkpoints ---------------------------------------------------------------------

def save_checkpoint(path, params: dict, config: dict) -> None:
    """Binary layout: magic, version line, one JSON header line, raw float64 arrays.

    ``HEADCKPT 1\\n`` then a JSON object ``{"config": ..., "arrays": [{"name",
    "shape", "offset", "nbytes"}]}`` followed by ``\\n`` and the little-endian
    float64 payload of each array in header order (sorted by name).  Offsets are
    relative to the start of the payload.
    """
    names = sorted(params)
    arrays, offset = [], 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        blobs.append(arr.tobytes())
        arrays.append({"name": name, "shape": list(arr.shape), "offset": offset,
                       "nbytes": arr.nbytes})
        offset += arr.nbytes
    header = json.dumps({"config": config, "arrays": arrays}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + b" " + str(CHECKPOINT_VERSION).encode() + b"\n")
        fh.write(header + b"\n")
        for b in blobs:
            fh.write(b)


class CheckpointError(ValueError):
    pass


class ShapeMismatchError(CheckpointError):
    """Checkpoint arrays do not fit the model configuration."""


def load_checkpoint(path) -> tuple[dict, dict]:
    raw = Path(path).read_bytes()
    first, _, rest = raw.partition(b"\n")
    magic, _, version = first.partition(b" ")
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if int(version) != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version.decode()}")
    header_raw, _, payload = rest.partition(b"\n")
    header = json.loads(header_raw)
    params = {}
    for a in header["arrays"]:
        buf = payload[a["offset"]:a["offset"] + a["nbytes"]]
        params[a["name"]] = np.frombuffer(buf, dtype="<f8").reshape(a["shape"]).astype(np.float64)
    return params, header["config"]


def check_shapes(params: dict, cfg: ModelConfig) -> None:
    """Raise CheckpointError when ``params`` do not fit ``cfg``."""
    expected = init_params(cfg, np.random.default_rng(0))
    for k, v in expected.items():
        if k not in params:
            raise ShapeMismatchError(f"missing parameter {k}")
        if params[k].shape != v.shape:
            raise ShapeMismatchError(f"parameter {k} has shape {params[k].shape}, expected {v.shape}")
