"""Router architecture: capability encoders, retriever tokens, attention fusion.

A query is featurized and mapped by two shared affine encoders into a
retrieval-quality embedding and a generation-utility embedding. Each
retriever is represented only by a learnable token vector fed through the
same two encoders (index 0 is the no-retrieval option). A query-conditioned
multi-head attention block fuses a retriever's two capability embeddings
into a single vector, and routing picks the retriever whose fused vector
has the highest cosine similarity with the query's utility embedding.

Forward and backward passes are written out by hand in numpy; every
gradient is validated against finite differences in the test suite.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import DegenerateEmbeddingError, SchemaError, ValidationError
from .featurizer import FeaturizerConfig, SparseVec, featurize
from .numerics import ZERO_NORM_TOL
from .rng import SplitMix64, stream_seed

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class EncoderParams:
    """One affine capability encoder: emb = W @ x + b."""

    W: np.ndarray  # (d, d_feat)
    b: np.ndarray  # (d,)

    def validate(self, d: int, d_feat: int) -> None:
        if self.W.shape != (d, d_feat) or self.b.shape != (d,):
            raise ValidationError(
                f"encoder shapes {self.W.shape}/{self.b.shape} inconsistent with d={d}, d_feat={d_feat}"
            )
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ValidationError("non-finite encoder parameters")


@dataclass
class FusionParams:
    """Multi-head attention parameters.

    w_q, w_k, w_v have shape (heads, d_h, d) with d_h = d // heads; w_o is
    the (d, d) output projection applied to the concatenated heads.
    """

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray

    @property
    def heads(self) -> int:
        return self.w_q.shape[0]

    def validate(self, d: int) -> None:
        h = self.heads
        if h < 1 or d % h != 0:
            raise ValidationError(f"heads={h} must divide d={d}")
        d_h = d // h
        for name, w in (("w_q", self.w_q), ("w_k", self.w_k), ("w_v", self.w_v)):
            if w.shape != (h, d_h, d):
                raise ValidationError(f"{name} shape {w.shape} != {(h, d_h, d)}")
            if not np.all(np.isfinite(w)):
                raise ValidationError(f"non-finite {name}")
        if self.w_o.shape != (d, d):
            raise ValidationError(f"w_o shape {self.w_o.shape} != {(d, d)}")
        if not np.all(np.isfinite(self.w_o)):
            raise ValidationError("non-finite w_o")


@dataclass
class RouterModel:
    featurizer: FeaturizerConfig
    d: int
    enc_r: EncoderParams  # retrieval-quality encoder
    enc_g: EncoderParams  # generation-utility encoder
    tokens: np.ndarray  # (K+1, d_feat), row 0 = no-retrieval token
    fusion: FusionParams
    retriever_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        d_feat = self.featurizer.d_feat
        self.enc_r.validate(self.d, d_feat)
        self.enc_g.validate(self.d, d_feat)
        if self.tokens.ndim != 2 or self.tokens.shape[1] != d_feat:
            raise ValidationError(f"token table shape {self.tokens.shape} != (K+1, {d_feat})")
        if len(self.retriever_names) != self.tokens.shape[0]:
            raise ValidationError("retriever_names length must match token table")
        if not np.all(np.isfinite(self.tokens)):
            raise ValidationError("non-finite tokens")
        self.fusion.validate(self.d)

    @property
    def num_real_retrievers(self) -> int:
        """K: catalog size excluding the no-retrieval entry."""
        return self.tokens.shape[0] - 1


class RoutingDecision(NamedTuple):
    chosen: int
    scores: np.ndarray  # (K+1,) cosine similarities, index = retriever id


def default_retriever_names(num_real: int) -> list[str]:
    return ["R0/no-retrieval"] + [f"R{i}" for i in range(1, num_real + 1)]


def init_fusion_identity(d: int, heads: int, seed: int, scale: float = 0.02) -> FusionParams:
    """Fusion init with an identity value path.

    w_v stacks to the identity and w_o is the identity, so the attention
    output is exactly the attention-weighted mix of the two capability
    embeddings: with near-zero query/key projections that is their mean,
    and it equals the utility embedding whenever the two coincide. This
    keeps the fused-vs-utility regularizer small at the start of fusion
    training. w_q, w_k start small random.
    """
    if heads < 1 or d % heads != 0:
        raise ValidationError(f"heads={heads} must divide d={d}")
    d_h = d // heads
    rng = SplitMix64(stream_seed(seed, "init-fusion"))
    w_q = np.array(rng.normals(heads * d_h * d, sd=scale), dtype=np.float64).reshape(heads, d_h, d)
    w_k = np.array(rng.normals(heads * d_h * d, sd=scale), dtype=np.float64).reshape(heads, d_h, d)
    eye = np.eye(d, dtype=np.float64)
    w_v = eye.reshape(heads, d_h, d).copy()
    w_o = eye.copy()
    return FusionParams(w_q=w_q, w_k=w_k, w_v=w_v, w_o=w_o)


def init_model(
    featurizer: FeaturizerConfig,
    d: int,
    heads: int,
    num_real_retrievers: int,
    seed: int,
    retriever_names: list[str] | None = None,
) -> RouterModel:
    """Random initial model; fully determined by the seed."""
    if num_real_retrievers < 1:
        raise ValidationError("need at least one real retriever")
    d_feat = featurizer.d_feat
    sd = 1.0 / math.sqrt(d_feat)

    def gauss(label: str, shape: tuple[int, ...]) -> np.ndarray:
        rng = SplitMix64(stream_seed(seed, "init", label))
        n = int(np.prod(shape))
        return np.array(rng.normals(n, sd=sd), dtype=np.float64).reshape(shape)

    names = retriever_names or default_retriever_names(num_real_retrievers)
    return RouterModel(
        featurizer=featurizer,
        d=d,
        enc_r=EncoderParams(W=gauss("enc_r.W", (d, d_feat)), b=np.zeros(d)),
        enc_g=EncoderParams(W=gauss("enc_g.W", (d, d_feat)), b=np.zeros(d)),
        tokens=gauss("tokens", (num_real_retrievers + 1, d_feat)),
        fusion=init_fusion_identity(d, heads, seed),
        retriever_names=list(names),
    )


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------


def encode_features(enc: EncoderParams, sv: SparseVec) -> np.ndarray:
    """Affine encoder applied to a sparse feature vector."""
    return enc.W[:, sv.indices] @ sv.values + enc.b


def encode_query(model: RouterModel, text: str) -> tuple[np.ndarray, np.ndarray]:
    """Quality and utility embeddings of a query text."""
    sv = featurize(model.featurizer, text)
    return encode_features(model.enc_r, sv), encode_features(model.enc_g, sv)


def encode_retriever(model: RouterModel, i: int) -> tuple[np.ndarray, np.ndarray]:
    """Quality and utility embeddings of retriever i (0 = no retrieval).

    The retriever token is fed through the same shared encoders as queries.
    """
    if not (0 <= i < model.tokens.shape[0]):
        raise ValidationError(f"retriever id {i} out of range 0..{model.num_real_retrievers}")
    t = model.tokens[i]
    return model.enc_r.W @ t + model.enc_r.b, model.enc_g.W @ t + model.enc_g.b


def encode_all_retrievers(model: RouterModel) -> tuple[np.ndarray, np.ndarray]:
    """Embeddings of the whole catalog: two (K+1, d) arrays."""
    quality = model.tokens @ model.enc_r.W.T + model.enc_r.b
    utility = model.tokens @ model.enc_g.W.T + model.enc_g.b
    return quality, utility


# ---------------------------------------------------------------------------
# Attention fusion
# ---------------------------------------------------------------------------


class FusionCache(NamedTuple):
    """Forward intermediates needed by fusion_backward."""

    r_q: np.ndarray  # (d,)
    kv: np.ndarray  # (K, 2, d)
    q: np.ndarray  # (H, d_h)
    keys: np.ndarray  # (K, 2, H, d_h)
    vals: np.ndarray  # (K, 2, H, d_h)
    alpha: np.ndarray  # (K, 2, H)
    concat: np.ndarray  # (K, d)


def fuse_batch(
    fusion: FusionParams,
    r_q: np.ndarray,
    ret_qual: np.ndarray,
    ret_util: np.ndarray,
    want_cache: bool = False,
) -> tuple[np.ndarray, FusionCache | None]:
    """Fuse capability embeddings for every retriever at once.

    The attention query is the query's quality embedding; keys/values are
    the two-token sequence (quality embedding, utility embedding) of each
    retriever. Returns the (K, d) fused matrix.
    """
    d = r_q.shape[0]
    if ret_qual.shape != ret_util.shape or ret_qual.shape[1] != d:
        raise ValidationError("fusion input shapes inconsistent")
    d_h = d // fusion.heads
    inv_sqrt = 1.0 / math.sqrt(d_h)

    kv = np.stack([ret_qual, ret_util], axis=1)  # (K, 2, d)
    q = np.einsum("hij,j->hi", fusion.w_q, r_q)
    keys = np.einsum("hij,ksj->kshi", fusion.w_k, kv)
    vals = np.einsum("hij,ksj->kshi", fusion.w_v, kv)
    logits = np.einsum("kshi,hi->ksh", keys, q) * inv_sqrt
    shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
    alpha = shifted / shifted.sum(axis=1, keepdims=True)  # (K, 2, H)
    head = np.einsum("ksh,kshi->khi", alpha, vals)
    concat = head.reshape(kv.shape[0], d)  # heads concatenated in order
    out = concat @ fusion.w_o.T
    cache = FusionCache(r_q, kv, q, keys, vals, alpha, concat) if want_cache else None
    return out, cache


def fuse(model: RouterModel, r_q: np.ndarray, ret_qual_i: np.ndarray, ret_util_i: np.ndarray) -> np.ndarray:
    """Fused representation of a single retriever for one query."""
    out, _ = fuse_batch(model.fusion, r_q, ret_qual_i[None, :], ret_util_i[None, :])
    return out[0]


class FusionGrads(NamedTuple):
    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    w_o: np.ndarray


def fusion_backward(fusion: FusionParams, cache: FusionCache, d_out: np.ndarray) -> FusionGrads:
    """Gradients of sum(d_out * fuse_batch(...)) w.r.t. the fusion weights."""
    d = cache.r_q.shape[0]
    d_h = d // fusion.heads
    inv_sqrt = 1.0 / math.sqrt(d_h)

    dw_o = d_out.T @ cache.concat
    dconcat = d_out @ fusion.w_o
    dhead = dconcat.reshape(d_out.shape[0], fusion.heads, d_h)
    dalpha = np.einsum("khi,kshi->ksh", dhead, cache.vals)
    dvals = np.einsum("ksh,khi->kshi", cache.alpha, dhead)
    inner = (cache.alpha * dalpha).sum(axis=1, keepdims=True)
    dlogits = cache.alpha * (dalpha - inner)
    dq = np.einsum("ksh,kshi->hi", dlogits, cache.keys) * inv_sqrt
    dkeys = np.einsum("ksh,hi->kshi", dlogits, cache.q) * inv_sqrt
    dw_q = np.einsum("hi,j->hij", dq, cache.r_q)
    dw_k = np.einsum("kshi,ksj->hij", dkeys, cache.kv)
    dw_v = np.einsum("kshi,ksj->hij", dvals, cache.kv)
    return FusionGrads(w_q=dw_q, w_k=dw_k, w_v=dw_v, w_o=dw_o)


# ---------------------------------------------------------------------------
# Routing
# ---------------------------------------------------------------------------


def argmax_lowest(scores: np.ndarray) -> int:
    """Index of the maximum; exact ties resolve to the lowest index."""
    return int(np.argmax(scores))


def cosine_scores(g_q: np.ndarray, fused: np.ndarray) -> np.ndarray:
    """Cosine similarity of the query utility embedding with each fused row."""
    gn = float(np.linalg.norm(g_q))
    if gn <= ZERO_NORM_TOL:
        raise DegenerateEmbeddingError("zero-norm query utility embedding")
    norms = np.linalg.norm(fused, axis=1)
    if np.any(norms <= ZERO_NORM_TOL):
        bad = int(np.argmin(norms))
        raise DegenerateEmbeddingError(f"zero-norm fused embedding for retriever {bad}")
    return (fused @ g_q) / (norms * gn)


def route(model: RouterModel, text: str) -> RoutingDecision:
    """Pick the retriever (or no retrieval) for one query.

    The no-retrieval entry competes on identical terms with the real
    retrievers; exact score ties go to the lowest id.
    """
    sv = featurize(model.featurizer, text)
    r_q = encode_features(model.enc_r, sv)
    g_q = encode_features(model.enc_g, sv)
    ret_qual, ret_util = encode_all_retrievers(model)
    fused, _ = fuse_batch(model.fusion, r_q, ret_qual, ret_util)
    scores = cosine_scores(g_q, fused)
    return RoutingDecision(chosen=argmax_lowest(scores), scores=scores)


# ---------------------------------------------------------------------------
# Checkpoint (de)serialization
# ---------------------------------------------------------------------------


def _flat(a: np.ndarray) -> list[float]:
    return [float(x) for x in a.reshape(-1)]


def model_to_dict(model: RouterModel) -> dict:
    """JSON-ready dict; numeric arrays are flat row-major number lists."""
    f = model.fusion
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "d_feat": model.featurizer.d_feat,
        "d": model.d,
        "heads": f.heads,
        "retriever_names": list(model.retriever_names),
        "featurizer": {
            "ngram_n": model.featurizer.ngram_n,
            "boundary_char": model.featurizer.boundary_char,
        },
        "enc_r": {"W": _flat(model.enc_r.W), "b": _flat(model.enc_r.b)},
        "enc_g": {"W": _flat(model.enc_g.W), "b": _flat(model.enc_g.b)},
        "tokens": [_flat(t) for t in model.tokens],
        "fusion": {
            "W_Q": [_flat(w) for w in f.w_q],
            "W_K": [_flat(w) for w in f.w_k],
            "W_V": [_flat(w) for w in f.w_v],
            "W_O": _flat(f.w_o),
        },
    }


def _shaped(data, shape: tuple[int, ...], what: str) -> np.ndarray:
    try:
        arr = np.asarray(data, dtype=np.float64).reshape(shape)
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"bad array for {what}: {exc}") from exc
    if not np.all(np.isfinite(arr)):
        raise SchemaError(f"non-finite values in {what}")
    return arr


def model_from_dict(obj: dict) -> RouterModel:
    if not isinstance(obj, dict):
        raise SchemaError("checkpoint must be a JSON object")
    version = obj.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise SchemaError(f"unknown format_version {version!r}")
    required = {"d_feat", "d", "heads", "retriever_names", "featurizer", "enc_r", "enc_g", "tokens", "fusion"}
    missing = required - obj.keys()
    if missing:
        raise SchemaError(f"checkpoint missing keys: {sorted(missing)}")
    try:
        d_feat = int(obj["d_feat"])
        d = int(obj["d"])
        heads = int(obj["heads"])
        names = [str(n) for n in obj["retriever_names"]]
        fz = obj["featurizer"]
        cfg = FeaturizerConfig(d_feat=d_feat, ngram_n=int(fz["ngram_n"]), boundary_char=str(fz["boundary_char"]))
        num_tokens = len(obj["tokens"])
        if heads < 1 or d % heads != 0:
            raise SchemaError(f"heads={heads} must divide d={d}")
        d_h = d // heads
        fu = obj["fusion"]
        model = RouterModel(
            featurizer=cfg,
            d=d,
            enc_r=EncoderParams(
                W=_shaped(obj["enc_r"]["W"], (d, d_feat), "enc_r.W"),
                b=_shaped(obj["enc_r"]["b"], (d,), "enc_r.b"),
            ),
            enc_g=EncoderParams(
                W=_shaped(obj["enc_g"]["W"], (d, d_feat), "enc_g.W"),
                b=_shaped(obj["enc_g"]["b"], (d,), "enc_g.b"),
            ),
            tokens=_shaped(obj["tokens"], (num_tokens, d_feat), "tokens"),
            fusion=FusionParams(
                w_q=_shaped(fu["W_Q"], (heads, d_h, d), "fusion.W_Q"),
                w_k=_shaped(fu["W_K"], (heads, d_h, d), "fusion.W_K"),
                w_v=_shaped(fu["W_V"], (heads, d_h, d), "fusion.W_V"),
                w_o=_shaped(fu["W_O"], (d, d), "fusion.W_O"),
            ),
            retriever_names=names,
        )
    except SchemaError:
        raise
    except (KeyError, TypeError, ValueError, ValidationError) as exc:
        raise SchemaError(f"malformed checkpoint: {exc}") from exc
    return model


def save_model(model: RouterModel, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)
        fh.write("\n")


def load_model(path: str | os.PathLike) -> RouterModel:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid checkpoint JSON: {exc}") from exc
    return model_from_dict(obj)


def copy_model(model: RouterModel) -> RouterModel:
    """Deep copy (fresh arrays) of every parameter."""
    return RouterModel(
        featurizer=model.featurizer,
        d=model.d,
        enc_r=EncoderParams(W=model.enc_r.W.copy(), b=model.enc_r.b.copy()),
        enc_g=EncoderParams(W=model.enc_g.W.copy(), b=model.enc_g.b.copy()),
        tokens=model.tokens.copy(),
        fusion=FusionParams(
            w_q=model.fusion.w_q.copy(),
            w_k=model.fusion.w_k.copy(),
            w_v=model.fusion.w_v.copy(),
            w_o=model.fusion.w_o.copy(),
        ),
        retriever_names=list(model.retriever_names),
    )


def models_equal(a: RouterModel, b: RouterModel) -> bool:
    """Byte-level equality of all parameters and metadata."""
    return (
        a.featurizer == b.featurizer
        and a.d == b.d
        and a.retriever_names == b.retriever_names
        and a.enc_r.W.tobytes() == b.enc_r.W.tobytes()
        and a.enc_r.b.tobytes() == b.enc_r.b.tobytes()
        and a.enc_g.W.tobytes() == b.enc_g.W.tobytes()
        and a.enc_g.b.tobytes() == b.enc_g.b.tobytes()
        and a.tokens.tobytes() == b.tokens.tobytes()
        and a.fusion.w_q.tobytes() == b.fusion.w_q.tobytes()
        and a.fusion.w_k.tobytes() == b.fusion.w_k.tobytes()
        and a.fusion.w_v.tobytes() == b.fusion.w_v.tobytes()
        and a.fusion.w_o.tobytes() == b.fusion.w_o.tobytes()
    )


# Unused import guard: `replace` and `field` are used by dataclasses above.
_ = replace
