"""Encoder/decoder transformer over context feature sequences.

The encoder consumes the fused per-step context features; the decoder
consumes 2-D offsets only (all context flows through the encoder memory)
and starts from a learned start token. Layers are post-norm: sublayer,
residual add, layer norm. Inference is autoregressive: each emitted offset
is appended to the decoder input until kappa offsets exist, then absolute
positions are rebuilt by cumulative sum from the last observed position.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DivergenceError
from .features import FeatureStats
from .serialize import load_bundle, save_bundle

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 3
    d_ff: int = 0        # 0 resolves to 4 * d_model
    dropout: float = 0.0
    out_dim: int = 2

    def __post_init__(self):
        if self.d_ff == 0:
            object.__setattr__(self, "d_ff", 4 * self.d_model)
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.d_model % 2 != 0:
            raise ValueError(f"d_model must be even for positional encoding, got {self.d_model}")
        if self.n_layers < 1:
            raise ValueError(f"n_layers must be >= 1, got {self.n_layers}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads


def paper_scale_config(feature_dim: int) -> ModelConfig:
    return ModelConfig(feature_dim=feature_dim, d_model=512, n_heads=8, n_layers=6)


def _attention_param_names(prefix: str):
    for p in ("wq", "wk", "wv", "wo"):
        yield f"{prefix}.{p}"
    for p in ("bq", "bk", "bv", "bo"):
        yield f"{prefix}.{p}"


class ModelParams:
    """All learnable weights, addressable by name, deterministic init."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.tensors: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        for name, shape in self.param_shapes(config).items():
            self.tensors[name] = Tensor(self._init_array(name, shape, rng))

    @staticmethod
    def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
        d, f = cfg.d_model, cfg.d_ff
        shapes: dict[str, tuple] = {
            "src_embed.w": (cfg.feature_dim, d),
            "src_embed.b": (d,),
            "tgt_embed.w": (cfg.out_dim, d),
            "tgt_embed.b": (d,),
            "start_token": (1, cfg.out_dim),
        }
        for i in range(cfg.n_layers):
            for name in _attention_param_names(f"enc{i}.attn"):
                shapes[name] = (d, d) if name.split(".")[-1].startswith("w") else (d,)
            shapes[f"enc{i}.ff.w1"] = (d, f)
            shapes[f"enc{i}.ff.b1"] = (f,)
            shapes[f"enc{i}.ff.w2"] = (f, d)
            shapes[f"enc{i}.ff.b2"] = (d,)
            shapes[f"enc{i}.norm1.gain"] = (d,)
            shapes[f"enc{i}.norm1.bias"] = (d,)
            shapes[f"enc{i}.norm2.gain"] = (d,)
            shapes[f"enc{i}.norm2.bias"] = (d,)
        for i in range(cfg.n_layers):
            for block in ("self_attn", "cross_attn"):
                for name in _attention_param_names(f"dec{i}.{block}"):
                    shapes[name] = (d, d) if name.split(".")[-1].startswith("w") else (d,)
            shapes[f"dec{i}.ff.w1"] = (d, f)
            shapes[f"dec{i}.ff.b1"] = (f,)
            shapes[f"dec{i}.ff.w2"] = (f, d)
            shapes[f"dec{i}.ff.b2"] = (d,)
            for n in (1, 2, 3):
                shapes[f"dec{i}.norm{n}.gain"] = (d,)
                shapes[f"dec{i}.norm{n}.bias"] = (d,)
        shapes["out_proj.w"] = (d, cfg.out_dim)
        shapes["out_proj.b"] = (cfg.out_dim,)
        return shapes

    @staticmethod
    def _init_array(name: str, shape: tuple, rng: np.random.Generator) -> np.ndarray:
        if name.endswith(".gain"):
            return np.ones(shape)
        if len(shape) == 2 and name != "start_token":
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            return rng.uniform(-limit, limit, shape)
        return np.zeros(shape)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.tensors.items()}


# ------------------------------------------------------------- layers

def positional_encoding(seq_len: int, d_model: int) -> np.ndarray:
    """Interleaved sin/cos over a geometric frequency ladder.

    pe[p, 2k] = sin(p / 10000^(2k/d_model)), pe[p, 2k+1] = cos(same).
    """
    if d_model % 2 != 0:
        raise ValueError(f"d_model must be even, got {d_model}")
    if seq_len < 1:
        raise ValueError(f"seq_len must be >= 1, got {seq_len}")
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    div = 10000.0 ** (np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    pe = np.empty((seq_len, d_model))
    pe[:, 0::2] = np.sin(pos / div)
    pe[:, 1::2] = np.cos(pos / div)
    return pe


def embed_source(features, params: ModelParams) -> Tensor:
    x = ad.as_tensor(features)
    if x.shape[1] != params.config.feature_dim:
        raise ValueError(
            f"feature dim {x.shape[1]} does not match model feature_dim {params.config.feature_dim}"
        )
    emb = ad.affine(x, params["src_embed.w"], params["src_embed.b"])
    return ad.add(emb, Tensor(positional_encoding(x.shape[0], params.config.d_model)))


def embed_target(offsets, params: ModelParams) -> Tensor:
    y = ad.as_tensor(offsets)
    emb = ad.affine(y, params["tgt_embed.w"], params["tgt_embed.b"])
    # decoder positions restart at 0, independent of the encoder clock
    return ad.add(emb, Tensor(positional_encoding(y.shape[0], params.config.d_model)))


def causal_mask(n: int) -> np.ndarray:
    """True marks a blocked (future) key position."""
    return np.triu(np.ones((n, n), dtype=bool), k=1)


def multi_head_attention(
    queries_in: Tensor,
    keys_in: Tensor,
    values_in: Tensor,
    mask: np.ndarray | None,
    params: ModelParams,
    prefix: str,
    attn_sink: list | None = None,
) -> Tensor:
    cfg = params.config
    lq, lk = queries_in.shape[0], keys_in.shape[0]
    if mask is not None:
        if mask.shape != (lq, lk):
            raise ValueError(f"mask shape {mask.shape} does not match ({lq}, {lk})")
        if mask.all(axis=1).any():
            raise ValueError(f"{prefix}: attention row is fully masked, no valid key")
        mask_bias = Tensor(np.where(mask, -np.inf, 0.0))

    q = ad.affine(queries_in, params[f"{prefix}.wq"], params[f"{prefix}.bq"])
    k = ad.affine(keys_in, params[f"{prefix}.wk"], params[f"{prefix}.bk"])
    v = ad.affine(values_in, params[f"{prefix}.wv"], params[f"{prefix}.bv"])

    d_k = cfg.d_k
    inv_sqrt = 1.0 / np.sqrt(d_k)
    heads = []
    for h in range(cfg.n_heads):
        lo, hi = h * d_k, (h + 1) * d_k
        qh = ad.slice_cols(q, lo, hi)
        kh = ad.slice_cols(k, lo, hi)
        vh = ad.slice_cols(v, lo, hi)
        scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), inv_sqrt)
        if mask is not None:
            scores = ad.add(scores, mask_bias)
        weights = ad.softmax(scores, axis=-1)
        if attn_sink is not None:
            attn_sink.append({"block": prefix, "head": h, "weights": weights.data.copy()})
        heads.append(ad.matmul(weights, vh))
    merged = heads[0] if len(heads) == 1 else ad.concat(heads, axis=1)
    return ad.affine(merged, params[f"{prefix}.wo"], params[f"{prefix}.bo"])


def _feed_forward(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    hidden = ad.relu(ad.affine(x, params[f"{prefix}.w1"], params[f"{prefix}.b1"]))
    return ad.affine(hidden, params[f"{prefix}.w2"], params[f"{prefix}.b2"])


def _sublayer(x: Tensor, out: Tensor, params: ModelParams, norm: str,
              rng: np.random.Generator | None) -> Tensor:
    cfg = params.config
    if rng is not None and cfg.dropout > 0.0:
        out = ad.dropout(out, cfg.dropout, rng)
    return ad.layer_norm(ad.add(x, out), params[f"{norm}.gain"], params[f"{norm}.bias"])


def encoder_forward(
    embedded: Tensor,
    params: ModelParams,
    attn_sink: list | None = None,
    rng: np.random.Generator | None = None,
) -> Tensor:
    x = embedded
    for i in range(params.config.n_layers):
        attn = multi_head_attention(x, x, x, None, params, f"enc{i}.attn", attn_sink)
        x = _sublayer(x, attn, params, f"enc{i}.norm1", rng)
        x = _sublayer(x, _feed_forward(x, params, f"enc{i}.ff"), params, f"enc{i}.norm2", rng)
    return x


def decoder_forward(
    target_embedded: Tensor,
    memory: Tensor,
    params: ModelParams,
    attn_sink: list | None = None,
    rng: np.random.Generator | None = None,
) -> Tensor:
    m = target_embedded.shape[0]
    if m == 0:
        raise ValueError("decoder target is empty")
    mask = causal_mask(m)
    x = target_embedded
    for i in range(params.config.n_layers):
        self_attn = multi_head_attention(x, x, x, mask, params, f"dec{i}.self_attn", attn_sink)
        x = _sublayer(x, self_attn, params, f"dec{i}.norm1", rng)
        cross = multi_head_attention(x, memory, memory, None, params, f"dec{i}.cross_attn", attn_sink)
        x = _sublayer(x, cross, params, f"dec{i}.norm2", rng)
        x = _sublayer(x, _feed_forward(x, params, f"dec{i}.ff"), params, f"dec{i}.norm3", rng)
    return x


def project_output(decoded: Tensor, params: ModelParams) -> Tensor:
    return ad.affine(decoded, params["out_proj.w"], params["out_proj.b"])


# ---------------------------------------------------------- full model

def teacher_forced_offsets(
    params: ModelParams,
    features_std: np.ndarray,
    target_offsets: np.ndarray,
    attn_sink: list | None = None,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Predicted offsets (kappa, 2) under teacher forcing.

    Decoder input row i is the ground-truth offset i-1 (the start token at
    row 0), so output row i is the prediction for offset i.
    """
    memory = encoder_forward(embed_source(features_std, params), params, attn_sink, rng)
    kappa = len(target_offsets)
    dec_in = params["start_token"]
    if kappa > 1:
        dec_in = ad.concat([dec_in, Tensor(np.asarray(target_offsets)[: kappa - 1])], axis=0)
    decoded = decoder_forward(embed_target(dec_in, params), memory, params, attn_sink, rng)
    return project_output(decoded, params)


def predict_autoregressive(
    params: ModelParams,
    features_std: np.ndarray,
    last_observed_pos: np.ndarray,
    kappa: int,
) -> np.ndarray:
    """Roll the decoder forward kappa steps; returns absolute positions."""
    if kappa < 1:
        raise ValueError(f"kappa must be >= 1, got {kappa}")
    memory = encoder_forward(embed_source(features_std, params), params)
    offsets: list[np.ndarray] = []
    for step in range(kappa):
        dec_in = params["start_token"]
        if offsets:
            dec_in = ad.concat([dec_in, Tensor(np.stack(offsets))], axis=0)
        decoded = decoder_forward(embed_target(dec_in, params), memory, params)
        out = project_output(decoded, params)
        nxt = out.data[-1]
        if not np.all(np.isfinite(nxt)):
            raise DivergenceError(f"non-finite offset at decode step {step}")
        offsets.append(nxt.copy())
    return np.asarray(last_observed_pos, dtype=np.float64) + np.cumsum(offsets, axis=0)


# ---------------------------------------------------------- checkpoints

def save_checkpoint(
    path,
    params: ModelParams,
    stats: FeatureStats | None = None,
    meta: dict | None = None,
    adam_moments: tuple[dict, dict, int] | None = None,
) -> None:
    """Self-describing container: config + standardization stats + weights."""
    arrays = {f"param.{name}": arr for name, arr in params.arrays().items()}
    if stats is not None:
        arrays["stats.mean"] = stats.mean
        arrays["stats.std"] = stats.std
    header = {
        "kind": "checkpoint",
        "checkpoint_version": CHECKPOINT_VERSION,
        "config": asdict(params.config),
    }
    if adam_moments is not None:
        m, v, tau = adam_moments
        for name, arr in m.items():
            arrays[f"adam.m.{name}"] = arr
        for name, arr in v.items():
            arrays[f"adam.v.{name}"] = arr
        header["adam_tau"] = tau
    header.update(meta or {})
    save_bundle(path, arrays, header)


@dataclass
class Checkpoint:
    params: ModelParams
    stats: FeatureStats | None
    meta: dict
    adam_moments: tuple[dict, dict, int] | None


def load_checkpoint(path) -> Checkpoint:
    arrays, header = load_bundle(path)
    config = ModelConfig(**header["config"])
    params = ModelParams(config)
    for name in params.names():
        params.tensors[name] = Tensor(arrays[f"param.{name}"])
    stats = None
    if "stats.mean" in arrays:
        stats = FeatureStats(arrays["stats.mean"], arrays["stats.std"])
    adam = None
    if "adam_tau" in header:
        m = {n[len("adam.m."):]: a for n, a in arrays.items() if n.startswith("adam.m.")}
        v = {n[len("adam.v."):]: a for n, a in arrays.items() if n.startswith("adam.v.")}
        adam = (m, v, int(header["adam_tau"]))
    return Checkpoint(params=params, stats=stats, meta=header, adam_moments=adam)
