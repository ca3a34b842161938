"""Compact vision-transformer encoder with band-specific trainable tail blocks.

Pre-norm blocks (LN -> MHSA -> residual, LN -> MLP/GELU -> residual). The
patch projection, CLS token, positional embeddings and the first L-t blocks
form a frozen trunk shared by all bands; the final t blocks are independent
per band and are the only encoder tensors the optimizer sees. Parameter
naming follows

    patch_proj.weight / patch_proj.bias        (3*P*P, d) / (d,)
    cls_token                                  (d,)
    pos_emb                                    (N+1, d)
    trunk.block{i}.{norm1|attn|norm2|mlp}.*    i in 0..L-t-1
    band{wavelength}.block{j}....              j in L-t..L-1

with linear weights stored (in_features, out_features). Patch pixels are
flattened in (channel, row, col) order, patches enumerated row-major.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError
from .spectral_data import BANDS

LN_EPS = 1e-5


@dataclass(frozen=True)
class ViTConfig:
    image_side: int = 32
    patch_size: int = 4
    embed_dim: int = 64
    depth: int = 4
    heads: int = 4
    mlp_ratio: float = 4.0
    trainable_last_blocks: int = 1

    def __post_init__(self):
        if self.image_side % self.patch_size != 0:
            raise ConfigError("image_side must be divisible by patch_size")
        if self.embed_dim % self.heads != 0:
            raise ConfigError("embed_dim must be divisible by heads")
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if not 1 <= self.trainable_last_blocks <= self.depth:
            raise ConfigError("trainable_last_blocks must be in [1, depth]")

    @property
    def n_patches(self) -> int:
        return (self.image_side // self.patch_size) ** 2

    @property
    def mlp_hidden(self) -> int:
        return int(round(self.embed_dim * self.mlp_ratio))


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal(0, std) clipped to +-2 std; standard ViT projection init."""
    x = rng.normal(0.0, std, shape)
    return np.clip(x, -2.0 * std, 2.0 * std).astype(np.float32)


def _block_params(prefix: str, cfg: ViTConfig, rng, trainable: bool) -> dict[str, Tensor]:
    d = cfg.embed_dim
    h = cfg.mlp_hidden

    def p(name, data):
        return ad.parameter(np.asarray(data, dtype=np.float32), f"{prefix}.{name}")

    params = {
        f"{prefix}.norm1.gamma": p("norm1.gamma", np.ones(d)),
        f"{prefix}.norm1.beta": p("norm1.beta", np.zeros(d)),
        f"{prefix}.attn.wq": p("attn.wq", trunc_normal(rng, (d, d))),
        f"{prefix}.attn.bq": p("attn.bq", np.zeros(d)),
        f"{prefix}.attn.wk": p("attn.wk", trunc_normal(rng, (d, d))),
        f"{prefix}.attn.bk": p("attn.bk", np.zeros(d)),
        f"{prefix}.attn.wv": p("attn.wv", trunc_normal(rng, (d, d))),
        f"{prefix}.attn.bv": p("attn.bv", np.zeros(d)),
        f"{prefix}.attn.wo": p("attn.wo", trunc_normal(rng, (d, d))),
        f"{prefix}.attn.bo": p("attn.bo", np.zeros(d)),
        f"{prefix}.norm2.gamma": p("norm2.gamma", np.ones(d)),
        f"{prefix}.norm2.beta": p("norm2.beta", np.zeros(d)),
        f"{prefix}.mlp.w1": p("mlp.w1", trunc_normal(rng, (d, h))),
        f"{prefix}.mlp.b1": p("mlp.b1", np.zeros(h)),
        f"{prefix}.mlp.w2": p("mlp.w2", trunc_normal(rng, (h, d))),
        f"{prefix}.mlp.b2": p("mlp.b2", np.zeros(d)),
    }
    for t in params.values():
        t.requires_grad = trainable
    return params


def init_vit_params(
    cfg: ViTConfig, rng: np.random.Generator, bands: tuple[int, ...] = BANDS
) -> dict[str, Tensor]:
    """Initialize the full encoder.

    The band-specific tail blocks start from one shared draw (all bands
    identical at init, mirroring fine-tuning from a common backbone) and
    diverge through training; they never alias each other's storage.
    """
    d = cfg.embed_dim
    in_dim = 3 * cfg.patch_size**2
    params: dict[str, Tensor] = {
        "patch_proj.weight": ad.parameter(trunc_normal(rng, (in_dim, d)), "patch_proj.weight"),
        "patch_proj.bias": ad.parameter(np.zeros(d, dtype=np.float32), "patch_proj.bias"),
        "cls_token": ad.parameter(np.zeros(d, dtype=np.float32), "cls_token"),
        "pos_emb": ad.parameter(trunc_normal(rng, (cfg.n_patches + 1, d)), "pos_emb"),
    }
    for t in params.values():
        t.requires_grad = False  # frozen after initialization

    first_tail = cfg.depth - cfg.trainable_last_blocks
    for i in range(first_tail):
        params.update(_block_params(f"trunk.block{i}", cfg, rng, trainable=False))

    tail_draws = []
    for j in range(first_tail, cfg.depth):
        tail_draws.append(_block_params(f"__tail{j}", cfg, rng, trainable=True))
    for band in bands:
        for j, draw in zip(range(first_tail, cfg.depth), tail_draws):
            for key, tensor in draw.items():
                name = key.replace(f"__tail{j}", f"band{band}.block{j}")
                params[name] = ad.parameter(tensor.data.copy(), name)
    return params


def band_block_names(cfg: ViTConfig, band: int) -> list[str]:
    first_tail = cfg.depth - cfg.trainable_last_blocks
    names = []
    for j in range(first_tail, cfg.depth):
        prefix = f"band{band}.block{j}"
        names.extend(
            f"{prefix}.{suffix}"
            for suffix in (
                "norm1.gamma", "norm1.beta",
                "attn.wq", "attn.bq", "attn.wk", "attn.bk",
                "attn.wv", "attn.bv", "attn.wo", "attn.bo",
                "norm2.gamma", "norm2.beta",
                "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2",
            )
        )
    return names


def patch_embed(x: Tensor, params: dict[str, Tensor], cfg: ViTConfig) -> Tensor:
    """(B, 3, S, S) -> (B, N+1, d) tokens with CLS prepended and pos-emb added."""
    b, c, hh, ww = x.shape
    if c != 3 or hh != cfg.image_side or ww != cfg.image_side:
        raise ValueError(f"expected (B,3,{cfg.image_side},{cfg.image_side}), got {x.shape}")
    p = cfg.patch_size
    n_side = cfg.image_side // p
    patches = (
        x.reshape(b, 3, n_side, p, n_side, p)
        .transpose(0, 2, 4, 1, 3, 5)
        .reshape(b, n_side * n_side, 3 * p * p)
    )
    tokens = ad.linear(patches, params["patch_proj.weight"], params["patch_proj.bias"])
    cls = params["cls_token"].reshape(1, 1, cfg.embed_dim).expand((b, 1, cfg.embed_dim))
    seq = ad.concat([cls, tokens], axis=1)
    return seq + params["pos_emb"]


def _attention(xn: Tensor, params, prefix: str, cfg: ViTConfig) -> Tensor:
    b, t, d = xn.shape
    h = cfg.heads
    dh = d // h
    q = ad.linear(xn, params[f"{prefix}.attn.wq"], params[f"{prefix}.attn.bq"])
    k = ad.linear(xn, params[f"{prefix}.attn.wk"], params[f"{prefix}.attn.bk"])
    v = ad.linear(xn, params[f"{prefix}.attn.wv"], params[f"{prefix}.attn.bv"])
    q = q.reshape(b, t, h, dh).transpose(0, 2, 1, 3)
    k = k.reshape(b, t, h, dh).transpose(0, 2, 1, 3)
    v = v.reshape(b, t, h, dh).transpose(0, 2, 1, 3)
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
    attn = ad.softmax(scores, axis=-1)
    ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(b, t, d)
    return ad.linear(ctx, params[f"{prefix}.attn.wo"], params[f"{prefix}.attn.bo"])


def _mlp(xn: Tensor, params, prefix: str) -> Tensor:
    hidden = ad.gelu(ad.linear(xn, params[f"{prefix}.mlp.w1"], params[f"{prefix}.mlp.b1"]))
    return ad.linear(hidden, params[f"{prefix}.mlp.w2"], params[f"{prefix}.mlp.b2"])


def encoder_block(x: Tensor, params, prefix: str, cfg: ViTConfig) -> Tensor:
    xn1 = ad.layer_norm(x, params[f"{prefix}.norm1.gamma"], params[f"{prefix}.norm1.beta"],
                        eps=LN_EPS)
    x = x + _attention(xn1, params, prefix, cfg)
    xn2 = ad.layer_norm(x, params[f"{prefix}.norm2.gamma"], params[f"{prefix}.norm2.beta"],
                        eps=LN_EPS)
    return x + _mlp(xn2, params, prefix)


def encode(seq: Tensor, params: dict[str, Tensor], cfg: ViTConfig, band: int) -> Tensor:
    """Run all blocks: frozen trunk first, then this band's trainable tail."""
    first_tail = cfg.depth - cfg.trainable_last_blocks
    if f"band{band}.block{first_tail}.attn.wq" not in params:
        raise ConfigError(f"no trainable blocks for band {band}")
    x = seq
    for i in range(cfg.depth):
        prefix = f"trunk.block{i}" if i < first_tail else f"band{band}.block{i}"
        x = encoder_block(x, params, prefix, cfg)
    return x


def encoder_forward(x: Tensor, params, cfg: ViTConfig, band: int) -> Tensor:
    return encode(patch_embed(x, params, cfg), params, cfg, band)


def encoder_backward(
    output_tokens: Tensor, seq_grad: np.ndarray, params: dict[str, Tensor]
) -> dict[str, np.ndarray]:
    """Reverse pass from an encode()/encoder_forward() output.

    The output tensor carries the taped forward graph; seeding it with
    `seq_grad` accumulates gradients onto the trainable parameters. Returns
    a full name -> gradient map in which frozen tensors appear as exact
    zeros.
    """
    ad.zero_grads(params.values())
    output_tokens.backward(np.asarray(seq_grad, dtype=output_tokens.data.dtype))
    return {
        name: (t.grad if t.grad is not None else np.zeros_like(t.data))
        for name, t in params.items()
    }


def import_named_tensors(
    params: dict[str, Tensor], source: dict[str, np.ndarray]
) -> dict[str, list[str]]:
    """Copy external named tensors into matching parameters (shape-checked).

    Returns {"loaded": [...], "unmatched": [...]} where unmatched lists source
    names absent from the model. Intended for bringing in externally trained
    weights that follow the naming scheme above.
    """
    loaded, unmatched = [], []
    for name, arr in source.items():
        if name not in params:
            unmatched.append(name)
            continue
        target = params[name]
        arr = np.asarray(arr)
        if arr.shape != target.data.shape:
            raise ValueError(
                f"shape mismatch for {name}: model {target.data.shape}, source {arr.shape}"
            )
        target.data = arr.astype(target.data.dtype, copy=True)
        loaded.append(name)
    return {"loaded": loaded, "unmatched": unmatched}
