"""Per-band classification head.

Pipeline (order is contractual): inject the learnable spectral embedding into
the CLS token and layer-normalize, fuse CLS with the mean patch token through
a linear projection, apply band-adaptive inverted dropout, layer-normalize,
standardize with frozen training-set feature statistics, then classify with a
2-way linear layer. Ties at p=(0.5, 0.5) resolve to "attack" (fail-secure).

Checkpoint naming: head.band{wavelength}.{e_k | ln_spe.gamma | ln_spe.beta |
fuse.weight | fuse.bias | ln_fuse.gamma | ln_fuse.beta | cls.weight |
cls.bias} plus scalar p_k and vectors feat_mu / feat_sigma.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .vit_encoder import LN_EPS, trunc_normal


@dataclass(frozen=True)
class DropoutConstants:
    kappa: float = 0.5
    c: float = 500.0
    p_max: float = 0.2


DEFAULT_DROPOUT = DropoutConstants()


def band_dropout_rate(n_eff: int, consts: DropoutConstants = DEFAULT_DROPOUT) -> float:
    """Size-based rate: min(p_max, kappa * C / max(n_eff, 1)); fixed per band."""
    if n_eff < 0:
        raise ValueError("effective sample count cannot be negative")
    return min(consts.p_max, consts.kappa * consts.c / max(n_eff, 1))


@dataclass
class HeadState:
    """All per-band head state: trainable tensors plus frozen statistics."""

    band: int
    params: dict[str, Tensor]
    token_fusion: bool = True
    use_spe: bool = True
    p_k: float = 0.0
    feat_mu: np.ndarray = field(default_factory=lambda: np.zeros(1))
    feat_sigma: np.ndarray = field(default_factory=lambda: np.ones(1))

    def key(self, suffix: str) -> str:
        return f"head.band{self.band}.{suffix}"

    def tensor(self, suffix: str) -> Tensor:
        return self.params[self.key(suffix)]

    def trainable(self) -> dict[str, Tensor]:
        return {k: t for k, t in self.params.items() if t.requires_grad}


def init_head(
    band: int, d: int, rng: np.random.Generator, token_fusion: bool = True,
    use_spe: bool = True,
) -> HeadState:
    prefix = f"head.band{band}"

    def p(suffix, data, trainable=True):
        t = ad.parameter(np.asarray(data, dtype=np.float32), f"{prefix}.{suffix}")
        t.requires_grad = trainable
        return t

    fuse_in = 2 * d if token_fusion else d
    params = {
        f"{prefix}.e_k": p("e_k", trunc_normal(rng, (d,)), trainable=use_spe),
        f"{prefix}.ln_spe.gamma": p("ln_spe.gamma", np.ones(d)),
        f"{prefix}.ln_spe.beta": p("ln_spe.beta", np.zeros(d)),
        f"{prefix}.fuse.weight": p("fuse.weight", trunc_normal(rng, (fuse_in, d))),
        f"{prefix}.fuse.bias": p("fuse.bias", np.zeros(d)),
        f"{prefix}.ln_fuse.gamma": p("ln_fuse.gamma", np.ones(d)),
        f"{prefix}.ln_fuse.beta": p("ln_fuse.beta", np.zeros(d)),
        f"{prefix}.cls.weight": p("cls.weight", trunc_normal(rng, (d, 2))),
        f"{prefix}.cls.bias": p("cls.bias", np.zeros(2)),
    }
    if not use_spe:
        params[f"{prefix}.e_k"].data = np.zeros(d, dtype=np.float32)
    head = HeadState(band=band, params=params, token_fusion=token_fusion, use_spe=use_spe)
    head.feat_mu = np.zeros(d, dtype=np.float32)
    head.feat_sigma = np.ones(d, dtype=np.float32)
    return head


def spe_inject(cls: Tensor, head: HeadState) -> Tensor:
    """LayerNorm(cls + E_k). With SPE ablated, E_k is frozen at zero."""
    return ad.layer_norm(
        cls + head.tensor("e_k"),
        head.tensor("ln_spe.gamma"),
        head.tensor("ln_spe.beta"),
        eps=LN_EPS,
    )


def token_fuse(cls_spe: Tensor, patches: Tensor, head: HeadState) -> Tensor:
    """Project [CLS_spe ; mean(patches)] back to model dimension.

    With token fusion ablated the head projects the CLS token alone through
    a d x d linear instead.
    """
    if head.token_fusion:
        if patches.shape[-2] < 1:
            raise ValueError("token_fuse needs at least one patch token")
        mean_patch = patches.mean(axis=-2)
        fused_in = ad.concat([cls_spe, mean_patch], axis=-1)
    else:
        fused_in = cls_spe
    return ad.linear(fused_in, head.tensor("fuse.weight"), head.tensor("fuse.bias"))


def apply_dropout(x: Tensor, p: float, mode: str, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout in train mode; identity in eval mode or at p = 0."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval" or p == 0.0:
        return x
    if rng is None:
        raise ValueError("train-mode dropout needs a generator")
    return ad.dropout(x, p, rng)


def feature_normalize(x: Tensor, mu: np.ndarray, sigma: np.ndarray) -> Tensor:
    if not (np.asarray(sigma) > 0).all():
        raise ValueError("degenerate feature statistics: sigma must be positive")
    return (x - Tensor(mu)) * Tensor(1.0 / np.asarray(sigma))


def classify(f_norm: Tensor, head: HeadState) -> tuple[Tensor, Tensor]:
    logits = ad.linear(f_norm, head.tensor("cls.weight"), head.tensor("cls.bias"))
    return logits, ad.softmax(logits, axis=-1)


def predictions(probs: np.ndarray) -> np.ndarray:
    """argmax with ties resolved toward class 1 (attack)."""
    p = np.asarray(probs)
    return (p[..., 1] >= p[..., 0]).astype(np.int64)


def head_forward(
    tokens: Tensor,
    head: HeadState,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor, Tensor]:
    """tokens (B, N+1, d) -> (F_norm, logits, probs); order per the pipeline."""
    cls = tokens[:, 0, :]
    patches = tokens[:, 1:, :]
    cls_spe = spe_inject(cls, head)
    fused = token_fuse(cls_spe, patches, head)
    dropped = apply_dropout(fused, head.p_k, mode, rng)
    f_k = ad.layer_norm(
        dropped, head.tensor("ln_fuse.gamma"), head.tensor("ln_fuse.beta"), eps=LN_EPS
    )
    f_norm = feature_normalize(f_k, head.feat_mu, head.feat_sigma)
    logits, probs = classify(f_norm, head)
    return f_norm, logits, probs


def set_feature_stats(head: HeadState, features: np.ndarray) -> None:
    """Freeze per-dimension mean/std (population, floored) from training features."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 1:
        raise ValueError("need a (n, d) feature matrix")
    head.feat_mu = feats.mean(axis=0).astype(np.float32)
    head.feat_sigma = np.maximum(feats.std(axis=0), 1e-8).astype(np.float32)
