"""Multi-channel 1-D CNN document feature extractor."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .synth import PAD


@dataclass
class EncoderConfig:
    d_e: int = 100
    filter_sizes: Tuple[int, ...] = (1, 3, 5, 7, 10)
    d_c: int = 128
    max_len: int = 128

    def __post_init__(self):
        self.filter_sizes = tuple(int(k) for k in self.filter_sizes)
        if min(self.d_e, self.d_c, self.max_len, *self.filter_sizes) < 1:
            raise ValueError("encoder dimensions must be positive")
        if min(self.filter_sizes) > self.max_len:
            raise ValueError("smallest filter wider than max_len")

    @property
    def width(self) -> int:
        return len(self.filter_sizes) * self.d_c


@dataclass
class DocRepr:
    H: Tensor        # (B, N, l*d_c) per-position features
    pooled: Tensor   # (B, l*d_c) max over positions


def glorot(rng: np.random.Generator, shape: Sequence[int], fan_in: int, fan_out: int,
           dtype=np.float64) -> np.ndarray:
    lim = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=shape).astype(dtype)


def init_encoder_params(cfg: EncoderConfig, vocab_size: int, rng: np.random.Generator,
                        dtype=np.float64, emb_scale: float = 1.0) -> Dict[str, Tensor]:
    E = (rng.standard_normal((vocab_size, cfg.d_e)) * emb_scale).astype(dtype)
    E[PAD] = 0.0
    params = {"E": Tensor(E, requires_grad=True)}
    for k in cfg.filter_sizes:
        params[f"conv{k}_w"] = Tensor(glorot(rng, (k, cfg.d_e, cfg.d_c), k * cfg.d_e, cfg.d_c, dtype), True)
        params[f"conv{k}_b"] = Tensor(np.zeros(cfg.d_c, dtype=dtype), True)
    return params


def pad_batch(token_lists: Sequence[Sequence[int]], max_len: int, min_len: int = 1
              ) -> Tuple[np.ndarray, np.ndarray]:
    """Truncate to ``max_len`` and right-pad to a common length >= ``min_len``."""
    n = max(min_len, max((min(len(t), max_len) for t in token_lists), default=0))
    out = np.full((len(token_lists), n), PAD, dtype=np.int64)
    for i, t in enumerate(token_lists):
        t = list(t)[:max_len]
        out[i, :len(t)] = t
    return out, out != PAD


def embed(tokens: np.ndarray, E: Tensor) -> Tensor:
    """Look up token embeddings; pad positions map to the zero vector."""
    tokens = np.asarray(tokens)
    if tokens.size and tokens.max() >= E.shape[0]:
        raise IndexError(f"token id {int(tokens.max())} outside vocabulary of {E.shape[0]}")
    X = ad.take_rows(E, tokens)
    keep = (tokens != PAD).astype(E.data.dtype)[..., None]
    return ad.mul(X, ad.const(np.broadcast_to(keep, X.shape).copy()))


def forward(X: Tensor, cfg: EncoderConfig, params: Dict[str, Tensor]) -> DocRepr:
    """Per channel: right-pad by k-1, valid conv, bias, relu; concat channels.

    Right-padding keeps every channel at N positions so the per-position
    maps line up for attention.
    """
    squeeze = X.ndim == 2
    if squeeze:
        X = ad.reshape(X, (1,) + X.shape)
    B, N, d = X.shape
    if d != cfg.d_e:
        raise ShapeError(f"embedding width {d} does not match d_e={cfg.d_e}")
    if N < max(cfg.filter_sizes):
        raise ShapeError(f"sequence length {N} shorter than filter width {max(cfg.filter_sizes)}")
    maps = []
    for k in cfg.filter_sizes:
        Xk = X if k == 1 else ad.concat([X, ad.const(np.zeros((B, k - 1, d), X.data.dtype))], axis=1)
        f = ad.relu(ad.add(ad.conv1d(Xk, params[f"conv{k}_w"]), params[f"conv{k}_b"]))
        maps.append(f)
    H = maps[0] if len(maps) == 1 else ad.concat(maps, axis=-1)
    pooled = ad.max_(H, axis=1)
    if squeeze:
        H = ad.reshape(H, H.shape[1:])
        pooled = ad.reshape(pooled, pooled.shape[1:])
    return DocRepr(H, pooled)
