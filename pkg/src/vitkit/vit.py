"""ViT model family: patch flattening, embedding, encoder blocks, classifier head.

Blocks use the pre-norm arrangement: x + MHA(LN(x)), then + MLP(LN(.)) with
GeLU. Classification reads the final representation of a learned class token
prepended at sequence position 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from vitkit import tensor as T
from vitkit.tensor import Parameter, Tensor
from vitkit.util import rng_for


@dataclass(frozen=True)
class ViTConfig:
    patch_size: int
    layers: int
    hidden_size: int
    mlp_size: int
    heads: int
    num_classes: int
    image_resolution: int
    channels: int = 3

    def __post_init__(self):
        for field in (
            "patch_size",
            "layers",
            "hidden_size",
            "mlp_size",
            "heads",
            "num_classes",
            "image_resolution",
            "channels",
        ):
            if getattr(self, field) <= 0:
                raise ValueError(f"{field} must be positive")
        if self.image_resolution % self.patch_size != 0:
            raise ValueError(
                f"image_resolution {self.image_resolution} not divisible by "
                f"patch_size {self.patch_size}"
            )
        if self.hidden_size % self.heads != 0:
            raise ValueError(
                f"hidden_size {self.hidden_size} not divisible by heads {self.heads}"
            )

    @property
    def num_patches(self) -> int:
        side = self.image_resolution // self.patch_size
        return side * side

    @property
    def seq_len(self) -> int:
        return self.num_patches + 1

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.heads

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels


_PRESETS = {
    "base16": dict(patch_size=16, layers=12, hidden_size=768, mlp_size=3072, heads=12,
                   num_classes=1000, image_resolution=224),
    "large16": dict(patch_size=16, layers=24, hidden_size=1024, mlp_size=4096, heads=16,
                    num_classes=1000, image_resolution=224),
    "huge14": dict(patch_size=14, layers=32, hidden_size=1280, mlp_size=5120, heads=16,
                   num_classes=1000, image_resolution=224),
    # Desk-scale preset for tests and smoke runs.
    "tiny": dict(patch_size=4, layers=2, hidden_size=64, mlp_size=128, heads=4,
                 num_classes=4, image_resolution=32),
}


def preset_config(variant: str, *, image_resolution: Optional[int] = None,
                  num_classes: Optional[int] = None) -> ViTConfig:
    key = variant.lower()
    if key not in _PRESETS:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(_PRESETS)}")
    cfg = ViTConfig(**_PRESETS[key])
    if image_resolution is not None:
        cfg = replace(cfg, image_resolution=image_resolution)
    if num_classes is not None:
        cfg = replace(cfg, num_classes=num_classes)
    return cfg


def parameter_count(config: ViTConfig) -> int:
    """Analytic total of trainable scalars, without allocating the model."""
    d, m = config.hidden_size, config.mlp_size
    total = config.patch_dim * d + d          # patch projection
    total += d                                # class token
    total += config.seq_len * d               # position embeddings
    per_layer = 4 * d                         # two layer norms
    per_layer += 4 * (d * d + d)              # Wq, Wk, Wv, W_O with biases
    per_layer += d * m + m + m * d + d        # MLP in/out
    total += config.layers * per_layer
    total += 2 * d                            # final norm
    total += d * config.num_classes + config.num_classes
    return total


# functional pieces --------------------------------------------------------


def patchify(image: Tensor, patch_size: int) -> Tensor:
    """Flatten an (H, W, C) image (or batch) into (N, P*P*C) raster-ordered rows."""
    if not isinstance(image, Tensor):
        image = Tensor(image)
    batched = image.ndim == 4
    if image.ndim not in (3, 4):
        raise ValueError(f"patchify expects (H, W, C) or (B, H, W, C), got {image.shape}")
    h, w, c = image.shape[-3:]
    p = patch_size
    if h % p != 0 or w % p != 0:
        raise ValueError(f"image {h}x{w} not divisible by patch size {p}")
    gh, gw = h // p, w // p
    lead = image.shape[:1] if batched else ()
    x = T.reshape(image, lead + (gh, p, gw, p, c))
    perm = (0, 2, 1, 3, 4) if not batched else (0, 1, 3, 2, 4, 5)
    x = T.transpose(x, perm)
    return T.reshape(x, lead + (gh * gw, p * p * c))


def unpatchify(patches: np.ndarray, height: int, width: int, channels: int,
               patch_size: int) -> np.ndarray:
    """Inverse of patchify on raw arrays; used to verify losslessness."""
    p = patch_size
    gh, gw = height // p, width // p
    x = patches.reshape(gh, gw, p, p, channels)
    return x.transpose(0, 2, 1, 3, 4).reshape(height, width, channels)


def attention_head(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(Q K^T / sqrt(d_k)) V over the last two axes."""
    if q.shape[-1] != k.shape[-1]:
        raise ValueError(f"query/key dims differ: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ValueError(f"key/value token counts differ: {k.shape} vs {v.shape}")
    d_k = k.shape[-1]
    scores = T.matmul(q, T.swap_last(k)) * (1.0 / math.sqrt(d_k))
    return T.matmul(T.softmax(scores, axis=-1), v)


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return T.matmul(x, w) + b


def multi_head(x: Tensor, params: dict, heads: int) -> Tensor:
    """Concatenated per-head attention followed by the output projection W_O."""
    d = x.shape[-1]
    if d % heads != 0:
        raise ValueError(f"hidden size {d} not divisible by {heads} heads")
    dk = d // heads
    q = _linear(x, params["wq"], params["bq"])
    k = _linear(x, params["wk"], params["bk"])
    v = _linear(x, params["wv"], params["bv"])
    outs = []
    for h in range(heads):
        s = slice(h * dk, (h + 1) * dk)
        outs.append(attention_head(q[..., s], k[..., s], v[..., s]))
    cat = T.concat(outs, axis=-1)
    return _linear(cat, params["wo"], params["bo"])


def mlp_block(x: Tensor, params: dict) -> Tensor:
    hidden = T.gelu(_linear(x, params["w1"], params["b1"]))
    return _linear(hidden, params["w2"], params["b2"])


def encoder_block(x: Tensor, params: dict, heads: int, eps: float = 1e-6,
                  capture: bool = False):
    """Pre-norm residual block; optionally returns the pre-residual attention output."""
    attn = multi_head(T.layer_norm(x, params["norm1.g"], params["norm1.b"], eps), params, heads)
    h = x + attn
    out = h + mlp_block(T.layer_norm(h, params["norm2.g"], params["norm2.b"], eps), params)
    if capture:
        return out, attn
    return out


def embed(patches: Tensor, model: "ViTModel") -> Tensor:
    """Project patch rows to D, prepend the class token, add position embeddings."""
    cfg = model.config
    if patches.shape[-1] != cfg.patch_dim:
        raise ValueError(
            f"patch width {patches.shape[-1]} does not match config {cfg.patch_dim}"
        )
    proj = _linear(patches, model.param("embed.proj.w"), model.param("embed.proj.b"))
    cls = model.param("embed.cls")
    if proj.ndim == 3:
        cls = T.broadcast_to(T.reshape(cls, (1, 1, cfg.hidden_size)),
                             (proj.shape[0], 1, cfg.hidden_size))
    seq = T.concat([cls, proj], axis=-2)
    return seq + model.param("embed.pos")


class ViTModel:
    """A ViT with a flat, ordered, named parameter set."""

    def __init__(self, config: ViTConfig, seed: int = 0):
        self.config = config
        self.params: dict[str, Parameter] = {}
        rng = rng_for(seed, 0x564954)
        d, m = config.hidden_size, config.mlp_size

        def proj(name, rows, cols):
            self._add(name, rng.normal(0.0, 0.02, size=(rows, cols)))

        def vec(name, n, fill=0.0):
            self._add(name, np.full(n, fill, dtype=np.float64))

        proj("embed.proj.w", config.patch_dim, d)
        vec("embed.proj.b", d)
        self._add("embed.cls", np.zeros((1, d)))
        self._add("embed.pos", np.zeros((config.seq_len, d)))
        for i in range(config.layers):
            pre = f"block.{i}."
            vec(pre + "norm1.g", d, 1.0)
            vec(pre + "norm1.b", d)
            for name in ("wq", "wk", "wv", "wo"):
                proj(pre + "attn." + name, d, d)
                vec(pre + "attn.b" + name[1], d)
            vec(pre + "norm2.g", d, 1.0)
            vec(pre + "norm2.b", d)
            proj(pre + "mlp.w1", d, m)
            vec(pre + "mlp.b1", m)
            proj(pre + "mlp.w2", m, d)
            vec(pre + "mlp.b2", d)
        vec("norm.g", d, 1.0)
        vec("norm.b", d)
        proj("head.w", d, config.num_classes)
        vec("head.b", config.num_classes)

    def _add(self, name: str, data: np.ndarray):
        self.params[name] = Parameter(name, Tensor(data, requires_grad=True))

    def param(self, name: str) -> Tensor:
        return self.params[name].tensor

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def layer_params(self, i: int) -> dict[str, Tensor]:
        pre = f"block.{i}."
        out = {}
        for key in ("norm1.g", "norm1.b", "norm2.g", "norm2.b"):
            out[key] = self.param(pre + key)
        for key in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo"):
            out[key] = self.param(pre + "attn." + key)
        for key in ("w1", "b1", "w2", "b2"):
            out[key] = self.param(pre + "mlp." + key)
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.tensor.data.copy() for name, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, value in state.items():
            tensor = self.param(name)
            if tensor.data.shape != value.shape:
                raise ValueError(
                    f"state shape {value.shape} does not match {name} {tensor.data.shape}"
                )
            tensor.data = np.asarray(value, dtype=np.float64).copy()
            tensor.grad = None

    def forward(self, batch, capture_attention: bool = False):
        """(B, H, W, C) images -> (B, num_classes) logits.

        With ``capture_attention`` also returns the last block's pre-residual
        attention-sublayer output tensor (grad-cam target).
        """
        x = batch if isinstance(batch, Tensor) else Tensor(batch)
        if x.ndim != 4:
            raise ValueError(f"forward expects (B, H, W, C), got {x.shape}")
        res = self.config.image_resolution
        if x.shape[1] != res or x.shape[2] != res:
            raise ValueError(
                f"input resolution {x.shape[1]}x{x.shape[2]} does not match "
                f"config resolution {res}x{res}"
            )
        seq = embed(patchify(x, self.config.patch_size), self)
        attn_out = None
        for i in range(self.config.layers):
            params = self.layer_params(i)
            if capture_attention and i == self.config.layers - 1:
                seq, attn_out = encoder_block(seq, params, self.config.heads, capture=True)
            else:
                seq = encoder_block(seq, params, self.config.heads)
        seq = T.layer_norm(seq, self.param("norm.g"), self.param("norm.b"))
        cls = seq[:, 0, :]
        logits = _linear(cls, self.param("head.w"), self.param("head.b"))
        if capture_attention:
            return logits, attn_out
        return logits
