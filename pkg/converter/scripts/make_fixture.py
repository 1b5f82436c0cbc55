#!/usr/bin/env python3
"""Write a tiny-variant flax-style ViT checkpoint as an npz test fixture.

Usage: python3 scripts/make_fixture.py [OUT.npz]

The tensor names and layouts mirror published ViT checkpoints
(embedding/kernel, Transformer/encoderblock_{i}/..., head/kernel), at the
tiny preset's shapes so fixtures stay small. A pre_logits pair is included
to exercise the skip-and-report path.
"""

import sys

import numpy as np

P, LAYERS, D, MLP, HEADS = 4, 2, 64, 128, 4
TOKENS = (32 // P) ** 2 + 1
CLASSES = 100
DK = D // HEADS


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "test/fixtures/tiny_flax.npz"
    rng = np.random.default_rng(2024)

    def t(shape):
        return rng.normal(0.0, 0.02, size=shape).astype(np.float32)

    arrays = {
        "embedding/kernel": t((P, P, 3, D)),
        "embedding/bias": t((D,)),
        "cls": t((1, 1, D)),
        "Transformer/posembed_input/pos_embedding": t((1, TOKENS, D)),
    }
    for i in range(LAYERS):
        block = f"Transformer/encoderblock_{i}"
        attn = f"{block}/MultiHeadDotProductAttention_1"
        arrays[f"{block}/LayerNorm_0/scale"] = t((D,))
        arrays[f"{block}/LayerNorm_0/bias"] = t((D,))
        for proj in ("query", "key", "value"):
            arrays[f"{attn}/{proj}/kernel"] = t((D, HEADS, DK))
            arrays[f"{attn}/{proj}/bias"] = t((HEADS, DK))
        arrays[f"{attn}/out/kernel"] = t((HEADS, DK, D))
        arrays[f"{attn}/out/bias"] = t((D,))
        arrays[f"{block}/LayerNorm_2/scale"] = t((D,))
        arrays[f"{block}/LayerNorm_2/bias"] = t((D,))
        arrays[f"{block}/MlpBlock_3/Dense_0/kernel"] = t((D, MLP))
        arrays[f"{block}/MlpBlock_3/Dense_0/bias"] = t((MLP,))
        arrays[f"{block}/MlpBlock_3/Dense_1/kernel"] = t((MLP, D))
        arrays[f"{block}/MlpBlock_3/Dense_1/bias"] = t((D,))
    arrays["Transformer/encoder_norm/scale"] = t((D,))
    arrays["Transformer/encoder_norm/bias"] = t((D,))
    arrays["pre_logits/kernel"] = t((D, D))
    arrays["pre_logits/bias"] = t((D,))
    arrays["head/kernel"] = t((D, CLASSES))
    arrays["head/bias"] = t((CLASSES,))

    np.savez_compressed(out, **arrays)
    print(f"wrote {out} with {len(arrays)} tensors")


if __name__ == "__main__":
    main()
