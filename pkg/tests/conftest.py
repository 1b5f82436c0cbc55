import numpy as np
import pytest
from PIL import Image

from vitkit.tensor import Tensor, backward


def make_class_image(rng, class_index: int, size: int = 32) -> np.ndarray:
    """Class-colored noise image; classes are trivially separable by color."""
    base = np.zeros((size, size, 3), np.uint8)
    base[..., class_index % 3] = 200 if class_index < 3 else 60
    return (base + rng.integers(0, 56, (size, size, 3))).astype(np.uint8)


@pytest.fixture
def dataset_root(tmp_path):
    """4-class directory tree, 10 PNGs per class, 32x32."""
    rng = np.random.default_rng(7)
    root = tmp_path / "data"
    for c, name in enumerate(["mask", "mask_chin", "mask_mouth_chin", "mask_nose_mouth"]):
        d = root / name
        d.mkdir(parents=True)
        for i in range(10):
            Image.fromarray(make_class_image(rng, c)).save(d / f"img_{i:02d}.png")
    return root


def numeric_gradient(f, tensor: Tensor, indices=None, step: float = 1e-5) -> dict:
    """Central finite differences of scalar f() w.r.t. entries of tensor.data."""
    if indices is None:
        indices = list(np.ndindex(tensor.data.shape))
    grads = {}
    for idx in indices:
        orig = tensor.data[idx]
        tensor.data[idx] = orig + step
        plus = f().item()
        tensor.data[idx] = orig - step
        minus = f().item()
        tensor.data[idx] = orig
        grads[idx] = (plus - minus) / (2 * step)
    return grads


def assert_grad_matches(f, tensors, rtol: float = 1e-4, step: float = 1e-5,
                        atol: float = 1e-7):
    """backward() gradients vs central finite differences for every tensor."""
    for t in tensors:
        t.grad = None
    loss = f()
    backward(loss)
    analytic = {id(t): t.grad.copy() for t in tensors}
    for t in tensors:
        t.grad = None
    for t in tensors:
        numeric = numeric_gradient(f, t, step=step)
        for idx, num in numeric.items():
            ana = analytic[id(t)][idx]
            err = abs(ana - num)
            scale = max(abs(ana), abs(num))
            assert err <= atol + rtol * scale, (
                f"grad mismatch at {idx}: analytic {ana} vs numeric {num}"
            )
