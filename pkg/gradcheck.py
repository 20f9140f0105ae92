"""
Gradient checking utilities: central finite differences and the direct
summation convolution oracle. Everything here runs in float64.
"""
from typing import Callable, Dict, Tuple

import numpy as np

import layers
from layers import ConvParams, DenseParams

STEP = 1e-5
REL_FLOOR = 1e-5


def numerical_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = STEP) -> np.ndarray:
    """d f / d x by central differences; x is perturbed in place and restored."""
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"], op_flags=["readwrite"])
    for _ in it:
        ix = it.multi_index
        old = x[ix]
        x[ix] = old + h
        up = f(x)
        x[ix] = old - h
        down = f(x)
        x[ix] = old
        grad[ix] = (up - down) / (2.0 * h)
    return grad


def sampled_gradient(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    count: int,
    rng: np.random.Generator,
    h: float = STEP,
):
    """Central differences at `count` random entries of x; returns (flat indices, values)."""
    flat = x.reshape(-1)
    picks = rng.choice(flat.size, size=min(count, flat.size), replace=False)
    values = np.empty(picks.size, dtype=np.float64)
    for j, i in enumerate(picks):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        values[j] = (up - down) / (2.0 * h)
    return picks, values


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = REL_FLOOR) -> float:
    """Largest elementwise |a - n| / max(|a|, |n|, floor)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def conv2d_naive(x: np.ndarray, kernels: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Same-padded stride-1 convolution of one (H, W, C_in) sample by direct summation."""
    h, w, c_in = x.shape
    k, _, _, c_out = kernels.shape
    pad = k // 2
    out = np.zeros((h, w, c_out), dtype=np.float64)
    for i in range(h):
        for j in range(w):
            for f in range(c_out):
                total = float(bias[f])
                for dh in range(k):
                    for dw in range(k):
                        r, s = i + dh - pad, j + dw - pad
                        if 0 <= r < h and 0 <= s < w:
                            for c in range(c_in):
                                total += x[r, s, c] * kernels[dh, dw, c, f]
                out[i, j, f] = total
    return out


def conv2d_backward_naive(x: np.ndarray, kernels: np.ndarray, grad_out: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(grad_input, grad_kernels, grad_bias) of one sample, scattered tap by tap."""
    h, w, c_in = x.shape
    k, _, _, c_out = kernels.shape
    pad = k // 2
    grad_input = np.zeros((h, w, c_in), dtype=np.float64)
    grad_kernels = np.zeros(kernels.shape, dtype=np.float64)
    for i in range(h):
        for j in range(w):
            for f in range(c_out):
                g = float(grad_out[i, j, f])
                for dh in range(k):
                    for dw in range(k):
                        r, s = i + dh - pad, j + dw - pad
                        if 0 <= r < h and 0 <= s < w:
                            for c in range(c_in):
                                grad_kernels[dh, dw, c, f] += x[r, s, c] * g
                                grad_input[r, s, c] += kernels[dh, dw, c, f] * g
    grad_bias = grad_out.sum(axis=(0, 1)).astype(np.float64)
    return grad_input, grad_kernels, grad_bias


# ============================================================================
# Per-layer checks (scalar probe loss L = sum(out * R))
# ============================================================================

def check_conv(rng: np.random.Generator, shape=(5, 5, 2), filters: int = 3, k: int = 3) -> Dict[str, float]:
    x = rng.uniform(-1, 1, shape)
    p = ConvParams(rng.uniform(-1, 1, (k, k, shape[-1], filters)), rng.uniform(-1, 1, filters))
    probe = rng.uniform(-1, 1, shape[:-1] + (filters,))
    gx, gk, gb = layers.conv2d_backward(x, p, probe)
    loss = lambda: float(np.sum(layers.conv2d_forward(x, p) * probe))
    return {
        "input": relative_error(gx, numerical_gradient(lambda _: loss(), x)),
        "kernels": relative_error(gk, numerical_gradient(lambda _: loss(), p.kernels)),
        "bias": relative_error(gb, numerical_gradient(lambda _: loss(), p.bias)),
    }


def check_dense(rng: np.random.Generator, n_in: int = 6, n_out: int = 4, batch: int = 3) -> Dict[str, float]:
    x = rng.uniform(-1, 1, (batch, n_in))
    p = DenseParams(rng.uniform(-1, 1, (n_in, n_out)), rng.uniform(-1, 1, n_out))
    probe = rng.uniform(-1, 1, (batch, n_out))
    gx, gw, gb = layers.dense_backward(x, p, probe)
    loss = lambda: float(np.sum(layers.dense_forward(x, p) * probe))
    return {
        "input": relative_error(gx, numerical_gradient(lambda _: loss(), x)),
        "weights": relative_error(gw, numerical_gradient(lambda _: loss(), p.weights)),
        "bias": relative_error(gb, numerical_gradient(lambda _: loss(), p.bias)),
    }


def check_relu(rng: np.random.Generator, size: int = 20) -> float:
    x = rng.uniform(-1, 1, size)
    x[np.abs(x) < 1e-3] = 0.5
    probe = rng.uniform(-1, 1, size)
    numeric = numerical_gradient(lambda v: float(np.sum(layers.relu_forward(v) * probe)), x)
    return relative_error(layers.relu_backward(x, probe), numeric)


def check_maxpool(rng: np.random.Generator, shape=(4, 4, 2)) -> float:
    # a shuffled grid keeps every window free of near-ties
    x = rng.permutation(np.arange(int(np.prod(shape)), dtype=np.float64)).reshape(shape) * 0.1
    probe = rng.uniform(-1, 1, (shape[0] // 2, shape[1] // 2, shape[2]))
    _, argmax = layers.maxpool_forward(x)
    numeric = numerical_gradient(lambda v: float(np.sum(layers.maxpool_forward(v)[0] * probe)), x)
    return relative_error(layers.maxpool_backward(argmax, probe), numeric)


def check_dropout(rng: np.random.Generator, size: int = 20, rate: float = 0.3) -> float:
    x = rng.uniform(-1, 1, size)
    mask = layers.draw_dropout_mask(x.shape, rate, rng, np.float64)
    probe = rng.uniform(-1, 1, size)
    _, dm = layers.dropout_forward(x, rate, True, mask=mask)
    numeric = numerical_gradient(
        lambda v: float(np.sum(layers.dropout_forward(v, rate, True, mask=mask)[0] * probe)), x
    )
    return relative_error(layers.dropout_backward(dm, rate, probe), numeric)


def check_output_gradient(rng: np.random.Generator) -> float:
    from training import cross_entropy, output_gradient, one_hot_encode

    logits = rng.uniform(-2, 2, 10)
    target = one_hot_encode(int(rng.integers(10)), dtype=np.float64)
    probs = layers.softmax(logits)
    numeric = numerical_gradient(lambda z: cross_entropy(layers.softmax(z), target), logits)
    return relative_error(output_gradient(probs, target), numeric)


def layer_gradient_errors(seed: int = 0) -> Dict[str, float]:
    """Worst relative error per layer path, for reports and the diagnostic script."""
    rng = np.random.default_rng(seed)
    report = {f"conv.{k}": v for k, v in check_conv(rng).items()}
    report.update({f"dense.{k}": v for k, v in check_dense(rng).items()})
    report["relu"] = check_relu(rng)
    report["maxpool"] = check_maxpool(rng)
    report["dropout"] = check_dropout(rng)
    report["softmax_cross_entropy"] = check_output_gradient(rng)
    return report
