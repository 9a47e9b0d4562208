"""Central finite-difference oracle for the trainer's analytic gradients.

Coordinates whose +-h perturbation flips a ReLU sign or a max-pool winner are
skipped: the loss is not differentiable across such a kink, so the central
difference there measures the kink, not the gradient. The skipped fraction is
returned so callers can bound it.
"""
import numpy as np

from overlapscore.imagecore import SeededRng
from overlapscore.trainer import ModelArch, forward, init_params, loss_and_grads, loss_ce


def small_arch(kind, classes=5):
    if kind == "mlp":
        return ModelArch("mlp", (8, 8, 3), classes, hidden=(16,))
    return ModelArch("cnn", (8, 8, 3), classes, channels=(4, 8))


def activation_pattern(cache):
    parts = []
    for entry in cache:
        if entry[0] == "dense_relu":
            parts.append(entry[3] > 0)
        elif entry[0] == "conv_relu_pool":
            parts.append(entry[4] > 0)
            parts.append(entry[5])
    return parts


def _same(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def relative_errors(arch, seed=0, h=1e-3, n_samples=4, weight_decay=1e-4):
    """Per-tensor ||g_analytic - g_numeric|| / (||g_analytic|| + ||g_numeric||), float64.

    Returns ``(errors, n_params, skipped_fraction, checked)`` where ``checked``
    maps each tensor to the fraction of its coordinates that were compared.
    """
    rng = SeededRng(seed)
    params = init_params(arch, rng.derive("init"), dtype=np.float64)
    for k in params:  # nonzero biases so every term is exercised
        if k.startswith("b"):
            params[k] = rng.derive("bias", k).uniform(-0.1, 0.1, size=params[k].shape)
    x = rng.derive("x").random((n_samples,) + arch.input_shape)
    y = rng.derive("y").integers(0, arch.num_classes - 1, size=n_samples)
    _, grads = loss_and_grads(arch, params, x, y, weight_decay)

    def f():
        logits, cache = forward(arch, params, x)
        return loss_ce(logits, y, weight_decay, params), activation_pattern(cache)

    base = f()[1]
    errors, checked, skipped, total = {}, {}, 0, 0
    for name, p in params.items():
        num = np.zeros_like(p)
        keep = np.ones(p.size, dtype=bool)
        flat, gflat = p.reshape(-1), num.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up, pat_up = f()
            flat[i] = old - h
            down, pat_down = f()
            flat[i] = old
            gflat[i] = (up - down) / (2 * h)
            keep[i] = _same(pat_up, base) and _same(pat_down, base)
        ga, gn = grads[name].reshape(-1)[keep], gflat[keep]
        denom = np.linalg.norm(ga) + np.linalg.norm(gn)
        errors[name] = float(np.linalg.norm(ga - gn) / denom) if denom > 0 else 0.0
        checked[name] = float(keep.mean())
        skipped += int((~keep).sum())
        total += p.size
    return errors, total, skipped / total, checked
