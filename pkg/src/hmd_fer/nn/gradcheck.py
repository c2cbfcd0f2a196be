"""Central finite-difference verification of the hand-written backward passes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import ops
from .model import ArchitecturePreset, ConvBlock, DenseSpec, VGGNet


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    tolerance: float
    per_input: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tolerance)

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: max rel err {self.max_rel_error:.3e} (tol {self.tolerance:g})"


def relative_error(analytic, numeric, floor: float = 1e-6):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_gradient(f: Callable[[], float], x: np.ndarray, eps: float = 1e-4):
    """d f / d x by central differences, perturbing ``x`` in place."""
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"], op_flags=["readwrite"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + eps
        fp = f()
        x[i] = orig - eps
        fm = f()
        x[i] = orig
        grad[i] = (fp - fm) / (2 * eps)
    return grad


def gradient_check(name, forward, backward, inputs: dict[str, np.ndarray],
                   tolerance: float, eps: float = 1e-4, seed: int = 0) -> GradCheckReport:
    """Compare ``backward`` against central differences of ``forward``.

    ``forward(**inputs)`` returns an array; the scalar under test is its dot
    product with a fixed random projection ``r``. ``backward(r, **inputs)``
    must return a dict with the analytic gradient for every key of
    ``inputs`` (all float64, mutated in place during the check).
    """
    rng = np.random.default_rng(seed)
    r = rng.standard_normal(np.shape(forward(**inputs)))

    def scalar():
        return float(np.sum(r * forward(**inputs)))

    analytic = backward(r, **inputs)
    report = GradCheckReport(name, 0.0, tolerance)
    for key, x in inputs.items():
        num = numeric_gradient(scalar, x, eps)
        err = float(relative_error(analytic[key], num).max()) if x.size else 0.0
        report.per_input[key] = err
        report.max_rel_error = max(report.max_rel_error, err)
    return report


# --------------------------------------------------------------------------
# per-op harnesses used by the test-suite and the ``gradcheck`` subcommand
# --------------------------------------------------------------------------

def _spread(rng, shape, gap=0.05):
    # distinct half-integer multiples of ``gap``: no max-pool ties and no
    # relu kinks within a finite-difference step
    n = int(np.prod(shape))
    vals = (np.arange(n) - n // 2 + 0.5) * gap
    return rng.permutation(vals).reshape(shape)


def check_conv(rng, tol=1e-5, flip=False):
    c_in, c_out = rng.integers(1, 4), rng.integers(1, 4)
    h, w = rng.integers(3, 7, size=2)
    b = rng.integers(1, 3)
    inputs = {
        "x": rng.standard_normal((b, c_in, h, w)),
        "w": rng.standard_normal((c_out, c_in, 3, 3)),
        "b": rng.standard_normal(c_out),
    }

    def fwd(x, w, b):
        return ops.conv2d_forward(x, w, b)[0]

    def bwd(r, x, w, b):
        _, cache = ops.conv2d_forward(x, w, b)
        dx, dw, db = ops.conv2d_backward(r, cache)
        s = -1 if flip else 1
        return {"x": s * dx, "w": dw, "b": db}

    return gradient_check("conv2d", fwd, bwd, inputs, tol, seed=int(rng.integers(1 << 31)))


def check_dense(rng, tol=1e-5, n_in=None, n_out=None):
    n_in = n_in or int(rng.integers(1, 6))
    n_out = n_out or int(rng.integers(1, 6))
    inputs = {
        "x": rng.standard_normal((int(rng.integers(1, 4)), n_in)),
        "w": rng.standard_normal((n_out, n_in)),
        "b": rng.standard_normal(n_out),
    }

    def fwd(x, w, b):
        return ops.dense_forward(x, w, b)[0]

    def bwd(r, x, w, b):
        dx, dw, db = ops.dense_backward(r, (x, w))
        return {"x": dx, "w": dw, "b": db}

    return gradient_check("dense", fwd, bwd, inputs, tol, seed=int(rng.integers(1 << 31)))


def check_relu(rng, tol=1e-5):
    shape = tuple(rng.integers(1, 5, size=3))
    inputs = {"x": _spread(rng, shape, gap=0.01)}
    return gradient_check(
        "relu",
        lambda x: ops.relu_forward(x)[0],
        lambda r, x: {"x": ops.relu_backward(r, x)},
        inputs, tol, seed=int(rng.integers(1 << 31)))


def check_maxpool(rng, tol=1e-4):
    c = int(rng.integers(1, 3))
    h, w = 2 * rng.integers(1, 4, size=2)
    inputs = {"x": _spread(rng, (int(rng.integers(1, 3)), c, h, w))}
    return gradient_check(
        "maxpool2",
        lambda x: ops.maxpool2_forward(x)[0],
        lambda r, x: {"x": ops.maxpool2_backward(r, ops.maxpool2_forward(x)[1])},
        inputs, tol, seed=int(rng.integers(1 << 31)))


def check_batchnorm(rng, tol=1e-4, shape=None):
    shape = shape or (int(rng.integers(2, 5)), int(rng.integers(1, 3)),
                      int(rng.integers(1, 4)), int(rng.integers(1, 4)))
    c = shape[1]
    inputs = {
        "x": rng.standard_normal(shape),
        "gamma": rng.standard_normal(c),
        "beta": rng.standard_normal(c),
    }

    def state(gamma, beta):
        st = ops.BatchNormState(c, dtype=np.float64)
        st.gamma, st.beta = gamma, beta
        return st

    def fwd(x, gamma, beta):
        return ops.batchnorm_forward(x, state(gamma, beta), "train")[0]

    def bwd(r, x, gamma, beta):
        _, cache = ops.batchnorm_forward(x, state(gamma, beta), "train")
        dx, dg, db = ops.batchnorm_backward(r, cache)
        return {"x": dx, "gamma": dg, "beta": db}

    return gradient_check("batchnorm", fwd, bwd, inputs, tol, seed=int(rng.integers(1 << 31)))


def check_softmax_ce(rng, tol=1e-6):
    b, k = int(rng.integers(1, 4)), 7
    labels = rng.integers(0, k, size=b)
    inputs = {"z": rng.standard_normal((b, k)) * 2}
    return gradient_check(
        "softmax_cross_entropy",
        lambda z: np.asarray(ops.softmax_cross_entropy(z, labels)[0]),
        lambda r, z: {"z": r * ops.softmax_cross_entropy(z, labels)[1]},
        inputs, tol, seed=int(rng.integers(1 << 31)))


def check_mini_block(rng, tol=1e-4):
    """conv -> batchnorm -> relu -> maxpool on a small batch."""
    c_in, c_out = 2, 3
    inputs = {
        "x": rng.standard_normal((3, c_in, 4, 4)),
        "w": rng.standard_normal((c_out, c_in, 3, 3)),
        "b": rng.standard_normal(c_out),
        "gamma": rng.uniform(0.5, 1.5, c_out),
        "beta": rng.standard_normal(c_out),
    }

    def run(x, w, b, gamma, beta):
        st = ops.BatchNormState(c_out, dtype=np.float64)
        st.gamma, st.beta = gamma, beta
        h1, c1 = ops.conv2d_forward(x, w, b)
        h2, c2 = ops.batchnorm_forward(h1, st, "train")
        h3, c3 = ops.relu_forward(h2)
        h4, c4 = ops.maxpool2_forward(h3)
        return h4, (c1, c2, c3, c4)

    def bwd(r, **kw):
        _, (c1, c2, c3, c4) = run(**kw)
        d = ops.maxpool2_backward(r, c4)
        d = ops.relu_backward(d, c3)
        d, dg, dbeta = ops.batchnorm_backward(d, c2)
        dx, dw, db = ops.conv2d_backward(d, c1)
        return {"x": dx, "w": dw, "b": db, "gamma": dg, "beta": dbeta}

    return gradient_check("conv+bn+relu+pool", lambda **kw: run(**kw)[0], bwd,
                          inputs, tol, seed=int(rng.integers(1 << 31)))


TINY_PRESET = ArchitecturePreset(
    name="gradcheck-tiny",
    blocks=tuple(ConvBlock(2, dropout=0.0) for _ in range(4)),
    classifier=(DenseSpec(5, dropout=0.0),),
    input_size=16,
)


def _kink_pattern(net):
    # relu sign pattern and pool winners of the last training forward pass
    parts = []
    for kind, _, cache in net._tape:
        if kind == "relu":
            parts.append((cache > 0).ravel())
        elif kind == "pool":
            parts.append(cache.ravel())
    return np.concatenate([p.astype(np.int64) for p in parts])


def check_network(rng, tol=1e-4, preset: ArchitecturePreset = TINY_PRESET, eps=1e-4):
    """Whole-network check over every parameter and input coordinate.

    Coordinates whose +/-eps perturbations land on different relu/pool
    pieces are excluded (the central difference straddles a kink there);
    their number is reported in ``per_input['kinks_skipped']``.
    """
    net = VGGNet.initialize(preset, rng, dtype=np.float64)
    x = rng.standard_normal((3, preset.in_channels, preset.input_size, preset.input_size))
    labels = rng.integers(0, preset.num_classes, size=3)
    buffers = {k: v.copy() for k, v in net.params.items() if k not in net.learned()}

    def loss():
        for k, v in buffers.items():
            net.params[k][...] = v
        logits = net.forward(x, train=True)
        return ops.softmax_cross_entropy(logits, labels)

    _, dlogits, _ = loss()
    dx = net.backward(dlogits)
    analytic = dict(net.grads, input=dx)
    report = GradCheckReport("network", 0.0, tol)
    skipped = 0
    for key, arr in dict(net.learned(), input=x).items():
        worst = 0.0
        for i in np.ndindex(arr.shape):
            orig = arr[i]
            arr[i] = orig + eps
            fp = loss()[0]
            pat_p = _kink_pattern(net)
            arr[i] = orig - eps
            fm = loss()[0]
            pat_m = _kink_pattern(net)
            arr[i] = orig
            if not np.array_equal(pat_p, pat_m):
                skipped += 1
                continue
            num = (fp - fm) / (2 * eps)
            worst = max(worst, float(relative_error(analytic[key][i], num)))
        net._tape = []
        report.per_input[key] = worst
        report.max_rel_error = max(report.max_rel_error, worst)
    report.per_input["kinks_skipped"] = skipped
    return report


OP_CHECKS = {
    "conv2d": (check_conv, 1e-5),
    "dense": (check_dense, 1e-5),
    "relu": (check_relu, 1e-5),
    "maxpool2": (check_maxpool, 1e-4),
    "batchnorm": (check_batchnorm, 1e-4),
    "softmax_cross_entropy": (check_softmax_ce, 1e-6),
}


def run_suite(instances: int = 50, seed: int = 0) -> list[GradCheckReport]:
    """Run every op check over ``instances`` random instances, plus the
    composed block and whole-network checks. One report per op (worst case)."""
    rng = np.random.default_rng(seed)
    out = []
    for name, (fn, tol) in OP_CHECKS.items():
        worst = GradCheckReport(name, 0.0, tol)
        for _ in range(instances):
            rep = fn(rng, tol)
            worst.max_rel_error = max(worst.max_rel_error, rep.max_rel_error)
        out.append(worst)
    out.append(check_mini_block(rng))
    out.append(check_network(rng))
    return out
