"""Central-difference verification of the reverse-mode adjoints.

Every check projects the op output onto a fixed random direction to get a
scalar, differentiates it with :func:`polrestore.autograd.backward`, and
compares against ``(f(x + h) - f(x - h)) / 2h`` coordinate by coordinate.  A
coordinate passes when its absolute error is below ``atol`` or its relative
error is below ``rtol``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag


@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float
    max_abs_err: float
    n_checked: int
    n_failed: int

    @property
    def passed(self):
        return self.n_failed == 0

    @property
    def pass_fraction(self):
        return 1.0 - self.n_failed / max(self.n_checked, 1)

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name:<28s} max_rel={self.max_rel_err:.3e} "
                f"max_abs={self.max_abs_err:.3e} checked={self.n_checked} failed={self.n_failed}")


def check_gradients(fn, inputs, name="", h=1e-4, rtol=1e-4, atol=1e-6,
                    max_coords=None, seed=0):
    """Compare analytic and numeric gradients of ``fn(*inputs)``.

    ``inputs`` are float64 tensors; every one with ``requires_grad`` is
    checked.  ``max_coords`` caps the number of coordinates sampled per input.
    """
    rng = np.random.default_rng(seed)
    out = fn(*inputs)
    proj = rng.standard_normal(out.shape)

    def scalar():
        with ag.no_grad():
            return float(np.sum(fn(*inputs).data * proj))

    for t in inputs:
        t.grad = None
    loss = ag.sum_all(ag.mul(out, ag.Tensor(proj)))
    ag.backward(loss)

    max_rel = max_abs = 0.0
    n_checked = n_failed = 0
    for t in inputs:
        if not t.requires_grad:
            continue
        if t.dtype != np.float64:
            raise TypeError("gradient checks run at float64 precision")
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            fp = scalar()
            flat[i] = orig - h
            fm = scalar()
            flat[i] = orig
            numeric = (fp - fm) / (2 * h)
            a = analytic.reshape(-1)[i]
            abs_err = abs(a - numeric)
            rel_err = abs_err / max(abs(a), abs(numeric), 1e-300)
            n_checked += 1
            max_abs = max(max_abs, abs_err)
            if abs_err > atol:
                max_rel = max(max_rel, rel_err)
                if rel_err > rtol:
                    n_failed += 1
    return GradCheckResult(name, max_rel, max_abs, n_checked, n_failed)


def _t(rng, *shape, positive=False):
    x = rng.standard_normal(shape)
    if positive:
        x = np.abs(x) + 0.5
    return ag.Tensor(x, requires_grad=True)


def op_suite(seed=0):
    """Gradient checks for every differentiable operator of the engine."""
    rng = np.random.default_rng(seed)
    t = lambda *s, **kw: _t(rng, *s, **kw)  # noqa: E731
    cases = [
        ("add", ag.add, [t(2, 3, 4, 4), t(1, 3, 1, 1)]),
        ("sub", ag.sub, [t(2, 3, 4, 4), t(2, 3, 4, 4)]),
        ("mul", ag.mul, [t(2, 3, 4, 4), t(1, 3, 4, 4)]),
        ("div", ag.div, [t(2, 3, 4, 4), t(1, 3, 1, 1, positive=True)]),
        ("scale", lambda a: ag.scale(a, -2.5), [t(2, 3, 4)]),
        ("abs", ag.absolute, [t(2, 3, 5, positive=True)]),
        ("relu", ag.relu, [t(2, 3, 5, 5)]),
        ("gelu", ag.gelu, [t(2, 3, 5, 5)]),
        ("mean", ag.mean, [t(2, 3, 4)]),
        ("mean_axis", lambda a: ag.mean(a, axis=(2, 3)), [t(2, 3, 4, 4)]),
        ("sum", ag.sum_all, [t(3, 4)]),
        ("reshape_permute", lambda a: ag.permute(ag.reshape(a, (2, 6, 4)), (0, 2, 1)),
         [t(2, 3, 2, 4)]),
        ("concat_channels", lambda a, b: ag.concat_channels([a, b]), [t(1, 2, 3, 3), t(1, 3, 3, 3)]),
        ("split_channels", lambda a: ag.mul(*ag.split_channels(a, 2)), [t(1, 4, 3, 3)]),
        ("matmul", ag.matmul, [t(2, 3, 4, 5), t(2, 3, 5, 2)]),
        ("softmax", lambda a: ag.softmax(a, -1), [t(2, 3, 4, 4)]),
        ("l2_normalize", lambda a: ag.l2_normalize(a, -1), [t(2, 3, 8)]),
        ("layer_norm", lambda a, s, b: ag.layer_norm(a, s, b, 1e-5),
         [t(2, 4, 3, 3), t(4), t(4)]),
        ("instance_norm", lambda a: ag.instance_norm(a, 1e-5), [t(2, 3, 4, 4)]),
        ("conv2d", lambda a, w, b: ag.conv2d(a, w, b, stride=1, padding=1),
         [t(2, 3, 6, 6), t(4, 3, 3, 3), t(4)]),
        ("conv2d_stride2", lambda a, w, b: ag.conv2d(a, w, b, stride=2, padding=1),
         [t(1, 2, 6, 6), t(3, 2, 3, 3), t(3)]),
        ("conv2d_replicate", lambda a, w: ag.conv2d(a, w, None, padding=1, pad_mode="replicate"),
         [t(1, 2, 5, 5), t(2, 2, 3, 3)]),
        ("depthwise_conv2d", lambda a, w, b: ag.depthwise_conv2d(a, w, b, padding=1),
         [t(2, 3, 5, 5), t(3, 1, 3, 3), t(3)]),
        ("conv1x1", ag.conv1x1, [t(2, 3, 4, 4), t(5, 3, 1, 1), t(5)]),
        ("pixel_shuffle", lambda a: ag.pixel_shuffle(a, 2), [t(1, 8, 3, 3)]),
        ("pixel_unshuffle", lambda a: ag.pixel_unshuffle(a, 2), [t(1, 2, 4, 4)]),
        # a tensor feeding two consumers must receive both adjoints
        ("fan_out", lambda a: ag.mul(ag.gelu(a), ag.relu(a)), [t(2, 3, 3)]),
    ]
    return [check_gradients(fn, args, name=name, seed=seed) for name, fn, args in cases]


def network_suite(seed=0, max_coords=4, h=1e-7):
    """Whole CDCI unit plus an end-to-end tiny network, both at float64.

    ``max_coords`` is sampled per tensor.  The Stokes path stacks ReLUs on top
    of instance norms over planes as small as 4x4, so the composite is curved
    enough that a 1e-4 stencil straddles kinks; 1e-7 stays inside one linear
    piece while float64 round-off is still far below tolerance.
    """
    from . import network as net

    rng = np.random.default_rng(seed)
    results = []

    cfg = net.NetworkConfig(base_channels=4, unit_counts=(1, 1, 1, 1, 1, 1),
                            head_counts=(1, 1, 1, 1, 1, 1), image_channels=1)
    params = net.init_params(cfg, seed=seed, dtype=np.float64)
    unit = {k: v for k, v in params.items() if k.startswith("enc1.0.")}
    x = ag.Tensor(rng.standard_normal((1, 4, 6, 6)), requires_grad=True)
    y = ag.Tensor(rng.standard_normal((1, 4, 6, 6)), requires_grad=True)
    names = list(unit)

    def unit_fn(x, y, *ps):
        p = dict(zip(names, ps))
        xo, yo = net.cdci_forward(x, y, p, "enc1.0", heads=1)
        return ag.concat_channels([xo, yo])

    results.append(check_gradients(unit_fn, [x, y, *unit.values()], name="cdci_unit",
                                   h=h, max_coords=max_coords, seed=seed))

    cfg2 = net.NetworkConfig(base_channels=4, unit_counts=(1, 1, 1, 1, 1, 1),
                             head_counts=(1, 2, 4, 2, 1, 1), image_channels=1)
    params2 = net.init_params(cfg2, seed=seed + 1, dtype=np.float64)
    # a zero final projection would hide every upstream adjoint
    params2["out.weight"].data[...] = 0.1 * rng.standard_normal(params2["out.weight"].shape)
    quad = ag.Tensor(rng.uniform(0.0, 1.0, (1, 4, 16, 16)), requires_grad=True)
    s1s2 = ag.Tensor(rng.standard_normal((1, 2, 16, 16)) * 0.3, requires_grad=True)
    names2 = list(params2)

    def net_fn(q, s, *ps):
        return net.network_forward(q, s, dict(zip(names2, ps)), cfg2)

    results.append(check_gradients(net_fn, [quad, s1s2, *params2.values()], name="network_end_to_end",
                                   h=h, max_coords=max_coords, seed=seed))
    return results
