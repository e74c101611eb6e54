"""Shared oracles for the test suite."""
import numpy as np

from satrobust.diffnet import Classifier, Layer, cross_entropy, forward, mlp


def linear_model(weight, bias) -> Classifier:
    return Classifier([Layer(np.asarray(weight, float), np.asarray(bias, float), "identity")])


def tiny_model(seed, d=3, hidden=(4,), k=3) -> Classifier:
    model = mlp(d, hidden, k, seed)
    rng = np.random.default_rng(seed + 1000)
    for layer in model.layers:
        layer.bias = rng.normal(scale=0.1, size=layer.bias.shape)
    return model


def fd_param_grads(model, x, y, loss=None, h=1e-5):
    """Central differences of ``loss(model)`` (default mean CE) for every
    weight and bias entry."""
    loss = loss or (lambda m: cross_entropy(forward(m, x), y))
    out_w, out_b = [], []
    for li, layer in enumerate(model.layers):
        for name, sink in (("weight", out_w), ("bias", out_b)):
            param = getattr(layer, name)
            g = np.zeros_like(param)
            for idx in np.ndindex(*param.shape):
                vals = []
                for sign in (1, -1):
                    m = model.copy()
                    getattr(m.layers[li], name)[idx] += sign * h
                    vals.append(loss(m))
                g[idx] = (vals[0] - vals[1]) / (2 * h)
            sink.append(g)
    return out_w, out_b


def trapezoid_oracle(eps, acc, eps_max):
    """Plain-loop trapezoid on [0, eps_max], holding the last value."""
    pts = [(e, a) for e, a in zip(eps, acc) if e <= eps_max]
    if pts[-1][0] < eps_max:
        nxt = [(e, a) for e, a in zip(eps, acc) if e > eps_max]
        if nxt:
            (e0, a0), (e1, a1) = pts[-1], nxt[0]
            pts.append((eps_max, a0 + (a1 - a0) * (eps_max - e0) / (e1 - e0)))
        else:
            pts.append((eps_max, pts[-1][1]))
    area = 0.0
    for (e0, a0), (e1, a1) in zip(pts, pts[1:]):
        area += (e1 - e0) * (a0 + a1) / 2
    return area / eps_max
