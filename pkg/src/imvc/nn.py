"""Dense MLPs with hand-written forward/backward passes, plus Adam.

Everything runs in float64 numpy so that analytic gradients can be checked
against central finite differences to tight tolerances. Networks are small
fixed-architecture perceptrons: ReLU hidden layers and a configurable set
of output heads applied to column slices of the final linear layer:

    identity  -- raw linear output (means, logits)
    softplus  -- softplus(a) + SIGMA_MIN, strictly positive (scale outputs)
    logistic  -- sigmoid(a) in (0, 1) (Bernoulli means)

Forward passes cache what backward needs; backward returns gradients in
the same flat order as ``Mlp.parameters()``.
"""

from __future__ import annotations

import json
import numpy as np

# Floor added to every softplus head output; squaring it gives the variance
# floor used downstream.
SIGMA_MIN = 1e-4

HEAD_KINDS = ("identity", "softplus", "logistic")


def relu(x):
    return np.maximum(x, 0.0)


def softplus(x):
    # max(x,0) + log1p(exp(-|x|)) never overflows
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _apply_head(kind, a):
    if kind == "identity":
        return a
    if kind == "softplus":
        return softplus(a) + SIGMA_MIN
    if kind == "logistic":
        return sigmoid(a)
    raise ValueError(f"unknown head kind {kind!r}")


def _head_grad(kind, a, y):
    """d(head output)/d(pre-activation), elementwise."""
    if kind == "identity":
        return np.ones_like(a)
    if kind == "softplus":
        return sigmoid(a)
    if kind == "logistic":
        return y * (1.0 - y)
    raise ValueError(f"unknown head kind {kind!r}")


class Mlp:
    """Multilayer perceptron with ReLU hidden layers and sliced output heads.

    Args:
        layer_dims: sizes ``[d_in, h1, ..., d_out]``; at least one layer.
        heads: sequence of ``(kind, width)`` pairs partitioning the output
            columns; widths must sum to ``layer_dims[-1]``. Defaults to a
            single identity head over the full output.
        seed: RNG seed for weight init (uniform +-sqrt(6/(d_in+d_out)),
            zero biases).
    """

    def __init__(self, layer_dims, heads=None, seed=0):
        if len(layer_dims) < 2:
            raise ValueError("need at least one layer")
        self.layer_dims = list(int(d) for d in layer_dims)
        if heads is None:
            heads = (("identity", self.layer_dims[-1]),)
        self.heads = tuple((str(k), int(w)) for k, w in heads)
        for kind, _ in self.heads:
            if kind not in HEAD_KINDS:
                raise ValueError(f"unknown head kind {kind!r}")
        if sum(w for _, w in self.heads) != self.layer_dims[-1]:
            raise ValueError("head widths must sum to the output dimension")

        rng = np.random.default_rng(seed)
        self.weights = []
        self.biases = []
        for d_in, d_out in zip(self.layer_dims[:-1], self.layer_dims[1:]):
            limit = np.sqrt(6.0 / (d_in + d_out))
            self.weights.append(rng.uniform(-limit, limit, size=(d_in, d_out)))
            self.biases.append(np.zeros(d_out))

    @property
    def n_layers(self):
        return len(self.weights)

    @property
    def n_params(self):
        return sum((w.shape[0] + 1) * w.shape[1] for w in self.weights)

    def parameters(self):
        """Live references, interleaved [W0, b0, W1, b1, ...]."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def head_slices(self):
        """(kind, slice) pairs over the output columns."""
        out, start = [], 0
        for kind, width in self.heads:
            out.append((kind, slice(start, start + width)))
            start += width
        return out

    def forward(self, X):
        """Returns (Y, cache). Rows of X are samples."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.layer_dims[0]:
            raise ValueError(
                f"expected input of width {self.layer_dims[0]}, got shape {X.shape}"
            )
        inputs = [X]
        h = X
        for l in range(self.n_layers - 1):
            a = h @ self.weights[l] + self.biases[l]
            h = relu(a)
            inputs.append(h)
        a_out = h @ self.weights[-1] + self.biases[-1]
        Y = np.empty_like(a_out)
        for kind, sl in self.head_slices():
            Y[:, sl] = _apply_head(kind, a_out[:, sl])
        cache = (inputs, a_out, Y)
        return Y, cache

    def backward(self, cache, d_out):
        """Backprop a gradient w.r.t. the head outputs.

        Returns (grads, dX) where grads aligns with ``parameters()``.
        """
        inputs, a_out, Y = cache
        d_out = np.asarray(d_out, dtype=np.float64)
        if d_out.shape != a_out.shape:
            raise ValueError("gradient shape does not match cached forward")
        da = np.empty_like(d_out)
        for kind, sl in self.head_slices():
            da[:, sl] = d_out[:, sl] * _head_grad(kind, a_out[:, sl], Y[:, sl])

        grads = [None] * (2 * self.n_layers)
        for l in range(self.n_layers - 1, -1, -1):
            h_in = inputs[l]
            grads[2 * l] = h_in.T @ da
            grads[2 * l + 1] = da.sum(axis=0)
            if l > 0:
                dh = da @ self.weights[l].T
                # ReLU mask: inputs[l] holds the post-activation of layer l-1
                da = dh * (inputs[l] > 0)
        dX = da @ self.weights[0].T
        return grads, dX

    def to_dict(self):
        return {
            "layer_dims": self.layer_dims,
            "heads": [list(h) for h in self.heads],
            "weights": [w.ravel().tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, d):
        net = cls(d["layer_dims"], heads=[tuple(h) for h in d["heads"]])
        for l, (w, b) in enumerate(zip(d["weights"], d["biases"])):
            net.weights[l] = np.asarray(w, dtype=np.float64).reshape(net.weights[l].shape)
            net.biases[l] = np.asarray(b, dtype=np.float64)
        return net


class Adam:
    """Bias-corrected adaptive-moment optimizer over a flat parameter list.

    Parameters are updated in place; moment buffers are keyed by position,
    so the same list (same shapes, same order) must be passed every step.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise ValueError("parameter/gradient list does not match optimizer state")
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape:
                raise ValueError("gradient shape mismatch")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def state_dict(self):
        return {
            "t": self.t,
            "m": [a.copy() for a in self.m],
            "v": [a.copy() for a in self.v],
        }

    def load_state_dict(self, state):
        self.t = state["t"]
        self.m = [a.copy() for a in state["m"]]
        self.v = [a.copy() for a in state["v"]]


CHECKPOINT_MAGIC = "imvc-mlp-v1"


def save_mlp(net, path):
    """Write a versioned JSON checkpoint of a single network."""
    payload = {"magic": CHECKPOINT_MAGIC}
    payload.update(net.to_dict())
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_mlp(path):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("magic") != CHECKPOINT_MAGIC:
        raise ValueError(f"not a {CHECKPOINT_MAGIC} checkpoint: {path}")
    return Mlp.from_dict(payload)
