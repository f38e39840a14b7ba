"""Softmax actors: a tabular one and a single-hidden-layer dense one.

Both expose the same small surface used by the training loops:
``action_probs``, ``grad_log_prob``, ``params`` / ``with_params``, plus the
in-place helpers ``sample``, ``accumulate`` and ``apply`` that the loops use to
avoid reallocating the parameter tensor on every update.
"""

from __future__ import annotations

import bisect
import math

import numpy as np

from ..schedules import ProjectionBox

__all__ = ["DenseSoftmaxPolicy", "SoftmaxPolicy", "softmax"]


def softmax(x, axis=-1):
    z = np.asarray(x, dtype=float)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


class SoftmaxPolicy:
    """pi(a|s) proportional to exp(theta[s, a])."""

    kind = "tabular"

    def __init__(self, theta):
        self.theta = np.array(theta, dtype=float)
        if self.theta.ndim != 2:
            raise ValueError("tabular theta must be a (states, actions) array")
        self._cum = [None] * self.theta.shape[0]

    @classmethod
    def uniform(cls, n_states, n_actions):
        return cls(np.zeros((n_states, n_actions)))

    @property
    def n_states(self):
        return self.theta.shape[0]

    @property
    def n_actions(self):
        return self.theta.shape[1]

    @property
    def params(self):
        return self.theta

    @property
    def dims(self):
        return self.theta.shape

    def with_params(self, params):
        return SoftmaxPolicy(np.reshape(params, self.theta.shape))

    def copy(self):
        return SoftmaxPolicy(self.theta)

    def action_probs(self, s):
        return softmax(self.theta[s])

    def probs_table(self):
        return softmax(self.theta, axis=1)

    def log_prob(self, s, a):
        row = self.theta[s]
        m = row.max()
        return float(row[a] - m - math.log(np.exp(row - m).sum()))

    def grad_log_prob(self, s, a):
        g = np.zeros_like(self.theta)
        g[s] = -self.action_probs(s)
        g[s, a] += 1.0
        return g

    # -- in-place helpers for the training loops --

    def _row(self, s):
        """Cached (probabilities, cumulative probabilities) of state ``s`` as lists."""
        cached = self._cum[s]
        if cached is None:
            row = self.theta[s].tolist()
            m = max(row)
            e = [math.exp(x - m) for x in row]
            total = sum(e)
            probs = [x / total for x in e]
            acc, cum = 0.0, []
            for x in probs:
                acc += x
                cum.append(acc)
            cum[-1] = 1.0
            cached = self._cum[s] = (probs, cum)
        return cached

    def sample(self, s, u):
        return bisect.bisect_right(self._row(s)[1], u)

    def zeros_like_params(self):
        return np.zeros_like(self.theta)

    def accumulate(self, buf, s, a, scale):
        """buf += scale * grad log pi(a|s)."""
        if scale == 0.0:
            return
        row = buf[s]
        for i, p in enumerate(self._row(s)[0]):
            row[i] -= scale * p
        row[a] += scale

    def apply(self, buf, lr, box: ProjectionBox | None, rows=None):
        """theta += lr * buf, then project.  ``rows`` may name the touched states."""
        if rows is None:
            rows = np.flatnonzero(np.any(buf != 0.0, axis=1)).tolist()
        theta = self.theta
        for r in rows:
            row = theta[r]
            row += lr * buf[r]
            if box is not None:
                np.clip(row, box.lower[r], box.upper[r], out=row)
            self._cum[r] = None


class DenseSoftmaxPolicy:
    """Softmax over a tanh hidden layer: logits = tanh(x W1 + b1) W2 + b2.

    ``features`` maps each state to an input row; the default is one-hot.
    Gradients are derived by hand.
    """

    kind = "dense"

    def __init__(self, params, n_inputs, n_hidden, n_actions, features=None):
        self.n_inputs, self.n_hidden, self._n_actions = int(n_inputs), int(n_hidden), int(n_actions)
        size = self.n_inputs * self.n_hidden + self.n_hidden + self.n_hidden * self._n_actions + self._n_actions
        self._params = np.array(params, dtype=float).reshape(-1)
        if self._params.size != size:
            raise ValueError(f"expected {size} parameters, got {self._params.size}")
        if features is None:
            features = np.eye(self.n_inputs)
        self.features = np.asarray(features, dtype=float)
        if self.features.shape[1] != self.n_inputs:
            raise ValueError("feature width must equal n_inputs")

    @classmethod
    def init(cls, n_states, n_hidden, n_actions, rng, scale=0.1, features=None):
        n_inputs = n_states if features is None else np.asarray(features).shape[1]
        size = n_inputs * n_hidden + n_hidden + n_hidden * n_actions + n_actions
        params = rng.normal(0.0, scale, size)
        # zero output layer: the initial policy is uniform
        params[n_inputs * n_hidden + n_hidden:] = 0.0
        return cls(params, n_inputs, n_hidden, n_actions, features)

    @property
    def n_states(self):
        return self.features.shape[0]

    @property
    def n_actions(self):
        return self._n_actions

    @property
    def params(self):
        return self._params

    @property
    def dims(self):
        return (self.n_inputs, self.n_hidden, self._n_actions)

    def with_params(self, params):
        return DenseSoftmaxPolicy(params, self.n_inputs, self.n_hidden, self._n_actions, self.features)

    def copy(self):
        return self.with_params(self._params.copy())

    def _unpack(self, p=None):
        p = self._params if p is None else p
        i, h, a = self.n_inputs, self.n_hidden, self._n_actions
        o = 0
        W1 = p[o:o + i * h].reshape(i, h); o += i * h
        b1 = p[o:o + h]; o += h
        W2 = p[o:o + h * a].reshape(h, a); o += h * a
        b2 = p[o:o + a]
        return W1, b1, W2, b2

    def _forward(self, s):
        W1, b1, W2, b2 = self._unpack()
        x = self.features[s]
        hid = np.tanh(x @ W1 + b1)
        return x, hid, softmax(hid @ W2 + b2)

    def action_probs(self, s):
        return self._forward(s)[2]

    def probs_table(self):
        W1, b1, W2, b2 = self._unpack()
        return softmax(np.tanh(self.features @ W1 + b1) @ W2 + b2, axis=1)

    def log_prob(self, s, a):
        return float(np.log(self.action_probs(s)[a]))

    def grad_log_prob(self, s, a):
        W1, b1, W2, b2 = self._unpack()
        x, hid, p = self._forward(s)
        dlogits = -p
        dlogits[a] += 1.0
        dpre = (W2 @ dlogits) * (1.0 - hid ** 2)
        return np.concatenate([np.outer(x, dpre).ravel(), dpre,
                               np.outer(hid, dlogits).ravel(), dlogits])

    def sample(self, s, u):
        cum = np.cumsum(self.action_probs(s))
        cum[-1] = 1.0
        return int(np.searchsorted(cum, u, side="right"))

    def zeros_like_params(self):
        return np.zeros_like(self._params)

    def accumulate(self, buf, s, a, scale):
        if scale != 0.0:
            buf += scale * self.grad_log_prob(s, a)

    def apply(self, buf, lr, box: ProjectionBox | None, rows=None):
        self._params += lr * buf
        if box is not None:
            np.clip(self._params, box.lower, box.upper, out=self._params)
