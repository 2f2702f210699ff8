"""Small dense classifiers trained with mini-batch SGD.

The general model, every artificial expert and the gating model are
instances of :class:`MLPClassifier`.  Besides the usual estimator surface
(``fit``/``predict``/``predict_proba``) the network exposes the pieces the
OOD detectors need: temperature-scaled probabilities, penultimate-layer
features and gradients with respect to the input.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import (
    DataError,
    FormatError,
    InputShapeError,
    LabelError,
    NumericError,
    ParameterError,
    StructureError,
)

ACTIVATIONS = ("relu", "tanh", "identity")


def _activate(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _activation_grad(z, a, kind):
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    if kind == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def softmax_with_temperature(z, temperature=1.0):
    """Row-wise ``softmax(z / T)`` with max-subtraction.

    Accepts a single logit vector or a 2-d batch.
    """
    if not temperature > 0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    z = np.asarray(z, dtype=float)
    if not np.all(np.isfinite(z)):
        raise NumericError("non-finite logits")
    scaled = z / temperature
    scaled = scaled - scaled.max(axis=-1, keepdims=True)
    e = np.exp(scaled)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


class MLPClassifier(ClassifierMixin, BaseEstimator):
    """Feed-forward classifier with rectifier hidden layers.

    Parameters
    ----------
    hidden_layer_sizes : tuple of int
        Width of each hidden layer; ``()`` gives a linear softmax model.
    activation : {"relu", "tanh", "identity"}
    epochs, batch_size, learning_rate : training schedule for plain SGD on
        mean cross-entropy.
    random_state : int
        Seeds weight initialisation and mini-batch shuffling.
    shuffle : bool

    Fitted attributes are ``classes_``, ``coefs_`` (``(fan_in, fan_out)``
    matrices), ``intercepts_`` and ``loss_history_`` (one entry per epoch).
    """

    def __init__(
        self,
        hidden_layer_sizes=(32,),
        activation="relu",
        epochs=50,
        batch_size=32,
        learning_rate=0.1,
        random_state=0,
        shuffle=True,
    ):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.activation = activation
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state
        self.shuffle = shuffle

    # -- construction -------------------------------------------------

    @classmethod
    def from_weights(cls, coefs, intercepts, classes=None, activation="relu"):
        """Build a fitted network from explicit weights (no training)."""
        coefs = [np.array(w, dtype=float, ndmin=2) for w in coefs]
        intercepts = [np.array(b, dtype=float, ndmin=1) for b in intercepts]
        if len(coefs) != len(intercepts) or not coefs:
            raise StructureError("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(coefs, intercepts)):
            if w.shape[1] != b.shape[0]:
                raise StructureError(f"layer {i}: weight/bias shapes disagree")
            if i and coefs[i - 1].shape[1] != w.shape[0]:
                raise StructureError(f"layer {i}: shapes do not chain")
        n_out = coefs[-1].shape[1]
        if classes is None:
            classes = np.arange(n_out)
        classes = np.asarray(classes)
        if len(classes) != n_out:
            raise StructureError("output width must equal number of classes")
        net = cls(
            hidden_layer_sizes=tuple(w.shape[1] for w in coefs[:-1]),
            activation=activation,
        )
        net.coefs_ = coefs
        net.intercepts_ = intercepts
        net.classes_ = classes
        net.n_features_in_ = coefs[0].shape[0]
        net.loss_history_ = []
        return net

    @property
    def layer_dims(self):
        check_is_fitted(self, "coefs_")
        return [self.coefs_[0].shape[0]] + [w.shape[1] for w in self.coefs_]

    def _init_weights(self, n_in, n_out, rng):
        dims = [n_in, *self.hidden_layer_sizes, n_out]
        self.coefs_, self.intercepts_ = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            # He initialisation suits the rectifier default
            self.coefs_.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), (fan_in, fan_out)))
            self.intercepts_.append(np.zeros(fan_out))

    def _validate_params(self):
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"unknown activation {self.activation!r}")
        if int(self.epochs) < 1:
            raise ParameterError("epochs must be >= 1")
        if int(self.batch_size) < 1:
            raise ParameterError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ParameterError("learning_rate must be > 0")
        if any(int(h) < 1 for h in self.hidden_layer_sizes):
            raise ParameterError("hidden layer widths must be positive")

    # -- forward / backward ---------------------------------------------

    def _check_X(self, X):
        check_is_fitted(self, "coefs_")
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.coefs_[0].shape[0]:
            raise InputShapeError(
                f"expected {self.coefs_[0].shape[0]} features, got {X.shape[1]}"
            )
        return X, single

    def _forward_cache(self, X):
        pre, post = [], [X]
        a = X
        last = len(self.coefs_) - 1
        for i, (w, b) in enumerate(zip(self.coefs_, self.intercepts_)):
            z = a @ w + b
            a = z if i == last else _activate(z, self.activation)
            pre.append(z)
            post.append(a)
        return pre, post

    def _backward_from(self, pre, post, grad, layer):
        """Push ``grad`` (w.r.t. output of layer ``layer``) back to the input."""
        g = grad
        for i in range(layer, -1, -1):
            if i != len(self.coefs_) - 1:
                g = g * _activation_grad(pre[i], post[i + 1], self.activation)
            g = g @ self.coefs_[i].T
        return g

    def decision_function(self, X):
        """Logits (pre-softmax scores)."""
        X, single = self._check_X(X)
        _, post = self._forward_cache(X)
        return post[-1][0] if single else post[-1]

    def predict_proba(self, X, temperature=1.0):
        return softmax_with_temperature(self.decision_function(X), temperature)

    def predict(self, X):
        proba = self.predict_proba(X)
        # np.argmax returns the first maximum: ties go to the lowest index
        return self.classes_[np.argmax(proba, axis=-1)]

    def predict_with_confidence(self, X):
        proba = np.atleast_2d(self.predict_proba(X))
        idx = np.argmax(proba, axis=1)
        return self.classes_[idx], proba[np.arange(len(idx)), idx]

    def transform(self, X):
        """Post-activation values of the penultimate layer."""
        if len(self.coefs_) < 2:
            raise StructureError("network has no hidden layer to extract features from")
        X, single = self._check_X(X)
        _, post = self._forward_cache(X)
        return post[-2][0] if single else post[-2]

    def input_gradient(self, X, objective):
        """Gradient of ``objective(logits)`` with respect to the input rows.

        ``objective`` maps a ``(n, k)`` logit batch to ``(values, dvalues)``
        where ``dvalues`` is the ``(n, k)`` gradient of each row's value.
        """
        X, single = self._check_X(X)
        pre, post = self._forward_cache(X)
        _, dlogits = objective(post[-1])
        g = self._backward_from(pre, post, np.asarray(dlogits, dtype=float), len(self.coefs_) - 1)
        return g[0] if single else g

    def feature_input_gradient(self, X, dfeatures):
        """Backpropagate a gradient given at the penultimate features."""
        if len(self.coefs_) < 2:
            raise StructureError("network has no hidden layer")
        X, single = self._check_X(X)
        pre, post = self._forward_cache(X)
        g = self._backward_from(pre, post, np.atleast_2d(dfeatures), len(self.coefs_) - 2)
        return g[0] if single else g

    # -- training -------------------------------------------------------

    def fit(self, X, y, classes=None):
        """Train from scratch; ``classes`` fixes the output order if given."""
        self._validate_params()
        X = check_array(X, dtype=float)
        y = np.asarray(y)
        if X.shape[0] == 0:
            raise DataError("cannot train on an empty dataset")
        if y.shape[0] != X.shape[0]:
            raise DataError("X and y lengths differ")
        self.classes_ = np.unique(y) if classes is None else np.asarray(classes)
        index = {c: i for i, c in enumerate(self.classes_.tolist())}
        try:
            targets = np.array([index[c] for c in y.tolist()], dtype=int)
        except KeyError as exc:
            raise LabelError(f"label {exc.args[0]!r} not among classes") from None
        rng = np.random.default_rng(self.random_state)
        self.n_features_in_ = X.shape[1]
        self._init_weights(X.shape[1], len(self.classes_), rng)
        n = X.shape[0]
        bs = int(self.batch_size)
        lr = float(self.learning_rate)
        self.loss_history_ = []
        for _ in range(int(self.epochs)):
            order = rng.permutation(n) if self.shuffle else np.arange(n)
            total = 0.0
            for start in range(0, n, bs):
                idx = order[start:start + bs]
                total += self._sgd_step(X[idx], targets[idx], lr) * len(idx)
            self.loss_history_.append(total / n)
        return self

    def _sgd_step(self, Xb, tb, lr):
        pre, post = self._forward_cache(Xb)
        logp = _log_softmax(post[-1])
        m = len(tb)
        loss = -logp[np.arange(m), tb].mean()
        g = np.exp(logp)
        g[np.arange(m), tb] -= 1.0
        g /= m
        last = len(self.coefs_) - 1
        for i in range(last, -1, -1):
            if i != last:
                g = g * _activation_grad(pre[i], post[i + 1], self.activation)
            gw = post[i].T @ g
            gb = g.sum(axis=0)
            if i:
                g = g @ self.coefs_[i].T
            self.coefs_[i] -= lr * gw
            self.intercepts_[i] -= lr * gb
        return loss

    # -- persistence ----------------------------------------------------

    def to_dict(self):
        check_is_fitted(self, "coefs_")
        return {
            "layer_dims": [int(d) for d in self.layer_dims],
            "activation": self.activation,
            "class_labels": [c.item() if hasattr(c, "item") else c for c in self.classes_],
            "weights": [[_fmt(v) for v in w.ravel()] for w in self.coefs_],
            "biases": [[_fmt(v) for v in b] for b in self.intercepts_],
        }

    @classmethod
    def from_dict(cls, doc):
        try:
            dims = [int(d) for d in doc["layer_dims"]]
            coefs = [
                np.array([float(v) for v in w]).reshape(dims[i], dims[i + 1])
                for i, w in enumerate(doc["weights"])
            ]
            biases = [np.array([float(v) for v in b]) for b in doc["biases"]]
            return cls.from_weights(coefs, biases, doc["class_labels"], doc["activation"])
        except (KeyError, ValueError, IndexError, TypeError) as exc:
            raise FormatError(f"bad checkpoint: {exc}") from None

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path):
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: {exc}") from None
        return cls.from_dict(doc)

    def digest_bytes(self):
        check_is_fitted(self, "coefs_")
        parts = [w.tobytes() for w in self.coefs_] + [b.tobytes() for b in self.intercepts_]
        return b"".join(parts)


def _fmt(v):
    # 17 significant digits round-trip any float64 exactly
    return format(float(v), ".17g")


# -- objectives for input_gradient -------------------------------------------

def logit_objective(i):
    def objective(logits):
        g = np.zeros_like(logits)
        g[:, i] = 1.0
        return logits[:, i], g
    return objective


def log_max_softmax_objective(temperature=1.0):
    """``log max softmax(z / T)`` and its gradient in ``z``."""
    if not temperature > 0:
        raise ParameterError("temperature must be > 0")

    def objective(logits):
        z = np.atleast_2d(np.asarray(logits, dtype=float))
        if not np.all(np.isfinite(z)):
            raise NumericError("non-finite logits")
        rows = np.arange(len(z))
        idx = np.argmax(z, axis=1)
        e = np.exp((z - z[rows, idx][:, None]) / temperature)
        e[rows, idx] = 0.0
        # mass outside the arg-max, summed directly: 1 - p_max cancels badly
        # when the softmax saturates
        tail = e.sum(axis=1)
        g = -e / (1.0 + tail)[:, None] / temperature
        g[rows, idx] = tail / (1.0 + tail) / temperature
        return -np.log1p(tail), g
    return objective


# -- functional aliases --------------------------------------------------------

def forward(net, x):
    return net.decision_function(x)


def predict(net, x):
    """Return ``(label, confidence)`` for a single feature vector."""
    labels, conf = net.predict_with_confidence(x)
    return labels[0], float(conf[0])


def input_gradient(net, x, objective):
    return net.input_gradient(x, objective)


def extract_features(net, x):
    return net.transform(x)


def train(net, X, y):
    net.fit(X, y)
    return net, list(net.loss_history_)
