"""OOD scores on top of an :class:`~aiitl.nn.MLPClassifier` and their thresholds.

Higher scores mean "more in-distribution" for every detector kind, so a
calibrated detector accepts ``score >= threshold_``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import (
    CalibrationError,
    DataError,
    FormatError,
    InputShapeError,
    NumericError,
    ParameterError,
    StateError,
)
from .nn import _fmt, log_max_softmax_objective, softmax_with_temperature

KINDS = ("msp", "odin", "mahalanobis")
MIN_CALIBRATION_SCORES = 20


def msp_score(net, X):
    """Maximum softmax probability at T = 1."""
    p = np.atleast_2d(net.predict_proba(X))
    return p.max(axis=1)


def odin_score(net, X, temperature=1000.0, epsilon=0.0014):
    """Temperature-scaled max-softmax after a signed-gradient input step.

    The step moves each input in the direction that increases the
    log max-softmax at ``temperature``.
    """
    if not temperature > 0:
        raise ParameterError("temperature must be > 0")
    if epsilon < 0:
        raise ParameterError("epsilon must be >= 0")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if epsilon > 0:
        grad = net.input_gradient(X, log_max_softmax_objective(temperature))
        X = X - epsilon * np.sign(-grad)
    p = softmax_with_temperature(net.decision_function(X), temperature)
    return p.max(axis=1)


@dataclass
class MahalanobisParams:
    classes: np.ndarray
    class_means: np.ndarray
    precision: np.ndarray

    def to_dict(self):
        return {
            "classes": [int(c) for c in self.classes],
            "class_means": [[_fmt(v) for v in m] for m in self.class_means],
            "precision": [[_fmt(v) for v in r] for r in self.precision],
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            np.asarray(doc["classes"]),
            np.array([[float(v) for v in m] for m in doc["class_means"]]),
            np.array([[float(v) for v in r] for r in doc["precision"]]),
        )


def _features(net, X):
    return net.transform(X) if net is not None else np.atleast_2d(np.asarray(X, dtype=float))


def fit_mahalanobis(net, X, y, reg=1e-3):
    """Class means and shared precision of the penultimate features.

    The tied covariance pools within-class scatter with denominator
    ``N - k``; ``reg * trace / d`` is added to its diagonal.  ``net=None``
    uses the raw inputs as features.
    """
    Z = _features(net, X)
    y = np.asarray(y)
    classes, counts = np.unique(y, return_counts=True)
    if len(Z) == 0 or Z.shape[1] < 1:
        raise DataError("no features to fit")
    if np.any(counts < 2):
        raise DataError("every class needs at least 2 instances")
    means = np.array([Z[y == c].mean(axis=0) for c in classes])
    centred = Z - means[np.searchsorted(classes, y)]
    dof = max(len(Z) - len(classes), 1)
    cov = centred.T @ centred / dof
    d = cov.shape[0]
    lam = reg * np.trace(cov) / d
    if lam <= 0:
        lam = reg
    cov = cov + lam * np.eye(d)
    try:
        precision = np.linalg.inv(cov)
    except np.linalg.LinAlgError:
        raise NumericError("covariance is singular after regularisation") from None
    precision = (precision + precision.T) / 2
    return MahalanobisParams(classes, means, precision)


def _maha_confidence(params, Z):
    diff = Z[:, None, :] - params.class_means[None, :, :]
    dist = np.einsum("nkd,de,nke->nk", diff, params.precision, diff)
    best = np.argmin(dist, axis=1)
    return -dist[np.arange(len(Z)), best], diff[np.arange(len(Z)), best]


def mahalanobis_score(params, net, X, epsilon=0.001):
    """Negative squared Mahalanobis distance to the closest class mean.

    With ``epsilon > 0`` the input first takes a signed-gradient step that
    increases this confidence.
    """
    if epsilon < 0:
        raise ParameterError("epsilon must be >= 0")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = _features(net, X)
    if Z.shape[1] != params.class_means.shape[1]:
        raise InputShapeError("feature dimension does not match the fitted params")
    if epsilon > 0:
        _, diff = _maha_confidence(params, Z)
        dZ = -2.0 * diff @ params.precision
        grad = net.feature_input_gradient(X, dZ) if net is not None else dZ
        X = X + epsilon * np.sign(grad)
        Z = _features(net, X)
    score, _ = _maha_confidence(params, Z)
    return score


def calibrate_threshold(id_scores, tpr_target=0.95):
    """Lower empirical ``(1 - tpr_target)`` quantile of in-distribution scores."""
    s = np.asarray(id_scores, dtype=float)
    if not 0 < tpr_target < 1:
        raise ParameterError("tpr_target must lie in (0, 1)")
    if len(s) < MIN_CALIBRATION_SCORES:
        raise CalibrationError(f"need >= {MIN_CALIBRATION_SCORES} scores, got {len(s)}")
    return float(np.quantile(s, 1.0 - tpr_target, method="lower"))


class OODDetector(BaseEstimator):
    """Score-and-threshold wrapper around a trained classifier.

    ``fit`` prepares the score (Mahalanobis needs class statistics),
    ``calibrate`` sets ``threshold_`` from held-out in-distribution data and
    ``predict`` returns True for instances judged in-distribution.
    """

    def __init__(self, net=None, kind="msp", temperature=1000.0, epsilon=None,
                 tpr_target=0.95, reg=1e-3):
        self.net = net
        self.kind = kind
        self.temperature = temperature
        self.epsilon = epsilon
        self.tpr_target = tpr_target
        self.reg = reg

    def _eps(self):
        if self.epsilon is not None:
            return float(self.epsilon)
        return {"odin": 0.0014, "mahalanobis": 0.001}.get(self.kind, 0.0)

    def fit(self, X=None, y=None):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown detector kind {self.kind!r}")
        if self.kind == "mahalanobis":
            self.params_ = fit_mahalanobis(self.net, X, y, reg=self.reg)
        else:
            self.params_ = None
        return self

    def score_samples(self, X):
        check_is_fitted(self, "params_")
        if self.kind == "msp":
            return msp_score(self.net, X)
        if self.kind == "odin":
            return odin_score(self.net, X, self.temperature, self._eps())
        return mahalanobis_score(self.params_, self.net, X, self._eps())

    def calibrate(self, X_val):
        self.threshold_ = calibrate_threshold(self.score_samples(X_val), self.tpr_target)
        return self

    def predict(self, X):
        if not hasattr(self, "threshold_"):
            raise StateError("detector is not calibrated")
        return self.score_samples(X) >= self.threshold_

    def to_dict(self):
        check_is_fitted(self, "params_")
        doc = {
            "kind": self.kind,
            "temperature": _fmt(self.temperature),
            "epsilon": _fmt(self._eps()),
            "threshold": _fmt(self.threshold_) if hasattr(self, "threshold_") else None,
            "tpr_target": _fmt(self.tpr_target),
        }
        if self.params_ is not None:
            doc["mahalanobis"] = self.params_.to_dict()
        return doc

    @classmethod
    def from_dict(cls, doc, net=None):
        try:
            det = cls(net=net, kind=doc["kind"], temperature=float(doc["temperature"]),
                      epsilon=float(doc["epsilon"]), tpr_target=float(doc["tpr_target"]))
            det.params_ = (MahalanobisParams.from_dict(doc["mahalanobis"])
                           if "mahalanobis" in doc else None)
            if doc.get("threshold") is not None:
                det.threshold_ = float(doc["threshold"])
        except (KeyError, ValueError, TypeError) as exc:
            raise FormatError(f"bad detector dump: {exc}") from None
        return det

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path, net=None):
        return cls.from_dict(json.loads(Path(path).read_text()), net=net)
