"""The two allocation stages: Expert Consultancy Decision and Expert Selection.

Routing is vectorised: a batch of routes is a pair of arrays, ``dest``
(``GENERAL``, ``HUMAN`` or an expert id >= 0) and ``reason`` (a
:class:`Reason` value per instance).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import ColdStartError, ParameterError
from .nn import MLPClassifier

GENERAL = -1
HUMAN = -2


class Reason(str, enum.Enum):
    KNOWN_BY_GENERAL = "KnownByGeneral"
    UNIQUE_CLAIM = "UniqueClaim"
    NO_CLAIM = "NoClaim"
    MULTI_CLAIM = "MultiClaim"
    GATE_ARGMAX = "GateArgmax"
    GATE_LOW_CONFIDENCE = "GateLowConfidence"
    GATE_COLD_START = "GateColdStart"
    # baselines that bypass the detector
    ORACLE_DOMAIN = "OracleDomain"
    AUTOMATION = "FullAutomation"


@dataclass(frozen=True)
class Route:
    destination: int
    reason: Reason

    @property
    def label(self):
        return destination_label(self.destination)


def destination_label(dest):
    if dest == GENERAL:
        return "general"
    if dest == HUMAN:
        return "human"
    return f"expert:{int(dest)}"


@dataclass(frozen=True)
class ClaimResult:
    claims: tuple
    resolution: Reason
    expert_ids: tuple

    @property
    def route(self):
        if self.resolution is Reason.UNIQUE_CLAIM:
            return Route(self.expert_ids[0], Reason.UNIQUE_CLAIM)
        return Route(HUMAN, self.resolution)


def consultancy_decision(detector, X):
    """True where the general model's detector judges the instance known."""
    return np.asarray(detector.predict(X), dtype=bool)


def resolve_claims(claims, expert_ids):
    """Vectorised claim resolution for an ``(n, m)`` boolean claim matrix."""
    claims = np.asarray(claims, dtype=bool)
    claims = claims.reshape(len(claims), len(expert_ids))
    n = claims.shape[0]
    n_claims = claims.sum(axis=1)
    dest = np.full(n, HUMAN, dtype=np.int64)
    reason = np.full(n, Reason.NO_CLAIM.value, dtype=object)
    unique = n_claims == 1
    if unique.any():
        ids = np.asarray(expert_ids, dtype=np.int64)
        dest[unique] = ids[np.argmax(claims[unique], axis=1)]
        reason[unique] = Reason.UNIQUE_CLAIM.value
    reason[n_claims > 1] = Reason.MULTI_CLAIM.value
    return dest, reason


def claim_result(claim_vector, expert_ids):
    claims = tuple(bool(c) for c in claim_vector)
    owners = tuple(int(e) for e, c in zip(expert_ids, claims) if c)
    if len(owners) == 1:
        res = Reason.UNIQUE_CLAIM
    elif owners:
        res = Reason.MULTI_CLAIM
    else:
        res = Reason.NO_CLAIM
    return ClaimResult(claims, res, owners)


def expert_selection(experts, X):
    """Each included expert claims independently through its own detector.

    Returns ``(dest, reason, claims)``; with no experts everything goes to
    the human with reason NoClaim.
    """
    X = np.atleast_2d(X)
    if not experts:
        dest, reason = resolve_claims(np.zeros((len(X), 0), dtype=bool), [])
        return dest, reason, np.zeros((len(X), 0), dtype=bool)
    claims = np.column_stack([e.detector.predict(X) for e in experts])
    dest, reason = resolve_claims(claims, [e.expert_id for e in experts])
    return dest, reason, claims


class GatingModel(BaseEstimator):
    """Domain classifier used as a stage-2 router in place of expert claims.

    ``fit`` raises :class:`ColdStartError` until every domain has
    ``min_per_domain`` labelled instances.  ``route`` sends an instance to
    the expert owning the arg-max domain when the gate's confidence reaches
    ``tau``; otherwise to the human.
    """

    def __init__(self, tau=0.9, min_per_domain=30, hidden_layer_sizes=(32,),
                 epochs=50, batch_size=32, learning_rate=0.1, random_state=0):
        self.tau = tau
        self.min_per_domain = min_per_domain
        self.hidden_layer_sizes = hidden_layer_sizes
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, X, domains, required=()):
        """Train from scratch on human-labelled instances.

        ``required`` lists domains that must each reach ``min_per_domain``
        even when absent from ``domains``; other domains join the gate only
        once they reach that minimum.
        """
        if not 0 < self.tau <= 1:
            raise ParameterError("tau must lie in (0, 1]")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        domains = np.asarray(domains, dtype=str)
        labels, counts = np.unique(domains, return_counts=True)
        have = dict(zip(labels.tolist(), counts.tolist()))
        short = sorted(d for d in set(required) if have.get(d, 0) < self.min_per_domain)
        # optional domains below the minimum are left out of the gate
        keep = sorted(d for d in have if d in set(required) or have[d] >= self.min_per_domain)
        if short or len(keep) < 2:
            raise ColdStartError(f"not enough labelled instances for {short or 'two domains'}")
        mask = np.isin(domains, keep)
        X, domains = X[mask], domains[mask]
        self.net_ = MLPClassifier(
            hidden_layer_sizes=self.hidden_layer_sizes, epochs=self.epochs,
            batch_size=self.batch_size, learning_rate=self.learning_rate,
            random_state=self.random_state,
        ).fit(X, domains)
        self.classes_ = self.net_.classes_
        return self

    def route(self, X, owners):
        """Route a batch; ``owners`` maps domain id to an included expert id."""
        X = np.atleast_2d(X)
        n = len(X)
        dest = np.full(n, HUMAN, dtype=np.int64)
        if not hasattr(self, "net_"):
            return dest, np.full(n, Reason.GATE_COLD_START.value, dtype=object)
        proba = self.net_.predict_proba(X)
        idx = np.argmax(proba, axis=1)
        conf = proba[np.arange(n), idx]
        reason = np.full(n, Reason.GATE_LOW_CONFIDENCE.value, dtype=object)
        for i in np.flatnonzero(conf >= self.tau):
            domain = self.classes_[idx[i]]
            if domain in owners:
                dest[i] = owners[domain]
                reason[i] = Reason.GATE_ARGMAX.value
            else:
                # arg-max domain has no included expert yet
                reason[i] = Reason.GATE_COLD_START.value
        return dest, reason


def train_gating(X, domains, **params):
    return GatingModel(**params).fit(X, domains)


def gate_route_proba(proba, domains, tau, owners=None):
    """Single-instance gate decision from gate probabilities."""
    proba = np.asarray(proba, dtype=float)
    i = int(np.argmax(proba))
    if proba[i] < tau:
        return Route(HUMAN, Reason.GATE_LOW_CONFIDENCE)
    domain = domains[i]
    if owners is None:
        return Route(i, Reason.GATE_ARGMAX)
    if domain not in owners:
        return Route(HUMAN, Reason.GATE_COLD_START)
    return Route(owners[domain], Reason.GATE_ARGMAX)


def gate_route(gate, x, owners):
    if gate is None or not hasattr(gate, "net_"):
        return Route(HUMAN, Reason.GATE_COLD_START)
    check_is_fitted(gate, "net_")
    dest, reason = gate.route(np.atleast_2d(x), owners)
    return Route(int(dest[0]), Reason(reason[0]))
