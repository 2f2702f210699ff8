"""Simulated human oracle and the artificial-expert lifecycle."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.model_selection import train_test_split

from .datasets import Dataset
from .detectors import MIN_CALIBRATION_SCORES, OODDetector
from .exceptions import CalibrationError, DataError, ParameterError, StateError
from .nn import MLPClassifier
from .seeding import derive_seed

CANDIDATE = "candidate"
INCLUDED = "included"


class HumanOracle:
    """Perfect reviewer: returns ground truth and counts every review."""

    def __init__(self):
        self.review_count = 0

    def review(self, data):
        self.review_count += len(data)
        return data.y.copy(), data.domain.copy()


def human_review(oracle, x):
    labels, domains = oracle.review(x)
    return int(labels[0]), str(domains[0])


@dataclass
class InclusionPolicy:
    accuracy_threshold: float = 0.95
    validation_fraction: float = 0.10
    train_fraction: float = 0.80
    min_buffer: int = 50
    seed: int = 0

    def validate(self, class_count=2):
        if not 0 < self.validation_fraction < 1 or not 0 < self.train_fraction < 1:
            raise ParameterError("split fractions must lie in (0, 1)")
        # thresholds above 1 are allowed: they disable inclusion
        if self.accuracy_threshold <= 0:
            raise ParameterError("accuracy_threshold must be > 0")
        if self.min_buffer < 2 * class_count:
            raise ParameterError("min_buffer must be >= 2 x class count")


@dataclass
class ExpertSplits:
    validation: np.ndarray
    train: np.ndarray
    test: np.ndarray


def split_buffer(y, policy, seed):
    """Stratified validation / train / test indices into a buffer.

    Raises ValueError when a class is too small to stratify.
    """
    idx = np.arange(len(y))
    rest, val = train_test_split(idx, test_size=policy.validation_fraction,
                                 stratify=y, random_state=seed)
    train, test = train_test_split(rest, train_size=policy.train_fraction,
                                   stratify=y[rest], random_state=seed)
    return ExpertSplits(np.sort(val), np.sort(train), np.sort(test))


@dataclass
class ArtificialExpert:
    expert_id: int
    domains: set
    buffer: Dataset
    status: str = CANDIDATE
    classifier: MLPClassifier | None = None
    detector: OODDetector | None = None
    last_test_accuracy: float | None = None
    trained_size: int = 0
    included_at: int | None = None
    history: list = field(default_factory=list)

    def append(self, data):
        bad = set(data.domain.tolist()) - self.domains
        if bad:
            raise DataError(f"expert {self.expert_id} does not own domains {sorted(bad)}")
        self.buffer = Dataset.concat([self.buffer, data])

    @property
    def included(self):
        return self.status == INCLUDED

    def predict(self, X):
        return self.classifier.predict(X)

    def registry_entry(self):
        return {
            "expert_id": self.expert_id,
            "domains": sorted(self.domains),
            "status": self.status,
            "buffer_size": len(self.buffer),
            "last_test_accuracy": self.last_test_accuracy,
            "included_at": self.included_at,
            "classifier_checkpoint": f"expert_{self.expert_id}_classifier.json",
            "detector_dump": (f"expert_{self.expert_id}_detector.json"
                              if self.detector is not None else None),
        }


def train_candidate(expert, policy, net_params=None, detector_params=None, seed=0):
    """Retrain a candidate on its buffer; returns False when not ready.

    The buffer is split (stratified) into validation, then train/test on the
    remainder.  The classifier sees only the train split; the test split
    accuracy is stored in ``last_test_accuracy``.  Detector thresholds come
    from held-out in-distribution scores: the validation split, pooled with
    the test split while validation alone is too small to calibrate.
    """
    buf = expert.buffer
    if len(buf) < policy.min_buffer:
        return False
    _, counts = np.unique(buf.y, return_counts=True)
    if np.any(counts < 2):
        return False
    split_seed = derive_seed(policy.seed, expert.expert_id)
    try:
        splits = split_buffer(buf.y, policy, split_seed)
    except ValueError:
        return False
    train = buf.subset(splits.train)
    test = buf.subset(splits.test)
    calib = splits.validation
    if len(calib) < MIN_CALIBRATION_SCORES:
        calib = np.concatenate([splits.validation, splits.test])
    if detector_params is not None and len(calib) < MIN_CALIBRATION_SCORES:
        return False
    params = dict(net_params or {})
    params["random_state"] = derive_seed(seed, expert.expert_id, len(buf))
    net = MLPClassifier(**params).fit(train.X, train.y)
    detector = None
    if detector_params is not None:
        detector = OODDetector(net=net, **detector_params)
        try:
            detector.fit(train.X, train.y).calibrate(buf.X[calib])
        except (DataError, CalibrationError):
            return False
    expert.classifier = net
    expert.detector = detector
    expert.last_test_accuracy = float(np.mean(net.predict(test.X) == test.y))
    expert.trained_size = len(buf)
    expert.history.append((len(buf), expert.last_test_accuracy))
    return True


def assess_inclusion(expert, policy, step=None):
    """Promote a candidate whose test accuracy strictly exceeds the threshold."""
    if expert.last_test_accuracy is None:
        raise StateError(f"expert {expert.expert_id} has never been trained")
    if expert.status == CANDIDATE and expert.last_test_accuracy > policy.accuracy_threshold:
        expert.status = INCLUDED
        expert.included_at = step
    return expert.status


class ExpertPool:
    """Artificial experts keyed by id, one owner per domain."""

    def __init__(self, n_features):
        self.n_features = n_features
        self.experts = []
        self.owner = {}
        # reviewed instances routed to the human although their domain's
        # expert was already included (kept for inspection)
        self.late_reviews = 0

    def __len__(self):
        return len(self.experts)

    def ingest(self, data):
        """Append reviewed unknown-domain instances to their owners' buffers.

        A domain without an owner gets a new candidate expert.  Returns the
        ids of newly created experts.
        """
        created = []
        for d in dict.fromkeys(data.domain.tolist()):
            part = data.subset(np.flatnonzero(data.domain == d))
            if d not in self.owner:
                expert = ArtificialExpert(len(self.experts), {d}, Dataset.empty(self.n_features))
                self.experts.append(expert)
                self.owner[d] = expert.expert_id
                created.append(expert.expert_id)
            expert = self.experts[self.owner[d]]
            if expert.included:
                self.late_reviews += len(part)
            expert.append(part)
        return created

    def candidates(self):
        return [e for e in self.experts if e.status == CANDIDATE]

    def included(self):
        return [e for e in self.experts if e.status == INCLUDED]

    def included_owners(self):
        return {d: e.expert_id for e in self.included() for d in sorted(e.domains)}

    def digest_bytes(self):
        parts = []
        for e in self.experts:
            parts.append(f"{e.expert_id}|{e.status}|{len(e.buffer)}|{e.last_test_accuracy}".encode())
            if e.classifier is not None:
                parts.append(e.classifier.digest_bytes())
        return b"".join(parts)

    def registry(self):
        return [e.registry_entry() for e in self.experts]

    def dump(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for e in self.experts:
            entry = e.registry_entry()
            if e.classifier is not None:
                e.classifier.save(directory / entry["classifier_checkpoint"])
            else:
                entry["classifier_checkpoint"] = None
            if e.detector is not None:
                e.detector.save(directory / entry["detector_dump"])
        reg = self.registry()
        for entry, e in zip(reg, self.experts):
            if e.classifier is None:
                entry["classifier_checkpoint"] = None
        (directory / "registry.json").write_text(json.dumps(reg, indent=1) + "\n")
        return reg


def ingest_reviewed(pool, data):
    pool.ingest(data)
    return pool
