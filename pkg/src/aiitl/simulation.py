"""Batch-synchronous simulation of AIITL systems and their baselines."""
from __future__ import annotations

import copy
import enum
import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from sklearn.model_selection import train_test_split

from .allocation import GENERAL, HUMAN, ColdStartError, GatingModel, Reason, destination_label
from .allocation import consultancy_decision, expert_selection
from .datasets import Dataset, build_stream, generate_gaussian_domain, split_known_unknown
from .detectors import OODDetector
from .exceptions import DataError, FormatError, SequencingError
from .experts import ExpertPool, HumanOracle, assess_inclusion, train_candidate
from .metrics import MetricsSummary, summarize
from .nn import MLPClassifier
from .seeding import derive_seed

TRACE_VERSION = 1


class BaselineKind(str, enum.Enum):
    FULL_AUTOMATION = "full_automation"
    TRADITIONAL_HITL = "traditional_hitl"
    HITL_PERFECT_ALLOCATION = "hitl_perfect_allocation"
    AIITL = "aiitl"


def system_name(kind, mechanism):
    kind = BaselineKind(kind)
    return f"aiitl_{mechanism}" if kind is BaselineKind.AIITL else kind.value


# -- data --------------------------------------------------------------------------

@dataclass
class Benchmark:
    """Everything drawn from the dataset/schedule seeds, shared by all systems."""

    known_train: Dataset
    batches: list
    final_batch: Dataset
    known_domain: str


def build_benchmark(cfg):
    from .config import build_domain_specs

    specs, subsets = build_domain_specs(cfg)
    stream_pools, train_pools = {}, {}
    offset = 0
    for i, (did, spec) in enumerate(specs.items()):
        for split in ("stream", "train"):
            if split in spec.budget:
                seed = derive_seed(cfg.seeds.dataset, i, 0 if split == "stream" else 1)
                data = generate_gaussian_domain(spec, seed, split, id_offset=offset)
                offset += len(data)
                (stream_pools if split == "stream" else train_pools)[did] = data
    for sid, (parent, classes) in subsets.items():
        labels = [specs[parent].class_labels[c] for c in classes]
        for pools in (stream_pools, train_pools):
            if parent in pools:
                src = pools[parent]
                if set(labels) == set(src.classes().tolist()):
                    part = src.subset(np.arange(len(src)))
                else:
                    part, _ = split_known_unknown(src, labels)
                part.domain = np.full(len(part), sid)
                pools[sid] = part
    known = cfg.schedule.known_domain
    schedule = cfg.stream_schedule()
    batches, final = build_stream({d: stream_pools[d] for d in schedule.domains()}, schedule)
    return Benchmark(train_pools[known], batches, final, known)


# -- state -------------------------------------------------------------------------

@dataclass
class SystemState:
    cfg: object
    kind: BaselineKind
    general: MLPClassifier
    detector: OODDetector | None
    general_test_accuracy: float
    pool: ExpertPool
    oracle: HumanOracle
    reviewed: Dataset
    known_domain: str
    gate: GatingModel | None = None
    step: int = 0
    pending: bool = False

    @property
    def mechanism(self):
        return self.cfg.mechanism

    def digest(self):
        h = hashlib.sha256()
        h.update(self.general.digest_bytes())
        if self.detector is not None and self.detector.params_ is not None:
            h.update(self.detector.params_.precision.tobytes())
        h.update(repr(getattr(self.detector, "threshold_", None)).encode())
        h.update(self.pool.digest_bytes())
        if self.gate is not None and hasattr(self.gate, "net_"):
            h.update(self.gate.net_.digest_bytes())
        h.update(f"{self.step}|{self.pending}|{self.oracle.review_count}|{len(self.reviewed)}".encode())
        return h.hexdigest()


def train_general(cfg, known_train):
    """Fit the general model and its consultancy detector on the known domain."""
    t = cfg.training
    idx = np.arange(len(known_train))
    seed = derive_seed(cfg.seeds.split, 0)
    holdout = t.general_validation_fraction + t.general_test_fraction
    fit_idx, rest = train_test_split(idx, test_size=holdout, stratify=known_train.y,
                                     random_state=seed)
    val_idx, test_idx = train_test_split(
        rest, test_size=t.general_test_fraction / holdout,
        stratify=known_train.y[rest], random_state=seed)
    fit, val, test = (known_train.subset(np.sort(i)) for i in (fit_idx, val_idx, test_idx))
    net = MLPClassifier(random_state=derive_seed(cfg.seeds.training, 0),
                        **cfg.net_params("general")).fit(fit.X, fit.y)
    detector = OODDetector(net=net, **cfg.detector_params())
    detector.fit(fit.X, fit.y).calibrate(val.X)
    acc = float(np.mean(net.predict(test.X) == test.y))
    return net, detector, acc


def initialize(cfg, kind=BaselineKind.AIITL, benchmark=None, general=None):
    """Fresh system at step 0; ``general`` reuses an already-trained model triple."""
    kind = BaselineKind(kind)
    if general is None:
        if benchmark is None:
            benchmark = build_benchmark(cfg)
        general = train_general(cfg, benchmark.known_train)
    net, detector, acc = general
    if kind is BaselineKind.TRADITIONAL_HITL:
        cfg = copy.deepcopy(cfg)
        cfg.inclusion.accuracy_threshold = float("inf")
    d = net.n_features_in_
    return SystemState(
        cfg=cfg, kind=kind, general=net, detector=detector, general_test_accuracy=acc,
        pool=ExpertPool(d), oracle=HumanOracle(), reviewed=Dataset.empty(d),
        known_domain=cfg.schedule.known_domain,
    )


# -- routing ------------------------------------------------------------------------

def route_batch(state, data):
    """Pure routing of a batch through the current system; no learning."""
    n = len(data)
    dest = np.full(n, GENERAL, dtype=np.int64)
    reason = np.full(n, Reason.KNOWN_BY_GENERAL.value, dtype=object)
    if state.kind is BaselineKind.FULL_AUTOMATION:
        reason[:] = Reason.AUTOMATION.value
        return dest, reason
    if state.kind is BaselineKind.HITL_PERFECT_ALLOCATION:
        unknown = data.domain != state.known_domain
        dest[unknown] = HUMAN
        reason[unknown] = Reason.ORACLE_DOMAIN.value
        return dest, reason
    known = consultancy_decision(state.detector, data.X) if n else np.zeros(0, bool)
    u = np.flatnonzero(~known)
    if len(u):
        Xu = data.X[u]
        if state.mechanism == "gating":
            gate = state.gate if state.gate is not None else GatingModel()
            d_u, r_u = gate.route(Xu, state.pool.included_owners())
        else:
            d_u, r_u, _ = expert_selection(state.pool.included(), Xu)
        dest[u] = d_u
        reason[u] = r_u
    return dest, reason


def classify(state, data, dest):
    """Correctness per instance; human reviews are always correct."""
    correct = np.ones(len(data), dtype=bool)
    g = dest == GENERAL
    if g.any():
        correct[g] = state.general.predict(data.X[g]) == data.y[g]
    for e in np.unique(dest[dest >= 0]):
        m = dest == e
        correct[m] = state.pool.experts[int(e)].predict(data.X[m]) == data.y[m]
    return correct


# -- records --------------------------------------------------------------------------

@dataclass
class StepRecord:
    step: int
    batch_size: int
    route_counts: dict
    reason_counts: dict
    correct_counts: dict
    human_reviews: int
    new_experts: list
    newly_included: list
    candidate_accuracies: dict
    stream: MetricsSummary
    holdout: MetricsSummary | None
    outcomes: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "step": self.step,
            "batch_size": self.batch_size,
            "route_counts": self.route_counts,
            "reason_counts": self.reason_counts,
            "correct_counts": self.correct_counts,
            "human_reviews": self.human_reviews,
            "new_experts": self.new_experts,
            "newly_included": self.newly_included,
            "candidate_accuracies": self.candidate_accuracies,
            "stream": self.stream.to_dict(),
            "holdout": self.holdout.to_dict() if self.holdout is not None else None,
            "outcomes": self.outcomes,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            step=doc["step"], batch_size=doc["batch_size"], route_counts=doc["route_counts"],
            reason_counts=doc["reason_counts"], correct_counts=doc["correct_counts"],
            human_reviews=doc["human_reviews"], new_experts=doc["new_experts"],
            newly_included=doc["newly_included"],
            candidate_accuracies=doc["candidate_accuracies"],
            stream=MetricsSummary.from_dict(doc["stream"]),
            holdout=MetricsSummary.from_dict(doc["holdout"]) if doc["holdout"] else None,
            outcomes=doc.get("outcomes", {}),
        )

    def comparable(self):
        """Record fields that describe routing and learning, minus holdout evaluation."""
        d = self.to_dict()
        d.pop("holdout")
        return d


def _tally(dest, reason, correct):
    labels = [destination_label(int(x)) for x in dest]
    route_counts, correct_counts, reason_counts = {}, {}, {}
    for lab, r, c in zip(labels, reason, correct):
        route_counts[lab] = route_counts.get(lab, 0) + 1
        correct_counts[lab] = correct_counts.get(lab, 0) + int(c)
        key = f"{lab}/{r}"
        reason_counts[key] = reason_counts.get(key, 0) + 1
    order = sorted(route_counts, key=_route_order)
    return ({k: route_counts[k] for k in order},
            {k: reason_counts[k] for k in sorted(reason_counts, key=lambda s: (_route_order(s.split("/")[0]), s))},
            {k: correct_counts[k] for k in order},
            labels)


def _route_order(label):
    if label == "general":
        return (0, 0)
    if label == "human":
        return (2, 0)
    return (1, int(label.split(":")[1]))


def _summary(state, dest, correct):
    w = state.cfg.utility
    return summarize(int(correct.sum()), int((dest == HUMAN).sum()), len(dest), w.alpha, w.beta)


# -- stepping ---------------------------------------------------------------------------

def run_step(state, batch, final_batch=None):
    """Route, classify and learn from one step batch; mutates ``state``."""
    if batch.step != state.step + 1:
        raise SequencingError(f"expected step {state.step + 1}, got {batch.step}")
    data = batch.data
    # learning from the previous batch happens at the boundary, so each record
    # describes the system version that served its batch
    newly_included, cand_acc = learn_at_boundary(state)
    dest, reason = route_batch(state, data)
    correct = classify(state, data, dest)
    human = np.flatnonzero(dest == HUMAN)
    new_experts = []
    if len(human):
        reviewed = data.subset(human)
        labels, domains = state.oracle.review(reviewed)
        reviewed = Dataset(reviewed.X, labels, domains, reviewed.ids)
        state.reviewed = Dataset.concat([state.reviewed, reviewed])
        if state.kind in (BaselineKind.AIITL, BaselineKind.TRADITIONAL_HITL):
            unknown = reviewed.subset(np.flatnonzero(reviewed.domain != state.known_domain))
            if len(unknown):
                new_experts = state.pool.ingest(unknown)
    holdout = evaluate_final_batch(state, final_batch) if final_batch is not None else None
    state.step = batch.step
    state.pending = True
    route_counts, reason_counts, correct_counts, labels = _tally(dest, reason, correct)
    record = StepRecord(
        step=batch.step, batch_size=len(data), route_counts=route_counts,
        reason_counts=reason_counts, correct_counts=correct_counts,
        human_reviews=len(human), new_experts=new_experts, newly_included=newly_included,
        candidate_accuracies=cand_acc, stream=_summary(state, dest, correct), holdout=holdout,
        outcomes={"instance_id": data.ids.tolist(), "route": labels,
                  "reason": [str(r) for r in reason], "correct": [int(c) for c in correct]},
    )
    return state, record


def learn_at_boundary(state):
    """Train candidates and the gate on everything reviewed so far.

    Runs once between consecutive batches (and once after the last one);
    returns ``(newly_included, candidate_accuracies)``.
    """
    if not state.pending:
        return [], {}
    state.pending = False
    if state.kind not in (BaselineKind.AIITL, BaselineKind.TRADITIONAL_HITL):
        return [], {}
    return _learn(state, state.step)


def _learn(state, step):
    cfg = state.cfg
    policy = cfg.inclusion_policy()
    det_params = None if cfg.mechanism == "gating" else cfg.detector_params()
    newly, acc = [], {}
    for expert in state.pool.candidates():
        ok = train_candidate(expert, policy, cfg.net_params("expert"), det_params,
                             seed=derive_seed(cfg.seeds.training, 1))
        if not ok:
            continue
        acc[str(expert.expert_id)] = expert.last_test_accuracy
        if assess_inclusion(expert, policy, step) == "included":
            newly.append(expert.expert_id)
    if cfg.mechanism == "gating":
        _retrain_gate(state, step)
    return newly, acc


def _retrain_gate(state, step):
    cfg = state.cfg
    if not state.pool.included():
        return
    gate = GatingModel(
        tau=cfg.detector.gate_tau, min_per_domain=cfg.detector.gate_min_per_domain,
        random_state=derive_seed(cfg.seeds.training, 2, step),
        **{k: v for k, v in cfg.net_params("gate").items()},
    )
    domains = [d for e in state.pool.experts for d in sorted(e.domains)]
    try:
        state.gate = gate.fit(state.reviewed.X, state.reviewed.domain, required=domains)
    except ColdStartError:
        state.gate = None


def evaluate_final_batch(state, final_batch):
    """Route and classify the held-out batch with the frozen system."""
    if final_batch is None or len(final_batch) == 0:
        raise DataError("final test batch is empty")
    dest, _ = route_batch(state, final_batch)
    correct = classify(state, final_batch, dest)
    return _summary(state, dest, correct)


# -- runs ----------------------------------------------------------------------------

@dataclass
class RunTrace:
    system: str
    kind: str
    mechanism: str
    config_hash: str
    seed: int
    general_test_accuracy: float
    records: list
    final: MetricsSummary
    registry: list = field(default_factory=list)
    final_learning: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def to_dict(self):
        return {
            "version": TRACE_VERSION,
            "system": self.system,
            "kind": self.kind,
            "mechanism": self.mechanism,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "general_test_accuracy": self.general_test_accuracy,
            "final": self.final.to_dict(),
            "registry": self.registry,
            "final_learning": self.final_learning,
            "records": [r.to_dict() for r in self.records],
        }

    def dumps(self):
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, doc):
        try:
            return cls(
                system=doc["system"], kind=doc["kind"], mechanism=doc["mechanism"],
                config_hash=doc["config_hash"], seed=doc["seed"],
                general_test_accuracy=doc["general_test_accuracy"],
                records=[StepRecord.from_dict(r) for r in doc["records"]],
                final=MetricsSummary.from_dict(doc["final"]),
                registry=doc.get("registry", []),
                final_learning=doc.get("final_learning", {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad trace: missing or invalid field {exc}") from None

    @classmethod
    def loads(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise FormatError(f"bad trace JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise FormatError("trace must be a JSON object")
        return cls.from_dict(doc)


def simulate(cfg, kind, benchmark, general=None, evaluate_each_step=True):
    """Run one system over a prepared benchmark; returns ``(trace, state)``."""
    state = initialize(cfg, kind, benchmark, general)
    final_batch = benchmark.final_batch
    records = []
    for batch in benchmark.batches:
        state, rec = run_step(state, batch, final_batch if evaluate_each_step else None)
        records.append(rec)
    newly, acc = learn_at_boundary(state)
    final = evaluate_final_batch(state, final_batch)
    kind = BaselineKind(kind)
    trace = RunTrace(
        system=system_name(kind, cfg.mechanism), kind=kind.value, mechanism=cfg.mechanism,
        config_hash=cfg.config_hash(), seed=cfg.seeds.training,
        general_test_accuracy=state.general_test_accuracy, records=records, final=final,
        registry=state.pool.registry(),
        final_learning={"newly_included": newly, "candidate_accuracies": acc},
    )
    return trace, state


def run_experiment(cfg, benchmark=None, general=None):
    benchmark = benchmark or build_benchmark(cfg)
    return simulate(cfg, BaselineKind.AIITL, benchmark, general)[0]


def run_baseline(cfg, kind, benchmark=None, general=None):
    benchmark = benchmark or build_benchmark(cfg)
    return simulate(cfg, kind, benchmark, general)[0]


def run_all(cfg):
    """AIITL plus the three baselines on one stream realisation."""
    benchmark = build_benchmark(cfg)
    general = train_general(cfg, benchmark.known_train)
    results = {}
    for kind in (BaselineKind.AIITL, BaselineKind.TRADITIONAL_HITL,
                 BaselineKind.HITL_PERFECT_ALLOCATION, BaselineKind.FULL_AUTOMATION):
        trace, state = simulate(cfg, kind, benchmark, general)
        results[trace.system] = (trace, state)
    return results
