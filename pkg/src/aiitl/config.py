"""Experiment configuration: YAML sections parsed into dataclasses.

Recognised top-level sections are ``domains``, ``schedule``, ``mechanism``,
``detector``, ``inclusion``, ``training``, ``utility``, ``seeds`` and
``output``.  Unknown keys are rejected with the offending line number.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .datasets import DomainSpec, StreamSchedule, axis_means
from .exceptions import ConfigError, SpecError
from .experts import InclusionPolicy

MECHANISMS = ("odin", "maha", "gating", "msp")
DETECTOR_FOR_MECHANISM = {"odin": "odin", "maha": "mahalanobis", "msp": "msp"}


@dataclass
class DomainConfig:
    id: str
    feature_dim: int | None = None
    sigma: float | None = None
    means: list | None = None
    axes: list | None = None
    scale: float = 3.0
    budget: dict = field(default_factory=dict)
    subset_of: str | None = None
    classes: list | None = None


@dataclass
class ScheduleConfig:
    known_domain: str
    counts: dict
    introduction: dict
    final_test: dict
    steps: int = 30


@dataclass
class DetectorConfig:
    consultancy_kind: str = "mahalanobis"
    temperature: float = 1000.0
    odin_epsilon: float = 0.0014
    maha_epsilon: float = 0.001
    tpr_target: float = 0.95
    covariance_reg: float = 1e-3
    gate_tau: float = 0.9
    gate_min_per_domain: int = 30


@dataclass
class TrainingConfig:
    general_hidden: list = field(default_factory=lambda: [32])
    expert_hidden: list = field(default_factory=lambda: [32])
    gate_hidden: list = field(default_factory=lambda: [32])
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 0.1
    general_validation_fraction: float = 0.1
    general_test_fraction: float = 0.1


@dataclass
class UtilityConfig:
    alpha: float = 1.0
    beta: float = 0.5
    betas: list = field(default_factory=lambda: [0.5, 0.75, 1.0, 2.0])


@dataclass
class SeedConfig:
    dataset: int = 0
    training: int = 0
    schedule: int = 0
    split: int = 0


@dataclass
class OutputConfig:
    directory: str = "runs/default"


@dataclass
class ExperimentConfig:
    domains: list
    schedule: ScheduleConfig
    mechanism: str = "gating"
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    inclusion: InclusionPolicy = field(default_factory=InclusionPolicy)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    utility: UtilityConfig = field(default_factory=UtilityConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    # -- derived views --------------------------------------------------

    def domain(self, domain_id):
        for d in self.domains:
            if d.id == domain_id:
                return d
        raise KeyError(domain_id)

    def detector_kind(self):
        return DETECTOR_FOR_MECHANISM.get(self.mechanism, self.detector.consultancy_kind)

    def detector_params(self, kind=None):
        kind = kind or self.detector_kind()
        eps = {"odin": self.detector.odin_epsilon,
               "mahalanobis": self.detector.maha_epsilon}.get(kind, 0.0)
        return {"kind": kind, "temperature": self.detector.temperature, "epsilon": eps,
                "tpr_target": self.detector.tpr_target, "reg": self.detector.covariance_reg}

    def net_params(self, role):
        hidden = {"general": self.training.general_hidden, "expert": self.training.expert_hidden,
                  "gate": self.training.gate_hidden}[role]
        return {"hidden_layer_sizes": tuple(int(h) for h in hidden),
                "epochs": self.training.epochs, "batch_size": self.training.batch_size,
                "learning_rate": self.training.learning_rate}

    def stream_schedule(self):
        s = self.schedule
        return StreamSchedule(known_domain=s.known_domain, counts=dict(s.counts),
                              introduction=dict(s.introduction), final_test=dict(s.final_test),
                              steps=s.steps, seed=self.seeds.schedule)

    def inclusion_policy(self):
        p = copy.copy(self.inclusion)
        p.seed = self.seeds.split
        return p

    def to_dict(self):
        return asdict(self)

    def canonical_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self):
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]

    def replace(self, **changes):
        new = copy.deepcopy(self)
        for k, v in changes.items():
            setattr(new, k, v)
        return new


# -- domain specs ------------------------------------------------------------------

def build_domain_specs(cfg):
    """Gaussian domain specs with globally unique class labels.

    Subset domains reuse their parent's labels and are returned separately as
    ``{id: (parent_id, classes)}``.
    """
    specs, subsets = {}, {}
    offset = 0
    for d in cfg.domains:
        if d.subset_of is not None:
            subsets[d.id] = (d.subset_of, list(d.classes))
            continue
        if d.means is not None:
            means = np.array(d.means, dtype=float)
        else:
            means = axis_means(int(d.feature_dim), list(d.axes), float(d.scale))
        k = len(means)
        spec = DomainSpec(d.id, means, float(d.sigma), dict(d.budget),
                          class_labels=list(range(offset, offset + k)))
        offset += k
        specs[d.id] = spec
    return specs, subsets


# -- parsing -------------------------------------------------------------------------

SECTION_TYPES = {
    "schedule": ScheduleConfig,
    "detector": DetectorConfig,
    "inclusion": InclusionPolicy,
    "training": TrainingConfig,
    "utility": UtilityConfig,
    "seeds": SeedConfig,
    "output": OutputConfig,
}
SECTIONS = ("domains", "schedule", "mechanism", *[s for s in SECTION_TYPES if s != "schedule"])


def _line(node):
    return node.start_mark.line + 1 if node is not None else None


def _key_nodes(mapping_node):
    if not isinstance(mapping_node, yaml.MappingNode):
        return {}
    return {k.value: (k, v) for k, v in mapping_node.value}


def _build_section(cls, data, node, section, path):
    if not isinstance(data, dict):
        raise ConfigError(f"section [{section}] must be a mapping", _line(node), path)
    allowed = {f.name for f in fields(cls)}
    nodes = _key_nodes(node)
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in [{section}]",
                              _line(nodes.get(key, (node, None))[0]), path)
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"[{section}]: {exc}", _line(node), path) from None


def parse_config(text, path=None):
    """Parse YAML text into an :class:`ExperimentConfig` and validate it."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ConfigError(f"malformed YAML: {getattr(exc, 'problem', exc)}", line, path) from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping of sections", _line(root) or 1, path)
    nodes = _key_nodes(root)
    for key in data:
        if key not in SECTIONS:
            raise ConfigError(f"unknown section [{key}]", _line(nodes[key][0]), path)
    for required in ("domains", "schedule"):
        if required not in data:
            raise ConfigError(f"missing section [{required}]", 1, path)

    def node_of(key):
        return nodes.get(key, (None, None))[1]

    dom_node = node_of("domains")
    if not isinstance(data["domains"], list) or not data["domains"]:
        raise ConfigError("[domains] must be a non-empty list", _line(dom_node), path)
    domains = []
    for i, entry in enumerate(data["domains"]):
        sub = dom_node.value[i] if isinstance(dom_node, yaml.SequenceNode) else None
        domains.append(_build_section(DomainConfig, entry, sub, "domains", path))

    kwargs = {"domains": domains}
    for section, cls in SECTION_TYPES.items():
        if section in data:
            kwargs[section] = _build_section(cls, data[section] or {}, node_of(section),
                                             section, path)
    if "mechanism" in data:
        mech = data["mechanism"]
        if isinstance(mech, dict):
            extra = set(mech) - {"kind"}
            if extra:
                raise ConfigError(f"unknown key {sorted(extra)[0]!r} in [mechanism]",
                                  _line(node_of("mechanism")), path)
            mech = mech.get("kind")
        kwargs["mechanism"] = mech
    cfg = ExperimentConfig(**kwargs)
    validate_config(cfg, path, nodes)
    return cfg


def validate_config(cfg, path=None, nodes=None):
    nodes = nodes or {}

    def fail(msg, section):
        node = nodes.get(section, (None, None))[0]
        raise ConfigError(msg, _line(node), path)

    if cfg.mechanism not in MECHANISMS:
        fail(f"mechanism must be one of {MECHANISMS}, got {cfg.mechanism!r}", "mechanism")
    if cfg.detector.consultancy_kind not in ("msp", "odin", "mahalanobis"):
        fail("detector.consultancy_kind must be msp, odin or mahalanobis", "detector")
    if not 0 < cfg.detector.tpr_target < 1:
        fail("detector.tpr_target must lie in (0, 1)", "detector")
    if cfg.detector.temperature <= 0:
        fail("detector.temperature must be > 0", "detector")
    if cfg.detector.odin_epsilon < 0 or cfg.detector.maha_epsilon < 0:
        fail("detector epsilons must be >= 0", "detector")
    if cfg.utility.alpha < 0 or cfg.utility.beta < 0 or any(b < 0 for b in cfg.utility.betas):
        fail("utility weights must be >= 0", "utility")
    ids = [d.id for d in cfg.domains]
    if len(set(ids)) != len(ids):
        fail("duplicate domain ids", "domains")
    try:
        specs, subsets = build_domain_specs(cfg)
        for spec in specs.values():
            spec.validate()
    except (SpecError, TypeError, ValueError) as exc:
        fail(f"bad domain: {exc}", "domains")
    dims = {s.feature_dim for s in specs.values()}
    if len(dims) > 1:
        fail("all domains must share one feature dimension", "domains")
    for sid, (parent, classes) in subsets.items():
        if parent not in specs:
            fail(f"domain {sid}: subset_of references unknown domain {parent}", "domains")
        if not classes or not set(classes) <= set(range(specs[parent].class_count)):
            fail(f"domain {sid}: classes must index the parent's classes", "domains")
    for d in cfg.schedule.counts:
        if d not in ids:
            fail(f"schedule references unknown domain {d}", "schedule")
    for table in (cfg.schedule.introduction, cfg.schedule.final_test):
        for d in table:
            if d not in cfg.schedule.counts:
                fail(f"schedule entry for unscheduled domain {d}", "schedule")
    known = cfg.schedule.known_domain
    if known not in ids:
        fail(f"known_domain {known} is not a declared domain", "schedule")
    if "train" not in _budget_of(cfg, known, specs, subsets):
        fail("the known domain needs a 'train' budget for the general model", "domains")
    try:
        cfg.stream_schedule().validate()
        cfg.inclusion_policy().validate(class_count=2)
    except Exception as exc:  # noqa: BLE001 - surfaced as config errors
        fail(str(exc), "schedule" if "schedule" in str(type(exc)).lower() else "inclusion")
    return cfg


def _budget_of(cfg, domain_id, specs, subsets):
    if domain_id in specs:
        return specs[domain_id].budget
    return specs[subsets[domain_id][0]].budget


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, path) from None
    return parse_config(text, path)


def dump_config(cfg):
    """Serialize to YAML such that ``parse_config(dump_config(c)) == c``."""
    doc = asdict(cfg)
    doc["mechanism"] = {"kind": cfg.mechanism}
    doc["domains"] = [{k: v for k, v in d.items() if v is not None} for d in doc["domains"]]
    return yaml.safe_dump(doc, sort_keys=False)


def default_config_path(name="default"):
    return resources.files("aiitl") / "configs" / f"{name}.yaml"


def default_config(name="default", **overrides):
    cfg = parse_config(default_config_path(name).read_text(), f"{name}.yaml")
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg
