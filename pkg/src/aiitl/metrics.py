"""Accuracy, human effort, utility and the beta-sensitivity analysis."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

from .exceptions import DataError, ParameterError


def accuracy(correct, total):
    """Share of correctly classified instances (human reviews count as correct)."""
    if total < 1:
        raise DataError("accuracy needs at least one instance")
    if not 0 <= correct <= total:
        raise DataError("correct count outside [0, total]")
    return correct / total


def human_effort(human, total):
    """Share of instances classified by the human expert."""
    if total < 1:
        raise DataError("human effort needs at least one instance")
    if not 0 <= human <= total:
        raise DataError("human count outside [0, total]")
    return human / total


def utility(phi, rho, alpha=1.0, beta=0.5):
    """``alpha * phi - beta * rho``, unclamped."""
    if not (0 <= phi <= 1 and 0 <= rho <= 1):
        raise ParameterError(f"phi and rho must lie in [0, 1], got {phi}, {rho}")
    if alpha < 0 or beta < 0:
        raise ParameterError("alpha and beta must be >= 0")
    return alpha * phi - beta * rho


@dataclass(frozen=True)
class MetricsSummary:
    correct: int
    human: int
    total: int
    alpha: float = 1.0
    beta: float = 0.5

    @property
    def phi(self):
        return accuracy(self.correct, self.total)

    @property
    def rho(self):
        return human_effort(self.human, self.total)

    @property
    def utility(self):
        return utility(self.phi, self.rho, self.alpha, self.beta)

    def utility_at(self, beta, alpha=None):
        return utility(self.phi, self.rho, self.alpha if alpha is None else alpha, beta)

    def to_dict(self):
        return {"correct": self.correct, "human": self.human, "total": self.total,
                "alpha": self.alpha, "beta": self.beta, "phi": self.phi,
                "rho": self.rho, "utility": self.utility}

    @classmethod
    def from_dict(cls, doc):
        return cls(int(doc["correct"]), int(doc["human"]), int(doc["total"]),
                   float(doc["alpha"]), float(doc["beta"]))


def summarize(correct, human, total, alpha=1.0, beta=0.5):
    s = MetricsSummary(int(correct), int(human), int(total), float(alpha), float(beta))
    accuracy(s.correct, s.total)
    human_effort(s.human, s.total)
    return s


def pooled(records, attr="stream"):
    """Pool step summaries into one summary over all their instances."""
    parts = [getattr(r, attr) for r in records]
    if not parts:
        raise DataError("no records to pool")
    return MetricsSummary(sum(p.correct for p in parts), sum(p.human for p in parts),
                          sum(p.total for p in parts), parts[0].alpha, parts[0].beta)


def recount(outcomes):
    """Brute-force ``(correct, human, total)`` from per-instance outcome logs."""
    correct = human = total = 0
    for o in outcomes:
        for route, c in zip(o["route"], o["correct"]):
            total += 1
            correct += int(c)
            human += route == "human"
    return correct, human, total


# -- beta sensitivity -------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    beta: float
    system: str
    phi: float
    rho: float
    utility: float
    rank: int


def beta_sweep(summaries, betas, alpha=1.0):
    """Utility of every ``(system, phi, rho)`` at every beta, ranked per beta.

    Rank 1 is the best utility; ties keep input order.
    """
    summaries = list(summaries)
    betas = list(betas)
    if not summaries or not betas:
        raise DataError("beta_sweep needs systems and betas")
    if any(b < 0 for b in betas):
        raise ParameterError("betas must be >= 0")
    rows = []
    for beta in betas:
        scored = [(name, phi, rho, utility(phi, rho, alpha, beta))
                  for name, phi, rho in summaries]
        order = sorted(range(len(scored)), key=lambda i: -scored[i][3])
        rank = {i: r + 1 for r, i in enumerate(order)}
        rows.extend(SweepRow(beta, *scored[i], rank[i]) for i in range(len(scored)))
    return rows


def crossover_beta(system_a, system_b):
    """Beta at which two systems have equal utility (alpha = 1).

    Returns None when the human efforts coincide (the ordering then does not
    depend on beta).
    """
    (phi_a, rho_a), (phi_b, rho_b) = system_a, system_b
    if rho_a == rho_b:
        return None
    return (phi_a - phi_b) / (rho_a - rho_b)


# -- export ---------------------------------------------------------------------------

STEP_COLUMNS = ("step", "system", "series", "phi", "rho", "utility_at_beta_0_5")


def _beta_col(beta):
    return "utility_at_beta_" + format(beta, "g").replace(".", "_")


def round2(x):
    # half-up on the shortest decimal repr, so 0.605 prints as 0.61 not 0.60
    return str(Decimal(repr(float(x))).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def step_table(traces, betas=()):
    """Wide per-step table: one row per (step, system, series)."""
    extra = [b for b in betas if _beta_col(b) != "utility_at_beta_0_5"]
    header = list(STEP_COLUMNS) + [_beta_col(b) for b in extra]
    rows = [header]
    for trace in traces:
        for rec in trace.records:
            for series in ("stream", "holdout"):
                s = getattr(rec, series)
                if s is None:
                    continue
                rows.append([str(rec.step), trace.system, series, round2(s.phi), round2(s.rho),
                             round2(s.utility_at(0.5))] + [round2(s.utility_at(b)) for b in extra])
    return rows


def summary_table(traces):
    """Summary layout: rows human effort / accuracy / utility, one column per system."""
    traces = list(traces)
    header = [""] + [t.system for t in traces]
    return [
        header,
        ["human_effort"] + [round2(t.final.rho) for t in traces],
        ["accuracy"] + [round2(t.final.phi) for t in traces],
        ["utility"] + [round2(t.final.utility) for t in traces],
    ]


def sweep_table(rows, betas):
    systems = list(dict.fromkeys(r.system for r in rows))
    header = ["system", "phi", "rho"] + [_beta_col(b) for b in betas]
    out = [header]
    for name in systems:
        mine = [r for r in rows if r.system == name]
        out.append([name, round2(mine[0].phi), round2(mine[0].rho)]
                   + [round2(next(r.utility for r in mine if r.beta == b)) for b in betas])
    return out


def to_csv(rows):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def export_results(traces, directory, betas=()):
    """Write ``steps.csv`` and ``summary.csv``; returns their paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    steps = directory / "steps.csv"
    summary = directory / "summary.csv"
    steps.write_text(to_csv(step_table(traces, betas)))
    summary.write_text(to_csv(summary_table(traces)))
    return steps, summary
