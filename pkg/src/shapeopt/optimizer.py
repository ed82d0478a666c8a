"""Greedy per-amplitude shaping of a 4D constellation.

One epoch sweeps every amplitude class; for each class a 2D grid of
candidates is tried: multiplicative factors on the class probability
(always including 0, so whole classes can be pruned) and on its radial
scale.  A candidate is accepted when its estimated rate beats the
incumbent by more than a noise-aware margin.  Epochs repeat until an
epoch's total improvement falls below tolerance.  The channel only enters
through the evaluator callable, so the same loop drives AWGN and fiber
evaluations alike.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .air import AirReport
from .constellation import (
    AmplitudeClassSet,
    Constellation4D,
    amplitude_classes,
    apply_class_state,
)
from .errors import InvalidComparisonError


@dataclass
class OptimizerConfig:
    prob_grid: tuple = (0.0, 0.25, 0.5, 0.8, 1.0, 1.25, 2.0, 4.0)
    scale_grid: tuple = (0.9, 0.95, 1.0, 1.05, 1.1)
    max_epochs: int = 10
    epoch_improvement_tol: float = 0.002  # bits/4D
    eval_symbols: int = 10_000
    seed_policy: str = "common-random-numbers"  # or "fresh"
    sweep_order: str = "ascending-energy"  # or "descending-energy"
    seed: int = 0

    def validate(self):
        if 0.0 not in self.prob_grid or 1.0 not in self.prob_grid:
            raise ValueError("prob_grid must contain 0 and 1")
        if any(f < 0 for f in self.prob_grid):
            raise ValueError("prob_grid factors must be nonnegative")
        if 1.0 not in self.scale_grid:
            raise ValueError("scale_grid must contain 1")
        if any(not f > 0 for f in self.scale_grid):
            raise ValueError("scale_grid factors must be strictly positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.seed_policy not in ("common-random-numbers", "fresh"):
            raise ValueError(f"unknown seed_policy {self.seed_policy!r}")
        if self.sweep_order not in ("ascending-energy", "descending-energy"):
            raise ValueError(f"unknown sweep_order {self.sweep_order!r}")


@dataclass
class EvalRecord:
    epoch: int
    class_index: int
    prob_factor: float
    scale_factor: float
    mi: float
    se: float
    accepted: bool = False

    def to_dict(self) -> dict:
        return {
            "kind": "eval",
            "epoch": self.epoch,
            "class_index": self.class_index,
            "prob_factor": self.prob_factor,
            "scale_factor": self.scale_factor,
            "mi": self.mi,
            "se": self.se,
            "accepted": self.accepted,
        }


@dataclass
class OptimizerTrace:
    records: list = field(default_factory=list)
    epoch_mi: list = field(default_factory=list)
    initial_mi: float = 0.0
    final_classes: AmplitudeClassSet | None = None
    final_constellation: Constellation4D | None = None
    final_report: AirReport | None = None
    nonzero_classes: int = 0
    nonzero_points: int = 0
    eval_seeds: list = field(default_factory=list)
    epochs_run: int = 0
    aborted: bool = False


def candidate_class_state(
    state: AmplitudeClassSet,
    class_id: int,
    prob_factor: float,
    scale_factor: float,
    shadow_probabilities: np.ndarray | None = None,
) -> AmplitudeClassSet | None:
    """Build the class state for one grid candidate, or None to skip.

    The target class probability is multiplied by prob_factor (capped at
    1); the freed or claimed mass is redistributed proportionally over
    the remaining classes, so their mutual ratios are untouched.  A class
    currently at probability 0 is revived from its shadow probability
    (its last nonzero value).  Candidates that would zero out every class
    or that cannot change the incumbent state return None.
    """
    probs = state.probabilities()
    scales = state.scales()
    k = len(probs)
    if not 0 <= class_id < k:
        raise ValueError(f"class_id out of range: {class_id}")
    p_i = probs[class_id]
    base_p = p_i
    if p_i == 0.0:
        if shadow_probabilities is not None:
            base_p = float(shadow_probabilities[class_id])
        if prob_factor == 0.0 or base_p == 0.0:
            return None  # dead class stays dead: not a new candidate
    elif prob_factor == 1.0 and scale_factor == 1.0:
        return None  # no-op candidate, identical to the incumbent

    q = min(prob_factor * base_p, 1.0)
    new = probs.copy()
    others = 1.0 - p_i
    if q >= 1.0:
        new[:] = 0.0
        new[class_id] = 1.0
    elif others > 0.0:
        new *= (1.0 - q) / others
        new[class_id] = q
    else:
        # the target held all the mass; spread the released part over the
        # other classes in proportion to their shadows
        w = (
            shadow_probabilities.copy()
            if shadow_probabilities is not None
            else np.ones(k)
        )
        w[class_id] = 0.0
        if w.sum() <= 0.0:
            w[:] = 1.0
            w[class_id] = 0.0
        new = (1.0 - q) * w / w.sum()
        new[class_id] = q
    if new.sum() <= 0.0:
        return None
    new /= new.sum()

    new_scales = scales.copy()
    new_scales[class_id] *= scale_factor
    return state.with_state(new, new_scales)


def evaluate_candidate(
    state: AmplitudeClassSet,
    class_id: int,
    prob_factor: float,
    scale_factor: float,
    base: Constellation4D,
    evaluator,
    seed: int,
    shadow_probabilities: np.ndarray | None = None,
) -> AirReport | None:
    """MI report for one grid candidate, or None for a skipped candidate."""
    cand = candidate_class_state(state, class_id, prob_factor, scale_factor, shadow_probabilities)
    if cand is None:
        return None
    return evaluator(apply_class_state(base, cand), seed)


def _paired_se(cand: AirReport, inc: AirReport) -> float:
    a, b = np.asarray(cand.subbatch_mi), np.asarray(inc.subbatch_mi)
    if a.size == b.size and a.size >= 2:
        d = a - b
        return float(np.std(d, ddof=1) / math.sqrt(d.size))
    return math.sqrt(cand.mi_se**2 + inc.mi_se**2)


def _initial_state(base: Constellation4D) -> AmplitudeClassSet:
    # uniform per-point start regardless of the base PMF, scales all 1
    acs = amplitude_classes(base)
    sizes = np.array([c.size for c in acs.classes], dtype=float)
    return acs.with_state(sizes / sizes.sum(), np.ones(len(acs.classes)))


def optimize(
    base: Constellation4D,
    evaluator,
    cfg: OptimizerConfig,
    on_record=None,
    resume_records: list | None = None,
) -> OptimizerTrace:
    """Run the greedy per-amplitude-class grid search.

    ``evaluator(constellation, seed) -> AirReport`` must be deterministic
    given the seed.  With the common-random-numbers policy every
    evaluation reuses cfg.seed, which makes accepted improvements exact
    comparisons; the margin for acceptance is
    max(epoch_improvement_tol / 10, SE of the candidate-incumbent MI
    difference).  ``on_record`` receives every trace event as a dict.

    ``resume_records`` replays the accepted moves of the complete epochs
    of an earlier trace and continues from the following epoch.
    """
    cfg.validate()
    trace = OptimizerTrace()
    seed_counter = 0

    def next_seed() -> int:
        nonlocal seed_counter
        if cfg.seed_policy == "common-random-numbers":
            s = cfg.seed
        else:
            s = int(
                np.random.SeedSequence((cfg.seed, seed_counter)).generate_state(1)[0]
            )
        seed_counter += 1
        if s not in trace.eval_seeds:
            trace.eval_seeds.append(s)
        return s

    def emit(d: dict):
        if on_record is not None:
            on_record(d)

    state = _initial_state(base)
    probs = state.probabilities()
    scales = state.scales()
    shadows = probs.copy()
    start_epoch = 0

    if resume_records:
        done = [r["epoch"] for r in resume_records if r.get("kind") == "epoch_end"]
        start_epoch = (max(done) + 1) if done else 0
        for r in resume_records:
            if r.get("kind") == "accept" and r["epoch"] < start_epoch:
                cand = candidate_class_state(
                    state.with_state(probs, scales),
                    r["class_index"], r["prob_factor"], r["scale_factor"], shadows,
                )
                if cand is None:
                    raise ValueError("resume trace replays an impossible candidate")
                probs, scales = cand.probabilities(), cand.scales()
                shadows = np.where(probs > 0, probs, shadows)

    state = state.with_state(probs, scales)
    try:
        incumbent = evaluator(apply_class_state(base, state), next_seed())
    except Exception as exc:  # evaluator failure: nothing to salvage yet
        trace.aborted = True
        emit({"kind": "abort", "error": repr(exc)})
        return trace
    trace.initial_mi = incumbent.mi_bits_per_4d
    emit({"kind": "init", "mi": incumbent.mi_bits_per_4d, "seed": cfg.seed,
          "start_epoch": start_epoch})

    n_classes = len(state.classes)
    class_order = list(range(n_classes))
    if cfg.sweep_order == "descending-energy":
        class_order.reverse()

    aborted = False
    for epoch in range(start_epoch, cfg.max_epochs):
        epoch_start = incumbent.mi_bits_per_4d
        for ci in class_order:
            best = None  # (report, state, record)
            for pf in cfg.prob_grid:
                for sf in cfg.scale_grid:
                    cand_state = candidate_class_state(
                        state, ci, pf, sf, shadows
                    )
                    if cand_state is None:
                        continue
                    try:
                        rep = evaluator(
                            apply_class_state(base, cand_state), next_seed()
                        )
                    except Exception as exc:
                        aborted = True
                        emit({"kind": "abort", "error": repr(exc)})
                        break
                    rec = EvalRecord(epoch, ci, pf, sf, rep.mi_bits_per_4d, rep.mi_se)
                    trace.records.append(rec)
                    margin = max(
                        cfg.epoch_improvement_tol / 10.0, _paired_se(rep, incumbent)
                    )
                    improves = rep.mi_bits_per_4d > incumbent.mi_bits_per_4d + margin
                    beats_best = best is None or rep.mi_bits_per_4d > best[0].mi_bits_per_4d
                    if improves and beats_best:
                        best = (rep, cand_state, rec)
                    emit(rec.to_dict())
                if aborted:
                    break
            if aborted:
                break
            if best is not None:
                incumbent, state, rec = best
                rec.accepted = True
                probs, scales = state.probabilities(), state.scales()
                shadows = np.where(probs > 0, probs, shadows)
                emit({"kind": "accept", "epoch": epoch, "class_index": ci,
                      "prob_factor": rec.prob_factor, "scale_factor": rec.scale_factor,
                      "mi": incumbent.mi_bits_per_4d})
        if aborted:
            break
        trace.epoch_mi.append(incumbent.mi_bits_per_4d)
        trace.epochs_run = epoch + 1
        emit({"kind": "epoch_end", "epoch": epoch, "mi": incumbent.mi_bits_per_4d})
        if incumbent.mi_bits_per_4d - epoch_start < cfg.epoch_improvement_tol:
            break

    final_c = apply_class_state(base, state)
    live_classes = sum(1 for c in state.classes if c.class_probability > 0)
    trace.final_classes = state
    trace.final_constellation = final_c
    trace.final_report = incumbent
    trace.nonzero_classes = live_classes
    trace.nonzero_points = int(np.count_nonzero(final_c.pmf))
    trace.aborted = aborted
    emit({"kind": "final", "mi": incumbent.mi_bits_per_4d,
          "nonzero_classes": live_classes, "nonzero_points": trace.nonzero_points,
          "epochs_run": trace.epochs_run, "aborted": aborted})
    return trace


def shaping_gain(report_a: AirReport, report_b: AirReport) -> tuple[float, float]:
    """MI difference a - b in bits/4D with the propagated standard error.

    Both reports must come from the same channel configuration and launch
    power (matching channel fingerprints).
    """
    if (
        not report_a.config_fingerprint
        or report_a.config_fingerprint != report_b.config_fingerprint
    ):
        raise InvalidComparisonError(
            "reports come from different channel configurations"
        )
    gain = report_a.mi_bits_per_4d - report_b.mi_bits_per_4d
    se = math.sqrt(report_a.mi_se**2 + report_b.mi_se**2)
    return gain, se
