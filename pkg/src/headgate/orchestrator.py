"""Seed-restart state machine.

For each seed in order the backend runs up to the critical timestep, the
detector predicts per-object presence, and the joint gate decides.  A passing
attempt runs to the end and becomes the output.  After ``max_restarts``
rejected attempts, the attempt with the most objects predicted present
(earliest wins ties) is completed instead.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, Protocol

import numpy as np

from .errors import ConfigurationError, DataError, ParameterError
from .evaluation import GenerationRecord
from .gating import (
    DEFAULT_TOLERANCE,
    AttentionMap,
    Centroid,
    DetectorProfile,
    GateDecision,
    ObjectRef,
    PresencePrediction,
    RelationSpec,
    attention_energy_detector,
    gate_joint,
    stochastic_detector,
)


@dataclass(frozen=True)
class SessionConfig:
    critical_timestep: int = 25
    total_steps: int = 50
    max_restarts: int = 5
    tolerance: float = DEFAULT_TOLERANCE
    seeds: tuple[int, ...] | None = None
    seed_rng_seed: int = 0
    resume_fallback: bool = True

    def __post_init__(self) -> None:
        if self.max_restarts < 1:
            raise ParameterError(f"max_restarts must be >= 1, got {self.max_restarts}")
        if not 0 <= self.critical_timestep <= self.total_steps:
            raise ParameterError(
                f"critical_timestep must lie in [0, {self.total_steps}], got {self.critical_timestep}"
            )
        if self.seeds is not None:
            object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))

    def seed_sequence(self) -> tuple[int, ...]:
        if self.seeds is not None:
            return self.seeds
        rng = np.random.default_rng(self.seed_rng_seed)
        return tuple(int(s) for s in rng.integers(0, 2**31 - 1, size=self.max_restarts))


@dataclass(frozen=True)
class CriticalSnapshot:
    """What the backend exposes at the critical timestep for one seed.

    ``reference_presence`` is the per-object signal detectors start from
    (ground truth for a simulator, recorded labels for a replay).
    ``truth_complete`` is only used for accounting and may be unknown.
    """

    seed: int
    objects: tuple[ObjectRef, ...]
    reference_presence: tuple[bool, ...] = ()
    centroids: Mapping[int, Centroid] = field(default_factory=dict)
    attention_maps: tuple[AttentionMap, ...] = ()
    truth_complete: bool | None = None


class GenerationBackend(Protocol):
    supports_resume: bool

    def run_to_critical(self, seed: int, critical_timestep: int) -> CriticalSnapshot: ...


class Detector(Protocol):
    def predict(self, snapshot: CriticalSnapshot) -> list[PresencePrediction]: ...


class LabelDetector:
    """Trusts the snapshot's reference presence flags."""

    def predict(self, snapshot: CriticalSnapshot) -> list[PresencePrediction]:
        return [PresencePrediction(o, bool(f)) for o, f in zip(snapshot.objects, snapshot.reference_presence)]


class ProfileDetector:
    """Reference flags pushed through independent per-object recall / TN-rate draws."""

    def __init__(self, profile: DetectorProfile, rng: np.random.Generator | int = 0):
        self.profile = profile
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)

    def predict(self, snapshot: CriticalSnapshot) -> list[PresencePrediction]:
        return [
            stochastic_detector(f, self.profile, self.rng, o)
            for o, f in zip(snapshot.objects, snapshot.reference_presence)
        ]


class AttentionDetector:
    def __init__(self, threshold: float):
        self.threshold = threshold

    def predict(self, snapshot: CriticalSnapshot) -> list[PresencePrediction]:
        by_index = {m.object.index: m for m in snapshot.attention_maps}
        missing = [o.name for o in snapshot.objects if o.index not in by_index]
        if missing:
            raise DataError(f"no attention map for object(s) {missing}", f"seed={snapshot.seed}")
        return [attention_energy_detector(by_index[o.index], self.threshold) for o in snapshot.objects]


@dataclass(frozen=True)
class AttemptOutcome:
    seed: int
    decision: GateDecision
    steps_consumed: int
    predicted_present_count: int
    final: bool = False
    truth_complete: bool | None = None
    fallback: bool = False

    @property
    def aborted(self) -> bool:
        return not self.decision.proceed and not self.fallback


@dataclass(frozen=True)
class SessionResult:
    attempts: tuple[AttemptOutcome, ...]
    chosen_seed: int
    total_steps_consumed: int
    fallback_used: bool
    fallback_mode: str = "none"  # "none", "resume" or "restart"
    baseline_steps: int | None = None

    @property
    def steps_saved_fraction(self) -> float | None:
        if not self.baseline_steps:
            return None
        return 1.0 - self.total_steps_consumed / self.baseline_steps

    def to_dict(self) -> dict[str, Any]:
        return {
            "chosen_seed": self.chosen_seed,
            "total_steps_consumed": self.total_steps_consumed,
            "baseline_steps": self.baseline_steps,
            "fallback_used": self.fallback_used,
            "fallback_mode": self.fallback_mode,
            "attempts": [
                {
                    "seed": a.seed,
                    "proceed": a.decision.proceed,
                    "presence_ok": a.decision.presence_ok,
                    "relations_ok": a.decision.relations_ok,
                    "failed_objects": [o.index for o in a.decision.failed_objects],
                    "failed_relations": [
                        {"subject": r.subject, "object": r.object, "kind": r.kind.value}
                        for r in a.decision.failed_relations
                    ],
                    "steps_consumed": a.steps_consumed,
                    "predicted_present_count": a.predicted_present_count,
                    "final": a.final,
                    "fallback": a.fallback,
                    "truth_complete": a.truth_complete,
                }
                for a in self.attempts
            ],
        }


def _fallback_index(attempts: Sequence[AttemptOutcome]) -> int:
    if not attempts:
        raise ParameterError("no attempts to fall back on")
    return max(range(len(attempts)), key=lambda i: (attempts[i].predicted_present_count, -i))


def select_fallback_seed(attempts: Sequence[AttemptOutcome]) -> int:
    """Seed with the most objects predicted present; the earliest attempt wins ties."""
    return attempts[_fallback_index(attempts)].seed


def _baseline_steps(
    config: SessionConfig, seeds: Sequence[int], snapshots: dict[int, CriticalSnapshot], backend: GenerationBackend
) -> int | None:
    """Steps a post-hoc checker would spend: full runs until the first complete seed, capped."""
    for n, seed in enumerate(seeds[: config.max_restarts], start=1):
        snap = snapshots.get(seed) or backend.run_to_critical(seed, config.critical_timestep)
        if snap.truth_complete is None:
            return None
        if snap.truth_complete:
            return n * config.total_steps
    return min(len(seeds), config.max_restarts) * config.total_steps


def run_session(
    config: SessionConfig,
    backend: GenerationBackend,
    detector: Detector,
    relations: Sequence[RelationSpec] = (),
    with_baseline: bool = True,
) -> SessionResult:
    ct, total = config.critical_timestep, config.total_steps
    seeds = config.seed_sequence()
    attempts: list[AttemptOutcome] = []
    snapshots: dict[int, CriticalSnapshot] = {}

    for seed in seeds[: config.max_restarts]:
        snap = backend.run_to_critical(seed, ct)
        snapshots[seed] = snap
        predictions = detector.predict(snap)
        decision = gate_joint(predictions, relations, snap.centroids, config.tolerance)
        count = sum(p.present for p in predictions)
        if decision.proceed:
            attempts.append(AttemptOutcome(seed, decision, total, count, True, snap.truth_complete))
            baseline = _baseline_steps(config, seeds, snapshots, backend) if with_baseline else None
            return SessionResult(tuple(attempts), seed, sum(a.steps_consumed for a in attempts), False, "none", baseline)
        attempts.append(AttemptOutcome(seed, decision, ct, count, False, snap.truth_complete))

    if len(attempts) < config.max_restarts:
        raise ConfigurationError(
            f"seed sequence exhausted after {len(attempts)} attempt(s); max_restarts={config.max_restarts}"
        )

    idx = _fallback_index(attempts)
    chosen = attempts[idx].seed
    resume = config.resume_fallback and getattr(backend, "supports_resume", False)
    extra = total - ct if resume else total
    a = attempts[idx]
    attempts[idx] = AttemptOutcome(a.seed, a.decision, a.steps_consumed + extra, a.predicted_present_count,
                                   True, a.truth_complete, fallback=True)
    baseline = _baseline_steps(config, seeds, snapshots, backend) if with_baseline else None
    return SessionResult(
        tuple(attempts),
        chosen,
        sum(x.steps_consumed for x in attempts),
        True,
        "resume" if resume else "restart",
        baseline,
    )


class ManifestBackend:
    """Serves recorded generations of one prompt, keyed by seed.

    Recorded labels at the critical timestep are the reference presence;
    final-image centroids stand in for centroid predictions.
    """

    supports_resume = True

    def __init__(self, records: Sequence[GenerationRecord]):
        self.records = {r.seed: r for r in records}

    def run_to_critical(self, seed: int, critical_timestep: int) -> CriticalSnapshot:
        try:
            rec = self.records[seed]
        except KeyError:
            raise ConfigurationError(f"no recorded generation for seed {seed}")
        if critical_timestep not in rec.per_ct_predictions:
            raise DataError(f"no labels recorded at CT={critical_timestep}", f"{rec.prompt!r}/seed={seed}")
        return CriticalSnapshot(
            seed=seed,
            objects=rec.requested_objects,
            reference_presence=rec.per_ct_predictions[critical_timestep],
            centroids=rec.centroids,
            truth_complete=rec.complete,
        )


def replay_from_manifest(
    config: SessionConfig,
    records: Sequence[GenerationRecord],
    profile: DetectorProfile | None = None,
    rng: np.random.Generator | int = 0,
    use_relations: bool = True,
) -> SessionResult:
    """Run the state machine over recorded seeds of a single prompt, in record order."""
    if not records:
        raise ParameterError("no records to replay")
    prompts = {r.prompt for r in records}
    if len(prompts) != 1:
        raise ParameterError(f"replay expects records of one prompt, got {len(prompts)}")
    for r in records:
        if config.critical_timestep not in r.per_ct_predictions:
            raise DataError(f"no labels recorded at CT={config.critical_timestep}", f"{r.prompt!r}/seed={r.seed}")
    seeded = SessionConfig(
        critical_timestep=config.critical_timestep,
        total_steps=config.total_steps,
        max_restarts=config.max_restarts,
        tolerance=config.tolerance,
        seeds=tuple(r.seed for r in records),
        resume_fallback=config.resume_fallback,
    )
    detector: Detector = LabelDetector() if profile is None else ProfileDetector(profile, rng)
    relations = records[0].relations if use_relations else ()
    return run_session(seeded, ManifestBackend(records), detector, relations)


class BernoulliBackend:
    """Toy generator: each requested object independently appears with ``p_object``.

    Outcomes depend only on ``(base_seed, seed)``, so replays are reproducible
    and re-querying a seed returns the same snapshot.
    """

    supports_resume = True

    def __init__(self, object_names: Sequence[str], p_object: float, base_seed: int = 0):
        if not object_names:
            raise ParameterError("at least one object is required")
        if not 0.0 <= p_object <= 1.0:
            raise ParameterError(f"p_object must lie in [0, 1], got {p_object}")
        self.objects = tuple(ObjectRef(i, n) for i, n in enumerate(object_names))
        self.p_object = p_object
        self.base_seed = base_seed

    def run_to_critical(self, seed: int, critical_timestep: int) -> CriticalSnapshot:
        rng = np.random.default_rng([self.base_seed, seed])
        present = tuple(bool(u < self.p_object) for u in rng.random(len(self.objects)))
        centroids = {
            o.index: Centroid(float(x), float(y))
            for o, f, (x, y) in zip(self.objects, present, rng.random((len(self.objects), 2)))
            if f
        }
        return CriticalSnapshot(seed, self.objects, present, centroids, truth_complete=all(present))
