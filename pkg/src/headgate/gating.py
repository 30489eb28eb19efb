"""Object-presence and spatial-relation gating.

A generation is allowed to continue past the critical timestep only when
every requested object is predicted present *and* every requested pairwise
relation holds on the predicted centroids.  Detectors producing the presence
predictions are pluggable; two simple ones live here.

Coordinates are normalized to ``[0, 1]`` with the origin at the top-left
corner and ``y`` growing downward, so "top" means a smaller ``y``.
"""

from __future__ import annotations

import enum
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError, ParameterError

DEFAULT_TOLERANCE = 0.05


@dataclass(frozen=True, order=True)
class ObjectRef:
    index: int
    name: str

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ParameterError(f"object index must be >= 0, got {self.index}")
        if not self.name:
            raise ParameterError("object name must be non-empty")


@dataclass(frozen=True)
class Centroid:
    x: float
    y: float

    def __post_init__(self) -> None:
        for axis, value in (("x", self.x), ("y", self.y)):
            if not 0.0 <= value <= 1.0:
                raise ParameterError(f"centroid {axis}={value} outside [0, 1]")


class RelationKind(str, enum.Enum):
    TOP = "top"
    BOTTOM = "bottom"
    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True)
class RelationSpec:
    """``subject`` is ``kind`` of ``object``, e.g. (dog, car, LEFT) = "dog left of car"."""

    subject: int
    object: int
    kind: RelationKind

    def __post_init__(self) -> None:
        if self.subject == self.object:
            raise ParameterError("relation subject and object must differ")
        object.__setattr__(self, "kind", RelationKind(self.kind))


@dataclass(frozen=True)
class PresencePrediction:
    object: ObjectRef
    present: bool


@dataclass(frozen=True)
class GateDecision:
    proceed: bool
    presence_ok: bool
    relations_ok: bool
    failed_objects: tuple[ObjectRef, ...] = ()
    failed_relations: tuple[RelationSpec, ...] = ()


@dataclass(frozen=True)
class DetectorProfile:
    """Per-object error rates of a stochastic presence detector."""

    recall: float
    tn_rate: float
    label: str = ""

    def __post_init__(self) -> None:
        for name in ("recall", "tn_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ParameterError(f"{name}={value} outside [0, 1]")


PERFECT_DETECTOR = DetectorProfile(recall=1.0, tn_rate=1.0, label="perfect")

# (critical timestep, profile) rows as published for the HEaD+ predictor and
# its predecessor.  Rates are fractions, not percentages.
PUBLISHED_PROFILES: tuple[tuple[int, DetectorProfile], ...] = (
    (5, DetectorProfile(0.9022, 0.5016, "HEaD+ 5")),
    (8, DetectorProfile(0.9106, 0.5693, "HEaD+ 8")),
    (10, DetectorProfile(0.9009, 0.5837, "HEaD+ 10")),
    (12, DetectorProfile(0.9115, 0.6336, "HEaD+ 12")),
    (14, DetectorProfile(0.9342, 0.6165, "HEaD+ 14")),
    (16, DetectorProfile(0.9360, 0.6442, "HEaD+ 16")),
    (18, DetectorProfile(0.9313, 0.6686, "HEaD+ 18")),
    (20, DetectorProfile(0.9481, 0.6543, "HEaD+ 20")),
    (25, DetectorProfile(0.9340, 0.7695, "HEaD+ 25")),
    (8, DetectorProfile(0.8567, 0.4373, "HEaD 8")),
    (25, DetectorProfile(0.8802, 0.5216, "HEaD 25")),
)

# Reported time saved (%) for each row of PUBLISHED_PROFILES, same order.
PUBLISHED_TIME_SAVED = (37.73, 36.37, 30.03, 30.11, 32.91, 30.03, 25.64, 26.85, 14.18, 11.55, -11.70)


def head_plus_profiles() -> dict[int, DetectorProfile]:
    """Published HEaD+ profiles keyed by critical timestep."""
    return {ct: p for ct, p in PUBLISHED_PROFILES if p.label.startswith("HEaD+")}


@dataclass(frozen=True)
class AttentionMap:
    grid: np.ndarray
    object: ObjectRef
    timestep: int = 0

    def __post_init__(self) -> None:
        grid = np.asarray(self.grid, dtype=float)
        if grid.ndim != 2 or grid.shape[0] != grid.shape[1] or grid.shape[0] < 1:
            raise ParameterError(f"attention grid must be square P x P, got shape {grid.shape}")
        if np.any(grid < 0) or not np.all(np.isfinite(grid)):
            raise ParameterError("attention activations must be finite and non-negative")
        object.__setattr__(self, "grid", grid)


def _check_tolerance(tolerance: float) -> None:
    if not 0.0 <= tolerance < 0.5:
        raise ParameterError(f"tolerance must lie in [0, 0.5), got {tolerance}")


def check_relation(
    c_subject: Centroid,
    c_object: Centroid,
    kind: RelationKind | str,
    tolerance: float = DEFAULT_TOLERANCE,
) -> bool:
    """True iff the subject sits strictly beyond ``tolerance`` on the ``kind`` side of the object.

    The margin is measured per axis; a margin exactly equal to the tolerance fails.
    """
    _check_tolerance(tolerance)
    kind = RelationKind(kind)
    if kind is RelationKind.LEFT:
        return c_subject.x + tolerance < c_object.x
    if kind is RelationKind.RIGHT:
        return c_subject.x > c_object.x + tolerance
    if kind is RelationKind.TOP:
        return c_subject.y + tolerance < c_object.y
    return c_subject.y > c_object.y + tolerance


def gate_presence(predictions: Sequence[PresencePrediction]) -> bool:
    if not predictions:
        raise ParameterError("a prompt must request at least one object")
    return all(p.present for p in predictions)


def gate_joint(
    predictions: Sequence[PresencePrediction],
    relations: Iterable[RelationSpec] = (),
    centroids: Mapping[int, Centroid] | None = None,
    tolerance: float = DEFAULT_TOLERANCE,
) -> GateDecision:
    """Conjunction of all presence predictions and all relation checks.

    ``centroids`` is keyed by object index.  A relation whose endpoint has no
    centroid cannot be verified and counts as failed.
    """
    if not predictions:
        raise ParameterError("a prompt must request at least one object")
    _check_tolerance(tolerance)
    centroids = centroids or {}
    known = {p.object.index for p in predictions}

    failed_objects = tuple(p.object for p in predictions if not p.present)
    failed_relations = []
    for rel in relations:
        missing = [i for i in (rel.subject, rel.object) if i not in known]
        if missing:
            raise ConsistencyError(f"relation {rel} references unknown object(s) {missing}")
        cs, co = centroids.get(rel.subject), centroids.get(rel.object)
        if cs is None or co is None or not check_relation(cs, co, rel.kind, tolerance):
            failed_relations.append(rel)

    presence_ok = not failed_objects
    relations_ok = not failed_relations
    return GateDecision(
        proceed=presence_ok and relations_ok,
        presence_ok=presence_ok,
        relations_ok=relations_ok,
        failed_objects=failed_objects,
        failed_relations=tuple(failed_relations),
    )


def stochastic_detector(
    truth: bool,
    profile: DetectorProfile,
    rng: np.random.Generator,
    obj: ObjectRef | None = None,
) -> PresencePrediction:
    """One independent Bernoulli draw: present objects survive with ``recall``,
    absent ones are caught with ``tn_rate``."""
    u = rng.random()
    present = u < profile.recall if truth else not (u < profile.tn_rate)
    return PresencePrediction(obj if obj is not None else ObjectRef(0, "object"), bool(present))


def attention_energy_detector(attention: AttentionMap, threshold: float) -> PresencePrediction:
    if threshold <= 0:
        raise ParameterError(f"threshold must be > 0, got {threshold}")
    return PresencePrediction(attention.object, bool(attention.grid.max() > threshold))

