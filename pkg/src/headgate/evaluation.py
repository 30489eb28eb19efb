"""Generation records, manifest I/O and fidelity metrics.

Ground truth (presence, centroids) comes from the manifest; nothing here runs
a detector.  Metrics whose conditioning set is empty are reported as ``None``
rather than 0.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any

from .cost_model import CT_GRID
from .errors import DataError, ParameterError
from .gating import (
    DEFAULT_TOLERANCE,
    Centroid,
    ObjectRef,
    PresencePrediction,
    RelationKind,
    RelationSpec,
    check_relation,
    gate_presence,
)

SCHEMA_PATH = Path(__file__).with_name("schemas") / "manifest.schema.json"


@dataclass(frozen=True)
class GenerationRecord:
    """Outcome of one (prompt, seed) generation.

    Objects are referred to by their index in ``requested_objects``;
    ``per_ct_predictions`` maps a critical timestep to one presence flag per
    requested object.
    """

    prompt: str
    seed: int
    requested_objects: tuple[ObjectRef, ...]
    present_objects: frozenset[int] = frozenset()
    centroids: Mapping[int, Centroid] = field(default_factory=dict)
    per_ct_predictions: Mapping[int, tuple[bool, ...]] = field(default_factory=dict)
    relations: tuple[RelationSpec, ...] = ()
    generator_id: str = ""

    @property
    def num_present(self) -> int:
        return len(self.present_objects)

    @property
    def complete(self) -> bool:
        return len(self.present_objects) == len(self.requested_objects)

    def predictions_at(self, ct: int) -> list[PresencePrediction]:
        try:
            flags = self.per_ct_predictions[ct]
        except KeyError:
            raise DataError(f"no presence predictions recorded at CT={ct}", f"{self.prompt!r}/seed={self.seed}")
        return [PresencePrediction(o, bool(f)) for o, f in zip(self.requested_objects, flags)]


# ---------------------------------------------------------------------------
# Manifest parsing


def _require(d: Mapping[str, Any], key: str, loc: str) -> Any:
    if key not in d:
        raise DataError(f"missing required field '{key}'", loc)
    return d[key]


def _parse_index(value: Any, n: int, loc: str) -> int:
    try:
        idx = int(value)
    except (TypeError, ValueError):
        raise DataError(f"object index {value!r} is not an integer", loc)
    if isinstance(value, bool) or not 0 <= idx < n:
        raise DataError(f"object index {value!r} outside [0, {n})", loc)
    return idx


def record_from_dict(d: Mapping[str, Any], i: int = 0) -> GenerationRecord:
    loc = f"record[{i}]"
    if not isinstance(d, Mapping):
        raise DataError("record must be a JSON object", loc)
    prompt = _require(d, "prompt", loc)
    if not isinstance(prompt, str):
        raise DataError("prompt must be a string", f"{loc}.prompt")
    seed = _require(d, "seed", loc)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise DataError("seed must be an integer", f"{loc}.seed")

    raw_objects = _require(d, "requested_objects", loc)
    if not isinstance(raw_objects, list) or not raw_objects:
        raise DataError("requested_objects must be a non-empty list", f"{loc}.requested_objects")
    objects = []
    for j, o in enumerate(raw_objects):
        oloc = f"{loc}.requested_objects[{j}]"
        if not isinstance(o, Mapping) or not isinstance(o.get("name"), str) or not o["name"]:
            raise DataError("object needs a non-empty 'name'", oloc)
        if o.get("index", j) != j:
            raise DataError(f"index {o.get('index')} does not match list position {j}", oloc)
        objects.append(ObjectRef(j, o["name"]))
    n = len(objects)

    present_raw = _require(d, "present_objects", loc)
    if not isinstance(present_raw, list):
        raise DataError("present_objects must be a list of indices", f"{loc}.present_objects")
    present = frozenset(_parse_index(v, n, f"{loc}.present_objects") for v in present_raw)

    centroids: dict[int, Centroid] = {}
    raw_centroids = d.get("centroids", {})
    if not isinstance(raw_centroids, Mapping):
        raise DataError("centroids must map object index to {x, y}", f"{loc}.centroids")
    for key, c in raw_centroids.items():
        cloc = f"{loc}.centroids[{key}]"
        idx = _parse_index(key, n, cloc)
        if idx not in present:
            raise DataError(f"centroid given for absent object '{objects[idx].name}'", cloc)
        try:
            x, y = float(c["x"]), float(c["y"])
        except (TypeError, KeyError, ValueError):
            raise DataError("centroid needs numeric 'x' and 'y'", cloc)
        if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
            raise DataError(f"centroid ({x}, {y}) outside [0, 1]", cloc)
        centroids[idx] = Centroid(x, y)

    predictions: dict[int, tuple[bool, ...]] = {}
    raw_preds = d.get("per_ct_predictions", {})
    if not isinstance(raw_preds, Mapping):
        raise DataError("per_ct_predictions must map CT to a list of booleans", f"{loc}.per_ct_predictions")
    for key, flags in raw_preds.items():
        ploc = f"{loc}.per_ct_predictions[{key}]"
        try:
            ct = int(key)
        except ValueError:
            raise DataError(f"timestep key {key!r} is not an integer", ploc)
        if ct not in CT_GRID:
            raise DataError(f"timestep {ct} is not on the critical-timestep grid {list(CT_GRID)}", ploc)
        if not isinstance(flags, list) or len(flags) != n or not all(isinstance(f, bool) for f in flags):
            raise DataError(f"expected {n} booleans, one per requested object", ploc)
        predictions[ct] = tuple(flags)

    relations = []
    for j, r in enumerate(d.get("relations", []) or []):
        rloc = f"{loc}.relations[{j}]"
        if not isinstance(r, Mapping):
            raise DataError("relation must be an object", rloc)
        s = _parse_index(_require(r, "subject", rloc), n, rloc)
        o = _parse_index(_require(r, "object", rloc), n, rloc)
        if s == o:
            raise DataError("relation subject and object must differ", rloc)
        try:
            kind = RelationKind(_require(r, "kind", rloc))
        except ValueError:
            raise DataError(f"unknown relation kind {r.get('kind')!r}", rloc)
        relations.append(RelationSpec(s, o, kind))

    if relations:
        for idx in sorted(present):
            if idx not in centroids:
                raise DataError(f"present object '{objects[idx].name}' has no centroid", f"{loc}.centroids")

    generator_id = d.get("generator_id", "")
    if not isinstance(generator_id, str):
        raise DataError("generator_id must be a string", f"{loc}.generator_id")

    return GenerationRecord(
        prompt=prompt,
        seed=seed,
        requested_objects=tuple(objects),
        present_objects=present,
        centroids=centroids,
        per_ct_predictions=predictions,
        relations=tuple(relations),
        generator_id=generator_id,
    )


def record_to_dict(r: GenerationRecord) -> dict[str, Any]:
    return {
        "prompt": r.prompt,
        "seed": r.seed,
        "generator_id": r.generator_id,
        "requested_objects": [{"index": o.index, "name": o.name} for o in r.requested_objects],
        "present_objects": sorted(r.present_objects),
        "centroids": {str(k): {"x": c.x, "y": c.y} for k, c in sorted(r.centroids.items())},
        "per_ct_predictions": {str(ct): list(f) for ct, f in sorted(r.per_ct_predictions.items())},
        "relations": [{"subject": x.subject, "object": x.object, "kind": x.kind.value} for x in r.relations],
    }


def parse_manifest(data: Any) -> list[GenerationRecord]:
    if isinstance(data, Mapping) and "records" in data:
        data = data["records"]
    if not isinstance(data, list):
        raise DataError("manifest must be a JSON array of records (or {\"records\": [...]})")
    records = [record_from_dict(d, i) for i, d in enumerate(data)]
    seen: dict[tuple[str, int], int] = {}
    for i, r in enumerate(records):
        key = (r.prompt, r.seed)
        if key in seen:
            raise DataError(f"duplicate (prompt, seed) pair, first seen at record[{seen[key]}]", f"record[{i}]")
        seen[key] = i
    return records


def ingest_manifest(source: str | Path | IO[str]) -> list[GenerationRecord]:
    """Load and validate a JSON manifest from a path or open text stream."""
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = source.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"invalid JSON: {exc}") from exc
    return parse_manifest(data)


def dump_manifest(records: Iterable[GenerationRecord], fh: IO[str] | None = None) -> str:
    text = json.dumps([record_to_dict(r) for r in records], indent=2) + "\n"
    if fh is not None:
        fh.write(text)
    return text


# ---------------------------------------------------------------------------
# Metrics


def _non_empty(records: Sequence[GenerationRecord]) -> None:
    if not records:
        raise ParameterError("at least one record is required")


def compute_mg_n(records: Sequence[GenerationRecord], n: int) -> float:
    """Percentage of records depicting at least ``n`` of their requested objects."""
    _non_empty(records)
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    hits = sum(1 for r in records if r.num_present >= n)
    return 100.0 * hits / len(records)


def group_by_seed(records: Iterable[GenerationRecord]) -> dict[int, list[GenerationRecord]]:
    groups: dict[int, list[GenerationRecord]] = defaultdict(list)
    for r in records:
        groups[r.seed].append(r)
    return dict(sorted(groups.items()))


def mean_and_std(values: Sequence[float]) -> tuple[float, float]:
    """Mean and population standard deviation."""
    if len(values) < 2:
        raise ParameterError("standard deviation over seeds needs at least two seeds")
    mean = math.fsum(values) / len(values)
    var = math.fsum((v - mean) ** 2 for v in values) / len(values)
    return mean, math.sqrt(var)


def compute_seed_stats(records: Sequence[GenerationRecord], n: int) -> tuple[float, float]:
    """MG-``n`` per seed, then mean and population std across seeds."""
    _non_empty(records)
    groups = group_by_seed(records)
    return mean_and_std([compute_mg_n(g, n) for g in groups.values()])


def compute_relation_metrics(
    records: Sequence[GenerationRecord], tolerance: float = DEFAULT_TOLERANCE
) -> tuple[float, float, float | None]:
    """(MG2, MG-loc, relation consistency) for single-relation two-object records.

    Consistency is ``None`` when no record has both relation endpoints present.
    """
    _non_empty(records)
    both = satisfied = 0
    for r in records:
        if len(r.relations) != 1:
            raise ParameterError(f"record {r.prompt!r}/seed={r.seed} must carry exactly one relation")
        rel = r.relations[0]
        if rel.subject not in r.present_objects or rel.object not in r.present_objects:
            continue
        both += 1
        try:
            cs, co = r.centroids[rel.subject], r.centroids[rel.object]
        except KeyError as exc:
            raise DataError(f"present object {exc} has no centroid", f"{r.prompt!r}/seed={r.seed}")
        satisfied += check_relation(cs, co, rel.kind, tolerance)
    mg2 = 100.0 * both / len(records)
    mg_loc = 100.0 * satisfied / len(records)
    consistency = 100.0 * satisfied / both if both else None
    return mg2, mg_loc, consistency


@dataclass(frozen=True)
class ConfusionStats:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def recall(self) -> float | None:
        pos = self.tp + self.fn
        return 100.0 * self.tp / pos if pos else None

    @property
    def tn_rate(self) -> float | None:
        neg = self.tn + self.fp
        return 100.0 * self.tn / neg if neg else None


def compute_confusion(records: Sequence[GenerationRecord], ct: int) -> ConfusionStats:
    """Image-level confusion at ``ct``: a positive is a complete image allowed to proceed."""
    tp = fp = tn = fn = 0
    for r in records:
        predicted = gate_presence(r.predictions_at(ct))
        if r.complete:
            tp += predicted
            fn += not predicted
        else:
            fp += predicted
            tn += not predicted
    return ConfusionStats(tp, fp, tn, fn)


@dataclass
class MetricReport:
    mg: dict[int, tuple[float, float | None]]
    mg_loc: float | None = None
    relation_consistency: float | None = None
    recall: float | None = None
    tn_rate: float | None = None
    counts: dict[str, int] = field(default_factory=dict)
    num_records: int = 0
    num_seeds: int = 0
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "mg": {str(n): {"mean": m, "std": s} for n, (m, s) in sorted(self.mg.items())},
            "mg_loc": self.mg_loc,
            "relation_consistency": self.relation_consistency,
            "recall": self.recall,
            "tn_rate": self.tn_rate,
            "counts": self.counts,
            "num_records": self.num_records,
            "num_seeds": self.num_seeds,
            "std_convention": "population",
            "warnings": self.warnings,
        }

    def csv_rows(self) -> list[tuple]:
        """Rows of (metric, n, mean, std, count)."""
        rows = [("mg", n, m, s, self.num_records) for n, (m, s) in sorted(self.mg.items())]
        both = self.counts.get("both_present")
        rows.append(("mg_loc", None, self.mg_loc, None, self.num_records if self.mg_loc is not None else 0))
        rows.append(("relation_consistency", None, self.relation_consistency, None, both or 0))
        pos = self.counts.get("tp", 0) + self.counts.get("fn", 0)
        neg = self.counts.get("tn", 0) + self.counts.get("fp", 0)
        rows.append(("recall", None, self.recall, None, pos))
        rows.append(("tn_rate", None, self.tn_rate, None, neg))
        return rows


def build_report(
    records: Sequence[GenerationRecord],
    n_values: Iterable[int],
    tolerance: float = DEFAULT_TOLERANCE,
    ct: int | None = None,
) -> MetricReport:
    """Every metric the records support; unsupported ones stay ``None`` with a warning."""
    _non_empty(records)
    groups = group_by_seed(records)
    report = MetricReport(mg={}, num_records=len(records), num_seeds=len(groups))
    for n in n_values:
        if len(groups) >= 2:
            report.mg[n] = compute_seed_stats(records, n)
        else:
            report.mg[n] = (compute_mg_n(records, n), None)
    if len(groups) < 2:
        report.warnings.append("fewer than two seeds: MG standard deviation undefined")

    if all(len(r.relations) == 1 for r in records):
        _, mg_loc, consistency = compute_relation_metrics(records, tolerance)
        report.mg_loc, report.relation_consistency = mg_loc, consistency
        report.counts["both_present"] = sum(
            1 for r in records if {r.relations[0].subject, r.relations[0].object} <= r.present_objects
        )
        if consistency is None:
            report.warnings.append("no record has both relation endpoints present: consistency undefined")
    else:
        report.warnings.append("records do not all carry exactly one relation: relation metrics skipped")

    if ct is not None:
        stats = compute_confusion(records, ct)
        report.recall, report.tn_rate = stats.recall, stats.tn_rate
        report.counts.update(tp=stats.tp, fp=stats.fp, tn=stats.tn, fn=stats.fn)
        if stats.recall is None:
            report.warnings.append("no complete records: recall undefined")
        if stats.tn_rate is None:
            report.warnings.append("no incomplete records: TN-rate undefined")
    return report
