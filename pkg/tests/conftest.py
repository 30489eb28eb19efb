import json

import pytest

from headgate.evaluation import GenerationRecord, dump_manifest
from headgate.gating import Centroid, ObjectRef, RelationKind, RelationSpec


def make_record(prompt, seed, names, present, centroids=None, preds=None, relations=(), generator_id="toy"):
    """Build a record; ``preds`` maps CT -> list of bools, ``centroids`` index -> (x, y)."""
    return GenerationRecord(
        prompt=prompt,
        seed=seed,
        requested_objects=tuple(ObjectRef(i, n) for i, n in enumerate(names)),
        present_objects=frozenset(present),
        centroids={i: Centroid(*xy) for i, xy in (centroids or {}).items()},
        per_ct_predictions={ct: tuple(v) for ct, v in (preds or {}).items()},
        relations=tuple(RelationSpec(s, o, RelationKind(k)) for s, o, k in relations),
        generator_id=generator_id,
    )


def records_with_counts(counts, k=5, seed=0):
    names = [f"obj{i}" for i in range(k)]
    return [make_record(f"prompt {j}", seed, names, range(c)) for j, c in enumerate(counts)]


@pytest.fixture
def three_seed_records():
    """One prompt, seeds 11/12/13: incomplete, incomplete, complete; labels at CT=25 match truth."""
    names = ["dog", "car"]
    return [
        make_record("a dog and a car", 11, names, [0], {0: (0.2, 0.5)}, {25: [True, False]}),
        make_record("a dog and a car", 12, names, [1], {1: (0.8, 0.5)}, {25: [False, True]}),
        make_record("a dog and a car", 13, names, [0, 1], {0: (0.2, 0.5), 1: (0.8, 0.5)}, {25: [True, True]}),
    ]


@pytest.fixture
def relation_records():
    """Ten single-relation records: six with both objects present, three of those satisfying 'left'."""
    names = ["cat", "tree"]
    rel = [(0, 1, "left")]
    recs = []
    for j in range(3):  # both present, relation holds
        recs.append(make_record(f"r{j}", j, names, [0, 1], {0: (0.1, 0.5), 1: (0.9, 0.5)}, relations=rel))
    for j in range(3, 6):  # both present, relation violated
        recs.append(make_record(f"r{j}", j, names, [0, 1], {0: (0.9, 0.5), 1: (0.1, 0.5)}, relations=rel))
    for j in range(6, 10):  # one object missing
        recs.append(make_record(f"r{j}", j, names, [0], {0: (0.5, 0.5)}, relations=rel))
    return recs


@pytest.fixture
def write_manifest(tmp_path):
    def _write(records, name="manifest.json"):
        path = tmp_path / name
        path.write_text(dump_manifest(records), encoding="utf-8")
        return path

    return _write


@pytest.fixture
def write_json(tmp_path):
    def _write(payload, name="raw.json"):
        path = tmp_path / name
        path.write_text(json.dumps(payload), encoding="utf-8")
        return path

    return _write


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
