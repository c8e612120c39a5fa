"""File formats: raw answer logs, the canonical dataset file, concept
graphs, model files and key=value configuration files."""

from __future__ import annotations

import csv
import json
import logging
import math
from importlib import resources
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .domain import (ConceptGraph, Dataset, HPOMDPModel, ObservationFunction, PatternComponent,
                     Question, RewardSpec, StateSpace, Trajectory, validate_model)
from .exceptions import ContractError, DataError, HPOMDPError, ModelFileError

logger = logging.getLogger(__name__)

FORMAT_VERSION = "1"
SUM_TOL = 1e-9
DATASET_HEADER = ("student", "step", "question", "concept", "correct")

# Partial credit (I02) counts as incorrect: observations are binary.
DEFAULT_DECODER = {"I01": 1, "I02": 0, "I03": 0, "1": 1, "0": 0}


# --------------------------------------------------------------------------
# raw answer logs


@dataclass(frozen=True)
class ColumnMapping:
    """Which log columns hold the sequence key, student, question, concept
    and correctness, plus how correctness values decode to 0/1."""

    sequence_key: str = "seq_id"
    student_key: str = "account_no"
    question_key: str = "exam_id"
    concept_key: str = "knowledge_concept_id"
    correctness_key: str = "is_right"
    decoder: dict = field(default_factory=lambda: dict(DEFAULT_DECODER))

    def __post_init__(self):
        if len(set(self.keys)) != 5:
            raise ContractError(f"column mapping keys must be distinct, got {self.keys}")

    @property
    def keys(self) -> tuple:
        return (self.sequence_key, self.student_key, self.question_key,
                self.concept_key, self.correctness_key)


@dataclass
class IngestReport:
    rows: int = 0
    kept: int = 0
    dropped_unknown_concept: int = 0
    dropped_bad_sequence: int = 0
    dropped_bad_correctness: int = 0
    students: int = 0
    questions: int = 0
    concept_conflicts: list = field(default_factory=list)
    coverage: dict = field(default_factory=dict)   # concept -> kept rows

    @property
    def dropped(self) -> int:
        return self.dropped_unknown_concept + self.dropped_bad_sequence + self.dropped_bad_correctness

    def as_dict(self) -> dict:
        return {
            "rows": self.rows, "kept": self.kept, "dropped": self.dropped,
            "dropped_unknown_concept": self.dropped_unknown_concept,
            "dropped_bad_sequence": self.dropped_bad_sequence,
            "dropped_bad_correctness": self.dropped_bad_correctness,
            "students": self.students, "questions": self.questions,
            "concept_conflicts": list(self.concept_conflicts),
            "coverage": dict(self.coverage),
        }


def _parse_sequence(value: str):
    value = value.strip()
    try:
        return int(value)
    except ValueError:
        v = float(value)   # may raise; caller counts the drop
        if not math.isfinite(v):
            raise ValueError(value)
        return v


def _sniff_dialect(header_line: str):
    try:
        return csv.Sniffer().sniff(header_line, delimiters=",\t")
    except csv.Error:
        return csv.excel_tab if "\t" in header_line else csv.excel


def ingest_logs(path, mapping: ColumnMapping, graph: ConceptGraph) -> tuple:
    """Read a delimited answer log into ``(Dataset, IngestReport)``.

    Rows are grouped by student and ordered by the sequence key, so the
    result does not depend on row order in the file. A question seen under
    several concepts is assigned its most frequent one (ties go to the
    concept listed first in the graph).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise ContractError(f"{path}: missing header row")
        fh.seek(0)
        reader = csv.DictReader(fh, dialect=_sniff_dialect(header_line))
        header = [h.strip() for h in reader.fieldnames or []]
        reader.fieldnames = header
        missing = [k for k in mapping.keys if k not in header]
        if missing:
            raise ContractError(f"{path}: header lacks mapped columns {missing}")
        raw_rows = list(reader)

    report = IngestReport(rows=len(raw_rows))
    known = set(graph.concepts)
    rows = []
    for row in raw_rows:
        concept = (row[mapping.concept_key] or "").strip()
        if concept not in known:
            report.dropped_unknown_concept += 1
            continue
        try:
            seq = _parse_sequence(row[mapping.sequence_key] or "")
        except ValueError:
            report.dropped_bad_sequence += 1
            continue
        outcome = mapping.decoder.get((row[mapping.correctness_key] or "").strip())
        if outcome not in (0, 1):
            report.dropped_bad_correctness += 1
            continue
        rows.append((row[mapping.student_key].strip(), seq, row[mapping.question_key].strip(),
                     concept, int(outcome)))

    seen = defaultdict(Counter)
    for _, _, qid, concept, _ in rows:
        seen[qid][concept] += 1
    order = {c: i for i, c in enumerate(graph.concepts)}
    concept_of = {}
    for qid, counts in seen.items():
        concept_of[qid] = min(counts, key=lambda c: (-counts[c], order[c]))
        if len(counts) > 1:
            report.concept_conflicts.append(qid)
            logger.warning("question %r appears under concepts %s; using %r",
                           qid, sorted(counts), concept_of[qid])
    report.concept_conflicts.sort()

    by_student = defaultdict(list)
    for student, seq, qid, _, outcome in rows:
        by_student[student].append((seq, qid, outcome))
    trajectories = []
    for student in sorted(by_student):
        steps = sorted(by_student[student])
        trajectories.append(Trajectory(student, tuple((q, o) for _, q, o in steps)))

    questions = tuple(Question(q, concept_of[q]) for q in sorted(concept_of))
    report.kept = len(rows)
    report.students = len(trajectories)
    report.questions = len(questions)
    cover = Counter(concept_of[qid] for _, _, qid, _, _ in rows)
    report.coverage = {c: cover.get(c, 0) for c in graph.concepts}
    return Dataset(graph, questions, tuple(trajectories)), report


# --------------------------------------------------------------------------
# canonical dataset file


def write_dataset(dataset: Dataset, path) -> None:
    """One step per line, sorted by (student, step); steps are 1-based."""
    concept_of = {q.id: q.concept for q in dataset.questions}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DATASET_HEADER)
        for tr in sorted(dataset.trajectories, key=lambda t: t.student):
            for t, (a, o) in enumerate(tr.steps, start=1):
                writer.writerow((tr.student, t, a, concept_of[a], o))


def read_dataset(path, graph: ConceptGraph = None) -> Dataset:
    """Inverse of :func:`write_dataset`.

    Without ``graph`` the concepts found in the file form an edge-free graph.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != DATASET_HEADER:
            raise DataError(f"{path}: expected header {','.join(DATASET_HEADER)}")
        steps = defaultdict(list)
        concept_of = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                student, step, qid, concept, obs = row
                step, obs = int(step), int(obs)
            except ValueError:
                raise DataError(f"{path}:{lineno}: malformed row {row}") from None
            if obs not in (0, 1):
                raise DataError(f"{path}:{lineno}: observation must be 0 or 1")
            if concept_of.setdefault(qid, concept) != concept:
                raise DataError(f"{path}:{lineno}: question {qid!r} listed under two concepts")
            steps[student].append((step, qid, obs))
    if graph is None:
        graph = ConceptGraph(sorted(set(concept_of.values())) or ["_"])
    unknown = sorted(set(concept_of.values()) - set(graph.concepts))
    if unknown:
        raise DataError(f"{path}: concepts {unknown} are not in the concept graph")
    trajectories = tuple(Trajectory(s, tuple((q, o) for _, q, o in sorted(steps[s])))
                         for s in sorted(steps))
    questions = tuple(Question(q, concept_of[q]) for q in sorted(concept_of))
    return Dataset(graph, questions, trajectories)


# --------------------------------------------------------------------------
# concept graphs


def graph_to_dict(graph: ConceptGraph) -> dict:
    return {"concepts": list(graph.concepts),
            "prerequisites": [list(e) for e in sorted(graph.prerequisites)]}


def graph_from_dict(doc: dict) -> ConceptGraph:
    return ConceptGraph(tuple(doc["concepts"]), frozenset(tuple(e) for e in doc.get("prerequisites", [])))


BUNDLED_GRAPHS = ("assist1", "assist2", "assist3", "quanlang1")


def load_graph(path) -> ConceptGraph:
    """Read a concept-graph JSON file, or one of :data:`BUNDLED_GRAPHS` by name."""
    if str(path) in BUNDLED_GRAPHS and not Path(path).exists():
        path = resources.files("hpomdp") / "data" / f"{path}.json"
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(doc, dict) or "concepts" not in doc:
        raise DataError(f"{path}: graph file needs a 'concepts' list")
    return graph_from_dict(doc)


def save_graph(graph: ConceptGraph, path) -> None:
    Path(path).write_text(dumps(graph_to_dict(graph)), encoding="utf-8")


# --------------------------------------------------------------------------
# JSON emitter with full-precision floats


def _emit(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            raise ContractError(f"cannot serialise non-finite value {v}")
        return "%.17g" % v
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k), ensure_ascii=False)}: {_emit(v, indent, level + 1)}"
                 for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(_emit(v, indent, level + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(pad + _emit(v, indent, level + 1) for v in seq) + "\n" + end + "]"
    raise ContractError(f"cannot serialise {type(obj).__name__}")


def dumps(obj, indent: int = 2) -> str:
    """JSON text where every float carries 17 significant digits."""
    return _emit(obj, indent, 0) + "\n"


# --------------------------------------------------------------------------
# model files

_PROB = {"type": "number", "minimum": 0, "maximum": 1}
_PROB_LIST = {"type": "array", "items": _PROB}

MODEL_SCHEMA = {
    "type": "object",
    "required": ["formatVersion", "graph", "stateMode", "states", "questions", "k", "components"],
    "properties": {
        "formatVersion": {"type": "string"},
        "graph": {
            "type": "object",
            "required": ["concepts"],
            "properties": {
                "concepts": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "prerequisites": {"type": "array", "items": {
                    "type": "array", "items": {"type": "string"}, "minItems": 2, "maxItems": 2}},
            },
        },
        "stateMode": {"enum": ["filtered", "full"]},
        "states": {"type": "array", "items": {"type": "string", "pattern": "^[01]+$"}},
        "questions": {"type": "array", "minItems": 1, "items": {
            "type": "object",
            "required": ["id", "concept", "guess", "fluency"],
            "properties": {"id": {"type": "string"}, "concept": {"type": "string"},
                           "guess": _PROB, "fluency": _PROB, "correct": _PROB_LIST},
        }},
        "k": {"type": "integer", "minimum": 1},
        "components": {"type": "array", "minItems": 1, "items": {
            "type": "object",
            "required": ["initial", "transitions"],
            "properties": {
                "initial": _PROB_LIST,
                "transitions": {"type": "object", "additionalProperties": {
                    "type": "object", "required": ["learn", "stay"],
                    "properties": {"learn": _PROB, "stay": _PROB}}},
            },
        }},
        "reward": {"type": "array", "items": {"type": "number"}},
        "discount": {"type": "number", "minimum": 0, "maximum": 1},
        "membershipSummary": _PROB_LIST,
        "fit": {"type": "object"},
    },
}


def _state_label(state) -> str:
    return "".join(str(b) for b in state)


def model_to_dict(model: HPOMDPModel) -> dict:
    space = model.space
    components = []
    for j, comp in enumerate(model.components):
        learn = comp.learn_probabilities(space)
        rebuilt = space.transition_tables(learn)
        if not np.array_equal(rebuilt, comp.transition):
            raise ContractError(f"component {j}: transitions are not one learn probability per concept")
        components.append({
            "initial": [float(x) for x in comp.initial],
            "transitions": {c: {"learn": float(l), "stay": float(1.0 - l)}
                            for c, l in zip(model.graph.concepts, learn)},
        })
    obs = model.observation
    questions = []
    for i, q in enumerate(model.questions):
        entry = {"id": q.id, "concept": q.concept,
                 "guess": float(obs.guess[i]), "fluency": float(obs.fluency[i])}
        if obs.table is not None:
            entry["correct"] = [float(x) for x in obs.table[i]]
        questions.append(entry)
    doc = {
        "formatVersion": FORMAT_VERSION,
        "graph": graph_to_dict(model.graph),
        "stateMode": model.state_mode,
        "states": [_state_label(s) for s in model.states],
        "questions": questions,
        "k": model.k,
        "components": components,
        "reward": [float(x) for x in model.reward.terminal],
        "discount": float(model.discount),
    }
    if model.membership_summary is not None:
        doc["membershipSummary"] = [float(x) for x in model.membership_summary]
    if model.metadata:
        doc["fit"] = _plain(model.metadata)
    return doc


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_plain(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def _where(path) -> str:
    return "/" + "/".join(str(p) for p in path)


def model_from_dict(doc, source: str = "<model>") -> HPOMDPModel:
    if not isinstance(doc, dict):
        raise ModelFileError(f"{source}: top level must be an object")
    version = doc.get("formatVersion")
    if version != FORMAT_VERSION:
        raise ModelFileError(f"{source}: unsupported formatVersion {version!r} "
                             f"(this reader understands {FORMAT_VERSION!r})")
    try:
        jsonschema.validate(doc, MODEL_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ModelFileError(f"{source}: {_where(exc.absolute_path)}: {exc.message}") from None

    try:
        graph = graph_from_dict(doc["graph"])
        space = StateSpace(graph, doc["stateMode"])
    except HPOMDPError as exc:
        raise ModelFileError(f"{source}: /graph: {exc}") from None
    labels = [_state_label(s) for s in space.states]
    if doc["states"] != labels:
        raise ModelFileError(f"{source}: /states: does not match the {doc['stateMode']} state space "
                             f"of the graph ({len(labels)} states)")
    n_states = len(labels)
    if len(doc["components"]) != doc["k"]:
        raise ModelFileError(f"{source}: /components: {len(doc['components'])} entries but k = {doc['k']}")

    components = []
    for j, comp in enumerate(doc["components"]):
        where = f"/components/{j}"
        initial = np.array(comp["initial"], dtype=float)
        if len(initial) != n_states:
            raise ModelFileError(f"{source}: {where}/initial: expected {n_states} entries")
        if abs(initial.sum() - 1.0) > SUM_TOL:
            raise ModelFileError(f"{source}: {where}/initial: sums to {initial.sum():.17g}")
        trans = comp["transitions"]
        if set(trans) != set(graph.concepts):
            raise ModelFileError(f"{source}: {where}/transitions: concepts must be exactly {list(graph.concepts)}")
        learn = []
        for c in graph.concepts:
            row = trans[c]
            total = row["learn"] + row["stay"]
            if abs(total - 1.0) > SUM_TOL:
                raise ModelFileError(f"{source}: {where}/transitions/{c}: learn + stay sums to {total:.17g}")
            learn.append(float(row["learn"]))
        components.append(PatternComponent.from_learn_probabilities(space, initial, np.array(learn)))

    questions, guess, fluency, table = [], [], [], []
    for i, q in enumerate(doc["questions"]):
        questions.append(Question(q["id"], q["concept"]))
        guess.append(q["guess"])
        fluency.append(q["fluency"])
        if "correct" in q:
            if len(q["correct"]) != n_states:
                raise ModelFileError(f"{source}: /questions/{i}/correct: expected {n_states} entries")
            table.append(q["correct"])
    if table and len(table) != len(questions):
        raise ModelFileError(f"{source}: /questions: 'correct' must be given for every question or none")
    observation = ObservationFunction(np.array(guess, float), np.array(fluency, float),
                                      np.array(table, float) if table else None)

    reward = None
    if "reward" in doc:
        if len(doc["reward"]) != n_states:
            raise ModelFileError(f"{source}: /reward: expected {n_states} entries")
        reward = RewardSpec(np.array(doc["reward"], dtype=float))
    summary = doc.get("membershipSummary")
    if summary is not None and len(summary) != doc["k"]:
        raise ModelFileError(f"{source}: /membershipSummary: expected {doc['k']} entries")
    try:
        model = HPOMDPModel(
            graph=graph, questions=tuple(questions), components=tuple(components),
            observation=observation, reward=reward, state_mode=doc["stateMode"],
            discount=float(doc.get("discount", 1.0)),
            membership_summary=None if summary is None else np.array(summary, dtype=float),
            metadata=dict(doc.get("fit", {})),
        )
    except HPOMDPError as exc:
        raise ModelFileError(f"{source}: {exc}") from None
    problems = validate_model(model)
    if problems:
        raise ModelFileError(f"{source}: model fails validation: " + "; ".join(map(str, problems)))
    return model


def save_model(model: HPOMDPModel, path) -> None:
    problems = validate_model(model)
    if problems:
        raise ContractError("refusing to save an invalid model: " + "; ".join(map(str, problems)))
    Path(path).write_text(dumps(model_to_dict(model)), encoding="utf-8")


def load_model(path) -> HPOMDPModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: not valid JSON ({exc})") from None
    return model_from_dict(doc, str(path))


# --------------------------------------------------------------------------
# key=value configuration


def load_config(path) -> dict:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped.

    Keys are normalised to underscores so ``membership-rule`` and
    ``membership_rule`` are the same setting.
    """
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ContractError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ContractError(f"{path}:{lineno}: empty key")
        values[key.replace("-", "_")] = value
    return values
