"""File formats: annotation/task CSV ingestion, consensus/params/curve
writers, run configuration and deterministic ZIP bundles."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import zipfile
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from . import __version__
from .aggregation import MODELS, EMConfig
from .errors import DuplicateId, EncodingError, InvalidConfig, MalformedRow, MissingColumn

ANNOTATION_COLUMNS = ("task_id", "worker_id", "question_id", "label")
ZIP_TIMESTAMP = (1980, 1, 1, 0, 0, 0)


def _decode(data):
    if isinstance(data, str):
        return data
    try:
        return data.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise EncodingError(f"input is not valid UTF-8 (byte {exc.start})", {"offset": exc.start}) from None


def _read_rows(data, required):
    """Yield ``(line_number, row_dict)``; header is line 1."""
    reader = csv.reader(io.StringIO(_decode(data), newline=""), strict=True)
    try:
        header = next(reader)
    except StopIteration:
        raise MissingColumn(required[0]) from None
    except csv.Error as exc:
        raise MalformedRow(1, str(exc)) from None
    header = [h.strip() for h in header]
    for name in required:
        if name not in header:
            raise MissingColumn(name)
    if len(set(header)) != len(header):
        raise MalformedRow(1, "duplicate column names in header")
    while True:
        try:
            row = next(reader)
        except StopIteration:
            return
        except csv.Error as exc:
            raise MalformedRow(reader.line_num, str(exc)) from None
        if not row:
            continue
        if len(row) != len(header):
            raise MalformedRow(reader.line_num, f"expected {len(header)} fields, got {len(row)}")
        rec = dict(zip(header, row))
        for name in required:
            if rec[name] == "":
                raise MalformedRow(reader.line_num, f"empty {name}")
        yield reader.line_num, rec


def read_annotations_csv(data):
    """Parse annotation rows into raw records, in file order.

    Missing ``annotation_id`` values are replaced by the 1-based data row
    number. Columns beyond the required ones land in ``attrs``.
    """
    records = []
    for n, row in enumerate(_read_rows(data, ANNOTATION_COLUMNS), start=1):
        _, rec = row
        extra = {k: v for k, v in rec.items() if k not in ANNOTATION_COLUMNS and k != "annotation_id"}
        records.append({
            "annotation_id": rec.get("annotation_id") or str(n),
            "task_id": rec["task_id"],
            "worker_id": rec["worker_id"],
            "question_id": rec["question_id"],
            "label": rec["label"],
            "attrs": extra,
        })
    return records


def read_tasks_csv(data):
    records = []
    seen = set()
    for _, rec in _read_rows(data, ("task_id",)):
        tid = rec.pop("task_id")
        if tid in seen:
            raise DuplicateId("task", tid)
        seen.add(tid)
        records.append({"task_id": tid, "attrs": rec})
    return records


def read_labeling_csv(data, positive_class=None):
    """Per-task labels from a ``task_id,label`` (or consensus ``best_label``) file.

    With ``positive_class`` the values become booleans.
    """
    text = _decode(data)
    header = next(csv.reader(io.StringIO(text)), [])
    column = "label" if "label" in header else "best_label"
    out = {}
    for _, rec in _read_rows(text, ("task_id", column)):
        if rec["task_id"] in out:
            raise DuplicateId("task", rec["task_id"])
        value = rec[column]
        out[rec["task_id"]] = value == positive_class if positive_class is not None else value
    return out


def _csv_bytes(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerows(rows)
    return buf.getvalue().encode("utf-8")


def write_annotations_csv(annotations):
    """Canonical CSV for annotation records (instances or raw mappings)."""
    extra = sorted({k for a in annotations for k in _attrs(a)})
    rows = [("annotation_id",) + ANNOTATION_COLUMNS + tuple(extra)]
    for a in annotations:
        get = a.get if isinstance(a, Mapping) else lambda k: getattr(a, k)
        label = get("label") if isinstance(a, Mapping) else a.reported_label
        attrs = _attrs(a)
        rows.append((get("annotation_id"), get("task_id"), get("worker_id"), get("question_id"), label)
                    + tuple(attrs.get(k, "") for k in extra))
    return _csv_bytes(rows)


def write_tasks_csv(tasks):
    extra = sorted({k for t in tasks for k in _attrs(t)})
    rows = [("task_id",) + tuple(extra)]
    for t in tasks:
        tid = t["task_id"] if isinstance(t, Mapping) else t.task_id
        attrs = _attrs(t)
        rows.append((tid,) + tuple(attrs.get(k, "") for k in extra))
    return _csv_bytes(rows)


def _attrs(rec):
    if isinstance(rec, Mapping):
        return rec.get("attrs") or {}
    return getattr(rec, "observable_attrs", None) or getattr(rec, "attrs", None) or {}


def _fmt_prob(x):
    return f"{x:.8f}"


def write_consensus_csv(result):
    header = ("task_id", "best_label") + tuple(f"p_{c}" for c in result.classes)
    rows = [header]
    for tid, k, row in zip(result.task_ids, result.hard_labels, result.probs):
        rows.append((tid, result.classes[k]) + tuple(_fmt_prob(p) for p in row))
    return _csv_bytes(rows)


def read_consensus_csv(data):
    """Inverse of :func:`write_consensus_csv`: ``(task_ids, classes, best, probs)``."""
    text = _decode(data)
    header = next(csv.reader(io.StringIO(text)))
    classes = [h[2:] for h in header[2:]]
    ids, best, probs = [], [], []
    for _, rec in _read_rows(text, ("task_id", "best_label")):
        ids.append(rec["task_id"])
        best.append(rec["best_label"])
        probs.append([float(rec[f"p_{c}"]) for c in classes])
    return ids, classes, best, np.array(probs)


def _num(x):
    """Round to 12 significant digits for serialization."""
    return float(f"{float(x):.12g}")


def _matrix(m):
    return [[_num(x) for x in row] for row in np.asarray(m)]


def write_params_json(result):
    """Params and fit diagnostics of a consensus result as JSON bytes.

    Majority Vote has no parameters; its file carries diagnostics only.
    """
    d = result.diagnostics
    doc = {"model": result.model_name, "question": result.question_id, "classes": list(result.classes)}
    p = result.params
    if p is not None:
        doc["tau"] = [_num(x) for x in p.tau]
        if p.pooled:
            doc["confusion"] = _matrix(p.confusion)
        else:
            doc["confusion"] = {w: _matrix(m) for w, m in p.confusion.items()}
    doc["iterations"] = d.iterations
    doc["converged"] = d.converged
    doc["final_objective"] = None if d.final_objective is None else _num(d.final_objective)
    doc["annotated_tasks"] = d.annotated_task_count
    doc["unannotated_tasks"] = d.unannotated_task_count
    return (json.dumps(doc, indent=2) + "\n").encode("utf-8")


def write_curve_csv(curve):
    rows = [("model", "redundancy", "accuracy", "std_err", "n_tasks", "seed", "rng")]
    for e in curve.entries:
        rows.append((e.model, e.redundancy, f"{e.accuracy:.6f}", f"{e.std_err:.6f}", e.n_tasks, e.seed,
                     curve.rng_algorithm))
    return _csv_bytes(rows)


def sha256(data):
    return hashlib.sha256(data).hexdigest()


def bundle_zip(files: Mapping[str, bytes], manifest: Mapping):
    """Deterministic ZIP: sorted members, fixed timestamps, plus manifest.json
    listing the SHA-256 of every other member."""
    if not files:
        raise ValueError("cannot bundle an empty file set")
    doc = dict(manifest)
    doc["members"] = {name: sha256(files[name]) for name in sorted(files)}
    members = dict(files)
    members["manifest.json"] = (json.dumps(doc, indent=2, sort_keys=False) + "\n").encode("utf-8")
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
        for name in sorted(members):
            info = zipfile.ZipInfo(name, date_time=ZIP_TIMESTAMP)
            info.compress_type = zipfile.ZIP_DEFLATED
            info.external_attr = 0o644 << 16
            info.create_system = 3
            zf.writestr(info, members[name])
    return buf.getvalue()


def manifest_member(files, manifest):
    """The manifest.json bytes :func:`bundle_zip` would produce."""
    with zipfile.ZipFile(io.BytesIO(bundle_zip(files, manifest))) as zf:
        return zf.read("manifest.json")


@dataclass(frozen=True)
class RunConfig:
    model: str = "mm"
    questions: Optional[tuple] = None
    em: EMConfig = field(default_factory=EMConfig)
    dependencies_enabled: bool = True
    label_spaces: Mapping = field(default_factory=dict)
    dependencies: tuple = ()
    seed: int = 0
    echo_inputs: bool = False

    def __post_init__(self):
        if self.model not in MODELS:
            raise InvalidConfig(f"unknown model {self.model!r}; expected one of {', '.join(MODELS)}")

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, Mapping):
            raise InvalidConfig("config must be a JSON object")
        known = {"model", "questions", "em", "dependencies_enabled", "label_spaces", "dependencies",
                 "seed", "echo_inputs"}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise InvalidConfig(f"unknown config field {unknown[0]!r}")
        em = doc.get("em") or {}
        if not isinstance(em, Mapping) or set(em) - {"tol", "max_iter", "beta"}:
            raise InvalidConfig("em must be an object with tol, max_iter, beta")
        try:
            em_cfg = EMConfig(**{k: (int(v) if k == "max_iter" else float(v)) for k, v in em.items()})
            qs = doc.get("questions")
            return cls(
                model=str(doc.get("model", "mm")),
                questions=tuple(str(q) for q in qs) if qs is not None else None,
                em=em_cfg,
                dependencies_enabled=bool(doc.get("dependencies_enabled", True)),
                label_spaces=dict(doc.get("label_spaces") or {}),
                dependencies=tuple(dict(d) for d in doc.get("dependencies") or ()),
                seed=int(doc.get("seed", 0)),
                echo_inputs=bool(doc.get("echo_inputs", False)),
            )
        except (TypeError, ValueError) as exc:
            raise InvalidConfig(f"invalid config value: {exc}") from None

    @classmethod
    def from_json(cls, data):
        try:
            doc = json.loads(_decode(data))
        except json.JSONDecodeError as exc:
            raise InvalidConfig(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(doc)

    def to_dict(self):
        return {
            "model": self.model,
            "questions": list(self.questions) if self.questions is not None else None,
            "em": {"tol": self.em.tol, "max_iter": self.em.max_iter, "beta": self.em.beta},
            "dependencies_enabled": self.dependencies_enabled,
            "label_spaces": {q: self.label_spaces[q] for q in sorted(self.label_spaces)},
            "dependencies": [
                {"question_id": d["question_id"], "depends_on": d["depends_on"],
                 "excluding_labels": sorted(d.get("excluding_labels") or ())}
                for d in self.dependencies
            ],
            "seed": self.seed,
            "echo_inputs": self.echo_inputs,
        }

    def replace(self, **changes):
        doc = self.to_dict()
        em = dict(doc["em"])
        for k in ("tol", "max_iter", "beta"):
            if changes.get(k) is not None:
                em[k] = changes.pop(k)
            else:
                changes.pop(k, None)
        doc["em"] = em
        doc.update({k: v for k, v in changes.items() if v is not None})
        return RunConfig.from_dict(doc)


def tool_version():
    return f"crowdconsensus {__version__}"
