"""Validated, immutable records for workers, tasks, annotations and label spaces."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import (
    DuplicateId,
    InvalidLabelSpace,
    UnknownQuestion,
    UnknownReportedLabel,
    UnknownTask,
    ValidationError,
)

# Mapping target for reported labels that carry no class information.
EXCLUDED = None


def _frozen_map(d):
    return MappingProxyType(dict(d or {}))


@dataclass(frozen=True)
class LabelSpace:
    """Reported labels of one question and the real classes they map to.

    ``mapping`` sends every reported label to a class index, or to
    :data:`EXCLUDED` for answers such as "Not answered".
    """

    question_id: str
    reported_labels: tuple
    real_classes: tuple
    mapping: Mapping[str, Optional[int]]

    def __post_init__(self):
        object.__setattr__(self, "reported_labels", tuple(self.reported_labels))
        object.__setattr__(self, "real_classes", tuple(self.real_classes))
        object.__setattr__(self, "mapping", _frozen_map(self.mapping))
        q = self.question_id
        if not self.real_classes:
            raise InvalidLabelSpace(f"question {q!r}: no real classes declared")
        for kind, seq in (("class", self.real_classes), ("reported label", self.reported_labels)):
            dup = [x for x, n in Counter(seq).items() if n > 1]
            if dup:
                raise InvalidLabelSpace(f"question {q!r}: duplicate {kind} {dup[0]!r}")
        if set(self.mapping) != set(self.reported_labels):
            missing = sorted(set(self.reported_labels) - set(self.mapping))
            extra = sorted(set(self.mapping) - set(self.reported_labels))
            raise InvalidLabelSpace(
                f"question {q!r}: mapping must cover exactly the reported labels",
                {"unmapped": missing, "undeclared": extra},
            )
        K = len(self.real_classes)
        hit = set()
        for label, target in self.mapping.items():
            if target is EXCLUDED:
                continue
            if not isinstance(target, (int, np.integer)) or isinstance(target, bool) or not 0 <= target < K:
                raise InvalidLabelSpace(f"question {q!r}: label {label!r} maps to invalid class {target!r}")
            hit.add(int(target))
        unreached = [self.real_classes[k] for k in range(K) if k not in hit]
        if unreached:
            raise InvalidLabelSpace(f"question {q!r}: class {unreached[0]!r} is not the image of any reported label")

    @property
    def n_classes(self):
        return len(self.real_classes)

    @classmethod
    def identity(cls, question_id, labels):
        labels = tuple(labels)
        return cls(question_id, labels, labels, {lab: k for k, lab in enumerate(labels)})

    @classmethod
    def from_declaration(cls, question_id, decl):
        """Build from the config form ``{"classes": [...], "mapping": {...}, "excluded": [...]}``.

        ``mapping`` maps extra reported labels to a class name (or null for
        exclusion); every class name is implicitly a reported label of itself.
        """
        if isinstance(decl, (list, tuple)):
            decl = {"classes": list(decl)}
        if not isinstance(decl, Mapping) or "classes" not in decl:
            raise InvalidLabelSpace(f"question {question_id!r}: declaration needs a 'classes' list")
        classes = [str(c) for c in decl["classes"]]
        index = {c: k for k, c in enumerate(classes)}
        reported = list(classes)
        mapping = {c: k for k, c in enumerate(classes)}
        for label, target in (decl.get("mapping") or {}).items():
            if target is None:
                mapping[label] = EXCLUDED
            elif target in index:
                mapping[label] = index[target]
            else:
                raise InvalidLabelSpace(f"question {question_id!r}: label {label!r} maps to unknown class {target!r}")
            if label not in reported:
                reported.append(label)
        for label in decl.get("excluded") or ():
            if label in index:
                raise InvalidLabelSpace(f"question {question_id!r}: class {label!r} cannot be excluded")
            mapping[label] = EXCLUDED
            if label not in reported:
                reported.append(label)
        return cls(question_id, reported, classes, mapping)

    def to_declaration(self):
        extra = {
            lab: (None if t is EXCLUDED else self.real_classes[t])
            for lab, t in ((lab, self.mapping[lab]) for lab in self.reported_labels)
            if lab not in self.real_classes or self.real_classes.index(lab) != t
        }
        return {"classes": list(self.real_classes), "mapping": extra}


@dataclass(frozen=True)
class TaskRecord:
    task_id: str
    observable_attrs: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "observable_attrs", _frozen_map(self.observable_attrs))


@dataclass(frozen=True)
class WorkerRecord:
    worker_id: str
    attrs: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "attrs", _frozen_map(self.attrs))


@dataclass(frozen=True)
class Annotation:
    annotation_id: str
    task_id: str
    worker_id: str
    question_id: str
    reported_label: str
    attrs: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "attrs", _frozen_map(self.attrs))


@dataclass(frozen=True)
class DependencyRule:
    """Drop answers to ``question_id`` when the same worker answered
    ``depends_on`` on the same task with one of ``excluding_labels``."""

    question_id: str
    depends_on: str
    excluding_labels: frozenset

    def __post_init__(self):
        object.__setattr__(self, "excluding_labels", frozenset(self.excluding_labels))
        if self.question_id == self.depends_on:
            raise ValidationError(f"question {self.question_id!r} cannot depend on itself")


@dataclass(frozen=True)
class Dataset:
    tasks: tuple
    workers: tuple
    annotations: tuple
    label_spaces: Mapping[str, LabelSpace]
    dependencies: tuple = ()
    # (worker_id, task_id, question_id) triples answered more than once
    reannotated: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "label_spaces", _frozen_map(self.label_spaces))

    @property
    def task_ids(self):
        return tuple(t.task_id for t in self.tasks)

    @property
    def worker_ids(self):
        return tuple(w.worker_id for w in self.workers)

    def questions(self):
        """Declared questions, in declaration order."""
        return tuple(self.label_spaces)

    def replace_annotations(self, annotations):
        return Dataset(self.tasks, self.workers, tuple(annotations), self.label_spaces,
                       self.dependencies, _reannotated(annotations))


def _reannotated(annotations):
    c = Counter((a.worker_id, a.task_id, a.question_id) for a in annotations)
    return tuple(k for k, n in c.items() if n > 1)


def _get(rec, *names, default=None):
    if isinstance(rec, Mapping):
        for n in names:
            if n in rec:
                return rec[n]
        return default
    for n in names:
        if hasattr(rec, n):
            return getattr(rec, n)
    return default


def _as_task(raw):
    if isinstance(raw, TaskRecord):
        return raw
    attrs = _get(raw, "observable_attrs", "attrs")
    if attrs is None and isinstance(raw, Mapping):
        attrs = {k: v for k, v in raw.items() if k != "task_id"}
    return TaskRecord(str(_get(raw, "task_id")), attrs or {})


def _as_worker(raw):
    if isinstance(raw, WorkerRecord):
        return raw
    attrs = _get(raw, "attrs")
    if attrs is None and isinstance(raw, Mapping):
        attrs = {k: v for k, v in raw.items() if k != "worker_id"}
    return WorkerRecord(str(_get(raw, "worker_id")), attrs or {})


def _as_annotation(raw, position):
    if isinstance(raw, Annotation):
        return raw
    ann_id = _get(raw, "annotation_id")
    return Annotation(
        str(ann_id) if ann_id is not None else str(position),
        str(_get(raw, "task_id")),
        str(_get(raw, "worker_id")),
        str(_get(raw, "question_id")),
        str(_get(raw, "reported_label", "label")),
        _get(raw, "attrs") or {},
    )


def _as_rule(raw):
    if isinstance(raw, DependencyRule):
        return raw
    return DependencyRule(str(_get(raw, "question_id")), str(_get(raw, "depends_on")),
                          frozenset(_get(raw, "excluding_labels", default=()) or ()))


def validate_dataset(raw_tasks, raw_workers, raw_annotations, label_spaces, dependencies=()):
    """Check referential integrity and build an immutable :class:`Dataset`.

    ``raw_tasks=None`` means no task table was supplied; tasks are then
    implied by the annotations in order of first appearance. Workers missing
    from ``raw_workers`` are always synthesized with empty attributes.
    Records may be mappings (as parsed from CSV/JSON) or record instances.
    """
    if isinstance(label_spaces, Mapping):
        spaces = dict(label_spaces)
    else:
        spaces = {ls.question_id: ls for ls in label_spaces}
    for qid, ls in spaces.items():
        if ls.question_id != qid:
            raise InvalidLabelSpace(f"label space keyed {qid!r} declares question {ls.question_id!r}")

    annotations = tuple(_as_annotation(a, i + 1) for i, a in enumerate(raw_annotations))

    if raw_tasks is None:
        seen = dict.fromkeys(a.task_id for a in annotations)
        tasks = tuple(TaskRecord(t) for t in seen)
    else:
        tasks = tuple(_as_task(t) for t in raw_tasks)
    task_set = set()
    for t in tasks:
        if t.task_id in task_set:
            raise DuplicateId("task", t.task_id)
        task_set.add(t.task_id)

    workers = [_as_worker(w) for w in (raw_workers or ())]
    worker_set = set()
    for w in workers:
        if w.worker_id in worker_set:
            raise DuplicateId("worker", w.worker_id)
        worker_set.add(w.worker_id)

    ann_ids = set()
    for a in annotations:
        if a.annotation_id in ann_ids:
            raise DuplicateId("annotation", a.annotation_id)
        ann_ids.add(a.annotation_id)
        if a.task_id not in task_set:
            raise UnknownTask(a.task_id, a.annotation_id)
        ls = spaces.get(a.question_id)
        if ls is None:
            raise UnknownQuestion(a.question_id, a.annotation_id)
        if a.reported_label not in ls.mapping:
            raise UnknownReportedLabel(a.reported_label, a.question_id, a.annotation_id)
        if a.worker_id not in worker_set:
            worker_set.add(a.worker_id)
            workers.append(WorkerRecord(a.worker_id))

    rules = tuple(_as_rule(r) for r in dependencies or ())
    for r in rules:
        for q in (r.question_id, r.depends_on):
            if q not in spaces:
                raise UnknownQuestion(q)
        bad = sorted(set(r.excluding_labels) - set(spaces[r.depends_on].reported_labels))
        if bad:
            raise UnknownReportedLabel(bad[0], r.depends_on)

    return Dataset(tasks, tuple(workers), annotations, spaces, rules, _reannotated(annotations))


def apply_dependency_filter(dataset, rules=None):
    """Remove answers gated off by the same worker's answer to a prior question.

    Gating is evaluated against the input dataset in one pass, so the result
    is idempotent. Returns ``(filtered_dataset, dropped_count)``.
    """
    rules = dataset.dependencies if rules is None else tuple(rules)
    for r in rules:
        if r not in dataset.dependencies:
            raise ValidationError(f"rule {r} is not declared on the dataset")
    if not rules:
        return dataset, 0
    gated_by = {}
    for r in rules:
        gated_by.setdefault(r.question_id, []).append(r)
    answers = {}
    for a in dataset.annotations:
        answers.setdefault((a.worker_id, a.task_id, a.question_id), set()).add(a.reported_label)

    def dropped(a):
        for r in gated_by.get(a.question_id, ()):
            if answers.get((a.worker_id, a.task_id, r.depends_on), set()) & r.excluding_labels:
                return True
        return False

    kept = [a for a in dataset.annotations if not dropped(a)]
    n = len(dataset.annotations) - len(kept)
    if n == 0:
        return dataset, 0
    return dataset.replace_annotations(kept), n


@dataclass(frozen=True)
class QuestionView:
    """Integer-coded annotations of one question, ready for the models.

    ``task_idx``, ``worker_idx`` and ``label_idx`` are parallel arrays, one
    entry per annotation whose reported label maps to a real class.
    """

    question_id: str
    classes: tuple
    task_ids: tuple
    worker_ids: tuple
    task_idx: np.ndarray
    worker_idx: np.ndarray
    label_idx: np.ndarray
    n_excluded: int = 0

    @property
    def n_classes(self):
        return len(self.classes)

    @property
    def n_tasks(self):
        return len(self.task_ids)

    @property
    def n_workers(self):
        return len(self.worker_ids)

    @property
    def n_annotations(self):
        return len(self.label_idx)

    def counts(self):
        """t x K matrix of label counts per task."""
        K = self.n_classes
        flat = np.bincount(self.task_idx * K + self.label_idx, minlength=self.n_tasks * K)
        return flat.reshape(self.n_tasks, K)

    def annotated(self):
        return np.bincount(self.task_idx, minlength=self.n_tasks) > 0


def make_view(question_id, classes, task_ids, worker_ids, triples, n_excluded=0):
    """Build a view from ``(task index, worker index, class index)`` triples."""
    arr = np.asarray(list(triples), dtype=np.int64).reshape(-1, 3)
    return QuestionView(question_id, tuple(classes), tuple(task_ids), tuple(worker_ids),
                        arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy(), n_excluded)


def project_question(dataset, question_id):
    ls = dataset.label_spaces.get(question_id)
    if ls is None:
        raise UnknownQuestion(question_id)
    task_pos = {t: i for i, t in enumerate(dataset.task_ids)}
    worker_pos = {w: i for i, w in enumerate(dataset.worker_ids)}
    triples = []
    excluded = 0
    for a in dataset.annotations:
        if a.question_id != question_id:
            continue
        k = ls.mapping[a.reported_label]
        if k is EXCLUDED:
            excluded += 1
            continue
        triples.append((task_pos[a.task_id], worker_pos[a.worker_id], k))
    return make_view(question_id, ls.real_classes, dataset.task_ids, dataset.worker_ids, triples, excluded)


def infer_label_spaces(raw_annotations: Iterable) -> dict:
    """Identity label spaces from observed labels, classes in sorted order."""
    seen: dict = {}
    for a in raw_annotations:
        q = str(_get(a, "question_id"))
        seen.setdefault(q, set()).add(str(_get(a, "reported_label", "label")))
    return {q: LabelSpace.identity(q, sorted(labels)) for q, labels in sorted(seen.items())}


def label_spaces_from_config(declarations: Mapping[str, object]) -> dict:
    return {q: LabelSpace.from_declaration(q, d) for q, d in declarations.items()}


def dependency_rules_from_config(entries: Sequence[Mapping]) -> tuple:
    return tuple(_as_rule(e) for e in entries)
