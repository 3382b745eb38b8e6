"""End-to-end consensus run shared by the CLI and the HTTP service."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from . import dataio
from .aggregation import compute_consensus
from .core import (
    apply_dependency_filter,
    dependency_rules_from_config,
    infer_label_spaces,
    label_spaces_from_config,
    project_question,
    validate_dataset,
)
from .errors import NoAnnotations, UnknownQuestion

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunOutput:
    files: dict  # member name -> bytes, manifest excluded
    manifest: dict
    results: tuple
    dropped: int

    def bundle(self):
        return dataio.bundle_zip(self.files, self.manifest)

    def members(self):
        """Every bundle member, manifest.json included."""
        out = dict(self.files)
        out["manifest.json"] = dataio.manifest_member(self.files, self.manifest)
        return out


def build_dataset(raw_annotations, raw_tasks, config):
    """Validate raw records against the configured label spaces.

    Without declared label spaces, identity spaces are inferred from the
    observed labels.
    """
    if config.label_spaces:
        spaces = label_spaces_from_config(config.label_spaces)
    else:
        spaces = infer_label_spaces(raw_annotations)
    rules = dependency_rules_from_config(config.dependencies)
    return validate_dataset(raw_tasks, None, raw_annotations, spaces, rules)


def run_dataset(dataset, config):
    if not dataset.annotations:
        raise NoAnnotations("the dataset contains no annotations")
    ann_csv = dataio.write_annotations_csv(dataset.annotations)
    task_csv = dataio.write_tasks_csv(dataset.tasks)
    dropped = 0
    if config.dependencies_enabled and dataset.dependencies:
        dataset, dropped = apply_dependency_filter(dataset)
    questions = config.questions if config.questions is not None else dataset.questions()
    for q in questions:
        if q not in dataset.label_spaces:
            raise UnknownQuestion(q)

    files = {}
    results = []
    for q in questions:
        view = project_question(dataset, q)
        res = compute_consensus(view, config.model, config.em)
        log.info("question %s: model=%s iterations=%d converged=%s", q, res.model_name,
                 res.diagnostics.iterations, res.diagnostics.converged)
        files[f"consensus_{q}.csv"] = dataio.write_consensus_csv(res)
        files[f"params_{q}.json"] = dataio.write_params_json(res)
        results.append(res)

    if config.echo_inputs:
        files["inputs/annotations.csv"] = ann_csv
        files["inputs/tasks.csv"] = task_csv
    manifest = {
        "tool": dataio.tool_version(),
        "config": config.to_dict(),
        "inputs": {"annotations": dataio.sha256(ann_csv), "tasks": dataio.sha256(task_csv)},
        "dropped_by_dependencies": dropped,
    }
    return RunOutput(files, manifest, tuple(results), dropped)


def run_csv(annotations_csv, tasks_csv, config):
    raw_annotations = dataio.read_annotations_csv(annotations_csv)
    raw_tasks = dataio.read_tasks_csv(tasks_csv) if tasks_csv is not None else None
    return run_dataset(build_dataset(raw_annotations, raw_tasks, config), config)
