"""Paginated client for a crowdsourcing platform's task and answer exports.

The adapter expects two JSON collections under the project::

    GET {base}/api/projects/{project_id}/tasks?page=N&per_page=M
        [{"id": 1, "info": {"media_url": "..."}}, ...]
    GET {base}/api/projects/{project_id}/taskruns?page=N&per_page=M
        [{"id": 7, "task_id": 1, "user_id": "u3",
          "answers": {"relevant": "Yes", "damage": "minimal"}}, ...]

Pages are numbered from 1 and fetched until an empty page comes back.
Every non-null answer becomes one annotation with id ``"<taskrun id>:<question>"``.
"""

from __future__ import annotations

import json
import logging

import httpx

from .errors import CrowdError, ValidationError

log = logging.getLogger(__name__)

MAX_PAGES = 100_000


class PlatformUnavailable(CrowdError):
    """The platform could not be reached or returned an unusable page."""

    code = "platform_unavailable"


class ConversionError(ValidationError):
    code = "conversion_failed"


class PlatformClient:
    def __init__(self, base_url, api_key=None, page_size=100, transport=None, timeout=30.0):
        if page_size < 1:
            raise ValueError("page_size must be positive")
        headers = {"Accept": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self.page_size = page_size
        self._client = httpx.Client(base_url=base_url.rstrip("/"), headers=headers,
                                    transport=transport, timeout=timeout)

    def close(self):
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def paginate(self, path):
        """Yield ``(page_number, records)`` until an empty page."""
        for page in range(1, MAX_PAGES + 1):
            try:
                resp = self._client.get(path, params={"page": page, "per_page": self.page_size})
                resp.raise_for_status()
                records = resp.json()
            except httpx.HTTPStatusError as exc:
                raise PlatformUnavailable(f"{path} page {page}: HTTP {exc.response.status_code}",
                                          {"path": path, "page": page}) from None
            except httpx.HTTPError as exc:
                raise PlatformUnavailable(f"{path} page {page}: {exc}", {"path": path, "page": page}) from None
            except ValueError:
                raise PlatformUnavailable(f"{path} page {page}: response is not JSON",
                                          {"path": path, "page": page}) from None
            if not isinstance(records, list) or not all(isinstance(r, dict) for r in records):
                raise PlatformUnavailable(f"{path} page {page}: expected a JSON array of objects",
                                          {"path": path, "page": page})
            if not records:
                return
            yield page, records
        raise PlatformUnavailable(f"{path}: more than {MAX_PAGES} pages", {"path": path})

    def fetch_project(self, project_id):
        """Raw task and annotation records for one project."""
        base = f"/api/projects/{project_id}"
        tasks = [r for _, page in self.paginate(f"{base}/tasks") for r in page]
        runs = [(n, r) for n, page in self.paginate(f"{base}/taskruns") for r in page]
        return convert_project(tasks, runs)


def _scalar(value):
    if isinstance(value, str):
        return value
    if isinstance(value, bool) or value is None:
        return json.dumps(value)
    if isinstance(value, (int, float)):
        return str(value)
    return None


def convert_project(tasks, runs):
    """Map platform records to raw task and annotation records.

    ``runs`` holds ``(page_number, record)`` pairs so failures can be located.
    Raises :class:`ConversionError` listing every bad record.
    """
    problems = []
    raw_tasks = []
    for i, t in enumerate(tasks):
        if "id" not in t or _scalar(t["id"]) is None:
            problems.append({"collection": "tasks", "index": i, "reason": "missing id"})
            continue
        info = t.get("info") or {}
        if not isinstance(info, dict):
            problems.append({"collection": "tasks", "index": i, "reason": "info is not an object"})
            continue
        attrs = {k: (_scalar(v) if _scalar(v) is not None else json.dumps(v, sort_keys=True))
                 for k, v in info.items()}
        raw_tasks.append({"task_id": _scalar(t["id"]), "attrs": attrs})

    raw_annotations = []
    for i, (page, r) in enumerate(runs):
        where = {"collection": "taskruns", "page": page, "index": i}
        missing = [k for k in ("id", "task_id", "user_id", "answers") if r.get(k) is None]
        if missing:
            problems.append({**where, "reason": f"missing {', '.join(missing)}"})
            continue
        answers = r["answers"]
        if not isinstance(answers, dict):
            problems.append({**where, "reason": "answers is not an object"})
            continue
        for question, label in answers.items():
            if label is None:
                continue  # question left unanswered
            label = _scalar(label)
            if label is None:
                problems.append({**where, "reason": f"answer to {question!r} is not a scalar"})
                continue
            raw_annotations.append({
                "annotation_id": f"{_scalar(r['id'])}:{question}",
                "task_id": _scalar(r["task_id"]),
                "worker_id": _scalar(r["user_id"]),
                "question_id": question,
                "label": label,
                "attrs": {},
            })
    if problems:
        raise ConversionError(f"{len(problems)} platform record(s) could not be converted",
                              {"problems": problems[:100]})
    log.info("converted %d tasks and %d annotations", len(raw_tasks), len(raw_annotations))
    return raw_tasks, raw_annotations
