import io
import json
import zipfile

import httpx
import pytest
from fastapi.testclient import TestClient

from crowdconsensus import __version__
from crowdconsensus.platform import ConversionError, PlatformClient, PlatformUnavailable, convert_project
from crowdconsensus.service import Settings, create_app

from sample_data import CONFIG, MockPlatform, platform_records, upload_files

PAGE_SIZE = 25  # 25 taskruns x 2 answers = 50 annotations per page


@pytest.fixture(scope="module")
def records():
    return platform_records()


@pytest.fixture
def platform(records):
    with MockPlatform(*records, api_key="sekret") as mock:
        yield mock


def client_for(platform=None, **kw):
    settings = Settings(platform_base_url=platform.url if platform else None,
                        platform_api_key="sekret", platform_page_size=PAGE_SIZE, **kw)
    return TestClient(create_app(settings), raise_server_exceptions=False)


def upload(client, annotations, tasks=None, config=CONFIG):
    files = {"annotations": ("annotations.csv", annotations, "text/csv"),
             "config": ("config.json", json.dumps(config).encode(), "application/json")}
    if tasks is not None:
        files["tasks"] = ("tasks.csv", tasks, "text/csv")
    return client.post("/v1/consensus", files=files)


def members(zip_bytes):
    with zipfile.ZipFile(io.BytesIO(zip_bytes)) as zf:
        return {name: zf.read(name) for name in zf.namelist()}


def test_health():
    r = client_for().get("/v1/health")
    assert r.status_code == 200
    assert r.json() == {"status": "ok", "version": __version__}


def test_unknown_path_and_wrong_method():
    c = client_for()
    r = c.get("/v1/nope")
    assert r.status_code == 404 and r.json()["code"] == "not_found"
    r = c.get("/v1/consensus")
    assert r.status_code == 405 and set(r.json()) == {"code", "message", "detail"}


def test_upload_two_questions(records):
    ann, tasks = upload_files(*records)
    r = upload(client_for(), ann, tasks)
    assert r.status_code == 200
    assert r.headers["content-type"] == "application/zip"
    names = sorted(members(r.content))
    assert names == ["consensus_damage.csv", "consensus_relevant.csv", "manifest.json",
                     "params_damage.json", "params_relevant.json"]


def test_upload_is_deterministic(records):
    ann, tasks = upload_files(*records)
    c = client_for()
    assert upload(c, ann, tasks).content == upload(c, ann, tasks).content


def test_upload_missing_label_column():
    r = upload(client_for(), b"task_id,worker_id,question_id\nt1,w1,relevant\n")
    assert r.status_code == 400
    assert r.json()["detail"]["column"] == "label"


def test_upload_unknown_label_names_row():
    data = b"task_id,worker_id,question_id,label\nt1,w1,relevant,yes\nt1,w2,relevant,maybe\n"
    r = upload(client_for(), data)
    assert r.status_code == 422
    body = r.json()
    assert body["code"] == "unknown_reported_label"
    assert body["detail"]["annotation_id"] == "2" and body["detail"]["label"] == "maybe"


def test_upload_missing_parts_and_bad_config(records):
    ann, _ = upload_files(*records)
    c = client_for()
    r = c.post("/v1/consensus", files={"annotations": ("a.csv", ann, "text/csv")})
    assert r.status_code == 400 and r.json()["detail"]["part"] == "config"
    r = upload(c, ann, config={"model": "nope"})
    assert r.status_code == 400 and r.json()["code"] == "invalid_config"
    r = c.post("/v1/consensus", content=b"plain", headers={"content-type": "text/plain"})
    assert r.status_code == 400


def test_upload_too_large(records):
    ann, _ = upload_files(*records)
    r = upload(client_for(max_upload_bytes=1000), ann)
    assert r.status_code == 413 and r.json()["code"] == "payload_too_large"


def test_internal_error_is_opaque(monkeypatch, records):
    from crowdconsensus import pipeline

    def boom(*args):
        raise RuntimeError("secret internals")

    monkeypatch.setattr(pipeline, "run_csv", boom)
    ann, _ = upload_files(*records)
    r = upload(client_for(), ann)
    assert r.status_code == 500
    body = r.json()
    assert "secret" not in json.dumps(body) and len(body["detail"]["error_id"]) == 32


def test_platform_client_paginates(platform, records):
    with PlatformClient(platform.url, "sekret", page_size=PAGE_SIZE) as client:
        raw_tasks, raw_annotations = client.fetch_project("p1")
    assert len(raw_tasks) == 10 and len(raw_annotations) == 100
    run_pages = [p for p, _ in platform.requests if "/taskruns" in p]
    assert len(run_pages) == 3  # two full pages, then the empty terminator
    assert all(auth == "Bearer sekret" for _, auth in platform.requests)


def test_platform_flow_matches_upload(platform, records):
    ann, tasks = upload_files(*records)
    c = client_for(platform)
    via_upload = upload(c, ann, tasks)
    via_platform = c.post("/v1/consensus/platform", json={"project_id": "p1", "config": CONFIG})
    assert via_platform.status_code == 200
    assert via_platform.content == via_upload.content


def test_platform_malformed_page(platform):
    r = client_for(platform).post("/v1/consensus/platform", json={"project_id": "broken", "config": CONFIG})
    assert r.status_code == 502
    assert r.json()["detail"]["page"] == 2


def test_platform_empty_project(platform):
    r = client_for(platform).post("/v1/consensus/platform", json={"project_id": "empty", "config": CONFIG})
    assert r.status_code == 422 and r.json()["code"] == "no_annotations"


def test_platform_unreachable():
    settings = Settings(platform_base_url="http://127.0.0.1:9", platform_page_size=PAGE_SIZE)
    r = TestClient(create_app(settings)).post("/v1/consensus/platform", json={"project_id": "p1"})
    assert r.status_code == 502


def test_platform_wrong_key(records):
    with MockPlatform(*records, api_key="other") as mock:
        r = client_for(mock).post("/v1/consensus/platform", json={"project_id": "p1", "config": CONFIG})
    assert r.status_code == 502


def test_conversion_failure_reports_records():
    with pytest.raises(ConversionError) as exc:
        convert_project([{"id": 1}], [(1, {"id": 5, "task_id": 1, "answers": {"q": "a"}}),
                                      (2, {"id": 6, "task_id": 1, "user_id": "u", "answers": {"q": ["x"]}})])
    problems = exc.value.detail["problems"]
    assert [p["page"] for p in problems] == [1, 2]


def test_conversion_failure_is_422(records):
    tasks, runs = records
    bad_runs = runs + [{"id": 999, "task_id": 1, "answers": {"relevant": "yes"}}]
    with MockPlatform(tasks, bad_runs) as mock:
        settings = Settings(platform_base_url=mock.url, platform_page_size=PAGE_SIZE)
        r = TestClient(create_app(settings)).post("/v1/consensus/platform",
                                                  json={"project_id": "p1", "config": CONFIG})
    assert r.status_code == 422 and r.json()["code"] == "conversion_failed"


def test_platform_client_rejects_non_list_page():
    def handler(request):
        return httpx.Response(200, json={"items": []})

    with PlatformClient("http://x", transport=httpx.MockTransport(handler)) as client:
        with pytest.raises(PlatformUnavailable) as exc:
            list(client.paginate("/api/projects/1/tasks"))
    assert exc.value.detail["page"] == 1


def test_settings_from_env():
    s = Settings.from_env({"CCK_BIND_ADDR": "0.0.0.0:9000", "CCK_PLATFORM_BASE_URL": "http://p",
                           "CCK_PLATFORM_API_KEY": "k", "CCK_MAX_UPLOAD_BYTES": "123"})
    assert (s.bind_addr, s.platform_base_url, s.platform_api_key, s.max_upload_bytes) == (
        "0.0.0.0:9000", "http://p", "k", 123)


def test_concurrent_requests_identical(records):
    from concurrent.futures import ThreadPoolExecutor

    ann, tasks = upload_files(*records)
    c = client_for(max_parallel_fits=2)
    with ThreadPoolExecutor(4) as pool:
        bodies = list(pool.map(lambda _: upload(c, ann, tasks).content, range(6)))
    assert len(set(bodies)) == 1
