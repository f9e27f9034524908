from __future__ import annotations

import json
import math
import threading
import time

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from selfdebug.backends import (
    TRANSCRIPT_FIELDS,
    BackendUnavailable,
    CompletionRequest,
    HTTPBackend,
    MockBackend,
    RecordingBackend,
    ReplayBackend,
    ReplayExhausted,
    heuristic_tokens,
    load_transcript,
    make_backend,
)


def req(user: str = "u", pid: str | None = "p") -> CompletionRequest:
    return CompletionRequest(system_text="s", user_text=user, problem_id=pid)


def test_mock_sequence_then_repeat():
    backend = MockBackend(problems={"p": ["bad", "bad", "good"]})
    texts = [backend.complete(req()).text for _ in range(4)]
    assert texts == ["bad", "bad", "good", "good"]
    assert len(backend.requests) == 4


def test_mock_cursors_are_per_problem():
    backend = MockBackend(problems={"a": ["a1", "a2"]}, default=["d1", "d2"])
    assert backend.complete(req(pid="a")).text == "a1"
    assert backend.complete(req(pid="b")).text == "d1"
    assert backend.complete(req(pid="a")).text == "a2"
    assert backend.complete(req(pid="c")).text == "d1"


def test_mock_without_script_unavailable():
    with pytest.raises(BackendUnavailable):
        MockBackend().complete(req())


def test_mock_from_file(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps(["x", "y"]))
    assert make_backend("mock", mock_script=path).complete(req()).text == "x"


def test_heuristic_400_bytes():
    # 1 byte system text + 399 bytes user text
    result = MockBackend(default=["abcd" * 5]).complete(
        CompletionRequest(system_text="s", user_text="u" * 399))
    assert result.prompt_tokens == 100
    assert result.completion_tokens == 5
    assert result.token_source == "heuristic"


@given(st.text())
def test_heuristic_matches_ceiling(text):
    assert heuristic_tokens(text) == math.ceil(len(text.encode("utf-8")) / 4)


def test_request_validation():
    with pytest.raises(ValueError):
        CompletionRequest(system_text="", user_text="u")
    with pytest.raises(ValueError):
        CompletionRequest(system_text="s", user_text="u", temperature=-1)


def test_digest_covers_prompt_and_settings():
    base = req()
    assert base.digest() == req().digest()
    assert base.digest() != req(user="v").digest()
    assert base.digest() != CompletionRequest("s", "u", temperature=0.5, problem_id="p").digest()
    # problem id is routing metadata, not part of the request
    assert base.digest() == req(pid="other").digest()


def test_record_and_replay(tmp_path):
    path = tmp_path / "t.jsonl"
    recorder = RecordingBackend(MockBackend(default=["one", "two", "three"]), path)
    requests = [req("a"), req("b"), req("a")]
    originals = [recorder.complete(r) for r in requests]
    recorder.close()
    entries = load_transcript(path)
    assert len(entries) == 3
    assert all(set(TRANSCRIPT_FIELDS) <= set(e) for e in entries)

    replay = ReplayBackend.from_file(path)
    assert [replay.complete(r) for r in requests] == originals


def test_replay_exhausted(tmp_path):
    path = tmp_path / "t.jsonl"
    recorder = RecordingBackend(MockBackend(default=["x"]), path)
    recorder.complete(req("a"))
    recorder.complete(req("a"))
    recorder.close()
    replay = ReplayBackend.from_file(path)
    replay.complete(req("a"))
    replay.complete(req("a"))
    with pytest.raises(ReplayExhausted):
        replay.complete(req("a"))


def test_replay_unknown_request(tmp_path):
    with pytest.raises(ReplayExhausted):
        ReplayBackend([]).complete(req())


def test_transcript_missing_fields(tmp_path):
    path = tmp_path / "t.jsonl"
    path.write_text('{"request_digest": "x"}\n')
    with pytest.raises(ValueError, match="lacks"):
        load_transcript(path)


# --- HTTP ---------------------------------------------------------------------

def _ok(text: str = "hello", usage: bool = True) -> httpx.Response:
    body = {"choices": [{"message": {"role": "assistant", "content": text}}]}
    if usage:
        body["usage"] = {"prompt_tokens": 11, "completion_tokens": 7}
    return httpx.Response(200, json=body)


def _http(handler, **kw) -> tuple[HTTPBackend, list[float]]:
    sleeps: list[float] = []
    client = httpx.Client(transport=httpx.MockTransport(handler))
    backend = HTTPBackend("http://llm.test/v1", "key", client=client, sleep=sleeps.append, **kw)
    return backend, sleeps


def test_http_payload_and_usage():
    seen = {}

    def handler(request: httpx.Request) -> httpx.Response:
        seen["url"] = str(request.url)
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return _ok()

    backend, _ = _http(handler)
    result = backend.complete(CompletionRequest("sys", "usr", model_name="m", max_output_tokens=64))
    assert seen["url"] == "http://llm.test/v1/chat/completions"
    assert seen["auth"] == "Bearer key"
    assert seen["body"] == {
        "model": "m",
        "messages": [{"role": "system", "content": "sys"}, {"role": "user", "content": "usr"}],
        "temperature": 0.0,
        "max_tokens": 64,
    }
    assert (result.text, result.prompt_tokens, result.completion_tokens) == ("hello", 11, 7)
    assert result.token_source == "backend_reported"


def test_http_heuristic_without_usage():
    backend, _ = _http(lambda r: _ok("abcdefgh", usage=False))
    result = backend.complete(req())
    assert result.token_source == "heuristic"
    assert result.completion_tokens == 2


def test_http_retries_then_succeeds():
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) == 1:
            return httpx.Response(429, headers={"retry-after": "3"})
        if len(calls) == 2:
            raise httpx.ConnectError("boom", request=request)
        if len(calls) == 3:
            return httpx.Response(503)
        return _ok()

    backend, sleeps = _http(handler, backoff_base=1.0, backoff_cap=30.0)
    assert backend.complete(req()).text == "hello"
    assert len(calls) == 4
    assert sleeps[0] == 3.0
    assert 0.5 <= sleeps[1] <= 2.0  # attempt 1: base * 2, jittered into [50%, 100%]
    assert 1.0 <= sleeps[2] <= 4.0


def test_http_gives_up():
    backend, sleeps = _http(lambda r: httpx.Response(500), max_retries=2)
    with pytest.raises(BackendUnavailable, match="giving up after 3"):
        backend.complete(req())
    assert len(sleeps) == 2


def test_http_non_retryable():
    backend, sleeps = _http(lambda r: httpx.Response(401, text="nope"))
    with pytest.raises(BackendUnavailable, match="401"):
        backend.complete(req())
    assert sleeps == []


def test_http_malformed_body():
    backend, _ = _http(lambda r: httpx.Response(200, json={"choices": []}))
    with pytest.raises(BackendUnavailable, match="malformed"):
        backend.complete(req())


def test_http_needs_endpoint(monkeypatch):
    monkeypatch.delenv("CAPSULE_API_BASE", raising=False)
    with pytest.raises(BackendUnavailable):
        HTTPBackend()


def test_http_endpoint_from_env(monkeypatch):
    monkeypatch.setenv("CAPSULE_API_BASE", "http://env.test/v1/")
    monkeypatch.setenv("CAPSULE_API_KEY", "k2")
    backend = HTTPBackend()
    assert backend.base_url == "http://env.test/v1"
    assert backend.api_key == "k2"


def test_http_concurrency_cap():
    active, peak = [0], [0]
    lock = threading.Lock()

    def handler(request):
        with lock:
            active[0] += 1
            peak[0] = max(peak[0], active[0])
        time.sleep(0.05)
        with lock:
            active[0] -= 1
        return _ok()

    backend, _ = _http(handler, max_concurrency=2)
    threads = [threading.Thread(target=backend.complete, args=(req(),)) for _ in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert peak[0] == 2
