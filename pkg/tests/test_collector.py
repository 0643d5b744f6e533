import json

import httpx
import pytest

from misalign.collector import (
    CollectedResponse,
    CollectorConfig,
    Interrupted,
    ScriptedEndpoint,
    Throttle,
    collect,
    read_responses,
    responses_to_samples,
)
from misalign.errors import ConfigError, UpstreamError
from misalign.survey import QuestionSpec, Source, Subgroup, build_pair_table

QUESTIONS = [
    QuestionSpec("Q1", ("Yes", "No", "Refused"), "Is it?", refused_index=2),
    QuestionSpec("Q2", ("A lot", "Some", "None"), "How much?"),
]
SUBGROUPS = [Subgroup("region", "northeast"), Subgroup("age", "65+")]


def config(**kw):
    base = dict(endpoint_url="http://mock.local/v1", model_name="mock-model", samples_per_pair=5,
                max_retries=2, requests_per_second=1e6, max_in_flight=1, backoff_base=0.5)
    base.update(kw)
    return CollectorConfig(**base)


def no_sleep(_):
    pass


def run(endpoint, path, **kw):
    return collect(QUESTIONS, SUBGROUPS, config(**kw), path, transport=endpoint.transport(),
                   api_key="sk-test", sleep=no_sleep)


def test_always_a(tmp_path):
    mock = ScriptedEndpoint(["A"])
    result = run(mock, tmp_path / "r.jsonl")
    assert mock.calls == 4 * 5
    assert all(r.parsed_option == 0 and r.attempt == 1 for r in result.responses)
    assert result.parsed_counts() == {(q.question_id, sg): 5 for q in QUESTIONS for sg in SUBGROUPS}
    table = build_pair_table(QUESTIONS, responses_to_samples(result.responses))
    assert table.llm_totals["Q1"].tolist() == [10, 0, 0]


def test_prose_reply_is_retried(tmp_path):
    script = ["B"] * 9 + ["Well, I would probably say B."]
    mock = ScriptedEndpoint(script)
    result = run(mock, tmp_path / "r.jsonl")
    assert result.stats.parse_failures == 2
    assert mock.calls == 20 + 2
    assert result.parsed_counts() == {(q.question_id, sg): 5 for q in QUESTIONS for sg in SUBGROUPS}
    unparsed = [r for r in result.responses if r.parsed_option is None]
    assert [r.raw_text for r in unparsed] == ["Well, I would probably say B."] * 2
    first = unparsed[0]
    slot = [r for r in result.responses
            if (r.question_id, r.subgroup, r.sample_index) == (first.question_id, first.subgroup, first.sample_index)]
    assert [(r.attempt, r.parsed_option) for r in slot] == [(1, None), (2, 1)]


def test_unparsable_slot_exhausts(tmp_path):
    mock = ScriptedEndpoint(["no idea"])
    result = collect(QUESTIONS[:1], SUBGROUPS[:1], config(samples_per_pair=2, max_retries=2),
                     tmp_path / "r.jsonl", transport=mock.transport(), api_key="k", sleep=no_sleep)
    assert mock.calls == 2 * 3
    assert result.stats.exhausted_slots == 2
    assert result.parsed_counts() == {}
    assert responses_to_samples(result.responses) == []


def test_rate_limit_backs_off(tmp_path):
    delays = []
    mock = ScriptedEndpoint([{"status": 429}, {"status": 429, "retry_after": 3}, "A"])
    result = collect(QUESTIONS[:1], SUBGROUPS[:1], config(samples_per_pair=1), tmp_path / "r.jsonl",
                     transport=mock.transport(), api_key="k", sleep=delays.append)
    assert result.stats.rate_limited == 2
    assert delays == [0.5, 3.0]
    assert result.responses[0].parsed_option == 0


def test_rate_limit_gives_up(tmp_path):
    mock = ScriptedEndpoint([{"status": 503}])
    with pytest.raises(UpstreamError, match="Q1"):
        collect(QUESTIONS[:1], SUBGROUPS[:1], config(samples_per_pair=1, max_rate_limit_retries=2),
                tmp_path / "r.jsonl", transport=mock.transport(), api_key="k", sleep=no_sleep)
    assert mock.calls == 3


def test_auth_error_names_pair(tmp_path):
    mock = ScriptedEndpoint([{"status": 401}])
    with pytest.raises(UpstreamError, match="question Q1, subgroup region:northeast.*401"):
        run(mock, tmp_path / "r.jsonl")
    assert mock.calls == 1


def test_resume_after_interrupt(tmp_path):
    path = tmp_path / "r.jsonl"
    first = ScriptedEndpoint(["C"], fail_after=10)
    with pytest.raises(Interrupted):
        run(first, path)
    assert len(read_responses(path)) == 10

    second = ScriptedEndpoint(["C"])
    result = run(second, path)
    assert second.calls == 10
    assert result.stats.skipped_slots == 10
    assert len(result.responses) == 20
    keys = {(r.question_id, r.subgroup, r.sample_index) for r in result.responses}
    assert len(keys) == 20

    third = ScriptedEndpoint(["C"])
    run(third, path)
    assert third.calls == 0


def test_concurrent_collection_matches(tmp_path):
    mock = ScriptedEndpoint(["B"])
    result = run(mock, tmp_path / "r.jsonl", max_in_flight=4)
    assert mock.calls == 20
    assert sorted((r.question_id, str(r.subgroup), r.sample_index) for r in result.responses) == sorted(
        (q.question_id, str(sg), i) for q in QUESTIONS for sg in SUBGROUPS for i in range(5)
    )


def test_request_payload(tmp_path):
    seen = []

    def handler(request):
        seen.append((request.url, request.headers["authorization"], json.loads(request.content)))
        return httpx.Response(200, json={"choices": [{"message": {"content": "A"}}]})

    collect(QUESTIONS[:1], SUBGROUPS[:1], config(samples_per_pair=1, temperature=0.7),
            tmp_path / "r.jsonl", transport=httpx.MockTransport(handler), api_key="sk-xyz")
    url, auth, body = seen[0]
    assert str(url) == "http://mock.local/v1/chat/completions"
    assert auth == "Bearer sk-xyz"
    assert body["model"] == "mock-model" and body["temperature"] == 0.7
    assert body["messages"][0]["content"].startswith("Answer the following question as if you were from")


def test_missing_secret(tmp_path, monkeypatch):
    monkeypatch.delenv("MISALIGN_TEST_KEY", raising=False)
    with pytest.raises(ConfigError, match="MISALIGN_TEST_KEY"):
        collect(QUESTIONS, SUBGROUPS, config(api_key_env="MISALIGN_TEST_KEY"), tmp_path / "r.jsonl",
                transport=ScriptedEndpoint(["A"]).transport())


def test_secret_never_echoed(tmp_path, monkeypatch):
    monkeypatch.setenv("MISALIGN_TEST_KEY", "sk-very-secret")
    cfg = config(api_key_env="MISALIGN_TEST_KEY")
    collect(QUESTIONS, SUBGROUPS, cfg, tmp_path / "r.jsonl", transport=ScriptedEndpoint(["A"]).transport(),
            sleep=no_sleep)
    assert "sk-very-secret" not in json.dumps(cfg.echo())
    assert "sk-very-secret" not in (tmp_path / "r.jsonl").read_text()


def test_unknown_dimension_fails_before_requests(tmp_path):
    mock = ScriptedEndpoint(["A"])
    with pytest.raises(ConfigError):
        collect(QUESTIONS, [Subgroup("favorite_color", "red")], config(), tmp_path / "r.jsonl",
                transport=mock.transport(), api_key="k")
    assert mock.calls == 0


def test_response_json_roundtrip():
    r = CollectedResponse("Q1", Subgroup("age", "65+"), 3, 1, "B", 1, "2024-01-01T00:00:00+00:00")
    assert CollectedResponse.from_json(r.to_json()) == r
    (s,) = responses_to_samples([r])
    assert s.source is Source.LLM and s.option_index == 1


def test_throttle_spacing():
    now = [0.0]
    slept = []

    def sleep(d):
        slept.append(d)
        now[0] += d

    t = Throttle(4.0, clock=lambda: now[0], sleep=sleep)
    for _ in range(3):
        t.wait()
    assert slept == [0.25, 0.25]


def test_config_validation():
    with pytest.raises(ConfigError):
        config(samples_per_pair=0)
    with pytest.raises(ConfigError):
        config(requests_per_second=0)


def test_scripted_endpoint_from_file(tmp_path):
    f = tmp_path / "mock.json"
    f.write_text(json.dumps({"replies": ["A", {"status": 429}], "fail_after": 7}))
    mock = ScriptedEndpoint.from_file(f)
    assert mock.fail_after == 7 and mock.script[1] == {"status": 429}


def test_stats_as_dict(tmp_path):
    result = run(ScriptedEndpoint(["A"]), tmp_path / "r.jsonl")
    assert result.stats.as_dict() == {"requests": 20, "rate_limited": 0, "parse_failures": 0,
                                      "exhausted_slots": 0, "skipped_slots": 0}
