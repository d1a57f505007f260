import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor

import httpx
import pytest

from sparselit.llm import (
    AuthenticationError,
    Completion,
    Gateway,
    MessagesProvider,
    MockRule,
    ProtocolError,
    Prompt,
    ProviderConfig,
    TransientError,
    UnmatchedPromptError,
    Usage,
    complete,
    load_mock_script,
    mock_provider,
    provider_from_config,
    write_mock_script,
)


def test_prompt_requires_user():
    with pytest.raises(ValueError):
        Prompt(user="")


def test_mock_returns_scripted_text_and_is_deterministic():
    mock = mock_provider({"key facts": "<summary>done</summary>"})
    gw = Gateway(mock)
    p = Prompt(user="list the key facts please")
    a, b = gw.complete(p), gw.complete(p)
    assert a.text == "<summary>done</summary>" and a == b
    assert a.provider_id == "mock" and gw.requests == 2


def test_mock_unmatched_prompt():
    gw = Gateway(mock_provider({"x": "y"}))
    with pytest.raises(UnmatchedPromptError):
        gw.complete(Prompt(user="nothing here"))


def test_first_matching_rule_wins_and_templates():
    mock = mock_provider(
        [
            MockRule("gene=$gene", regex=r"gene (?P<gene>\w+)"),
            MockRule("fallback", contains=("gene",)),
        ]
    )
    assert mock.send(Prompt(user="about gene KIF9")).text == "gene=KIF9"
    assert mock.send(Prompt(user="gene")).text == "fallback"


def test_mock_script_file_roundtrip(tmp_path):
    mock = mock_provider([MockRule("A $x", regex=r"(?P<x>\d+)"), MockRule("B", contains=("u", "v"))])
    path = tmp_path / "script.jsonl"
    write_mock_script(mock, path)
    again = load_mock_script(path)
    for text in ["n 42", "u and v"]:
        assert again.send(Prompt(user=text)).text == mock.send(Prompt(user=text)).text
    path.write_text('{"response": "x"}\n')
    with pytest.raises(ValueError, match="line 1"):
        load_mock_script(path)


class FlakyProvider:
    provider_id = "flaky"

    def __init__(self, failures, exc=TransientError):
        self.failures = failures
        self.exc = exc
        self.calls = 0

    def send(self, prompt, timeout):
        self.calls += 1
        if self.calls <= self.failures:
            raise self.exc("rate limited")
        return Completion("ok", Usage(1, 1), self.provider_id)


def test_retries_with_exponential_backoff():
    sleeps = []
    gw = Gateway(FlakyProvider(2), ProviderConfig(max_retries=3, backoff_base=0.5), sleep=sleeps.append)
    assert gw.complete(Prompt(user="q")).text == "ok"
    assert sleeps == [0.5, 1.0] and gw.backoffs == sleeps


def test_retries_exhausted():
    gw = Gateway(FlakyProvider(10), ProviderConfig(max_retries=2), sleep=lambda s: None)
    with pytest.raises(TransientError, match="3 attempt"):
        gw.complete(Prompt(user="q"))
    assert gw.requests == 3
    assert gw.backoffs == sorted(gw.backoffs)


def test_zero_retries_surfaces_first_failure():
    provider = FlakyProvider(1)
    gw = Gateway(provider, ProviderConfig(max_retries=0), sleep=lambda s: pytest.fail("no sleep expected"))
    with pytest.raises(TransientError):
        gw.complete(Prompt(user="q"))
    assert provider.calls == 1


def test_auth_errors_not_retried():
    provider = FlakyProvider(5, AuthenticationError)
    gw = Gateway(provider, ProviderConfig(max_retries=3), sleep=lambda s: None)
    with pytest.raises(AuthenticationError):
        gw.complete(Prompt(user="q"))
    assert provider.calls == 1


class SlowProvider:
    provider_id = "slow"

    def __init__(self):
        self.in_flight = 0
        self.peak = 0
        self.lock = threading.Lock()

    def send(self, prompt, timeout):
        with self.lock:
            self.in_flight += 1
            self.peak = max(self.peak, self.in_flight)
        time.sleep(0.01)
        with self.lock:
            self.in_flight -= 1
        return Completion(prompt.user, Usage(1, 1), self.provider_id)


def test_in_flight_ceiling():
    provider = SlowProvider()
    gw = Gateway(provider, ProviderConfig(max_concurrent_requests=3))
    with ThreadPoolExecutor(max_workers=16) as pool:
        out = list(pool.map(lambda i: gw.complete(Prompt(user=str(i))).text, range(48)))
    assert out == [str(i) for i in range(48)]
    assert provider.peak <= 3 and gw.requests == 48


# -- remote provider over a fake transport -------------------------------------------


def transport(responses, seen=None):
    it = iter(responses)

    def handler(request):
        if seen is not None:
            seen.append(request)
        r = next(it)
        if isinstance(r, Exception):
            raise r
        return r

    return httpx.MockTransport(handler)


def ok_body(text="hello", usage=True):
    body = {"content": [{"type": "text", "text": text}]}
    if usage:
        body["usage"] = {"input_tokens": 11, "output_tokens": 3}
    return httpx.Response(200, json=body)


@pytest.fixture
def api_key(monkeypatch):
    monkeypatch.setenv("TEST_LLM_KEY", "secret")
    return ProviderConfig(credential_env="TEST_LLM_KEY", backoff_base=0.0)


def test_missing_credential(monkeypatch):
    monkeypatch.delenv("TEST_LLM_KEY", raising=False)
    with pytest.raises(AuthenticationError, match="TEST_LLM_KEY"):
        MessagesProvider(ProviderConfig(credential_env="TEST_LLM_KEY"))


def test_remote_request_shape_and_usage(api_key):
    seen = []
    provider = MessagesProvider(api_key, transport([ok_body()], seen))
    gw = Gateway(provider, api_key)
    c = gw.complete(Prompt(user="hi", system="sys", max_output_tokens=64))
    assert c.text == "hello" and c.usage == Usage(11, 3)
    body = json.loads(seen[0].content)
    assert body["system"] == "sys" and body["max_tokens"] == 64 and body["temperature"] == 0.0
    assert body["messages"] == [{"role": "user", "content": "hi"}]
    assert seen[0].headers["x-api-key"] == "secret"
    assert gw.input_tokens == 11 and gw.output_tokens == 3


def test_remote_rate_limit_twice_then_success(api_key):
    sleeps = []
    provider = MessagesProvider(api_key, transport([httpx.Response(429), httpx.Response(429), ok_body()]))
    gw = Gateway(provider, api_key, sleep=sleeps.append)
    assert gw.complete(Prompt(user="q")).text == "hello"
    assert len(gw.backoffs) == 2


def test_remote_timeout_without_retries(api_key, monkeypatch):
    cfg = ProviderConfig(credential_env="TEST_LLM_KEY", max_retries=0)
    provider = MessagesProvider(cfg, transport([httpx.ReadTimeout("slow")]))
    with pytest.raises(TransientError, match="timed out"):
        Gateway(provider, cfg).complete(Prompt(user="q"))


def test_remote_auth_and_protocol_errors(api_key):
    with pytest.raises(AuthenticationError):
        Gateway(MessagesProvider(api_key, transport([httpx.Response(401)])), api_key).complete(Prompt(user="q"))
    with pytest.raises(ProtocolError):
        Gateway(MessagesProvider(api_key, transport([httpx.Response(200, text="not json")])), api_key).complete(
            Prompt(user="q")
        )
    with pytest.raises(ProtocolError):
        Gateway(MessagesProvider(api_key, transport([httpx.Response(400)])), api_key).complete(Prompt(user="q"))


def test_usage_estimate_when_missing(api_key):
    provider = MessagesProvider(api_key, transport([ok_body("one two three", usage=False)]))
    c = provider.send(Prompt(user="a b c d e f g h i j"), 1.0)
    assert c.usage == Usage(13, 4)


def test_provider_from_config_prefers_mock(tmp_path):
    path = tmp_path / "s.jsonl"
    path.write_text(json.dumps({"contains": ["hi"], "response": "yo"}) + "\n")
    provider = provider_from_config(ProviderConfig(credential_env="UNSET_FOR_SURE_123"), path)
    assert complete(Prompt(user="hi"), provider=provider).text == "yo"
