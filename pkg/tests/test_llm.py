from __future__ import annotations

import itertools
import json

import httpx
import pytest

from codesum.dataset import CodeFragment, Corpus
from codesum.llm import (
    ChatRequest,
    ErrorKind,
    FailureCapExceeded,
    FixtureProvider,
    OpenAICompatibleProvider,
    ProviderError,
    RetryPolicy,
    chat_complete,
    estimate_tokens,
    summarize_corpus,
    summarize_fragment,
)
from codesum.prompt import PromptTemplate, render_prompt
from codesum.store import SummaryStore

NO_SLEEP = RetryPolicy(sleep=lambda s: None)
TEMPLATE = PromptTemplate.default("english")


def _corpus(n: int, prefix: str = "p") -> Corpus:
    return Corpus(tuple(CodeFragment(f"{prefix}/{i}", f"int f{i}(){{return {i};}}", i % 4, "C") for i in range(n)))


def _fixture_for(corpus: Corpus, template: PromptTemplate = TEMPLATE, **kw) -> FixtureProvider:
    return FixtureProvider({render_prompt(template, f.text): f"Returns the constant {f.id}. Extra words." for f in corpus}, **kw)


def _mock(handler) -> httpx.Client:
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_chat_request_validation():
    with pytest.raises(ValueError):
        ChatRequest("m", ())
    with pytest.raises(ValueError):
        ChatRequest("m", ({"role": "user", "content": "a"}, {"role": "assistant", "content": "b"}))
    with pytest.raises(ValueError):
        ChatRequest("m", ({"role": "robot", "content": "a"},))


def test_fixture_echo():
    p = FixtureProvider({"hello": "Reads n, counts in/out degrees, prints sink nodes."})
    assert chat_complete(p, ChatRequest.single("fixture", "hello")) == "Reads n, counts in/out degrees, prints sink nodes."
    assert p.calls == 1


def test_fixture_lookup_by_prompt_digest(tmp_path):
    key = FixtureProvider.prompt_key("some prompt")
    path = tmp_path / "r.jsonl"
    path.write_text(json.dumps({"prompt": key, "response": "Ok."}) + "\n" + json.dumps({"prompt": "b", "response": "B."}) + "\n")
    p = FixtureProvider.from_file(path)
    assert chat_complete(p, ChatRequest.single("m", "some prompt")) == "Ok."
    assert chat_complete(p, ChatRequest.single("m", "b")) == "B."


def test_fixture_missing_prompt_is_not_retried():
    p = FixtureProvider({})
    with pytest.raises(ProviderError) as info:
        chat_complete(p, ChatRequest.single("m", "nope"), NO_SLEEP)
    assert not info.value.retryable and p.attempts == 1


def test_context_length_checked_before_network():
    hits = []
    client = _mock(lambda req: hits.append(req) or httpx.Response(200))
    p = OpenAICompatibleProvider("http://llm.test/v1", "gpt-3.5-turbo", client=client, context_limit=4096)
    prompt = "x" * (4 * 4008)
    with pytest.raises(ProviderError) as info:
        chat_complete(p, ChatRequest.single("gpt-3.5-turbo", prompt, max_output_tokens=97))
    err = info.value
    assert err.kind is ErrorKind.CONTEXT_LENGTH_EXCEEDED and not err.retryable
    assert "maximum context length is 4096 tokens" in err.detail
    assert "you requested 4105 tokens (4008 in the messages, 97 in the completion)" in err.detail
    assert hits == [] and p.calls == 0


def test_token_estimate():
    assert estimate_tokens("") == 0
    assert estimate_tokens("abcd") == 1
    assert estimate_tokens("abcde") == 2


def test_wire_format_and_success():
    seen = {}

    def handler(request: httpx.Request) -> httpx.Response:
        seen["url"] = str(request.url)
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"role": "assistant", "content": "Adds two numbers."}}]})

    p = OpenAICompatibleProvider("http://llm.test/v1/", "glm-4", api_key="k", client=_mock(handler))
    out = chat_complete(p, ChatRequest.single("glm-4", "prompt", max_output_tokens=64))
    assert out == "Adds two numbers."
    assert seen["url"] == "http://llm.test/v1/chat/completions"
    assert seen["auth"] == "Bearer k"
    assert seen["body"] == {"model": "glm-4", "messages": [{"role": "user", "content": "prompt"}], "max_tokens": 64, "temperature": 0.0}


def test_rate_limit_retried_with_backoff():
    statuses = iter([429, 429, 200])
    delays = []

    def handler(request):
        code = next(statuses)
        if code == 429:
            return httpx.Response(429, json={"error": {"message": "slow down", "code": "rate_limit_exceeded"}})
        return httpx.Response(200, json={"choices": [{"message": {"content": "Done."}}]})

    p = OpenAICompatibleProvider("http://llm.test/v1", "m", client=_mock(handler))
    policy = RetryPolicy(base_delay=0.5, max_delay=0.75, sleep=delays.append)
    assert chat_complete(p, ChatRequest.single("m", "q"), policy) == "Done."
    assert p.retries == 2 and p.attempts == 3 and p.calls == 1
    assert delays == [0.5, 0.75]


def test_retries_exhausted_surface_last_error():
    p = OpenAICompatibleProvider("http://llm.test/v1", "m", client=_mock(lambda r: httpx.Response(503, text="busy")))
    with pytest.raises(ProviderError) as info:
        chat_complete(p, ChatRequest.single("m", "q"), RetryPolicy(max_retries=3, sleep=lambda s: None))
    assert info.value.kind is ErrorKind.NETWORK
    assert p.attempts == 4


@pytest.mark.parametrize(
    "response, kind",
    [
        (
            httpx.Response(400, json={"error": {
                "message": "This model's maximum context length is 4096 tokens. However, you requested 4105 tokens "
                "(4008 in the messages, 97 in the completion). Please reduce the length of the messages or completion.",
                "type": "invalid_request_error", "param": "messages", "code": "context_length_exceeded"}}),
            ErrorKind.CONTEXT_LENGTH_EXCEEDED,
        ),
        (httpx.Response(401, json={"error": {"message": "bad key"}}), ErrorKind.AUTH),
        (httpx.Response(200, json={"choices": []}), ErrorKind.MALFORMED_RESPONSE),
        (httpx.Response(200, text="<html>"), ErrorKind.MALFORMED_RESPONSE),
    ],
)
def test_error_mapping(response, kind):
    p = OpenAICompatibleProvider("http://llm.test/v1", "m", client=_mock(lambda r: response), context_limit=None)
    with pytest.raises(ProviderError) as info:
        chat_complete(p, ChatRequest.single("m", "q"), NO_SLEEP)
    assert info.value.kind is kind
    assert p.attempts == 1


def test_transport_error_is_network_and_retryable():
    def handler(request):
        raise httpx.ConnectError("refused", request=request)

    p = OpenAICompatibleProvider("http://llm.test/v1", "m", client=_mock(handler))
    with pytest.raises(ProviderError) as info:
        chat_complete(p, ChatRequest.single("m", "q"), RetryPolicy(max_retries=1, sleep=lambda s: None))
    assert info.value.kind is ErrorKind.NETWORK and p.attempts == 2


def test_summarize_fragment_caches(tmp_path):
    corpus = _corpus(1)
    provider = _fixture_for(corpus)
    store = SummaryStore(tmp_path / "s.jsonl")
    rec = summarize_fragment(corpus[0], TEMPLATE, provider, store)
    assert provider.calls == 1 and len(store) == 1
    assert rec.summary.text == "Returns the constant p/0."
    again = summarize_fragment(corpus[0], TEMPLATE, provider, store)
    assert provider.calls == 1 and again == rec


def test_prompt_language_is_part_of_the_key(tmp_path):
    corpus = _corpus(1)
    zh = PromptTemplate.default("chinese")
    responses = {render_prompt(TEMPLATE, corpus[0].text): "Returns zero.", render_prompt(zh, corpus[0].text): "返回零。"}
    provider = FixtureProvider(responses)
    store = SummaryStore(tmp_path / "s.jsonl")
    summarize_fragment(corpus[0], TEMPLATE, provider, store)
    rec = summarize_fragment(corpus[0], zh, provider, store)
    assert provider.calls == 2 and rec.summary.text == "返回零。"


def test_preamble_flag(tmp_path):
    frag = CodeFragment("x", "int x;")
    provider = FixtureProvider({render_prompt(TEMPLATE, frag.text): "Sure, here is the summary:\nDeclares x."})
    rec = summarize_fragment(frag, TEMPLATE, provider, SummaryStore(tmp_path / "s.jsonl"))
    assert rec.summary.text == "Declares x." and rec.preamble_skipped


def test_provider_error_carries_fragment_id(tmp_path):
    frag = CodeFragment("frag-9", "int x;")
    with pytest.raises(ProviderError, match="frag-9"):
        summarize_fragment(frag, TEMPLATE, FixtureProvider({}), SummaryStore(tmp_path / "s.jsonl"), retry=NO_SLEEP)


@pytest.mark.parametrize("parallelism", [1, 8])
def test_corpus_calls_cold_then_warm(tmp_path, parallelism):
    corpus = _corpus(100)
    provider = _fixture_for(corpus)
    store = SummaryStore(tmp_path / "s.jsonl")
    cold = summarize_corpus(corpus, TEMPLATE, provider, store, parallelism)
    assert cold.calls == 100 and provider.calls == 100 and cold.hits == 0
    assert [s.fragment_id for s in cold.items] == corpus.ids
    warm = summarize_corpus(corpus, TEMPLATE, provider, SummaryStore(tmp_path / "s.jsonl"), parallelism)
    assert warm.calls == 0 and warm.hits == 100 and provider.calls == 100
    assert [s.text for s in warm.items] == [s.text for s in cold.items]


def test_call_count_independent_of_pair_count(tmp_path):
    corpus = _corpus(100)
    provider = _fixture_for(corpus)
    result = summarize_corpus(corpus, TEMPLATE, provider, SummaryStore(tmp_path / "s.jsonl"), 4)
    pairs = list(itertools.combinations(range(len(result)), 2))
    assert len(pairs) == 4950
    # the downstream pair task only touches already computed summaries
    assert all(result[i] is not None and result[j] is not None for i, j in pairs)
    assert provider.calls == 100


def test_identical_source_summarized_once(tmp_path):
    frags = (CodeFragment("a", "int x;"), CodeFragment("b", "int x;"), CodeFragment("c", "int y;"))
    corpus = Corpus(frags)
    provider = _fixture_for(corpus)
    result = summarize_corpus(corpus, TEMPLATE, provider, SummaryStore(tmp_path / "s.jsonl"))
    assert provider.calls == 2
    assert [s.fragment_id for s in result.items] == ["a", "b", "c"]
    assert result[0].text == result[1].text


def test_deterministic_summary_sets(tmp_path):
    corpus = _corpus(20)
    a = summarize_corpus(corpus, TEMPLATE, _fixture_for(corpus), SummaryStore(tmp_path / "a.jsonl"), 5)
    b = summarize_corpus(corpus, TEMPLATE, _fixture_for(corpus), SummaryStore(tmp_path / "b.jsonl"), 3)
    assert a.items == b.items


def test_failures_collected_under_cap(tmp_path):
    corpus = _corpus(50)
    provider = _fixture_for(corpus)
    for f in corpus.fragments[:2]:
        provider.responses[render_prompt(TEMPLATE, f.text)] = "   "
    store = SummaryStore(tmp_path / "s.jsonl")
    result = summarize_corpus(corpus, TEMPLATE, provider, store, failure_cap=0.05)
    assert len(result.ok()) == 48 and len(store) == 48
    assert [f.fragment_id for f in result.failures] == ["p/0", "p/1"]
    assert result.items[0] is None


def test_failure_cap_exceeded(tmp_path):
    corpus = _corpus(50)
    provider = _fixture_for(corpus)
    provider.responses.pop(render_prompt(TEMPLATE, corpus[3].text))
    with pytest.raises(FailureCapExceeded) as info:
        summarize_corpus(corpus, TEMPLATE, provider, SummaryStore(tmp_path / "s.jsonl"), retry=NO_SLEEP)
    assert info.value.failures == 1 and info.value.result.failures[0].fragment_id == "p/3"


def test_auth_error_aborts(tmp_path):
    p = OpenAICompatibleProvider("http://llm.test/v1", "m", client=_mock(lambda r: httpx.Response(401, json={})))
    with pytest.raises(ProviderError) as info:
        summarize_corpus(_corpus(3), TEMPLATE, p, SummaryStore(tmp_path / "s.jsonl"))
    assert info.value.kind is ErrorKind.AUTH


def test_parallelism_must_be_positive(tmp_path):
    with pytest.raises(ValueError):
        summarize_corpus(_corpus(1), TEMPLATE, FixtureProvider({}), SummaryStore(tmp_path / "s.jsonl"), 0)
