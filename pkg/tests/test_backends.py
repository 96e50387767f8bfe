from __future__ import annotations

import math

import httpx
import pytest

from dictex.backends import (
    ChatScriptStep,
    GenParams,
    HttpChatBackend,
    HttpMlmBackend,
    MaskQuery,
    MaskScores,
    MockChatBackend,
    MockMlmBackend,
    RateLimited,
    Refusal,
    Timeout,
    TokenizedText,
    TransportError,
    VocabularyMismatch,
)

PARAMS = GenParams()


class TestGenParams:
    def test_defaults(self):
        assert PARAMS.temperature == 0.9
        assert PARAMS.top_p == 1.0
        assert PARAMS.top_k == 500
        assert PARAMS.max_tokens == 256

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"temperature": -0.1},
            {"top_p": 0.0},
            {"top_p": 1.5},
            {"top_k": 0},
            {"max_tokens": 0},
        ],
    )
    def test_validation(self, kwargs):
        with pytest.raises(ValueError):
            GenParams(**kwargs)


class TestMockChat:
    def test_canned_reply(self):
        backend = MockChatBackend(default_reply="X")
        assert backend.complete("hi", PARAMS) == "X"
        assert backend.calls == 1

    def test_fail_twice_then_succeed(self):
        backend = MockChatBackend(
            [
                ChatScriptStep(error="rate_limited", retry_after=0.5),
                ChatScriptStep(error="rate_limited"),
                ChatScriptStep(reply="done"),
            ]
        )
        with pytest.raises(RateLimited) as first:
            backend.complete("p", PARAMS)
        assert first.value.retry_after == 0.5
        with pytest.raises(RateLimited):
            backend.complete("p", PARAMS)
        assert backend.complete("p", PARAMS) == "done"
        assert backend.calls == 3

    def test_empty_prompt_rejected_before_any_request(self):
        backend = MockChatBackend(default_reply="X")
        with pytest.raises(ValueError):
            backend.complete("", PARAMS)
        assert backend.calls == 0

    def test_refusal_step(self):
        backend = MockChatBackend([ChatScriptStep(error="refusal")])
        with pytest.raises(Refusal):
            backend.complete("p", PARAMS)

    def test_refuse_fraction_is_deterministic_per_prompt(self):
        backend = MockChatBackend(default_reply="ok", refuse_fraction=0.5)
        outcomes = {}
        for prompt in (f"prompt {i}" for i in range(40)):
            try:
                backend.complete(prompt, PARAMS)
                outcomes[prompt] = "ok"
            except Refusal:
                outcomes[prompt] = "refused"
        assert set(outcomes.values()) == {"ok", "refused"}
        again = MockChatBackend(default_reply="ok", refuse_fraction=0.5)
        for prompt, expected in outcomes.items():
            try:
                again.complete(prompt, PARAMS)
                assert expected == "ok"
            except Refusal:
                assert expected == "refused"

    def test_word_echo_embeds_word_in_tags(self):
        backend = MockChatBackend(word_echo=True)
        reply = backend.complete('construct one sentence ... the word "dull" ...', PARAMS)
        assert reply.startswith("<sentence>") and reply.endswith("</sentence>")
        assert "dull" in reply

    def test_prefer_marker_answers_matching_slot(self):
        backend = MockChatBackend(prefer_marker="MARKED")
        prompt = "## Output (a): plain\n## Output (b): the MARKED one\n"
        assert backend.complete(prompt, PARAMS) == "Output (b)"
        prompt = "## Output (a): the MARKED one\n## Output (b): plain\n"
        assert backend.complete(prompt, PARAMS) == "Output (a)"


class TestMockMlmTokenize:
    def test_whitespace_words_with_offsets(self):
        backend = MockMlmBackend()
        tokens = backend.tokenize("dull ache", leading_space=False)
        assert len(tokens.token_ids) == 2
        assert tokens.offsets == ((0, 4), (5, 9))

    def test_leading_space_changes_first_token_id(self):
        backend = MockMlmBackend()
        without = backend.tokenize("dull", leading_space=False)
        with_space = backend.tokenize("dull", leading_space=True)
        assert without.token_ids != with_space.token_ids

    def test_empty_text(self):
        backend = MockMlmBackend()
        assert backend.tokenize("", leading_space=False).token_ids == ()

    def test_subword_chunking(self):
        backend = MockMlmBackend(subword_size=3)
        tokens = backend.tokenize("medication", leading_space=True)
        assert len(tokens.token_ids) == 4  # med ica tio n
        assert tokens.offsets == ((0, 3), (3, 6), (6, 9), (9, 10))

    def test_tokenize_is_deterministic(self):
        backend = MockMlmBackend()
        first = backend.tokenize("a b c", leading_space=False)
        second = backend.tokenize("a b c", leading_space=False)
        assert first == second


def single_mask_query(backend: MockMlmBackend, word: str) -> MaskQuery:
    tokens = backend.tokenize(word, leading_space=True)
    ids = [backend.mask_token_id] * len(tokens.token_ids)
    return MaskQuery(
        token_ids=tuple(ids),
        mask_positions=tuple(range(len(ids))),
        target_ids=tokens.token_ids,
        mask_token_id=backend.mask_token_id,
    )


class TestMockMlmScore:
    def test_certainty_gives_zero_logprobs(self):
        backend = MockMlmBackend(default_prob=1.0)
        scores = backend.mask_score(single_mask_query(backend, "sure thing"))
        assert scores.logprobs == (0.0, 0.0)

    def test_half_probability_two_positions(self):
        backend = MockMlmBackend(default_prob=0.5)
        scores = backend.mask_score(single_mask_query(backend, "dull ache"))
        assert scores.logprobs == pytest.approx((math.log(0.5), math.log(0.5)))

    def test_target_out_of_vocabulary(self):
        backend = MockMlmBackend()
        backend.tokenize("word", leading_space=True)
        query = MaskQuery(
            token_ids=(backend.mask_token_id,),
            mask_positions=(0,),
            target_ids=(backend.vocab_size,),
            mask_token_id=backend.mask_token_id,
        )
        with pytest.raises(VocabularyMismatch):
            backend.mask_score(query)

    def test_deterministic_for_fixed_query(self):
        backend = MockMlmBackend(hash_probs=True)
        query = single_mask_query(backend, "alpha beta gamma")
        assert backend.mask_score(query) == backend.mask_score(query)

    def test_token_probs_override_default(self):
        backend = MockMlmBackend(default_prob=0.5, token_probs={"dull": 0.25})
        scores = backend.mask_score(single_mask_query(backend, "dull ache"))
        assert scores.logprobs == pytest.approx((math.log(0.25), math.log(0.5)))


class TestQueryValidation:
    def test_mask_position_must_hold_mask_id(self):
        with pytest.raises(ValueError):
            MaskQuery(token_ids=(7,), mask_positions=(0,), target_ids=(1,), mask_token_id=0)

    def test_needs_at_least_one_position(self):
        with pytest.raises(ValueError):
            MaskQuery(token_ids=(0,), mask_positions=(), target_ids=(), mask_token_id=0)

    def test_positions_and_targets_align(self):
        with pytest.raises(ValueError):
            MaskQuery(token_ids=(0, 0), mask_positions=(0, 1), target_ids=(1,), mask_token_id=0)

    def test_scores_must_be_nonpositive_finite(self):
        with pytest.raises(ValueError):
            MaskScores(logprobs=(0.5,))
        with pytest.raises(ValueError):
            MaskScores(logprobs=(float("-inf"),))

    def test_offsets_must_be_ordered(self):
        with pytest.raises(ValueError):
            TokenizedText(token_ids=(1, 2), offsets=((5, 9), (0, 4)))


def chat_transport(handler):
    return HttpChatBackend("http://chat.test", transport=httpx.MockTransport(handler))


class TestHttpChat:
    def test_happy_path_sends_params(self):
        import json

        seen = {}

        def handler(request: httpx.Request) -> httpx.Response:
            seen.update(json.loads(request.content))
            return httpx.Response(200, json={"text": "reply"})

        backend = chat_transport(handler)
        assert backend.complete("hello", GenParams(temperature=0.9)) == "reply"
        assert seen["prompt"] == "hello"
        assert seen["temperature"] == 0.9
        assert seen["top_p"] == 1.0
        assert seen["top_k"] == 500

    def test_rate_limited_maps_with_hint(self):
        backend = chat_transport(
            lambda request: httpx.Response(429, headers={"Retry-After": "3"}, text="slow down")
        )
        with pytest.raises(RateLimited) as excinfo:
            backend.complete("p", PARAMS)
        assert excinfo.value.retry_after == 3.0

    def test_timeout_status(self):
        backend = chat_transport(lambda request: httpx.Response(504))
        with pytest.raises(Timeout):
            backend.complete("p", PARAMS)

    def test_timeout_exception(self):
        def handler(request):
            raise httpx.ReadTimeout("too slow")

        backend = chat_transport(handler)
        with pytest.raises(Timeout):
            backend.complete("p", PARAMS)

    def test_refusal_status(self):
        backend = chat_transport(lambda request: httpx.Response(451, text="no"))
        with pytest.raises(Refusal):
            backend.complete("p", PARAMS)

    def test_other_statuses_are_transport_errors(self):
        backend = chat_transport(lambda request: httpx.Response(500, text="boom"))
        with pytest.raises(TransportError):
            backend.complete("p", PARAMS)

    def test_malformed_body_is_transport_error(self):
        backend = chat_transport(lambda request: httpx.Response(200, json={"nope": 1}))
        with pytest.raises(TransportError):
            backend.complete("p", PARAMS)


class TestHttpMlm:
    def make(self, handler):
        return HttpMlmBackend(
            "http://mlm.test", mask_token_id=0, transport=httpx.MockTransport(handler)
        )

    def test_tokenize_roundtrip(self):
        def handler(request: httpx.Request) -> httpx.Response:
            import json

            body = json.loads(request.content)
            assert body == {"text": "dull ache", "leading_space": False}
            return httpx.Response(200, json={"token_ids": [5, 9], "offsets": [[0, 4], [5, 9]]})

        tokens = self.make(handler).tokenize("dull ache", leading_space=False)
        assert tokens.token_ids == (5, 9)
        assert tokens.offsets == ((0, 4), (5, 9))

    def test_mask_score_roundtrip(self):
        def handler(request: httpx.Request) -> httpx.Response:
            import json

            body = json.loads(request.content)
            assert body["mask_positions"] == [0]
            return httpx.Response(200, json={"logprobs": [-0.5]})

        backend = self.make(handler)
        query = MaskQuery(token_ids=(0, 3), mask_positions=(0,), target_ids=(7,), mask_token_id=0)
        assert backend.mask_score(query).logprobs == (-0.5,)

    def test_vocabulary_mismatch_status(self):
        backend = self.make(lambda request: httpx.Response(422, text="target out of range"))
        query = MaskQuery(token_ids=(0,), mask_positions=(0,), target_ids=(9,), mask_token_id=0)
        with pytest.raises(VocabularyMismatch):
            backend.mask_score(query)
