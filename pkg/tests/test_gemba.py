import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from polyqe.gemba import (
    GembaExample,
    GembaPrompt,
    LlmEndpointConfig,
    ScoreParseError,
    build_prompt,
    lang_name,
    parse_score,
    score_batch,
)


class _MockHandler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length)) if length else {}
        status, content = self.server.respond(body)
        if status != 200:
            self.send_response(status)
            self.send_header("Content-Length", "0")
            self.end_headers()
            return
        payload = json.dumps({"choices": [{"message": {"content": content}}]}).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


class MockLlmServer:
    """Local scripted chat-completions endpoint; zero live-network traffic."""

    def __init__(self, respond):
        self.server = ThreadingHTTPServer(("127.0.0.1", 0), _MockHandler)
        self.server.respond = respond
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()

    @property
    def url(self):
        host, port = self.server.server_address
        return f"http://{host}:{port}/v1/chat/completions"

    def close(self):
        self.server.shutdown()
        self.server.server_close()


@pytest.fixture
def mock_server():
    servers = []

    def start(respond):
        server = MockLlmServer(respond)
        servers.append(server)
        return server

    yield start
    for server in servers:
        server.close()


def endpoint_for(server, **overrides):
    defaults = dict(base_url=server.url, model="mock-judge", max_retries=2,
                    backoff_base=0.001, timeout=5.0)
    defaults.update(overrides)
    return LlmEndpointConfig(**defaults)


def standard_spec(**overrides):
    fields = dict(variant="standard", src_lang="English", tgt_lang="Czech",
                  src="Good morning.", mt="Dobré ráno.", ref="Dobré ráno!")
    fields.update(overrides)
    return GembaPrompt(**fields)


class TestBuildPrompt:
    def test_standard_with_reference(self):
        prompt = build_prompt(standard_spec())
        assert "English source: Good morning." in prompt
        assert "Czech human reference: Dobré ráno!" in prompt
        assert "Czech translation: Dobré ráno." in prompt
        assert prompt.endswith("Score:")
        assert prompt.splitlines().count("Score:") == 1

    def test_standard_reference_less_drops_all_reference_talk(self):
        prompt = build_prompt(standard_spec(ref=None))
        assert "reference" not in prompt.lower()

    def test_deterministic_bytes(self):
        spec = standard_spec()
        assert build_prompt(spec) == build_prompt(spec)

    def test_standard_rejects_examples(self):
        with pytest.raises(ValueError, match="takes no examples"):
            build_prompt(standard_spec(examples=(GembaExample("x"),)))

    def test_polycand_with_scores(self):
        spec = standard_spec(
            variant="polycand",
            examples=(GembaExample("Dobrý den.", 73.0), GembaExample("Ahoj.", 20.5)),
        )
        prompt = build_prompt(spec)
        assert "Below is an example translation along with its score:" in prompt
        assert 'Czech translation: "Dobrý den."' in prompt
        assert "Score: 73" in prompt
        assert "Score: 20.5" in prompt
        assert prompt.index("Dobrý den.") < prompt.index("Ahoj.")
        assert "Now score this translation" in prompt
        assert prompt.endswith("Score:")

    def test_polycand_without_scores(self):
        spec = standard_spec(variant="polycand", examples=(GembaExample("Dobrý den."),))
        prompt = build_prompt(spec)
        assert "Below is an example translation:" in prompt
        assert "along with its score" not in prompt
        # the only Score: line is the trailing cue
        assert sum(1 for line in prompt.splitlines() if line.startswith("Score:")) == 1

    def test_polycand_mixed_scores_rejected(self):
        spec = standard_spec(
            variant="polycand",
            examples=(GembaExample("a", 50.0), GembaExample("b", None)),
        )
        with pytest.raises(ValueError, match="all examples"):
            build_prompt(spec)

    def test_polyic_full_structure(self):
        spec = standard_spec(
            variant="polyic",
            examples=(GembaExample("Guten Tag.", 88.0, source="Good day."),),
        )
        prompt = build_prompt(spec)
        assert "Source: Good day." in prompt
        assert 'Translation: "Guten Tag."' in prompt
        assert "Score: 88" in prompt
        # evaluated segment comes after the example block
        assert prompt.index("Score: 88") < prompt.index("English source:")
        assert prompt.endswith("Score:")

    def test_polyic_missing_source_rejected(self):
        spec = standard_spec(variant="polyic", examples=(GembaExample("x", 10.0),))
        with pytest.raises(ValueError, match="missing its source"):
            build_prompt(spec)

    def test_poly_variants_need_examples(self):
        for variant in ("polycand", "polyic"):
            with pytest.raises(ValueError, match="at least one example"):
                build_prompt(standard_spec(variant=variant))

    @pytest.mark.parametrize("variant", ["standard", "polycand", "polyic"])
    def test_fields_present_per_variant(self, variant):
        examples = ()
        if variant == "polycand":
            examples = (GembaExample("alt translation", 60.0),)
        elif variant == "polyic":
            examples = (GembaExample("ex translation", 60.0, source="ex source"),)
        prompt = build_prompt(standard_spec(variant=variant, examples=examples))
        assert ("example" in prompt) == (variant != "standard")
        assert ("ex source" in prompt) == (variant == "polyic")
        assert "Good morning." in prompt and "Dobré ráno." in prompt


class TestParseScore:
    def test_template_conforming_reply(self):
        assert parse_score("The grammar is fine.\nScore: 73") == 73.0

    def test_clamps_out_of_range(self):
        assert parse_score("Score: 105") == min(max(105.0, 0.0), 100.0) == 100.0
        assert parse_score("Score: -3") == 0.0

    def test_trailing_punctuation(self):
        assert parse_score("Score: 41.5.") == 41.5

    def test_last_number_wins(self):
        assert parse_score("0 means bad, 100 means good. Score: 62") == 62.0

    def test_no_number_is_parse_error(self):
        with pytest.raises(ScoreParseError) as err:
            parse_score("I cannot rate this.")
        assert err.value.response == "I cannot rate this."

    def test_round_trip_over_the_template(self):
        for x in range(0, 101):
            reply = f"Short justification.\nScore: {x}"
            assert parse_score(reply) == float(x)


class TestScoreBatch:
    def items(self, n):
        return [(f"item{i}", standard_spec(src=f"Sentence {i}.")) for i in range(n)]

    def test_constant_mock(self, mock_server):
        server = mock_server(lambda body: (200, "Score: 50"))
        results, failures = score_batch(self.items(8), endpoint_for(server), concurrency=3)
        assert failures == []
        assert sorted(results) == [f"item{i}" for i in range(8)]
        assert all(res.score == 50.0 for res in results.values())

    def test_retry_then_success(self, mock_server):
        attempts = {}
        lock = threading.Lock()

        def respond(body):
            prompt = body["messages"][0]["content"]
            with lock:
                attempts[prompt] = attempts.get(prompt, 0) + 1
                if attempts[prompt] == 1:
                    return 500, ""
            return 200, "Score: 64"

        server = mock_server(respond)
        results, failures = score_batch(self.items(3), endpoint_for(server), concurrency=2)
        assert failures == []
        assert all(res.attempts == 2 and res.retries == 1 for res in results.values())

    def test_exhausted_retries_fail_the_item(self, mock_server):
        server = mock_server(lambda body: (503, ""))
        results, failures = score_batch(self.items(2), endpoint_for(server), concurrency=1)
        assert results == {}
        assert len(failures) == 2
        assert all(f.attempts == 3 for f in failures)  # initial + 2 retries

    def test_mixed_valid_and_invalid_replies(self, mock_server):
        def respond(body):
            prompt = body["messages"][0]["content"]
            if "Sentence 1." in prompt or "Sentence 3." in prompt:
                return 200, "I refuse to answer."
            return 200, "Score: 77"

        server = mock_server(respond)
        results, failures = score_batch(self.items(5), endpoint_for(server), concurrency=2)
        assert len(results) == 3
        assert len(failures) == 2
        assert {f.id for f in failures} == {"item1", "item3"}
        # parse failures are not retried: the reply is deterministic
        assert all(f.attempts == 1 for f in failures)

    def test_unreachable_endpoint(self):
        endpoint = LlmEndpointConfig(base_url="http://127.0.0.1:9/nothing", model="x",
                                     max_retries=1, backoff_base=0.001, timeout=0.5)
        results, failures = score_batch(self.items(1), endpoint, concurrency=1)
        assert results == {}
        assert len(failures) == 1 and failures[0].attempts == 2


def test_lang_name_fallback():
    assert lang_name("en") == "English"
    assert lang_name("cs") == "Czech"
    assert lang_name("xx") == "xx"


def test_endpoint_config_validation():
    with pytest.raises(ValueError):
        LlmEndpointConfig(base_url="http://x", model="m", max_retries=-1)
