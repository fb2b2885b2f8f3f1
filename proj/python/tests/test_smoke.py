import http.server
import json
import math
import threading

import pytest

import hcbfill


def brute_span_logp(model, task, span):
    joint = model.joint
    full = list(task.tokens)
    full[task.span_start:task.span_end] = span
    pattern = list(task.tokens)
    for i in range(task.span_start, task.span_end):
        pattern[i] = -1
    return joint.log_prob(full) - joint.log_marginal(pattern)


def test_conditionals_are_normalized():
    model = hcbfill.exact_model(3, 5, seed=4)
    mask = model.vocab.mask_id
    logp = model.conditionals([0, mask, 2, 1, 0], 1)
    assert len(logp) == 4
    assert math.isclose(sum(math.exp(v) for v in logp), 1.0, abs_tol=1e-12)


def test_exhaustive_hcb_pivot_matches_enumeration():
    model = hcbfill.exact_model(3, 6, seed=11)
    mask = model.vocab.mask_id
    task = hcbfill.GapTask.mask_span([0, 1, 2, 2, 1, 0], 2, 4, mask)
    cfg = hcbfill.BeamConfig(9, hcbfill.ScoringMode.hcb_pivot([0, 0]))
    result = hcbfill.infill_beam_search(model, task, cfg)
    assert len(result.ranked) == 9
    pivot_logp = brute_span_logp(model, task, [0, 0])
    for c in result.ranked:
        expected = brute_span_logp(model, task, c.span) - pivot_logp
        assert c.score == pytest.approx(expected, abs=1e-9)
    assert result.stats.scoring_calls_per_step == [1, 3]


def test_identity_check_on_random_pair():
    joint = hcbfill.JointTable.random(3, 4, 2)
    assert hcbfill.hcb_identity_check(joint, [0, 1, 2, 0], [2, 2, 1, 1]) < 1e-9


def test_sampler_call_budget():
    model = hcbfill.exact_model(4, 5, seed=3)
    mask = model.vocab.mask_id
    task = hcbfill.GapTask.mask_span([1, 2, 3, 0, 1], 1, 4, mask)
    res = hcbfill.sample_infill(model, task, hcbfill.SamplerConfig.nucleus(0.9, 6, seed=5))
    assert res.calls_per_step == [6, 6, 6]
    assert len(res.ranked) == 6


def test_metrics():
    assert hcbfill.bleu_k([1, 2], [1, 2]) == pytest.approx(100.0)
    assert hcbfill.hit_rank([[0, 0], [1, 2]], [1, 2]) == 2
    assert not hcbfill.top_k_hit([[0, 0], [1, 2]], [1, 2], 1)


def test_run_experiment():
    cfg = hcbfill.ExperimentConfig()
    cfg.backend.alphabet = 3
    cfg.backend.length = 6
    cfg.num_examples = 10
    cfg.methods = [
        hcbfill.MethodSpec.from_beam(hcbfill.BeamConfig(3)),
        hcbfill.MethodSpec.from_beam(hcbfill.BeamConfig(3, hcbfill.ScoringMode.hcb_mask())),
    ]
    result = hcbfill.run_experiment(cfg)
    assert not result.aborted
    assert len(result.rows) == 20
    assert [s.tasks for s in result.summary] == [10, 10]
    assert result.summary_csv().startswith("method")


def test_invalid_pivot_raises_config_error():
    model = hcbfill.exact_model(3, 4)
    task = hcbfill.GapTask.mask_span([0, 1, 2, 0], 1, 3, model.vocab.mask_id)
    cfg = hcbfill.BeamConfig(2, hcbfill.ScoringMode.hcb_pivot([0]))
    with pytest.raises(hcbfill.ConfigError):
        hcbfill.infill_beam_search(model, task, cfg)
    assert issubclass(hcbfill.ConfigError, hcbfill.Error)


class _Stub(http.server.BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    vocab = 4

    def _send(self, code, body):
        data = json.dumps(body).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        self._send(200, {"vocab_size": self.vocab, "mask_token_id": 3,
                         "special_token_ids": [3], "model_name": "stub"})

    def do_POST(self):
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        uniform = [-math.log(self.vocab)] * self.vocab
        self._send(200, {"results": [{"logp": uniform} for _ in body["queries"]]})

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_url():
    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), _Stub)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield "http://127.0.0.1:%d" % server.server_address[1]
    server.shutdown()


def test_remote_backend_against_stub(stub_url):
    backend = hcbfill.RemoteBackend(stub_url, timeout=5.0)
    assert backend.model_name == "stub"
    assert len(backend.vocab) == 4
    logp = backend.conditionals_batch([([0, 3, 1], 1), ([3, 3, 2], 0)])
    assert len(logp) == 2
    assert logp[0] == pytest.approx([-math.log(4)] * 4)


def test_remote_url_from_environment(stub_url, monkeypatch):
    monkeypatch.setenv(hcbfill.REMOTE_URL_ENV, stub_url)
    assert hcbfill.RemoteBackend().model_name == "stub"


def test_remote_unreachable():
    with pytest.raises(hcbfill.BackendUnavailable):
        hcbfill.RemoteBackend("http://127.0.0.1:9", timeout=1.0)
