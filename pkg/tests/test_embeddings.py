import json
import struct
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import numpy as np
import pytest

from mcp_fidelity.embeddings import (CachedEmbedder, HashEmbedder, HttpEmbedder, ProviderDescriptor,
                                     ProviderError, check_unit_norm, embed_fact_set, embed_text,
                                     embedding_distance, external_embed_batch, is_zero_sentinel,
                                     read_sidecar, write_sidecar)
from mcp_fidelity.metric import FactSet

EMB = HashEmbedder()


def test_deterministic_and_unit_norm():
    a = EMB.embed("The tower is near the harbor.")
    b = HashEmbedder().embed("The tower is near the harbor.")
    assert a.tobytes() == b.tobytes()
    assert abs(np.linalg.norm(a) - 1.0) < 1e-12


def test_permutation_invariant():
    assert np.array_equal(EMB.embed("red tower near harbor"), EMB.embed("harbor near tower red"))


def test_counts_not_presence():
    assert not np.array_equal(EMB.embed("tower tower harbor"), EMB.embed("tower harbor"))


def test_empty_text_is_sentinel():
    v = embed_text("   ", EMB)
    assert is_zero_sentinel(v)
    assert embedding_distance(v, EMB.embed("tower")) == 1.0
    assert embedding_distance(v, v) == 1.0


def test_distance_examples():
    v = np.zeros(4)
    v[0] = 1.0
    w = np.zeros(4)
    w[1] = 1.0
    assert embedding_distance(v, v) == 0.0
    assert embedding_distance(v, -v) == 1.0
    assert embedding_distance(v, w) == 0.5


def test_distance_dimension_mismatch():
    with pytest.raises(ValueError):
        embedding_distance(np.ones(3) / np.sqrt(3), np.ones(4) / 2)


def test_descriptor_rejects_small_dim():
    with pytest.raises(ValueError):
        ProviderDescriptor("x", 1, True)


def test_fact_set_embedding():
    assert np.allclose(embed_fact_set(FactSet.from_weights({"the tower": 1.0}), EMB), EMB.embed("the tower"))
    assert is_zero_sentinel(embed_fact_set(FactSet(), EMB))


class _Basis:
    descriptor = ProviderDescriptor("basis", 4, True)

    def embed(self, text):
        v = np.zeros(4)
        v[{"u u": 0, "v v": 1}[text]] = 1.0
        return v

    def embed_batch(self, texts):
        return [self.embed(t) for t in texts]


def test_fact_set_embedding_orthogonal_mean():
    got = embed_fact_set(FactSet.from_weights({"u u": 0.5, "v v": 0.5}), _Basis())
    assert np.allclose(got, np.array([1, 1, 0, 0]) / np.sqrt(2))
    assert abs(np.linalg.norm(got) - 1.0) < 1e-12


def test_fact_set_embedding_weighted_switch():
    fs = FactSet.from_weights({"u u": 0.9, "v v": 0.1})
    weighted = embed_fact_set(fs, _Basis())
    plain = embed_fact_set(fs, _Basis(), weighted=False)
    assert weighted[0] > weighted[1]
    assert np.isclose(plain[0], plain[1])


def test_regularity_inequality_on_random_triples():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        x, y, a = (v / np.linalg.norm(v) for v in rng.normal(size=(3, 16)))
        assert abs(x @ a - y @ a) <= np.linalg.norm(x - y) + 1e-12


def test_cache_returns_same_vectors():
    c = CachedEmbedder(HashEmbedder())
    first = c.embed_batch(["tower", "harbor", "tower"])
    assert len(c) == 2
    assert first[0] is c.embed("tower")


def test_cache_concurrent_use():
    c = CachedEmbedder(HashEmbedder())
    texts = [f"word{i} tower" for i in range(200)]
    results = {}

    def work(k):
        results[k] = [c.embed(t) for t in texts]

    threads = [threading.Thread(target=work, args=(k,)) for k in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    for k in range(4):
        assert all(np.array_equal(a, b) for a, b in zip(results[0], results[k]))
    assert len(c) == 200


def test_sidecar_round_trip(tmp_path):
    m = np.random.default_rng(0).normal(size=(5, 7))
    path = tmp_path / "emb.bin"
    write_sidecar(path, m)
    raw = path.read_bytes()
    assert struct.unpack("<II", raw[:8]) == (5, 7)
    assert len(raw) == 8 + 5 * 7 * 4
    assert np.allclose(read_sidecar(path), m.astype(np.float32))


def test_sidecar_truncated(tmp_path):
    path = tmp_path / "emb.bin"
    path.write_bytes(struct.pack("<II", 3, 4) + b"\0" * 10)
    with pytest.raises(ValueError):
        read_sidecar(path)


# -- external client ----------------------------------------------------------

class _Stub(BaseHTTPRequestHandler):
    mode = "ok"
    calls = 0

    def do_POST(self):
        type(self).calls += 1
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        n = len(body["texts"])
        if self.mode == "ok":
            payload = json.dumps({"embeddings": [[3.0, 4.0]] * n}).encode()
            status = 200
        elif self.mode == "short":
            payload = json.dumps({"embeddings": [[1.0, 0.0]] * (n - 1)}).encode()
            status = 200
        elif self.mode == "garbage":
            payload, status = b"<html>nope", 200
        else:
            payload, status = b"{}", 503
        self.send_response(status)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _Stub)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _Stub.calls = 0
    yield server, f"http://127.0.0.1:{server.server_address[1]}/embed"
    server.shutdown()
    server.server_close()


def test_external_happy_path_renormalizes(stub_server):
    _, url = stub_server
    _Stub.mode = "ok"
    vecs = external_embed_batch(["a", "b"], url, timeout=5, dim=2)
    assert len(vecs) == 2
    assert np.allclose(vecs[0], [0.6, 0.8])


def test_external_wrong_count(stub_server):
    _, url = stub_server
    _Stub.mode = "short"
    with pytest.raises(ProviderError, match="expected 3 embeddings, got 2"):
        external_embed_batch(["a", "b", "c"], url, timeout=5)


def test_external_non_json(stub_server):
    _, url = stub_server
    _Stub.mode = "garbage"
    with pytest.raises(ProviderError) as info:
        external_embed_batch(["a"], url, timeout=5)
    assert info.value.cause is not None


def test_external_bad_status(stub_server):
    _, url = stub_server
    _Stub.mode = "down"
    with pytest.raises(ProviderError, match="503"):
        external_embed_batch(["a"], url, timeout=5)


def test_external_unreachable_retries_once(monkeypatch):
    import mcp_fidelity.embeddings as E

    attempts = []

    def refuse(endpoint, body, timeout):
        attempts.append(endpoint)
        raise ConnectionRefusedError("refused")

    monkeypatch.setattr(E, "_post_json", refuse)
    with pytest.raises(ProviderError):
        external_embed_batch(["a"], "http://127.0.0.1:9/x", timeout=1)
    assert len(attempts) == 2


def test_http_embedder_skips_empty_texts(stub_server):
    _, url = stub_server
    _Stub.mode = "ok"
    emb = HttpEmbedder(url, dim=2, timeout=5)
    out = emb.embed_batch(["", "tower"])
    assert is_zero_sentinel(out[0]) and check_unit_norm(out[1])
    assert _Stub.calls == 1
