"""Acceptance: extraction output is valid, unit-norm, and reproducible."""

import numpy as np

from embed_extract.extract import ExtractConfig, extract
from test_extract import read_pqe1, run_validate_cli


def test_acceptance_extract_contract(corpus_jsonl, tmp_path, tiny_encoder_dir):
    cfg = lambda out: ExtractConfig(
        corpus=str(corpus_jsonl),
        output=str(out),
        model=tiny_encoder_dir,
        revision="local-test",
        roles=("src", "mt"),
    )
    first = tmp_path / "run1.pqe"
    second = tmp_path / "run2.pqe"
    extract(cfg(first))

    result = run_validate_cli(first)
    assert result.returncode == 0, result.stderr
    print("ACCEPTANCE PASS: output passes the consumer's validate-embeddings")

    _, records = read_pqe1(first)
    for _, _, vec in records:
        assert abs(np.linalg.norm(vec.astype(np.float64)) - 1.0) < 1e-6
    print("ACCEPTANCE PASS: every vector unit-norm within 1e-6")

    extract(cfg(second))
    assert first.read_bytes() == second.read_bytes()
    print("ACCEPTANCE PASS: re-run byte-identical under a pinned encoder revision")
