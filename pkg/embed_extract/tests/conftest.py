import hashlib
import json
import os

import numpy as np
import pytest

os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")


class StubEncoder:
    """Deterministic hashing stand-in with the encoder interface."""

    def __init__(self, dim=12):
        self.dim = dim
        self.calls = 0

    def encode(self, texts, batch_size=32, convert_to_numpy=True,
               normalize_embeddings=False, show_progress_bar=False):
        self.calls += 1
        out = np.zeros((len(texts), self.dim))
        for row, text in enumerate(texts):
            digest = hashlib.sha256(text.encode("utf-8")).digest()
            for i in range(self.dim):
                out[row, i] = digest[i % len(digest)] / 255.0 + 0.01
        return out

    def get_sentence_embedding_dimension(self):
        return self.dim


@pytest.fixture
def stub_encoder():
    return StubEncoder()


@pytest.fixture
def corpus_jsonl(tmp_path):
    path = tmp_path / "corpus.jsonl"
    rows = [
        {"id": "a", "src": "the river bends", "mt": "der fluss biegt", "ref": "der fluss knickt",
         "langs": "en-de"},
        {"id": "b", "src": "stone and cloud", "mt": "stein und wolke", "langs": "en-de"},
    ]
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    return path


@pytest.fixture(scope="session")
def tiny_encoder_dir(tmp_path_factory):
    """A tiny random-weight sentence encoder saved locally; no downloads."""
    import torch
    from transformers import BertConfig, BertModel, BertTokenizerFast

    try:
        from sentence_transformers.sentence_transformer.modules import Pooling, Transformer
    except ImportError:
        from sentence_transformers.models import Pooling, Transformer
    from sentence_transformers import SentenceTransformer

    base = tmp_path_factory.mktemp("tiny-encoder")
    hf_dir = base / "hf"
    hf_dir.mkdir()
    vocab = (["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
             + list("abcdefghijklmnopqrstuvwxyz0123456789")
             + ["##" + c for c in "abcdefghijklmnopqrstuvwxyz0123456789"])
    (hf_dir / "vocab.txt").write_text("\n".join(vocab))
    tokenizer = BertTokenizerFast(vocab_file=str(hf_dir / "vocab.txt"))
    torch.manual_seed(0)
    config = BertConfig(vocab_size=len(vocab), hidden_size=32, num_hidden_layers=1,
                        num_attention_heads=2, intermediate_size=37,
                        max_position_embeddings=64)
    BertModel(config).save_pretrained(hf_dir)
    tokenizer.save_pretrained(hf_dir)
    st = SentenceTransformer(modules=[Transformer(str(hf_dir)), Pooling(32)])
    st_dir = base / "st"
    st.save(str(st_dir))
    return str(st_dir)
