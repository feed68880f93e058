"""Batch layout, truncation arithmetic, pooling, and encoder determinism."""

import pytest
import torch

from pcmatch.encoding import (
    CLS_ID,
    SEP_ID,
    SLOT_ID,
    ConfigurationError,
    EncoderConfig,
    HashingWordTokenizer,
    TransformerEncoder,
    encode_plain,
    encode_with_csr,
    sentence_representation,
)


@pytest.fixture(scope="module")
def encoder():
    torch.manual_seed(0)
    return TransformerEncoder(EncoderConfig(vocab_size=512, hidden_dim=32,
                                            num_layers=2, num_heads=2,
                                            ffn_dim=64, max_positions=64))


def tok():
    return HashingWordTokenizer(512)


class TestLayout:
    def test_truncation_budget(self):
        text = " ".join(f"w{i}" for i in range(250))
        batch = encode_with_csr([text], 4, tok(), max_len=256)
        assert batch.seq_len <= 256
        start, end = batch.text_spans[0]
        assert end - start == 256 - 3 - 4

    def test_ten_slots(self):
        batch = encode_with_csr(["some text"], 10, tok(), max_len=64)
        assert all(len(s) == 10 for s in batch.csr_slots)

    def test_slots_in_second_segment(self):
        batch = encode_with_csr(["a b c"], 3, tok(), max_len=32)
        for row, slots in enumerate(batch.csr_slots):
            assert all(batch.segment_ids[row, p] == 1 for p in slots)
            assert all(batch.attention_mask[row, p] == 1 for p in slots)

    def test_spans_slots_specials_partition_unmasked(self):
        batch = encode_with_csr(["one two three", "x"], 2, tok(), max_len=32)
        for row in range(batch.size):
            start, end = batch.text_spans[row]
            text = set(range(start, end))
            slots = set(batch.csr_slots[row])
            unmasked = {i for i in range(batch.seq_len)
                        if batch.attention_mask[row, i] == 1}
            specials = {i for i in unmasked
                        if batch.token_ids[row, i] in (CLS_ID, SEP_ID)}
            assert text & slots == set()
            assert text | slots | specials == unmasked

    def test_empty_text_flagged_not_fatal(self):
        batch = encode_with_csr(["", "ok words"], 3, tok(), max_len=32)
        assert batch.empty_rows == [0]
        assert batch.text_spans[0] == (1, 1)

    def test_plain_layout_has_no_slots(self):
        batch = encode_plain(["hello there"], tok(), max_len=32)
        assert batch.csr_slots == [[]]
        assert SLOT_ID not in batch.token_ids

    def test_tail_truncation(self):
        words = [f"w{i}" for i in range(40)]
        batch = encode_plain([" ".join(words)], tok(), max_len=12, keep="tail")
        kept = [w for w, _ in batch.word_spans[0]]
        assert kept == words[-10:]

    def test_csr_dim_mismatch_rejected(self):
        class FakeCsr:
            embedding = torch.zeros(8)
            version = 0
            class_id = 0

        with pytest.raises(ConfigurationError):
            encode_with_csr(["text"], [FakeCsr()], tok(), max_len=32,
                            embedding_dim=32)

    def test_empty_word_list_csr_is_fine(self, encoder):
        class EmptyWordsCsr:
            def __init__(self, k):
                self.class_id = k
                self.embedding = torch.randn(32)
                self.version = 0

        csr = [EmptyWordsCsr(k) for k in range(3)]
        batch = encode_with_csr(["some text"], csr, encoder.tokenizer,
                                max_len=32, embedding_dim=32)
        out = encoder(batch, torch.stack([c.embedding for c in csr]))
        assert out.token_features.shape[0] == 1


class TestForward:
    def test_deterministic_in_eval(self, encoder):
        encoder.eval()
        batch = encode_plain(["some words here"], encoder.tokenizer, max_len=32)
        with torch.no_grad():
            a = encoder(batch).token_features
            b = encoder(batch).token_features
        assert torch.equal(a, b)

    def test_identical_rows_identical_features(self, encoder):
        encoder.eval()
        batch = encode_plain(["same text twice", "same text twice"],
                             encoder.tokenizer, max_len=32)
        with torch.no_grad():
            out = encoder(batch)
        assert torch.allclose(out.token_features[0], out.token_features[1])

    def test_attention_rows_sum_to_one(self, encoder):
        encoder.eval()
        batch = encode_plain(["a few words", "longer text with more words"],
                             encoder.tokenizer, max_len=32)
        with torch.no_grad():
            attn = encoder(batch).last_layer_attention
        for row in range(batch.size):
            keys = batch.attention_mask[row] == 1
            sums = attn[row][:, keys.nonzero().squeeze(-1), :][..., keys].sum(-1)
            # query rows restricted to unmasked keys
            assert torch.allclose(sums, torch.ones_like(sums), atol=1e-4)

    def test_permuting_rows_permutes_outputs(self, encoder):
        encoder.eval()
        texts = ["first sentence", "second one here", "third thing"]
        b1 = encode_plain(texts, encoder.tokenizer, max_len=32)
        b2 = encode_plain(texts[::-1], encoder.tokenizer, max_len=32)
        with torch.no_grad():
            f1 = encoder(b1).token_features
            f2 = encoder(b2).token_features
        assert torch.allclose(f1[0], f2[2], atol=1e-6)

    def test_overlength_rejected(self, encoder):
        batch = encode_plain([" ".join(f"w{i}" for i in range(100))],
                             encoder.tokenizer, max_len=128)
        with pytest.raises(ConfigurationError):
            encoder(batch)

    def test_head_divisibility_enforced(self):
        with pytest.raises(ConfigurationError):
            EncoderConfig(hidden_dim=30, num_heads=4)


class TestPooling:
    def test_single_token_span(self, encoder):
        encoder.eval()
        batch = encode_plain(["word"], encoder.tokenizer, max_len=16)
        with torch.no_grad():
            out = encoder(batch)
        rep = sentence_representation(out, batch)
        start, end = batch.text_spans[0]
        assert end - start == 1
        assert torch.allclose(rep[0], out.token_features[0, start])

    def test_arithmetic_mean(self):
        from pcmatch.encoding import EncodedBatch, EncoderOutput

        feats = torch.tensor([[[0.0, 0.0], [1.0, 1.0], [3.0, 3.0], [0.0, 0.0]]])
        out = EncoderOutput(token_features=feats,
                            last_layer_attention=torch.zeros(1, 1, 4, 4))
        batch = EncodedBatch(
            token_ids=torch.zeros(1, 4, dtype=torch.long),
            attention_mask=torch.ones(1, 4, dtype=torch.long),
            segment_ids=torch.zeros(1, 4, dtype=torch.long),
            text_spans=[(1, 3)], csr_slots=[[]], word_spans=[[]],
        )
        rep = sentence_representation(out, batch)
        assert torch.allclose(rep, torch.tensor([[2.0, 2.0]]))

    def test_padding_invariance(self, encoder):
        encoder.eval()
        short = encode_plain(["alpha beta gamma"], encoder.tokenizer, max_len=32)
        padded = encode_plain(["alpha beta gamma",
                               " ".join(f"w{i}" for i in range(12))],
                              encoder.tokenizer, max_len=32)
        with torch.no_grad():
            r1 = sentence_representation(encoder(short), short)[0]
            r2 = sentence_representation(encoder(padded), padded)[0]
        assert torch.allclose(r1, r2, atol=1e-6)

    def test_empty_span_zero_vector(self, encoder):
        encoder.eval()
        batch = encode_plain([""], encoder.tokenizer, max_len=16)
        with torch.no_grad():
            out = encoder(batch)
        rep = sentence_representation(out, batch)
        assert torch.equal(rep, torch.zeros_like(rep))
