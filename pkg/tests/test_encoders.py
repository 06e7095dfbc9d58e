import numpy as np
import pytest
import torch

from siamvpg.config import ModelConfig
from siamvpg.data import Sentence
from siamvpg.encoders import ModulatedPositionalEncoding
from siamvpg.intervals import sinusoidal_embedding
from siamvpg.model import GroundingModel

CFG = ModelConfig(hidden_dim=32, heads=4, encoder_layers=2, decoder_layers=2,
                  ffn_dim=64, gru_hidden=16, dropout=0.1)


@pytest.fixture()
def model():
    torch.manual_seed(0)
    rng = np.random.default_rng(0)
    embed = rng.normal(size=(20, 8)).astype(np.float32)
    m = GroundingModel(CFG, feature_dim=6, embed_matrix=embed)
    m.eval()
    return m


def test_sentence_encoder_single_token_deterministic(model):
    feats1 = model.encode_sentences((Sentence((3,)),))
    feats2 = model.encode_sentences((Sentence((3,)),))
    assert feats1.shape == (1, 32)
    assert torch.equal(feats1, feats2)


def test_sentence_encoder_direction_sensitivity(model):
    fwd = model.encode_sentences((Sentence((1, 2, 3, 4)),))
    rev = model.encode_sentences((Sentence((4, 3, 2, 1)),))
    assert not torch.allclose(fwd, rev)


def test_sentence_encoder_identical_sentences_identical_rows(model):
    feats = model.encode_sentences((Sentence((5, 6)), Sentence((5, 6)), Sentence((7,))))
    assert torch.equal(feats[0], feats[1])
    assert not torch.equal(feats[0], feats[2])


def test_sentence_encoder_unknown_token_is_zero_vector(model):
    # ids outside the table give the same encoding as any other zero vector id
    a = model.embed_tokens(Sentence((99,)))
    assert torch.equal(a, torch.zeros_like(a))


def test_query_encoder_shape(model):
    for n in (1, 3, 5):
        sent = model.encode_sentences(tuple(Sentence((i + 1,)) for i in range(n)))
        out = model.encode_query(sent)
        assert out.shape == (n + 1, 32)
        assert torch.isfinite(out).all()


def test_query_encoder_position_breaks_permutation(model):
    sent = model.encode_sentences((Sentence((1, 2)), Sentence((9, 10))))
    out_ab = model.encode_query(sent)
    out_ba = model.encode_query(sent.flip(0))
    # swapping sentence order must not merely swap output rows
    assert not torch.allclose(out_ab[1], out_ba[2], atol=1e-5)


def test_query_encoder_paragraph_row_sees_all_sentences(model):
    sent = model.encode_sentences(
        (Sentence((1, 2)), Sentence((3,)), Sentence((4, 5)))
    ).detach().requires_grad_(True)
    out = model.encode_query(sent)
    out[0].sum().backward()
    grads = sent.grad.abs().sum(dim=1)
    assert (grads > 0).all()


def test_mpe_identity_gate():
    torch.manual_seed(1)
    mpe = ModulatedPositionalEncoding(16, 32)
    with torch.no_grad():
        mpe.fc2.weight.zero_()
        mpe.fc2.bias.fill_(40.0)  # sigmoid saturates at 1
    x = torch.randn(5, 16)
    pe = sinusoidal_embedding(torch.linspace(0, 1, 5), 16)
    assert torch.allclose(mpe(x, pe), pe)


def test_mpe_null_gate():
    torch.manual_seed(1)
    mpe = ModulatedPositionalEncoding(16, 32)
    with torch.no_grad():
        mpe.fc2.weight.zero_()
        mpe.fc2.bias.fill_(-40.0)
    x = torch.randn(5, 16)
    pe = sinusoidal_embedding(torch.linspace(0, 1, 5), 16)
    assert torch.allclose(mpe(x, pe), torch.zeros_like(pe))


def test_mpe_bounded_by_pe():
    torch.manual_seed(2)
    mpe = ModulatedPositionalEncoding(16, 32)
    x = torch.randn(9, 16)
    pe = sinusoidal_embedding(torch.rand(9), 16)
    out = mpe(x, pe)
    assert (out.abs() <= pe.abs() + 1e-7).all()


def test_video_encoder_shape(model):
    feats = np.random.default_rng(1).normal(size=(17, 6)).astype(np.float32)
    memory = model.encode_video(feats)
    assert memory.values.shape == (17, 32)
    assert memory.positions.shape == (17,)
    assert torch.isfinite(memory.values).all()


def test_video_encoder_value_path_ignores_pe(model):
    # with attention frozen to uniform, values exclude the position encoding,
    # so the output must not depend on where the clips sit in time
    feats = np.random.default_rng(2).normal(size=(10, 6)).astype(np.float32)
    uniform = torch.full((CFG.heads, 10, 10), 0.1)
    pos_a = (torch.arange(10, dtype=torch.float32) + 0.5) / 10
    pos_b = (pos_a + 0.37) % 1.0
    out_a = model.encode_video(feats, positions=pos_a, attn_override=uniform)
    out_b = model.encode_video(feats, positions=pos_b, attn_override=uniform)
    assert torch.allclose(out_a.values, out_b.values, atol=1e-6)


def test_video_encoder_position_sensitivity(model):
    feats = np.random.default_rng(3).normal(size=(10, 6)).astype(np.float32)
    pos_a = (torch.arange(10, dtype=torch.float32) + 0.5) / 10
    pos_b = (pos_a + 0.37) % 1.0
    out_a = model.encode_video(feats, positions=pos_a)
    out_b = model.encode_video(feats, positions=pos_b)
    assert not torch.allclose(out_a.values, out_b.values, atol=1e-4)


def test_encoders_deterministic_in_eval_mode(model):
    feats = np.random.default_rng(4).normal(size=(12, 6)).astype(np.float32)
    a = model.encode_video(feats)
    b = model.encode_video(feats)
    assert torch.equal(a.values, b.values)


def test_dropout_active_only_in_train_mode(model):
    feats = np.random.default_rng(5).normal(size=(12, 6)).astype(np.float32)
    model.train()
    torch.manual_seed(0)
    a = model.encode_video(feats)
    torch.manual_seed(1)
    b = model.encode_video(feats)
    model.eval()
    assert not torch.equal(a.values, b.values)


def test_all_outputs_finite_at_init(model):
    sent = model.encode_sentences((Sentence((1, 2, 3)), Sentence((4,))))
    query = model.encode_query(sent)
    feats = np.random.default_rng(6).normal(size=(20, 6)).astype(np.float32)
    memory = model.encode_video(feats)
    assert torch.isfinite(query).all()
    assert torch.isfinite(memory.values).all()
