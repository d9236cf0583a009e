import numpy as np
import pytest
import torch

from sponspeech.behavior_encoder import BehaviorEncoder, LabelPredictor

from conftest import tiny_model_config
from gradcheck import finite_difference_check


@pytest.fixture
def encoder():
    torch.manual_seed(0)
    return BehaviorEncoder(tiny_model_config()).eval()


@pytest.fixture
def predictor():
    torch.manual_seed(0)
    return LabelPredictor(tiny_model_config()).eval()


def test_label_embed_identical_ids(encoder):
    out = encoder.label_embed(torch.tensor([4, 0, 4]))
    assert torch.equal(out[0], out[2])


def test_label_embed_table_has_20_rows(encoder):
    out = encoder.label_embed(torch.arange(20))
    assert out.shape == (20, encoder.label_embedding.embedding_dim)
    assert len({tuple(np.round(r, 6)) for r in out.detach().numpy()}) == 20
    with pytest.raises(ValueError):
        encoder.label_embed(torch.tensor([20]))


def test_label_embed_all_none_constant(encoder):
    out = encoder.label_embed(torch.zeros(5, dtype=torch.long))
    assert torch.equal(out, out[0].expand_as(out))


def test_syntactic_identical_rows(encoder):
    feats = torch.tensor([[1, 3, 0, 1], [1, 3, 0, 1], [2, 3, 0, 1]], dtype=torch.float)
    out = encoder.encode_syntactic(feats)
    assert torch.equal(out[0], out[1])
    assert not torch.equal(out[0], out[2])


def test_syntactic_rejects_bad_width(encoder):
    with pytest.raises(ValueError, match="width 4"):
        encoder.encode_syntactic(torch.zeros(3, 5))


def test_syntactic_finite_for_large_values(encoder, rng):
    feats = torch.tensor(rng.integers(0, 10_000, size=(64, 4)), dtype=torch.float)
    out = encoder.encode_syntactic(feats)
    assert torch.isfinite(out).all()


def test_syntactic_gradient_check():
    torch.manual_seed(1)
    encoder = BehaviorEncoder(tiny_model_config(d_model=16, n_heads=2)).double().eval()
    feats = torch.tensor(
        [[0, 3, 0, 2], [1, 3, 0, 2], [2, 3, 1, 2]], dtype=torch.float64
    )

    def loss_fn():
        return (encoder.encode_syntactic(feats) ** 2).sum()

    finite_difference_check(
        loss_fn, encoder.syntactic_encoder.parameters(),
        np.random.default_rng(1), num_coords=60,
    )


def test_l_embeddings_reduce_to_label_embed_with_zero_syntactic(encoder):
    with torch.no_grad():
        for p in encoder.syntactic_encoder.parameters():
            p.zero_()
    labels = torch.tensor([0, 3, 7])
    feats = torch.tensor([[0, 0, 0, 0], [1, 2, 0, 1], [0, 2, 1, 2]], dtype=torch.float)
    out = encoder(labels, feats)
    assert torch.equal(out, encoder.label_embed(labels))


def test_l_embeddings_commute_with_concatenation(encoder):
    labels = torch.tensor([1, 2, 3, 4])
    feats = torch.rand(4, 4) * 4
    joint = encoder(labels, feats)
    split = torch.cat([encoder(labels[:2], feats[:2]), encoder(labels[2:], feats[2:])])
    assert torch.allclose(joint, split, atol=1e-6)


def test_l_embeddings_length_contract(encoder, rng):
    for _ in range(20):
        n = int(rng.integers(0, 10))
        labels = torch.tensor(rng.integers(0, 20, size=n), dtype=torch.long)
        feats = torch.rand(n, 4)
        assert encoder(labels, feats).shape == (n, 32)
    with pytest.raises(ValueError, match="mismatch"):
        encoder(torch.zeros(3, dtype=torch.long), torch.zeros(4, 4))


# ----------------------------------------------------------- label predictor


def test_predictor_length_preservation(predictor, rng):
    for n in (1, 3, 9):
        emb = torch.randn(n, 32)
        assert predictor(emb).shape == (n, 20)


def test_predictor_untrained_accuracy_near_chance():
    # balanced targets are independent of the inputs, so any fixed predictor
    # scores 1/20 in expectation
    torch.manual_seed(7)
    predictor = LabelPredictor(tiny_model_config()).eval()
    rng = np.random.default_rng(7)
    hits = total = 0
    for _ in range(50):
        targets = np.repeat(np.arange(20), 2)
        rng.shuffle(targets)
        emb = torch.tensor(rng.standard_normal((40, 32)), dtype=torch.float32)
        with torch.no_grad():
            pred = predictor(emb).argmax(dim=-1).numpy()
        hits += int((pred == targets).sum())
        total += targets.size
    assert hits / total <= 2.0 / 20.0


def test_predictor_batched_matches_single(predictor):
    emb = torch.randn(2, 5, 32)
    lengths = torch.tensor([5, 3])
    with torch.no_grad():
        batched = predictor(emb, lengths)
        single = predictor(emb[1, :3])
    assert torch.allclose(batched[1, :3], single, atol=1e-5)
