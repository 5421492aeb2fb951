import numpy as np
import pytest
import torch

from sdalr.errors import ConfigError, DataError
from sdalr.network import (
    EncoderConfig,
    SDALRNet,
    forward_features,
    forward_probs,
    init_target_from_source,
    load_checkpoint,
    save_checkpoint,
)

SMALL = EncoderConfig(stem_channels=8, stage_channels=(8, 16, 16, 32), feature_dim=16)


@pytest.fixture(scope="module")
def full_model():
    torch.manual_seed(0)
    return SDALRNet(8, 2048).eval()


def test_table_shapes_at_full_size(full_model):
    x = torch.randn(64, 1, 2048)
    with torch.no_grad():
        outs = full_model.encoder.stage_outputs(x)
        feats = forward_features(full_model, x)
        probs = forward_probs(full_model, x)
    expected = [(64, 64, 1024), (64, 64, 1024), (64, 128, 512), (64, 256, 256), (64, 512, 128)]
    assert [tuple(o.shape) for o in outs] == expected
    assert feats.shape == (64, 256)
    assert probs.shape == (64, 8)
    assert torch.isfinite(feats).all()
    torch.testing.assert_close(probs.sum(1), torch.ones(64), atol=1e-6, rtol=0)
    assert (probs >= 0).all() and (probs <= 1).all()


def test_wrong_length_raises(full_model):
    with pytest.raises(DataError):
        forward_features(full_model, torch.randn(2, 2000))


def test_eval_forward_is_deterministic():
    torch.manual_seed(1)
    m = SDALRNet(3, 128, SMALL).eval()
    x = torch.randn(1, 128).repeat(4, 1)
    with torch.no_grad():
        a = forward_features(m, x)
        b = forward_features(m, x)
    torch.testing.assert_close(a, b, rtol=0, atol=0)
    torch.testing.assert_close(a[0].expand_as(a), a, rtol=0, atol=0)


def test_weight_norm_scale_invariance():
    torch.manual_seed(2)
    m = SDALRNet(4, 64, SMALL).eval()
    x = torch.randn(5, 64)
    with torch.no_grad():
        before = forward_probs(m, x)
        m.classifier.v.mul_(7.3)
        after = forward_probs(m, x)
    torch.testing.assert_close(after, before, rtol=1e-5, atol=1e-7)


def test_effective_weight_is_magnitude_times_direction():
    torch.manual_seed(3)
    m = SDALRNet(3, 64, SMALL)
    w = m.classifier.weight().detach()
    v, g = m.classifier.v.detach(), m.classifier.g.detach()
    torch.testing.assert_close(w, g[:, None] * v / v.norm(dim=1, keepdim=True))
    torch.testing.assert_close(w.norm(dim=1), g.abs())


def test_dropout_only_in_train_mode():
    torch.manual_seed(4)
    m = SDALRNet(3, 64, EncoderConfig(stem_channels=8, stage_channels=(8, 8, 8, 8), feature_dim=8, dropout=0.5))
    x = torch.randn(8, 64)
    m.train()
    a, b = forward_features(m, x), forward_features(m, x)
    assert not torch.equal(a, b)


def test_init_target_copy_semantics():
    torch.manual_seed(5)
    src = SDALRNet(3, 64, SMALL).eval()
    src.meta = {"domain": "S"}
    tgt = init_target_from_source(src, 3)
    x = torch.randn(4, 64)
    with torch.no_grad():
        torch.testing.assert_close(forward_probs(src, x), forward_probs(tgt, x), rtol=0, atol=0)
        ref = forward_probs(src, x).clone()
        for p in tgt.encoder.parameters():
            p.add_(0.5)
        torch.testing.assert_close(forward_probs(src, x), ref, rtol=0, atol=0)
    assert tgt.meta["initialized_from"] == "S"


def test_init_target_rejects_mismatch():
    src = SDALRNet(3, 64, SMALL)
    with pytest.raises(ConfigError):
        init_target_from_source(src, 4)
    with pytest.raises(ConfigError):
        init_target_from_source(src, encoder=EncoderConfig())


def test_checkpoint_round_trip(tmp_path):
    torch.manual_seed(6)
    m = SDALRNet(3, 64, SMALL)
    m.train()
    m(torch.randn(16, 64))  # move BN running stats off their init
    m.eval()
    m.meta = {"domain": "S", "epoch": 3}
    path = save_checkpoint(m, tmp_path / "m.pt")
    back = load_checkpoint(path, num_classes=3, encoder=SMALL)
    x = torch.randn(5, 64)
    with torch.no_grad():
        torch.testing.assert_close(forward_probs(back, x), forward_probs(m, x), rtol=0, atol=0)
        torch.testing.assert_close(forward_features(back, x), forward_features(m, x), rtol=0, atol=0)
    assert back.meta["epoch"] == 3


def test_checkpoint_refuses_other_architecture(tmp_path):
    path = save_checkpoint(SDALRNet(3, 64, SMALL), tmp_path / "m.pt")
    with pytest.raises(ConfigError):
        load_checkpoint(path, num_classes=5)
    with pytest.raises(ConfigError):
        load_checkpoint(path, encoder=EncoderConfig())
    with pytest.raises(DataError):
        load_checkpoint(tmp_path / "missing.pt")


def test_numpy_input_accepted():
    m = SDALRNet(2, 32, SMALL).eval()
    with torch.no_grad():
        out = forward_probs(m, np.zeros((2, 32), dtype=np.float32))
    assert out.shape == (2, 2)
