import numpy as np
import pytest

from wavetok.autodiff import Tensor, grad_check
from wavetok.autodiff import functional as F
from wavetok.recon import DEFAULT_LAMBDA, Decoder, recon_loss, total_loss
from wavetok.trainer.model import Model

from helpers import param_grad_check, tiny_config


@pytest.mark.parametrize("count", [1, 13, 64])
@pytest.mark.parametrize("length", [100, 512])
def test_decoder_output_length(count, length, rng):
    dec = Decoder(16, 4, 2, rng)
    out = dec(Tensor(rng.normal(size=(1, count, 16))), [count], length)
    assert out.shape == (1, 5, 2, length)


def test_decoder_zero_tokens_zero_bias(rng):
    dec = Decoder(8, 3, 1, rng)
    assert np.all(dec(Tensor(np.zeros((2, 5, 8))), [5, 3], 40).data == 0)


def test_decoder_ignores_padding(rng):
    dec = Decoder(8, 2, 1, rng)
    tokens = rng.normal(size=(1, 6, 8))
    a = dec(Tensor(tokens), [4], 30).data
    tokens[:, 4:] = rng.normal(size=(1, 2, 8))
    b = dec(Tensor(tokens), [4], 30).data
    np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(dec(Tensor(tokens[:, :4]), [4], 30).data, a, atol=1e-14)
    with pytest.raises(ValueError):
        dec(Tensor(tokens), [0], 30)


def test_decoder_gradient(rng):
    dec = Decoder(4, 1, 1, rng)
    w = rng.normal(size=(1, 2, 1, 11))
    tokens = rng.normal(size=(1, 3, 4))
    assert grad_check(lambda t: F.sum(dec(t, [3], 11) * w), [tokens]) < 1e-3
    assert param_grad_check(dec, lambda: F.sum(dec(Tensor(tokens), [3], 11) * w)) < 1e-3


def test_recon_loss_values(rng):
    stack = rng.normal(size=(5, 1, 16))
    assert recon_loss(stack, Tensor(stack)).item() == 0.0
    assert recon_loss(stack, Tensor(stack + 1)).item() == pytest.approx(1.0)
    target = np.array([[[1.0, 2.0, 3.0, 4.0]], [[0.0, -1.0, 0.5, 2.0]]])
    guess = np.array([[[1.5, 2.0, 2.0, 4.0]], [[1.0, -1.0, 0.5, 0.0]]])
    hand = (0.25 + 0 + 1 + 0 + 1 + 0 + 0 + 4) / 8
    assert recon_loss(target, Tensor(guess)).item() == pytest.approx(hand, abs=1e-15)
    assert recon_loss(stack, Tensor(rng.normal(size=stack.shape))).item() > 0
    with pytest.raises(ValueError):
        recon_loss(stack, Tensor(np.zeros((4, 1, 16))))


def test_total_loss():
    assert DEFAULT_LAMBDA == 0.1
    assert total_loss(Tensor(1.0), Tensor(2.0), 0.1).item() == pytest.approx(1.2)
    assert total_loss(Tensor(1.0), Tensor(2.0), 0.0).item() == 1.0
    with pytest.raises(ValueError):
        total_loss(Tensor(1.0), Tensor(2.0), -0.1)


def test_rec_gradient_scales_with_lambda(rng):
    dec = Decoder(4, 1, 1, rng)
    tokens = rng.normal(size=(1, 3, 4))
    target = rng.normal(size=(1, 2, 1, 11))

    def grads(weight):
        t = Tensor(tokens, requires_grad=True)
        rec = recon_loss(target, dec(t, [3], 11))
        total_loss(F.sum(t * 0.0), rec, weight).backward()
        return t.grad

    np.testing.assert_allclose(grads(0.3), 3.0 * grads(0.1), rtol=1e-12)


def test_inference_path_ignores_decoder(rng):
    x = rng.normal(size=(3, 1, 64))
    model = Model(tiny_config(precision="float64"), 1, 4)
    before = model.tokenize(x).tokens.data.copy()
    model.decoder = None
    after = model.tokenize(x).tokens.data
    np.testing.assert_array_equal(before, after)
    model(x, labels=np.zeros(3, dtype=int))
