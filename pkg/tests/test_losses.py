import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from stmfa import tensor as T
from stmfa.errors import ContractError
from stmfa.gradcheck import check_function
from stmfa.losses import (
    LossWeights,
    adversarial_d_loss,
    adversarial_g_loss,
    gaussian_window,
    gdl_loss,
    generator_loss_terms,
    generator_total_loss,
    image_domain_loss,
    l2_loss,
    psnr,
    ssim,
)

GDL_Y = np.array([[0.0, 1.0], [0.0, 1.0]])[None, :, :, None]
GDL_YHAT = np.zeros_like(GDL_Y)


def kink_free_pair(rng, shape, gap=1e-3):
    """Random (y, yhat) whose pixel differences and gradient-magnitude gaps all exceed ``gap``."""

    def grads(z):
        return [np.abs(np.diff(z, axis=1)), np.abs(np.diff(z, axis=2))]

    while True:
        y, yh = rng.uniform(size=shape), rng.uniform(size=shape)
        flat = np.sort(yh.reshape(-1))
        if np.min(np.diff(flat)) < gap:
            continue
        if all(np.min(np.abs(a - b)) >= gap for a, b in zip(grads(y), grads(yh))):
            return y, yh


def test_weights_defaults_and_validation():
    w = LossWeights()
    assert (w.lambda1, w.lambda2, w.alpha) == (1.0, 0.001, 1)
    with pytest.raises(ContractError):
        LossWeights(alpha=0)
    with pytest.raises(ContractError):
        LossWeights(alpha=1.5)
    with pytest.raises(ContractError):
        LossWeights(lambda1=-1.0)


def test_l2_examples():
    y = np.zeros((2, 2, 2, 1))
    assert l2_loss(y, y).item() == 0.0
    assert l2_loss(y, np.full_like(y, 0.5)).item() == 2.0


def test_l2_gradient_sign(rng):
    y = rng.uniform(size=(2, 3, 3, 1))
    yhat = T.Node(rng.uniform(size=(2, 3, 3, 1)), requires_grad=True)
    T.backward(l2_loss(y, yhat))
    np.testing.assert_allclose(yhat.grad, 2 * (yhat.value - y), atol=1e-14)


def test_shape_mismatch():
    with pytest.raises(ContractError):
        l2_loss(np.zeros((2, 2, 1)), np.zeros((2, 3, 1)))
    with pytest.raises(ContractError):
        gdl_loss(np.zeros((1, 2, 1)), np.zeros((1, 2, 1)))


def test_gdl_worked_example():
    assert gdl_loss(GDL_Y, GDL_YHAT, 1).item() == 2.0


def test_gdl_literal_sum_oracle(rng):
    y, yh = rng.uniform(size=(3, 5, 4, 1)), rng.uniform(size=(3, 5, 4, 1))
    for alpha in (1, 2, 3):
        total = 0.0
        for f in range(3):
            for i in range(5):
                for j in range(4):
                    if i >= 1:
                        total += abs(abs(y[f, i, j, 0] - y[f, i - 1, j, 0]) - abs(yh[f, i, j, 0] - yh[f, i - 1, j, 0])) ** alpha
                    if j >= 1:
                        total += abs(abs(y[f, i, j - 1, 0] - y[f, i, j, 0]) - abs(yh[f, i, j - 1, 0] - yh[f, i, j, 0])) ** alpha
        assert gdl_loss(y, yh, alpha).item() == pytest.approx(total, rel=1e-12)


def test_gdl_zero_on_equal_and_not_only_if():
    y = np.array([[0.0, 1.0], [0.0, 1.0]])[None, :, :, None]
    assert gdl_loss(y, y).item() == 0.0
    # flipped image: same absolute gradient field, different pixels
    assert gdl_loss(y, 1.0 - y).item() == 0.0
    assert l2_loss(y, 1.0 - y).item() > 0


def test_image_domain_composite():
    # the GDL example also has L2 = 1 + 1 = 2.0, so the composite is 2.0 + 2.0
    assert l2_loss(GDL_Y, GDL_YHAT).item() == 2.0
    assert gdl_loss(GDL_Y, GDL_YHAT).item() == 2.0
    assert image_domain_loss(GDL_Y, GDL_YHAT).item() == 4.0


def test_d_loss_examples():
    assert abs(adversarial_d_loss(0.5, 0.5).item() - 2 * math.log(2)) <= 1e-12
    assert adversarial_d_loss(1.0, 0.0).item() == pytest.approx(0.0, abs=1e-6)
    assert adversarial_d_loss(0.9, 0.1).item() == pytest.approx(-2 * math.log(0.9), abs=1e-12)
    assert adversarial_d_loss(0.9, 0.1).item() == pytest.approx(0.21072, abs=1e-5)


def test_d_loss_minimum_at_clamp():
    best = adversarial_d_loss(1.0 - 1e-7, 1e-7).item()
    for r, f in [(0.99, 0.01), (1.0, 0.0), (0.5, 0.2)]:
        assert adversarial_d_loss(r, f).item() >= best


def test_g_loss_examples():
    assert adversarial_g_loss(1.0).item() == pytest.approx(0.0, abs=1e-6)
    assert adversarial_g_loss(0.5).item() == pytest.approx(math.log(2), abs=1e-12)
    assert adversarial_g_loss(0.1).item() == pytest.approx(2.30259, abs=1e-5)


def test_batch_mean():
    assert adversarial_g_loss(np.array([[0.5], [0.1]])).item() == pytest.approx((math.log(2) - math.log(0.1)) / 2, abs=1e-12)


def test_total_loss_composition():
    # image loss 4.0 (composite above) and adversarial ln 2 under lambda1=1, lambda2=0.01
    terms = generator_loss_terms(GDL_Y, GDL_YHAT, 0.5, LossWeights(1.0, 0.01, 1))
    assert terms["img"].item() == 4.0
    assert abs(terms["total"].item() - (4.0 + 0.01 * math.log(2))) <= 1e-12
    assert abs(terms["total"].item() - 4.0069315) <= 1e-7


def test_total_lambda2_zero_is_image_loss(rng):
    y, yh = rng.uniform(size=(2, 4, 4, 1)), rng.uniform(size=(2, 4, 4, 1))
    w = LossWeights(2.5, 0.0, 1)
    assert generator_total_loss(y, yh, 0.3, w).item() == pytest.approx(2.5 * image_domain_loss(y, yh).item(), rel=1e-15)


def test_normalize_flag(rng):
    y, yh = rng.uniform(size=(2, 4, 4, 1)), rng.uniform(size=(2, 4, 4, 1))
    assert l2_loss(y, yh, normalize=True).item() == pytest.approx(np.mean((y - yh) ** 2), rel=1e-14)


@pytest.mark.parametrize("alpha", [1, 2])
def test_loss_gradients_fd(rng, alpha):
    y, yh = kink_free_pair(rng, (2, 3, 3, 1))
    w = LossWeights(1.0, 0.01, alpha)
    assert check_function(lambda p: l2_loss(y, p), [yh], rng) <= 1e-4
    assert check_function(lambda p: gdl_loss(y, p, alpha), [yh], rng) <= 1e-4
    assert check_function(lambda p, d: generator_total_loss(y, p, d, w), [yh, np.array([[0.3]])], rng) <= 1e-4


@given(st.integers(0, 2**31 - 1), st.integers(1, 3), st.floats(-2, 2))
def test_loss_properties(seed, alpha, c):
    r = np.random.default_rng(seed)
    y, yh = r.uniform(size=(2, 4, 3, 1)), r.uniform(size=(2, 4, 3, 1))
    g = gdl_loss(y, yh, alpha).item()
    assert g >= 0 and l2_loss(y, yh).item() > 0
    assert g == pytest.approx(gdl_loss(yh, y, alpha).item(), rel=1e-12, abs=1e-14)
    assert g == pytest.approx(gdl_loss(y + c, yh + c, alpha).item(), rel=1e-9, abs=1e-12)
    img = image_domain_loss(y, yh, alpha).item()
    assert img >= max(g, l2_loss(y, yh).item())


# -- metrics ------------------------------------------------------------------


def test_psnr_examples(rng):
    y = np.zeros((4, 4, 1))
    assert psnr(y, y + 0.1) == pytest.approx(20.0, abs=1e-12)
    assert psnr(y, y) == float("inf")
    a, b = rng.uniform(size=(8, 8, 1)), rng.uniform(size=(8, 8, 1))
    assert psnr(a + 0.3, b + 0.3) == pytest.approx(psnr(a, b), abs=1e-9)
    assert psnr(a, b, peak=255.0) == pytest.approx(10 * math.log10(255.0**2 / np.mean((a - b) ** 2)), abs=1e-12)


def naive_ssim(x, y, peak=1.0):
    g = gaussian_window(11, 1.5)
    w2 = np.outer(g, g)
    c1, c2 = (0.01 * peak) ** 2, (0.03 * peak) ** 2
    vals = []
    for i in range(x.shape[0] - 10):
        for j in range(x.shape[1] - 10):
            px, py = x[i : i + 11, j : j + 11], y[i : i + 11, j : j + 11]
            mx, my = np.sum(w2 * px), np.sum(w2 * py)
            vx = np.sum(w2 * (px - mx) ** 2)
            vy = np.sum(w2 * (py - my) ** 2)
            cxy = np.sum(w2 * (px - mx) * (py - my))
            vals.append((2 * mx * my + c1) * (2 * cxy + c2) / ((mx**2 + my**2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def test_ssim_matches_naive_oracle(rng):
    x, y = rng.uniform(size=(16, 16)), rng.uniform(size=(16, 16))
    assert abs(ssim(x, y) - naive_ssim(x, y)) <= 1e-8
    y2 = np.clip(x + 0.05 * rng.normal(size=x.shape), 0, 1)
    assert abs(ssim(x, y2) - naive_ssim(x, y2)) <= 1e-8


def test_ssim_block8_oracle(rng):
    x, y = rng.uniform(size=(16, 16)), rng.uniform(size=(16, 16))
    vals = []
    for bi in range(2):
        for bj in range(2):
            px, py = x[8 * bi : 8 * bi + 8, 8 * bj : 8 * bj + 8], y[8 * bi : 8 * bi + 8, 8 * bj : 8 * bj + 8]
            mx, my = px.mean(), py.mean()
            vx, vy, cxy = px.var(), py.var(), np.mean((px - mx) * (py - my))
            vals.append((2 * mx * my + 1e-4) * (2 * cxy + 9e-4) / ((mx**2 + my**2 + 1e-4) * (vx + vy + 9e-4)))
    assert abs(ssim(x, y, window="block8") - np.mean(vals)) <= 1e-12


def test_ssim_identity_and_constants(rng):
    x = rng.uniform(size=(12, 12, 1))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    c = np.full((12, 12), 0.5)
    assert ssim(c, c) == pytest.approx(1.0, abs=1e-12)


def test_ssim_small_frame():
    with pytest.raises(ContractError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))
    with pytest.raises(ContractError):
        ssim(np.zeros((12, 12)), np.zeros((12, 12)), window="box")


@given(st.integers(0, 2**31 - 1))
def test_ssim_symmetric_bounded(seed):
    r = np.random.default_rng(seed)
    x, y = r.uniform(size=(12, 13, 2)), r.uniform(size=(12, 13, 2))
    s = ssim(x, y)
    assert s == pytest.approx(ssim(y, x), abs=1e-14)
    assert -1.0 <= s <= 1.0
