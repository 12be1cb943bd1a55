import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from wavetok.anchors import (
    SaliencyHead,
    budget,
    nms,
    nms_mask,
    nms_window,
    saliency,
    select_anchors,
    select_anchors_batch,
    top_k,
)
from wavetok.autodiff import Tensor, grad_check
from wavetok.autodiff import functional as F


def brute_nms(p, w):
    """Candidate rule written out literally (0-based, position 0 excluded)."""
    n = len(p)
    out = []
    for t in range(1, n):
        ok = True
        for u in range(max(1, t - w), min(n - 1, t + w) + 1):
            if not (p[t] > p[u] or (p[t] == p[u] and t <= u)):
                ok = False
                break
        if ok:
            out.append(t)
    return out


def brute_select(p, tau):
    n = len(p)
    b = math.ceil(tau * n)
    cands = brute_nms(p, n // (2 * b))
    if len(cands) > b:
        cands = sorted(sorted(cands, key=lambda t: (-p[t], t))[:b])
    return cands


# quantised values make ties common so the tie rules are exercised
score_seqs = st.integers(2, 64).flatmap(
    lambda n: st.one_of(
        arrays(np.float64, n, elements=st.floats(0, 2)),
        arrays(np.float64, n, elements=st.integers(0, 4).map(lambda v: v / 2)),
    )
)
taus = st.floats(0.01, 0.99)


@settings(max_examples=1000)
@given(score_seqs, taus)
def test_anchor_invariants(scores, tau):
    scores = scores.copy()
    scores[0] = 0.0
    n = len(scores)
    res = select_anchors(scores, tau)
    a = res.anchors
    assert 1 <= len(a) <= math.ceil(tau * n)
    assert np.all(np.diff(a) > 0) and a[0] >= 1
    if res.window >= 1:
        assert np.all(np.diff(a) > res.window)
    assert list(nms(scores, res.window)) == brute_nms(scores, res.window)
    assert list(a) == brute_select(scores, tau)


@settings(max_examples=200)
@given(score_seqs, st.integers(0, 70))
def test_nms_matches_oracle_any_window(scores, w):
    assert list(nms(scores, w)) == brute_nms(scores, w)


def test_nms_example():
    p = np.array([0.0, 0.1, 0.9, 0.2, 0.8, 0.3])
    assert list(nms(p, 1)) == [2, 4]


def test_nms_flat_sequence_keeps_first_position():
    # the window-argmax rule with smaller-index ties keeps only the leading
    # position of a flat run; separation still holds trivially
    p = np.ones(12)
    assert list(nms(p, 2)) == brute_nms(p, 2) == [1]
    assert len(brute_nms(p, 0)) == 11


def test_nms_single_peak_large_window():
    p = np.array([0.0, 0.2, 0.5, 1.0, 0.3, 0.1])
    assert list(nms(p, 10)) == [3]


def test_nms_zero_window_keeps_all():
    p = np.random.default_rng(0).uniform(size=20)
    assert list(nms(p, 0)) == list(range(1, 20))


def test_budget_and_window():
    assert budget(0.1, 1000) == 100 and nms_window(0.1, 1000) == 5
    assert budget(0.125, 512) == 64 and nms_window(0.125, 512) == 4
    for tau in (0.0, 1.0, -0.5):
        with pytest.raises(ValueError):
            budget(tau, 10)


def test_seven_isolated_peaks():
    p = np.zeros(1000)
    peaks = [3, 100, 250, 400, 555, 700, 901]
    p[peaks] = np.linspace(0.5, 1.5, 7)
    res = select_anchors(p, 0.1)
    assert res.budget == 100 and len(res) == 7
    assert list(res.anchors) == peaks == brute_select(p, 0.1)


def test_zero_window_caps_at_budget():
    p = np.random.default_rng(1).uniform(size=10)
    p[0] = 0
    res = select_anchors(p, 0.9)
    assert res.window == 0 and len(res) == min(9, 9)
    res = select_anchors(p, 0.45)
    assert res.window == 1
    short = np.array([0.0, 0.4, 0.3])
    assert len(select_anchors(short, 0.9)) == 2


def test_top_k_ties_to_smaller_index():
    p = np.array([0.0, 1.0, 1.0, 2.0, 1.0])
    assert list(top_k(p, np.array([1, 2, 3, 4]), 2)) == [1, 3]


def test_batch_matches_rowwise(rng):
    s = rng.uniform(size=(6, 40))
    s[:, 0] = 0
    for row, res in zip(s, select_anchors_batch(s, 0.2)):
        np.testing.assert_array_equal(res.anchors, select_anchors(row, 0.2).anchors)
    np.testing.assert_array_equal(nms_mask(s, 3)[2], np.isin(np.arange(40), nms(s[2], 3)))


def test_orthogonal_projection_gives_unit_saliency():
    head = SaliencyHead(8, np.random.default_rng(0))
    kw = np.zeros((8, 2))
    qw = np.zeros((8, 2))
    kw[0, 0] = 1.0  # k_t = (E_t[0], 0)
    qw[1, 1] = 1.0  # q_t = (0, E_t[1])
    head.key.weight.data, head.query.weight.data = kw, qw
    e = np.zeros((1, 1, 3, 8))
    e[0, 0, 0, 0] = 1.0
    e[0, 0, 1, 1] = 1.0
    e[0, 0, 2, 1] = 1.0
    p = saliency(Tensor(e), head).data[0]
    assert p[0] == 0.0
    assert p[1] == pytest.approx(1.0, abs=1e-12)


def test_identical_steps_zero_saliency(rng):
    head = SaliencyHead(8, rng)
    head.query.weight.data = head.key.weight.data.copy()
    e = np.broadcast_to(rng.normal(size=8), (1, 2, 10, 8)).copy()
    # the cosine stabiliser leaves a residual of about COS_EPS / |F e|^2
    np.testing.assert_allclose(saliency(Tensor(e), head).data, 0, atol=1e-9)


def test_saliency_range_modes_and_errors(rng):
    head = SaliencyHead(8, rng)
    e = Tensor(rng.normal(size=(2, 3, 20, 8)))
    shared = saliency(e, head).data
    per = saliency(e, head, "per_channel").data
    assert shared.shape == (2, 20) and per.shape == (2, 3, 20)
    np.testing.assert_allclose(shared, per.mean(axis=1), atol=1e-14)
    assert np.all(shared[:, 1:] >= -1e-12) and np.all(shared <= 2 + 1e-12)
    with pytest.raises(ValueError):
        saliency(Tensor(np.zeros((1, 1, 1, 8))), head)
    with pytest.raises(ValueError):
        saliency(e, head, "mixed")
    with pytest.raises(ValueError):
        SaliencyHead(3, rng)


@settings(max_examples=1000)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3), st.integers(2, 64), taus)
def test_scale_invariance(seed, c, length, tau):
    r = np.random.default_rng(seed)
    head = SaliencyHead(8, r)
    e = r.normal(size=(1, 1, length, 8))
    base = saliency(Tensor(e), head).data[0]
    scaled = saliency(Tensor(c * e), head).data[0]
    # values agree up to the cosine stabiliser, whose relative weight grows as 1/c^2
    w = np.concatenate([head.key.weight.data, head.query.weight.data], axis=1)
    proj, k = e[0, 0] @ w, head.key.weight.shape[1]
    norms = np.linalg.norm(proj[:-1, :k], axis=1) * np.linalg.norm(proj[1:, k:], axis=1)
    slack = F.COS_EPS / (c * c * norms.min()) + F.COS_EPS / norms.min()
    np.testing.assert_allclose(scaled, base, atol=1e-12 + slack)
    np.testing.assert_array_equal(select_anchors(scaled, tau).anchors, select_anchors(base, tau).anchors)


def test_saliency_gradient(rng):
    head = SaliencyHead(8, rng)
    e = rng.normal(size=(1, 2, 6, 8))
    w = rng.normal(size=(1, 6))
    assert grad_check(lambda t: F.sum(saliency(t, head) * w), [e]) < 1e-4


def test_non_finite_saliency_rejected():
    from wavetok.anchors import NonFiniteSaliencyError

    p = np.array([0.0, 0.3, np.nan, 0.2])
    with pytest.raises(NonFiniteSaliencyError):
        select_anchors(p, 0.5)
    with pytest.raises(NonFiniteSaliencyError):
        select_anchors_batch(p[None], 0.5)
