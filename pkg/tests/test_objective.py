"""Gated fusion and loss functions against scalar oracles."""

import json
import logging
from pathlib import Path

import numpy as np
import pytest

from melink.errors import ConfigError
from melink.objective import (BatchState, SampleTerms, fuse, msc_loss,
                              total_loss, triplet_loss)
from melink.tensor import Tensor, backward

from oracles import ref_msc, ref_triplet

FIXTURES = Path(__file__).parent / "fixtures"


def unit2(c: float) -> np.ndarray:
    """2-d unit row whose cosine with [1, 0] is exactly-ish c."""
    return np.array([[c, np.sqrt(1.0 - c * c)]])


class TestFuse:
    def test_gate_closed(self):
        rng = np.random.default_rng(0)
        d = 4
        m, m_t, m_v, m_s = (Tensor(rng.normal(size=(1, d))) for _ in range(4))
        w = Tensor(rng.normal(size=(d, d)))
        b = Tensor(rng.normal(size=(1, d)))
        out = fuse(m, m_t, m_v, m_s, w, b, alpha=Tensor(np.asarray(0.0)))
        g_m = m.data + m_t.data + m_v.data
        np.testing.assert_array_equal(out.data, g_m @ w.data + b.data)

    def test_gate_open(self):
        rng = np.random.default_rng(1)
        d = 4
        m, m_t, m_v, m_s = (Tensor(rng.normal(size=(1, d))) for _ in range(4))
        w = Tensor(rng.normal(size=(d, d)))
        b = Tensor(rng.normal(size=(1, d)))
        out = fuse(m, m_t, m_v, m_s, w, b, alpha=Tensor(np.asarray(1.0)))
        np.testing.assert_allclose(out.data, m_s.data @ w.data + b.data,
                                   atol=1e-12)

    def test_golden_affine_arithmetic(self):
        rng = np.random.default_rng(2)
        d, alpha = 4, 0.3
        m, m_t, m_v, m_s = (rng.normal(size=(1, d)) for _ in range(4))
        w = rng.normal(size=(d, d))
        b = rng.normal(size=(1, d))
        out = fuse(Tensor(m), Tensor(m_t), Tensor(m_v), Tensor(m_s),
                   Tensor(w), Tensor(b), alpha=Tensor(np.asarray(alpha)))
        g_m = m + m_t + m_v
        expected = (g_m + alpha * (m_s - g_m)) @ w + b
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_gate_closed_kills_attribute_grads(self):
        rng = np.random.default_rng(3)
        d = 4
        m_s = Tensor(rng.normal(size=(1, d)), requires_grad=True)
        m = Tensor(rng.normal(size=(1, d)))
        w = Tensor(rng.normal(size=(d, d)))
        b = Tensor(np.zeros((1, d)))
        out = fuse(m, None, None, m_s, w, b, alpha=Tensor(np.asarray(0.0)))
        from melink.tensor import sum_all
        backward(sum_all(out), leaves=[m_s])
        assert np.all(m_s.grad == 0.0)


class TestTripletLoss:
    def test_margin_satisfied(self):
        g = Tensor(np.array([[1.0, 0.0]]))
        loss = triplet_loss(g, unit2(0.9), [unit2(0.2)], margin=0.5)
        assert loss.item() == 0.0

    def test_tie_gives_margin(self):
        g = Tensor(np.array([[1.0, 0.0]]))
        v = unit2(0.6)
        loss = triplet_loss(g, v, [v.copy()], margin=0.5)
        assert loss.item() == 0.5

    def test_three_negative_mean_matches_oracle(self):
        rng = np.random.default_rng(4)
        g_arr = rng.normal(size=(1, 6))
        pos = rng.normal(size=(1, 6))
        negs = [rng.normal(size=(1, 6)) for _ in range(3)]
        loss = triplet_loss(Tensor(g_arr), pos, np.vstack(negs), margin=0.5)
        assert loss.item() == pytest.approx(ref_triplet(g_arr, pos, negs, 0.5),
                                            abs=1e-9)

    def test_nonnegative_and_zero_iff_all_satisfied(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            g_arr = rng.normal(size=(1, 4))
            pos = rng.normal(size=(1, 4))
            negs = rng.normal(size=(3, 4))
            loss = triplet_loss(Tensor(g_arr), pos, negs, margin=0.3)
            assert loss.item() >= 0.0
            oracle = ref_triplet(g_arr, pos, [n.reshape(1, -1) for n in negs], 0.3)
            assert (loss.item() == 0.0) == (oracle == 0.0)

    def test_empty_negatives_warns(self, caplog):
        with caplog.at_level(logging.WARNING, logger="melink.objective"):
            loss = triplet_loss(Tensor(np.ones((1, 3))), np.ones((1, 3)),
                                np.zeros((0, 3)), margin=0.5)
        assert loss.item() == 0.0
        assert any("no negatives" in r.message for r in caplog.records)

    def test_inverted_variant_flips_sign(self):
        g = Tensor(np.array([[1.0, 0.0]]))
        # positive close, negative far: normal form 0, inverted form is
        # max(0.9 - 0.2 + 0.5, 0) = 1.2
        loss = triplet_loss(g, unit2(0.9), [unit2(0.2)], margin=0.5, invert=True)
        assert loss.item() == pytest.approx(1.2, abs=1e-9)


class TestMscLoss:
    def test_single_pair_is_zero(self):
        a = Tensor(np.ones((1, 4)))
        assert msc_loss(a, a, 0.25).item() == 0.0

    def test_matches_golden_scalar_value(self):
        g = json.loads((FIXTURES / "golden_msc.json").read_text())
        loss = msc_loss(Tensor(np.array(g["a"])), Tensor(np.array(g["b"])),
                        g["tau"])
        assert loss.item() == pytest.approx(g["loss"], abs=1e-10)

    def test_matches_scalar_oracle_random(self):
        rng = np.random.default_rng(6)
        a = rng.normal(size=(5, 7))
        b = rng.normal(size=(5, 7))
        loss = msc_loss(Tensor(a), Tensor(b), 0.25)
        assert loss.item() == pytest.approx(ref_msc(a, b, 0.25), abs=1e-9)

    def test_row_rescaling_invariance(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(4, 6))
        b = rng.normal(size=(4, 6))
        base = msc_loss(Tensor(a.copy()), Tensor(b.copy()), 0.25).item()
        scales_a = rng.uniform(0.1, 10.0, size=(4, 1))
        scales_b = rng.uniform(0.1, 10.0, size=(4, 1))
        scaled = msc_loss(Tensor(a * scales_a), Tensor(b * scales_b), 0.25).item()
        assert scaled == pytest.approx(base, abs=1e-6)

    def test_loss_decreases_as_pair_cosine_rises(self):
        # antipodal construction keeps the batch center at zero, so the
        # shift is a no-op and the pair cosine is directly controlled
        u = np.array([1.0, 0.0])

        def batch(theta):
            v = np.array([np.cos(theta), np.sin(theta)])
            a = np.vstack([u, -u])
            b = np.vstack([v, -v])
            return msc_loss(Tensor(a), Tensor(b), 0.25).item()

        losses = [batch(t) for t in [1.2, 0.8, 0.4, 0.1]]
        assert all(x > y for x, y in zip(losses, losses[1:]))

    def test_identical_rows_stay_finite(self):
        a = Tensor(np.ones((3, 4)))
        b = Tensor(np.ones((3, 4)))
        assert np.isfinite(msc_loss(a, b, 0.25).item())

    def test_bad_temperature(self):
        with pytest.raises(ConfigError):
            msc_loss(Tensor(np.ones((2, 2))), Tensor(np.ones((2, 2))), 0.0)


class TestTotalLoss:
    def _state(self, rng, n=3, with_alignment=True):
        d = 6
        state = BatchState()
        for i in range(n):
            state.samples.append(SampleTerms(
                sample_id=f"s{i}",
                g=Tensor(rng.normal(size=(1, d))),
                positive=rng.normal(size=(1, d)),
                negatives=rng.normal(size=(2, d)),
                m_t=Tensor(rng.normal(size=(1, d))),
                m_v=Tensor(rng.normal(size=(1, d))),
            ))
        if with_alignment:
            state.face_rows = Tensor(rng.normal(size=(4, d)))
            state.object_rows = Tensor(rng.normal(size=(4, d)))
        return state

    def test_beta_zero_is_triplet_only(self):
        rng = np.random.default_rng(8)
        state = self._state(rng)
        loss, parts = total_loss(state, margin=0.5, beta=0.0, tau=0.25)
        assert loss.item() == parts["triplet"]

    def test_single_sample_no_objects(self):
        rng = np.random.default_rng(9)
        state = self._state(rng, n=1, with_alignment=False)
        loss, parts = total_loss(state, margin=0.5, beta=0.5, tau=0.25)
        assert parts["alignment"] == 0.0
        assert loss.item() == pytest.approx(parts["triplet"], abs=1e-12)

    def test_composes_the_two_oracles(self):
        rng = np.random.default_rng(10)
        state = self._state(rng)
        beta, tau, margin = 0.5, 0.25, 0.5
        loss, _ = total_loss(state, margin=margin, beta=beta, tau=tau)

        trip = np.mean([
            ref_triplet(s.g.data, s.positive,
                        [n.reshape(1, -1) for n in s.negatives], margin)
            for s in state.samples])
        align = ref_msc(state.face_rows.data, state.object_rows.data, tau)
        align += ref_msc(np.vstack([s.m_t.data for s in state.samples]),
                         np.vstack([s.m_v.data for s in state.samples]), tau)
        assert loss.item() == pytest.approx(trip + beta * align, abs=1e-9)
