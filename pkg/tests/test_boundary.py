import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import psc_reference
from uclsed import numkit as nk
from uclsed.boundary import (
    MarginPolicy,
    PrototypeBank,
    common_loss,
    error_rate_table,
    ucl_loss,
    update_centroids,
)
from uclsed.numkit import Tensor, grad_check


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


class TestUclLoss:
    def test_two_class_examples(self):
        z = np.array([[1.0, 0.0]])
        protos = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert float(ucl_loss(z, [0], protos).data) == pytest.approx(math.log(1 + math.exp(-1)), abs=1e-12)
        assert float(ucl_loss(z, [0], protos).data) == pytest.approx(0.3133, abs=1e-4)
        got = float(ucl_loss(z, [0], protos, margins=[0.5, 0.0]).data)
        assert got == pytest.approx(math.log(1 + math.exp(-0.5)), abs=1e-12)
        assert got == pytest.approx(0.4741, abs=1e-4)

    def test_single_class_is_zero(self):
        z = unit_rows(np.random.default_rng(0), 4, 3)
        assert float(ucl_loss(z, [0, 0, 0, 0], z[:1]).data) == 0.0

    def test_zero_uncertainty_equals_psc(self):
        rng = np.random.default_rng(1)
        z, protos = unit_rows(rng, 8, 5), unit_rows(rng, 4, 5)
        labels = rng.integers(0, 4, 8)
        m = MarginPolicy("uncertainty", beta=0.1).margins(4, np.zeros(4))
        assert float(ucl_loss(z, labels, protos, m).data) == float(ucl_loss(z, labels, protos).data)
        m = MarginPolicy("uncertainty", beta=0.0).margins(4, rng.uniform(size=4))
        assert float(ucl_loss(z, labels, protos, m).data) == float(ucl_loss(z, labels, protos).data)

    @pytest.mark.parametrize("tau", [1.0, 0.5, 0.1])
    def test_matches_softmax_form(self, tau):
        rng = np.random.default_rng(2)
        z, protos = unit_rows(rng, 10, 6), unit_rows(rng, 5, 6)
        labels = rng.integers(0, 5, 10)
        got = float(ucl_loss(z, labels, protos, tau=tau).data)
        assert abs(got - psc_reference(z, labels, protos, tau)) < 1e-9

    def test_nonnegative_and_monotone_in_uncertainty(self):
        rng = np.random.default_rng(3)
        z, protos = unit_rows(rng, 6, 4), unit_rows(rng, 3, 4)
        labels = np.array([0, 1, 2, 0, 1, 2])
        policy = MarginPolicy("uncertainty", beta=0.1)
        vals = []
        for u0 in np.linspace(0, 1, 21):
            u = np.array([u0, 0.3, 0.6])
            vals.append(float(ucl_loss(z, labels, protos, policy.margins(3, u)).data))
        assert min(vals) > 0
        assert np.all(np.diff(vals) > 0)

    def test_rejects_bad_input(self):
        protos = np.eye(2)
        with pytest.raises(ValueError, match="label"):
            ucl_loss(np.array([[1.0, 0.0]]), [2], protos)
        with pytest.raises(ValueError, match="normalized"):
            ucl_loss(np.array([[1.0, 1.0]]), [0], protos)

    def test_gradients_all_policies(self):
        rng = np.random.default_rng(4)
        raw = Tensor(rng.standard_normal((4, 5)), requires_grad=True)
        protos = Tensor(unit_rows(rng, 3, 5), requires_grad=True)
        labels = np.array([0, 1, 2, 1])
        u, err = rng.uniform(size=3), rng.uniform(size=3)
        for kind in ("none", "fixed", "error_rate", "uncertainty"):
            m = MarginPolicy(kind).margins(3, u, err)
            report = grad_check(lambda: ucl_loss(nk.normalize_rows(raw), labels, protos, m), [raw, protos])
            assert report.passed, (kind, report.summary())


class TestMarginPolicy:
    def test_kinds(self):
        u, err = np.array([0.2, 0.9]), np.array([0.5, 0.0])
        assert MarginPolicy("none").margins(2, u, err).tolist() == [0, 0]
        assert MarginPolicy("fixed", margin=0.3).margins(2).tolist() == [0.3, 0.3]
        np.testing.assert_allclose(MarginPolicy("error_rate", scale=0.2).margins(2, error_rates=err), [0.1, 0])
        np.testing.assert_allclose(MarginPolicy("uncertainty", beta=0.1).margins(2, u), [0.02, 0.09])

    def test_validation(self):
        with pytest.raises(ValueError):
            MarginPolicy("banana")
        with pytest.raises(ValueError):
            MarginPolicy("uncertainty", beta=-1)
        with pytest.raises(ValueError):
            MarginPolicy("uncertainty").margins(3)


class TestCentroids:
    def test_single_member(self):
        e = np.array([[0.6, 0.8], [1.0, 0.0]])
        out = update_centroids(e, [0, 1], [0, 1], 2)
        np.testing.assert_allclose(out, e)

    def test_orthogonal_pair(self):
        e = np.array([[1.0, 0.0], [0.0, 1.0]])
        out = update_centroids(e, [0, 0], [0, 1], 1)
        np.testing.assert_allclose(out[0] @ e.T, [math.sqrt(0.5)] * 2, atol=1e-12)
        assert out[0] @ e[0] == pytest.approx(0.7071, abs=1e-4)

    def test_antipodal_keeps_previous(self, caplog):
        e = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0]])
        prev = np.array([[0.0, -1.0], [1.0, 0.0]])
        with caplog.at_level("WARNING"):
            out = update_centroids(e, [0, 0, 1], [0, 1, 2], 2, previous=prev)
        np.testing.assert_array_equal(out[0], prev[0])
        np.testing.assert_array_equal(out[1], [0.0, 1.0])
        assert "zero mean" in caplog.text
        with pytest.raises(ValueError):
            update_centroids(e, [0, 0, 1], [0, 1, 2], 2)

    def test_empty_class(self):
        with pytest.raises(ValueError):
            update_centroids(np.eye(2), [0, 0], [0, 1], 2)

    def test_bank_refresh_deterministic(self):
        rng = np.random.default_rng(0)
        emb = {"a": unit_rows(rng, 12, 4)}
        labels = np.arange(12) % 3
        b1, b2 = PrototypeBank(["a"], 3, 4), PrototypeBank(["a"], 3, 4)
        b1.refresh(emb, labels, np.arange(12), 5)
        b2.refresh(emb, labels, np.arange(12), 5)
        assert b1["a"].data.tobytes() == b2["a"].data.tobytes()
        np.testing.assert_allclose(np.linalg.norm(b1["a"].data, axis=1), 1.0, atol=1e-12)
        assert b1.epoch == 5 and b1.parameters() == []

    def test_learned_bank_renormalizes(self):
        bank = PrototypeBank(["a", "b"], 3, 4, mode="learned")
        assert len(bank.parameters()) == 2
        bank["a"].data *= 3.0
        bank.renormalize()
        np.testing.assert_allclose(np.linalg.norm(bank["a"].data, axis=1), 1.0, atol=1e-12)
        with pytest.raises(RuntimeError):
            bank.refresh({}, [], [], 1)


class TestCommonLoss:
    def test_identical_views(self):
        h = unit_rows(np.random.default_rng(0), 5, 3)
        assert float(common_loss([h, h, h]).data) == 0.0

    def test_rotated_view_positive(self):
        rng = np.random.default_rng(1)
        h = unit_rows(rng, 6, 3)
        q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        # a rotation preserves the Gram matrix, so perturb the third view's geometry instead
        other = unit_rows(rng, 6, 3)
        assert float(common_loss([h, h @ q, other]).data) > 0
        assert float(common_loss([h, h, h @ q]).data) == pytest.approx(0.0, abs=1e-12)

    def test_hand_built_pair(self):
        # Sim_1 = I, Sim_2 has 0.5 in both off-diagonal entries
        h1 = np.array([[1.0, 0.0], [0.0, 1.0]])
        h2 = np.array([[1.0, 0.0], [0.5, math.sqrt(0.75)]])
        assert float(common_loss([h1, h2]).data) == pytest.approx(0.125, abs=1e-12)
        assert float(common_loss([h1, h2], "sum").data) == pytest.approx(0.5, abs=1e-12)
        # with three views, the duplicated view adds the pair term twice
        assert float(common_loss([h1, h1, h2]).data) == pytest.approx(0.25, abs=1e-12)

    def test_mismatched_batches(self):
        with pytest.raises(ValueError):
            common_loss([np.eye(2), np.eye(3)])

    def test_gradients(self):
        rng = np.random.default_rng(2)
        raws = [Tensor(rng.standard_normal((4, 3)), requires_grad=True) for _ in range(3)]
        report = grad_check(lambda: common_loss([nk.normalize_rows(r) for r in raws]), raws)
        assert report.passed, report.summary()


class TestErrorRates:
    def test_examples(self):
        labels = np.array([0, 0, 0, 0, 1, 1])
        assert error_rate_table(labels, labels, np.arange(6), 2).tolist() == [0, 0]
        preds = np.array([0, 0, 1, 0, 1, 1])
        assert error_rate_table(preds, labels, np.arange(6), 2).tolist() == [0.25, 0]
        assert error_rate_table(1 - labels, labels, np.arange(6), 2).tolist() == [1, 1]

    def test_empty_class(self):
        with pytest.raises(ValueError):
            error_rate_table([0], [0], [0], 2)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_ucl_nonnegative(c, n, seed):
    rng = np.random.default_rng(seed)
    z, protos = unit_rows(rng, n, 4), unit_rows(rng, c, 4)
    labels = rng.integers(0, c, n)
    m = MarginPolicy("uncertainty").margins(c, rng.uniform(size=c))
    assert float(ucl_loss(z, labels, protos, m).data) > 0
