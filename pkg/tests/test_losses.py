"""Loss and gate arithmetic against independently computed constants, plus
property tests of sharpening and gating."""

import math

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from pcmatch.encoding import ConfigurationError
from pcmatch.model import DualHeadOutputs
from pcmatch.training import (
    GateConfig,
    PseudoTarget,
    gate,
    gate_conditions,
    labeled_loss,
    sharpen,
    unlabeled_loss,
)


def outputs_from(semantic_logits=None, matching_logits=None):
    sl = None if semantic_logits is None else torch.tensor(semantic_logits)
    ml = None if matching_logits is None else torch.tensor(matching_logits)
    return DualHeadOutputs(
        semantic_logits=sl,
        semantic_probs=None if sl is None else torch.softmax(sl, dim=-1),
        matching_logits=ml,
        matching_probs=None if ml is None else torch.sigmoid(ml),
    )


class TestLabeledLoss:
    # Constants below were computed by hand from the closed forms:
    # CE(logits [1,0], label 0) = ln(1 + e^-1); CE(zeros, any) = ln 2;
    # BCE(logits [.5,-.5], label 0) = 2 ln(1 + e^-.5); BCE(zeros) = 2 ln 2.
    def test_two_row_hand_case(self):
        out = outputs_from([[1.0, 0.0], [0.0, 0.0]],
                           [[0.5, -0.5], [0.0, 0.0]])
        loss = labeled_loss(out, torch.tensor([0, 1]))
        assert loss.item() == pytest.approx(1.6704285987791359, rel=1e-6)

    def test_uniform_two_class(self):
        out = outputs_from([[0.0, 0.0]], [[0.0, 0.0]])
        loss = labeled_loss(out, torch.tensor([1]))
        assert loss.item() == pytest.approx(math.log(2) + 2 * math.log(2),
                                            rel=1e-6)

    def test_semantic_only(self):
        out = outputs_from([[1.0, 0.0]])
        loss = labeled_loss(out, torch.tensor([0]))
        assert loss.item() == pytest.approx(math.log(1 + math.exp(-1)),
                                            rel=1e-6)

    def test_matching_only(self):
        out = outputs_from(None, [[0.5, -0.5]])
        loss = labeled_loss(out, torch.tensor([0]))
        assert loss.item() == pytest.approx(2 * math.log(1 + math.exp(-0.5)),
                                            rel=1e-6)

    def test_perfect_prediction_near_zero(self):
        out = outputs_from([[30.0, -30.0]], [[30.0, -30.0]])
        loss = labeled_loss(out, torch.tensor([0]))
        assert loss.item() < 1e-4


class TestSharpen:
    def test_hand_case(self):
        # softmax([4,2,0]/0.5) = softmax([8,4,0])
        got = sharpen(torch.tensor([4.0, 2.0, 0.0]), 0.5)
        expect = torch.tensor([0.9816903928255046, 0.017980286735531543,
                               0.00032932043896389293])
        assert torch.allclose(got, expect, rtol=1e-5)

    def test_unit_temperature_is_softmax(self):
        logits = torch.tensor([1.0, -2.0, 0.3])
        assert torch.allclose(sharpen(logits, 1.0),
                              torch.softmax(logits, dim=-1))

    def test_nonpositive_temperature_rejected(self):
        with pytest.raises(ConfigurationError):
            sharpen(torch.tensor([1.0, 0.0]), 0.0)

    @given(st.lists(st.floats(-10, 10), min_size=2, max_size=6),
           st.floats(0.05, 0.99))
    @settings(max_examples=60, deadline=None)
    def test_lowers_entropy_and_keeps_argmax(self, vals, temperature):
        logits = torch.tensor(vals, dtype=torch.float64)
        base = torch.softmax(logits, dim=-1)
        sharp = sharpen(logits, temperature)
        assert sharp.sum().item() == pytest.approx(1.0, abs=1e-9)
        assert int(sharp.argmax()) == int(base.argmax())
        ent = lambda p: -(p.clamp_min(1e-12) * p.clamp_min(1e-12).log()).sum()
        assert ent(sharp).item() <= ent(base).item() + 1e-9


class TestGate:
    CFG = GateConfig(confid1=0.95, confid2=0.7, temperature=0.5)

    def test_all_three_conditions(self):
        # row0: confident, agreeing -> passes
        # row1: semantic confidence below threshold
        # row2: heads disagree on argmax
        # row3: matching confidence below threshold
        out = outputs_from(
            [[8.0, 0.0, 0.0], [1.0, 0.0, 0.0], [8.0, 0.0, 0.0], [8.0, 0.0, 0.0]],
            [[4.0, -4.0, -4.0], [4.0, -4.0, -4.0], [-4.0, 4.0, -4.0],
             [0.5, -4.0, -4.0]],
        )
        conds = gate_conditions(out, self.CFG)
        assert conds["passed"].tolist() == [True, False, False, False]
        assert conds["cond1"].tolist() == [True, False, True, True]
        assert conds["cond2"].tolist() == [True, True, True, False]
        assert conds["cond3"].tolist() == [True, True, False, True]

    def test_pseudo_target_contents(self):
        out = outputs_from([[8.0, 0.0, 0.0]], [[4.0, -4.0, -4.0]])
        (target,) = gate(out, self.CFG)
        assert target.passed and target.label == 0
        assert torch.allclose(
            target.sharpened,
            sharpen(torch.tensor([8.0, 0.0, 0.0]), 0.5),
        )
        assert not target.sharpened.requires_grad

    def test_label_from_matching_head_on_tie_breaks(self):
        # both heads confident on class 1
        out = outputs_from([[0.0, 8.0]], [[-4.0, 4.0]])
        (target,) = gate(out, GateConfig(0.95, 0.7, 0.5))
        assert target.label == 1

    def test_absent_matching_head_gates_on_semantic_only(self):
        out = outputs_from([[8.0, 0.0], [1.0, 0.0]])
        targets = gate(out, self.CFG)
        assert [t.passed for t in targets] == [True, False]
        assert targets[0].label == 0

    def test_absent_semantic_head_gates_on_matching_only(self):
        out = outputs_from(None, [[4.0, -4.0], [0.5, -4.0]])
        targets = gate(out, self.CFG)
        assert [t.passed for t in targets] == [True, False]
        assert targets[0].sharpened is None

    @given(st.lists(st.floats(-8, 8), min_size=3, max_size=3),
           st.floats(0.5, 0.99), st.floats(0.5, 0.99))
    @settings(max_examples=60, deadline=None)
    def test_raising_thresholds_never_passes_more(self, vals, lo, hi):
        lo, hi = min(lo, hi), max(lo, hi)
        out = outputs_from([vals], [vals])
        loose = gate_conditions(out, GateConfig(lo, lo, 0.5))["passed"]
        tight = gate_conditions(out, GateConfig(hi, hi, 0.5))["passed"]
        assert bool(loose[0]) or not bool(tight[0])


class TestUnlabeledLoss:
    def _target(self, q, label):
        return PseudoTarget(passed=True, sharpened=torch.tensor(q), label=label)

    def _aug(self, p, pm):
        return DualHeadOutputs(
            semantic_logits=None,
            semantic_probs=torch.tensor(p),
            matching_logits=None,
            matching_probs=torch.tensor(pm),
        )

    def test_hand_case_full_batch_denominator(self):
        # KL([.7,.2,.1] || [.5,.3,.2]) + BCE([.8,.3,.1], label 0), one of the
        # two rows gated, so the sum is divided by 2
        aug = self._aug([[0.5, 0.3, 0.2], [0.9, 0.05, 0.05]],
                        [[0.8, 0.3, 0.1], [0.9, 0.1, 0.1]])
        targets = [self._target([0.7, 0.2, 0.1], 0), PseudoTarget(passed=False)]
        loss = unlabeled_loss(aug, targets)
        assert loss.item() == pytest.approx(0.38515091843399507, rel=1e-6)

    def test_reverse_direction(self):
        aug = self._aug([[0.5, 0.3, 0.2]], [[0.8, 0.3, 0.1]])
        targets = [self._target([0.7, 0.2, 0.1], 0)]
        loss = unlabeled_loss(aug, targets, kl_direction="pred_to_target")
        # p·log(p/q) summed, + same BCE, over 1 row
        assert loss.item() == pytest.approx(2 * 0.3886059305723002, rel=1e-6)

    def test_unknown_direction_rejected(self):
        aug = self._aug([[0.5, 0.5]], [[0.5, 0.5]])
        with pytest.raises(ConfigurationError):
            unlabeled_loss(aug, [self._target([0.5, 0.5], 0)], "sideways")

    def test_no_gated_rows_zero_with_graph(self):
        probs = torch.softmax(torch.randn(2, 3, requires_grad=True), dim=-1)
        aug = DualHeadOutputs(None, probs, None, None)
        loss = unlabeled_loss(aug, [PseudoTarget(False), PseudoTarget(False)])
        assert loss.item() == 0.0
        assert loss.requires_grad

    def test_matching_target_exact_match_near_zero(self):
        aug = self._aug([[1.0 - 2e-7, 1e-7, 1e-7]], [[1.0, 0.0, 0.0]])
        targets = [self._target([1.0 - 2e-7, 1e-7, 1e-7], 0)]
        assert unlabeled_loss(aug, targets).item() == pytest.approx(0.0, abs=1e-4)

    @given(st.integers(1, 6), st.integers(0, 6))
    @settings(max_examples=40, deadline=None)
    def test_denominator_counts_failed_rows(self, n_pass, n_fail):
        torch.manual_seed(n_pass * 7 + n_fail)
        k = 3
        probs = torch.softmax(torch.randn(n_pass + n_fail, k), dim=-1)
        pm = torch.sigmoid(torch.randn(n_pass + n_fail, k))
        aug = DualHeadOutputs(None, probs, None, pm)
        q = torch.softmax(torch.randn(k), dim=-1)
        targets = [self._target(q.tolist(), 0) for _ in range(n_pass)]
        targets += [PseudoTarget(passed=False)] * n_fail
        whole = unlabeled_loss(aug, targets)
        gated_only = unlabeled_loss(aug, targets[:n_pass])
        expect = gated_only.item() * n_pass / (n_pass + n_fail)
        assert whole.item() == pytest.approx(expect, rel=1e-5)
