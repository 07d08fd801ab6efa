"""Loss oracles and dataset emission.

The gradcheck is the heart of this file: analytic gradients for the
margin-annotated preference loss are compared against central finite
differences on randomized batches, element by element.
"""

import json
import math
import types

import numpy as np
import pytest

from sqldecomp.datagen import (
    ContrastivePair,
    PreferenceBatch,
    SchemaViolation,
    SftBatch,
    Trajectory,
    compute_margin,
    dpo_loss,
    emit_datasets,
    mdpo_loss,
    sft_loss,
)

ARRAYS = ("policy_w", "policy_l", "ref_w", "ref_l")


def random_batch(rng, n_pairs=5):
    return PreferenceBatch(
        policy_w=rng.normal(0, 2, n_pairs),
        policy_l=rng.normal(0, 2, n_pairs),
        ref_w=rng.normal(0, 2, n_pairs),
        ref_l=rng.normal(0, 2, n_pairs),
        margins=rng.uniform(-1, 1, n_pairs),
        beta=0.2,
    )


class TestLossValues:
    def test_zero_gap_zero_margin_gives_ln2(self):
        batch = PreferenceBatch(
            policy_w=[1.0, -3.0],
            policy_l=[1.0, -3.0],
            ref_w=[1.0, -3.0],
            ref_l=[1.0, -3.0],
            margins=[0.0, 0.0],
        )
        loss, _ = mdpo_loss(batch)
        assert abs(loss - math.log(2)) < 1e-12

    def test_margin_exactly_absorbed_gives_ln2(self):
        # beta(pw - rw) - beta(pl - rl) equals the margin on every pair,
        # so z = 0 everywhere and each pair contributes exactly ln 2.
        beta = 0.2
        policy_w = np.array([0.7, -1.2, 3.0])
        ref_w = np.array([-0.3, -2.2, 1.0])
        policy_l = np.array([0.1, 0.4, -0.5])
        ref_l = np.array([0.6, 0.9, -1.5])
        margins = beta * (policy_w - ref_w) - beta * (policy_l - ref_l)
        batch = PreferenceBatch(policy_w, policy_l, ref_w, ref_l, margins, beta=beta)
        loss, _ = mdpo_loss(batch)
        assert abs(loss - math.log(2)) < 1e-12

    def test_dpo_is_mdpo_with_margins_cleared_bitwise(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            batch = random_batch(rng)
            zeroed = PreferenceBatch(
                batch.policy_w,
                batch.policy_l,
                batch.ref_w,
                batch.ref_l,
                np.zeros_like(batch.margins),
                beta=batch.beta,
            )
            dpo_value, dpo_grads = dpo_loss(batch)
            mdpo_value, mdpo_grads = mdpo_loss(zeroed)
            assert dpo_value == mdpo_value  # bitwise, no tolerance
            for name in ARRAYS:
                assert np.array_equal(dpo_grads[name], mdpo_grads[name])

    def test_loss_is_increasing_in_the_margin(self):
        rng = np.random.default_rng(11)
        base = random_batch(rng)
        bumped = PreferenceBatch(
            base.policy_w,
            base.policy_l,
            base.ref_w,
            base.ref_l,
            base.margins + 0.25,
            beta=base.beta,
        )
        assert mdpo_loss(bumped)[0] > mdpo_loss(base)[0]

    def test_loss_shrinks_as_the_winner_gains(self):
        rng = np.random.default_rng(12)
        base = random_batch(rng)
        better = PreferenceBatch(
            base.policy_w + 1.0,
            base.policy_l,
            base.ref_w,
            base.ref_l,
            base.margins,
            beta=base.beta,
        )
        assert mdpo_loss(better)[0] < mdpo_loss(base)[0]


class TestGradcheck:
    @staticmethod
    def numeric_grad(batch, name, index, h=1e-5):
        def loss_with(value):
            arrays = {key: getattr(batch, key).copy() for key in ARRAYS}
            arrays[name][index] = value
            shifted = PreferenceBatch(margins=batch.margins, beta=batch.beta, **arrays)
            return mdpo_loss(shifted)[0]

        x = getattr(batch, name)[index]
        return (loss_with(x + h) - loss_with(x - h)) / (2 * h)

    def test_analytic_gradients_match_central_differences(self):
        rng = np.random.default_rng(29)
        for _ in range(100):
            batch = random_batch(rng, n_pairs=4)
            _, grads = mdpo_loss(batch)
            for name in ARRAYS:
                for index in range(4):
                    analytic = float(grads[name][index])
                    numeric = self.numeric_grad(batch, name, index)
                    scale = max(abs(analytic), abs(numeric), 1e-8)
                    assert abs(analytic - numeric) / scale < 1e-6, (name, index)


class TestSftLoss:
    def test_two_half_probability_tokens(self):
        # One example, two tokens at probability 0.5 each.
        batch = SftBatch(token_logprobs=[np.log([0.5, 0.5])])
        assert sft_loss(batch) == pytest.approx(2 * math.log(2), abs=1e-12)

    def test_mean_over_examples(self):
        batch = SftBatch(token_logprobs=[np.log([0.5]), np.log([0.25])])
        want = -(math.log(0.5) + math.log(0.25)) / 2
        assert sft_loss(batch) == pytest.approx(want, abs=1e-12)

    def test_perfect_tokens_cost_nothing(self):
        assert sft_loss(SftBatch(token_logprobs=[np.zeros(5)])) == 0.0


class TestValidation:
    def test_preference_batch_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            PreferenceBatch([1.0], [1.0, 2.0], [0.0], [0.0], [0.0])
        with pytest.raises(ValueError):
            PreferenceBatch([], [], [], [], [])
        with pytest.raises(ValueError):
            PreferenceBatch([np.nan], [0.0], [0.0], [0.0], [0.0])
        with pytest.raises(ValueError):
            PreferenceBatch([0.0], [0.0], [0.0], [0.0], [0.0], beta=0.0)

    def test_sft_batch_rejects_bad_examples(self):
        with pytest.raises(ValueError):
            SftBatch(token_logprobs=[])
        with pytest.raises(ValueError):
            SftBatch(token_logprobs=[np.array([])])
        with pytest.raises(ValueError):
            SftBatch(token_logprobs=[np.array([np.inf])])

    def test_preference_payload_defaults_margins_to_zero(self):
        batch = PreferenceBatch.from_payload(
            {
                "pairs": [
                    {"policy_winner": 1.0, "policy_loser": 0.5, "ref_winner": 0.9, "ref_loser": 0.6}
                ]
            }
        )
        assert batch.margins.tolist() == [0.0]
        assert batch.beta == 0.2


def outcome_with(trajectories, pairs):
    return types.SimpleNamespace(trajectories=trajectories, collected_pairs=pairs)


def sample_trajectory():
    return Trajectory(
        task_id="retail_001",
        question="How many stores are there?",
        schema_id="retail",
        knowledge="",
        steps=(("find the table", "SELECT id FROM stores"), ("count", "SELECT COUNT(*) FROM stores")),
        final_sql="SELECT COUNT(*) FROM stores",
    )


def sample_pair(margin=0.25, winner_reward=0.75, loser_reward=0.5):
    return ContrastivePair(
        task_id="retail_001",
        question="How many stores are there?",
        schema_id="retail",
        knowledge="",
        prefix=(("find the table", "SELECT id FROM stores"),),
        winner=("count", "SELECT COUNT(*) FROM stores", winner_reward),
        loser=("wander", "SELECT name FROM stores", loser_reward),
        margin=margin,
    )


class TestEmission:
    def test_margin_helper_is_antisymmetric(self):
        assert compute_margin(0.75, 0.5) == 0.25
        assert compute_margin(0.5, 0.75) == -0.25

    def test_emitted_files_and_manifest_agree(self, tmp_path):
        import hashlib

        outcomes = [outcome_with([sample_trajectory()], [sample_pair()])]
        manifest = emit_datasets(outcomes, tmp_path, config_echo={"seed": 0})
        assert manifest["counts"] == {"sft": 1, "pairs": 1}
        for name in ("sft.jsonl", "pairs.jsonl"):
            digest = hashlib.sha256((tmp_path / name).read_bytes()).hexdigest()
            assert manifest["sha256"][name] == digest
        record = json.loads((tmp_path / "pairs.jsonl").read_text().strip())
        assert record["margin"] == 0.25
        saved = json.loads((tmp_path / "manifest.json").read_text())
        assert saved["config"] == {"seed": 0}

    def test_emission_is_deterministic(self, tmp_path):
        outcomes = [outcome_with([sample_trajectory()], [sample_pair()])]
        emit_datasets(outcomes, tmp_path / "a")
        emit_datasets(outcomes, tmp_path / "b")
        for name in ("sft.jsonl", "pairs.jsonl", "manifest.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_out_of_range_reward_is_a_schema_violation(self, tmp_path):
        bad = outcome_with([], [sample_pair(winner_reward=1.5)])
        with pytest.raises(SchemaViolation):
            emit_datasets([bad], tmp_path)

    def test_out_of_range_margin_is_a_schema_violation(self, tmp_path):
        bad = outcome_with([], [sample_pair(margin=1.5)])
        with pytest.raises(SchemaViolation):
            emit_datasets([bad], tmp_path)
