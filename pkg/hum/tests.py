import tempfile
from pathlib import Path

import numpy as np
from django.core.cache import cache
from django.test import SimpleTestCase, tag
from scipy.special import softmax as np_softmax

from dataio.discretize import fit_schema
from dataio.schema import Dataset
from dataio.splits import split
from dataio.synthetic import generate_synthetic_rct
from metrics.uplift import evaluate_treatment
from nncore.autograd import backward
from nncore.gradcheck import check_gradients
from uplift_engine.exceptions import CheckpointVersionError, ContractError, DimensionError, NumericalError

from .checkpoint import load_checkpoint, save_checkpoint
from .inference import UpliftEstimates, control_branch_gap, infer_all_treatments
from .losses import hum_loss, masked_loss
from .model import CONTROL, TREATED, HumHyperparameters, HumModel
from .training import fit_model, train, train_independent

TINY = HumHyperparameters(embedding_dim=3, num_experts=2, expert_hidden=4, expert_out=3,
                          tower_hidden=4, lambda_kl=1.0)

# Spielraum für Seed-Rauschen beim QINI-Vergleich mit und ohne KL-Term
KL_QINI_TOLERANCE = 0.02

DESK = {
    'embedding_dim': 4, 'num_experts': 2, 'expert_hidden': 8, 'expert_out': 4,
    'tower_hidden': 8, 'lambda_kl': 1.0, 'batch_size': 128, 'learning_rate': 0.01,
    'max_epochs': 5, 'early_stop_patience': 10, 'seed': 1,
}


def tiny_model(K=2, seed=0, hp=TINY, **kwargs):
    return HumModel([3, 4], K, hp, np.random.default_rng(seed), **kwargs)


def desk_data(n=1000, seed=0, noise_sd=0.1):
    rct = generate_synthetic_rct(n, K=2, R=2, seed=seed, noise_sd=noise_sd)
    train_raw, val_raw, test_raw = split(rct.table, seed=seed)
    schema = fit_schema(rct.schema, train_raw, num_bins=10)
    return (train_raw.discretize(schema), val_raw.discretize(schema),
            test_raw.discretize(schema), schema, rct)


def _relu(v):
    return np.maximum(v, 0.0)


def reference_path(model, x_row, t_value, branch, path):
    """Reiner numpy-Forward eines Pfads als Vergleichsrechnung"""
    e_x = model.feature_embedding.table.value[np.asarray(x_row) + model.offsets]
    e_t = model.treatment_embedding.table.value[t_value]
    params = model.branches[branch - 1]
    attention = np_softmax(params.attention.weight.value @ e_t + params.attention.bias.value)
    f = np.concatenate([attention @ e_x, e_t])
    gate = np_softmax(params.gate.weight.value @ f + params.gate.bias.value)
    outputs = []
    for expert in params.experts:
        hidden = _relu(expert.layers[0].weight.value @ f + expert.layers[0].bias.value)
        outputs.append(_relu(expert.layers[1].weight.value @ hidden + expert.layers[1].bias.value))
    mixture = sum(g * o for g, o in zip(gate, outputs))
    tower = params.treated_tower if path == TREATED else params.control_tower
    hidden = _relu(tower.layers[0].weight.value @ mixture + tower.layers[0].bias.value)
    return gate, float((tower.layers[1].weight.value @ hidden + tower.layers[1].bias.value)[0])


class FeatureSelectTests(SimpleTestCase):
    def test_single_feature(self):
        model = HumModel([5], 1, TINY, np.random.default_rng(0))
        e_x = np.array([[0.3, -0.2, 0.9]])
        attention, selected = model.feature_select(e_x, np.ones(3), branch=1)
        np.testing.assert_allclose(attention.value, [1.0])
        np.testing.assert_allclose(selected.value, e_x[0])

    def test_hand_computed_weights(self):
        model = tiny_model()
        attention = model.branches[0].attention
        attention.weight.value = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        attention.bias.value = np.array([0.0, 0.5])
        e_t = np.array([1.0, 0.5, 2.0])
        e_x = np.array([[1.0, 2.0, 3.0], [-1.0, 0.0, 1.0]])

        weights, selected = model.feature_select(e_x, e_t, branch=1)
        # Logits [1.0, 1.0] → gleichverteilt
        np.testing.assert_allclose(weights.value, [0.5, 0.5])
        np.testing.assert_allclose(selected.value, [0.0, 1.0, 2.0])
        self.assertAlmostEqual(weights.value.sum(), 1.0)

    def test_branch_zero_is_contract_error(self):
        model = tiny_model()
        with self.assertRaises(ContractError):
            model.feature_select(np.zeros((2, 3)), np.zeros(3), branch=0)

    def test_fuse(self):
        np.testing.assert_allclose(HumModel.fuse([1.0, 2.0], [3.0, 4.0]).value, [1, 2, 3, 4])
        np.testing.assert_allclose(HumModel.fuse([1.0, 2.0], [0.0, 0.0]).value[2:], [0, 0])
        with self.assertRaises(DimensionError):
            HumModel.fuse([1.0], [1.0, 2.0])


class BranchForwardTests(SimpleTestCase):
    def test_single_expert(self):
        hp = HumHyperparameters(embedding_dim=3, num_experts=1, expert_hidden=4, expert_out=3,
                                tower_hidden=4)
        model = tiny_model(hp=hp)
        gate, prediction = model.branch_forward(np.ones(6), branch=1, path=TREATED)
        np.testing.assert_allclose(gate.value, [1.0])
        self.assertEqual(prediction.shape, ())

    def test_identical_experts_ignore_gate(self):
        model = tiny_model()
        branch = model.branches[0]
        branch.experts[1].load_state_dict(branch.experts[0].state_dict())
        f = np.linspace(-1, 1, 6)
        _, first = model.branch_forward(f, 1, CONTROL)
        branch.gate.bias.value = np.array([5.0, -5.0])
        gate, second = model.branch_forward(f, 1, CONTROL)
        self.assertAlmostEqual(gate.value.sum(), 1.0)
        self.assertAlmostEqual(first.item(), second.item(), places=12)

    def test_binary_response_uses_sigmoid(self):
        hp = HumHyperparameters(embedding_dim=3, num_experts=2, expert_hidden=4, expert_out=3,
                                tower_hidden=4, binary_response=True)
        model = tiny_model(hp=hp)
        _, prediction = model.path_forward(np.array([[0, 1], [2, 3]]), np.array([1, 1]), 1, TREATED)
        self.assertTrue(np.all((prediction.value > 0) & (prediction.value < 1)))


class HumLossTests(SimpleTestCase):
    def test_single_treatment_reduces_to_mse(self):
        model = tiny_model(K=1)
        x = np.array([[0, 1], [2, 3], [1, 0]])
        t = np.array([0, 0, 1])
        y = np.array([1.0, -0.5, 2.0])
        loss = masked_loss(model, x, t, y).item()
        estimates = infer_all_treatments(model, x)
        predicted = np.where(t == 1, estimates.treated[:, 0], estimates.control[:, 0])
        self.assertAlmostEqual(loss, np.mean((y - predicted) ** 2), places=12)

    def test_two_instance_hand_expansion(self):
        model = tiny_model(K=2, seed=3)
        x = np.array([[1, 2], [0, 3]])
        t = np.array([1, 0])
        y = np.array([0.7, -0.4])

        _, treated = reference_path(model, x[0], 1, 1, TREATED)
        gates, control = zip(*(reference_path(model, x[1], 0, k, CONTROL) for k in (1, 2)))
        mean_gate = (gates[0] + gates[1]) / 2
        kl = sum(np.sum(g * np.log(g / mean_gate)) for g in gates)
        expected = ((y[0] - treated) ** 2
                    + sum((y[1] - c) ** 2 for c in control)
                    + TINY.lambda_kl * kl) / 2

        self.assertAlmostEqual(masked_loss(model, x, t, y).item(), expected, places=10)

    def test_masked_branch_has_zero_gradient(self):
        model = tiny_model(K=2)
        x = np.array([[0, 1], [2, 2], [1, 3]])
        t = np.array([1, 1, 1])
        y = np.array([1.0, 2.0, 3.0])
        model.zero_grad()
        backward(masked_loss(model, x, t, y))

        for name, param in model.branches[1].named_parameters('branch2.'):
            self.assertTrue(np.all(param.grad == 0.0), msg=name)
        for name, param in model.branches[0].control_tower.named_parameters():
            self.assertTrue(np.all(param.grad == 0.0), msg=name)
        self.assertTrue(np.any(model.branches[0].treated_tower.layers[-1].bias.grad != 0.0))

    def test_perturbing_other_branch_leaves_loss(self):
        model = tiny_model(K=2)
        x = np.array([[0, 1], [2, 2]])
        t = np.array([1, 1])
        y = np.array([1.0, 2.0])
        before = masked_loss(model, x, t, y).item()
        for param in model.branches[1].parameters().values():
            param.value = param.value + 0.5
        self.assertEqual(masked_loss(model, x, t, y).item(), before)

    def test_kl_nonnegative(self):
        model = tiny_model(K=2, seed=5)
        x = np.array([[0, 1], [2, 2], [1, 3]])
        t = np.zeros(3, dtype=int)
        y = np.array([1.0, 2.0, 3.0])
        with_kl = masked_loss(model, x, t, y, lambda_kl=1.0).item()
        without_kl = masked_loss(model, x, t, y, lambda_kl=0.0).item()
        self.assertGreaterEqual(with_kl, without_kl)

    def test_stop_gradient_keeps_value(self):
        model = tiny_model(K=2, seed=2)
        x = np.array([[0, 1], [2, 2]])
        t = np.array([0, 0])
        y = np.array([1.0, 2.0])
        a = masked_loss(model, x, t, y, stop_gradient=False).item()
        b = masked_loss(model, x, t, y, stop_gradient=True).item()
        self.assertEqual(a, b)

    def test_empty_batch(self):
        with self.assertRaises(DimensionError):
            masked_loss(tiny_model(), np.zeros((0, 2)), np.zeros(0), np.zeros(0))

    def test_dataset_batch(self):
        model = tiny_model(K=2)
        batch = Dataset(['a', 'b'], [[0, 1], [2, 3]], [0, 2], [[1.0], [2.0]])
        direct = masked_loss(model, batch.x, batch.t, batch.y[:, 0]).item()
        self.assertEqual(hum_loss(batch, model).item(), direct)
        self.assertEqual(hum_loss(list(batch), model).item(), direct)

    def test_full_loss_gradient_check(self):
        model = tiny_model(K=2, seed=11)
        x = np.array([[0, 1], [2, 3], [1, 0], [2, 2], [0, 3], [1, 1]])
        t = np.array([0, 0, 1, 2, 1, 0])
        y = np.array([0.5, -1.0, 1.5, 0.2, 0.9, -0.3])
        errors = check_gradients(lambda: masked_loss(model, x, t, y), model.parameters())
        for name, error in errors.items():
            self.assertLess(error, 1e-5, msg=name)

    def test_full_loss_gradient_check_random_batches(self):
        # 10 Batches zu je 32 Zeilen, beide Branches, KL aktiv
        for seed in range(10):
            rng = np.random.default_rng(200 + seed)
            model = tiny_model(K=2, seed=seed)
            x = np.column_stack([rng.integers(0, 3, 32), rng.integers(0, 4, 32)])
            t = rng.integers(0, 3, 32)
            y = rng.normal(size=32)
            errors = check_gradients(lambda: masked_loss(model, x, t, y), model.parameters())
            self.assertEqual(set(errors), set(model.parameters()))
            for name, error in errors.items():
                self.assertLess(error, 1e-3, msg=f"Seed {seed}: {name}")


class InferenceTests(SimpleTestCase):
    def test_cardinality_and_sandwich(self):
        model = tiny_model(K=2)
        estimates = infer_all_treatments(model, np.array([[0, 1], [2, 3], [1, 2]]))
        self.assertIsInstance(estimates, UpliftEstimates)
        self.assertEqual(estimates.treated.shape, (3, 2))
        self.assertEqual(estimates.control.shape, (3, 2))
        self.assertEqual(estimates.gates.shape, (3, 2, TINY.num_experts))
        star = estimates.control_star
        self.assertTrue(np.all(estimates.control.min(axis=1) <= star))
        self.assertTrue(np.all(star <= estimates.control.max(axis=1)))

    def test_identical_features_identical_estimates(self):
        model = tiny_model(K=2)
        estimates = infer_all_treatments(model, np.array([[1, 2], [0, 0], [1, 2]]))
        np.testing.assert_array_equal(estimates.treated[0], estimates.treated[2])
        np.testing.assert_array_equal(estimates.control[0], estimates.control[2])

    def test_independent_of_observed_treatment(self):
        model = tiny_model(K=2)
        a = Dataset(['a'], [[1, 2]], [0], [[0.0]])
        b = Dataset(['a'], [[1, 2]], [2], [[0.0]])
        np.testing.assert_array_equal(infer_all_treatments(model, a).treated,
                                      infer_all_treatments(model, b).treated)

    def test_multi_branch_mode(self):
        model = tiny_model(K=1, branch_treatments=[1, 1, 1])
        estimates = infer_all_treatments(model, np.array([[0, 1], [2, 3]]))
        self.assertEqual(estimates.treated.shape, (2, 1))
        self.assertEqual(estimates.branch_control.shape, (2, 3))
        np.testing.assert_allclose(estimates.control[:, 0], estimates.branch_control.mean(axis=1))

    def test_branch_mapping_must_cover_treatments(self):
        with self.assertRaises(ContractError):
            tiny_model(K=2, branch_treatments=[1, 1])

    def test_control_branch_gap(self):
        estimates = UpliftEstimates(
            response='r', user_ids=['a', 'b'], treated=np.zeros((2, 2)),
            control=np.array([[1.0, 2.0], [0.0, 0.5]]),
            branch_control=np.array([[1.0, 2.0], [0.0, 0.5]]), gates=np.zeros((2, 2, 1)))
        self.assertAlmostEqual(control_branch_gap(estimates), 0.75)
        single = UpliftEstimates('r', ['a'], np.zeros((1, 1)), np.ones((1, 1)),
                                 np.ones((1, 1)), np.zeros((1, 1, 1)))
        self.assertEqual(control_branch_gap(single), 0.0)


class TrainingTests(SimpleTestCase):
    def setUp(self):
        cache.clear()

    def test_training_loss_decreases(self):
        train_set, val_set, _, schema, _ = desk_data()
        model = train(train_set, val_set, DESK, response_index=0, run_key='loss-test')
        losses = model.history.train_losses
        self.assertEqual(len(losses), 5)
        self.assertLess(losses[-1], losses[0])
        progress = cache.get('training_progress_loss-test')
        self.assertEqual(progress['status'], 'completed')

    def test_same_seed_same_parameters(self):
        train_set, val_set, _, _, _ = desk_data(n=300)
        config = dict(DESK, max_epochs=2)
        first = train(train_set, val_set, config).state_dict()
        second = train(train_set, val_set, config).state_dict()
        self.assertEqual(first.keys(), second.keys())
        for name in first:
            np.testing.assert_array_equal(first[name], second[name])

    def test_non_finite_loss_aborts_with_diagnostics(self):
        train_set, val_set, _, schema, _ = desk_data(n=200)
        rng = np.random.default_rng(0)
        model = HumModel.from_schema(schema, DESK, rng)
        model.branches[0].treated_tower.layers[-1].bias.value = np.array([np.nan])
        with self.assertRaises(NumericalError) as ctx:
            fit_model(model, train_set, val_set, DESK, rng)
        self.assertEqual(ctx.exception.diagnostics['epoch'], 1)

    def test_independent_models(self):
        train_set, val_set, test_set, _, _ = desk_data(n=300)
        model = train_independent(train_set, val_set, dict(DESK, max_epochs=1))
        self.assertEqual(model.num_treatments, 2)
        estimates = infer_all_treatments(model, test_set)
        self.assertEqual(estimates.treated.shape, (len(test_set), 2))
        self.assertEqual(estimates.branch_control.shape, (len(test_set), 2))

    def test_batch_size_default(self):
        from django.conf import settings
        self.assertEqual(settings.UPLIFT_DEFAULTS['batch_size'], 4096)


class CheckpointTests(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_round_trip_predictions(self):
        train_set, val_set, test_set, schema, _ = desk_data(n=200)
        model = train(train_set, val_set, dict(DESK, max_epochs=1))
        path = self.tmp / 'model.json'
        save_checkpoint(model, schema, path)
        loaded, loaded_schema = load_checkpoint(path, expected_schema=schema)
        self.assertEqual(loaded_schema, schema)
        np.testing.assert_array_equal(infer_all_treatments(model, test_set).treated,
                                      infer_all_treatments(loaded, test_set).treated)

    def test_version_mismatch(self):
        _, _, _, schema, _ = desk_data(n=100)
        model = HumModel.from_schema(schema, DESK, np.random.default_rng(0))
        path = self.tmp / 'model.json'
        save_checkpoint(model, schema, path)
        text = path.read_text().replace('"version": 1', '"version": 99')
        path.write_text(text)
        with self.assertRaises(CheckpointVersionError):
            load_checkpoint(path)


@tag('slow')
class SyntheticDirectionTests(SimpleTestCase):
    """Richtungs-Checks auf Desk-Scale; mit --exclude-tag slow überspringbar"""

    CONFIG = dict(DESK, embedding_dim=8, expert_hidden=16, expert_out=8, tower_hidden=16,
                  batch_size=256, learning_rate=0.01, max_epochs=15, early_stop_patience=4)

    def test_sign_agreement_noise_free(self):
        train_set, val_set, test_set, schema, rct = desk_data(n=20000, seed=7, noise_sd=0.0)
        model = train(train_set, val_set, self.CONFIG, response_index=0)
        estimates = infer_all_treatments(model, test_set)
        truth = rct.truth.align(test_set.user_ids)
        for k in (1, 2):
            tau = truth.tau[:, 0, k - 1]
            agree = np.sign(estimates.uplift(k)) == np.sign(tau)
            # Nutzer mit deutlichem Effekt; nahe 0 hat das Vorzeichen keine stabile Aussage
            clear = np.abs(tau) > 0.3
            self.assertGreaterEqual(agree[clear].mean(), 0.9, msg=f"k={k}")
            self.assertGreaterEqual(agree.mean(), 0.75, msg=f"k={k}")

    def test_qini_against_true_effect_ranking(self):
        qini_hum, qini_no_kl, qini_oracle = {}, {}, {}
        for seed in (1, 2, 3):
            train_set, val_set, test_set, _, rct = desk_data(n=10000, seed=seed)
            truth = rct.truth.align(test_set.user_ids)
            config = dict(self.CONFIG, seed=seed, max_epochs=10)
            for r in (0, 1):
                with_kl = infer_all_treatments(train(train_set, val_set, config, response_index=r), test_set)
                without_kl = infer_all_treatments(
                    train(train_set, val_set, dict(config, lambda_kl=0.0), response_index=r), test_set)
                y = test_set.y[:, r]
                for k in (1, 2):
                    cell = (r, k)
                    qini_hum.setdefault(cell, []).append(
                        evaluate_treatment(with_kl.uplift(k), test_set.t, y, k)['qini'])
                    qini_no_kl.setdefault(cell, []).append(
                        evaluate_treatment(without_kl.uplift(k), test_set.t, y, k)['qini'])
                    qini_oracle.setdefault(cell, []).append(
                        evaluate_treatment(truth.tau[:, r, k - 1], test_set.t, y, k)['qini'])

        kl_cells = 0
        for cell in qini_hum:
            hum, oracle = np.mean(qini_hum[cell]), np.mean(qini_oracle[cell])
            self.assertGreater(oracle, 0.0, msg=f"Zelle {cell}")
            self.assertGreaterEqual(hum, 0.5 * oracle, msg=f"Zelle {cell}")
            if hum >= np.mean(qini_no_kl[cell]) - KL_QINI_TOLERANCE:
                kl_cells += 1
        self.assertGreaterEqual(kl_cells, 3)

    def test_kl_reduces_control_branch_gap(self):
        with_kl, without_kl = [], []
        for seed in (1, 2, 3):
            train_set, val_set, test_set, _, _ = desk_data(n=3000, seed=seed)
            config = dict(self.CONFIG, seed=seed, max_epochs=8)
            with_kl.append(control_branch_gap(
                infer_all_treatments(train(train_set, val_set, config), test_set)))
            without_kl.append(control_branch_gap(
                infer_all_treatments(train(train_set, val_set, dict(config, lambda_kl=0.0)), test_set)))
        self.assertLessEqual(np.mean(with_kl), np.mean(without_kl))
