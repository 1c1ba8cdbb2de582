"""Tests for batching and the iterative soft-braid refiner"""

import numpy as np
import pytest

from src.app.data.scenario import ModeSet
from src.app.nn.autodiff import no_grad
from src.app.refiner.batching import SceneBatch, resample_polyline
from src.app.refiner.features import scene_topology
from src.app.refiner.model import SoftBraidRefiner, encoder_input_dim, positional_lift
from src.app.training.loss import total_loss
from src.core.errors import ConfigError, InvalidInputError, ShapeError
from tests.builders import make_scenario, moving_agent
from tests.gradcheck import max_relative_error

HISTORY = 4
FUTURE = 10
AGENTS = [((0.0, 0.0), (8.0, 0.0)), ((10.0, -6.0), (0.0, 7.0)), ((-5.0, 5.0), (6.0, -3.0))]
FAR_AGENT = ((2000.0, 2000.0), (5.0, 5.0))


def build_scene(shift=(0.0, 0.0), far=False, scenario_id="scene", agents=None):
    shift = np.asarray(shift, dtype=np.float64)
    specs = list(agents or AGENTS)
    if far:
        specs[2] = FAR_AGENT
    histories, futures = [], []
    for start, velocity in specs:
        history, future = moving_agent(np.asarray(start) + shift, velocity, HISTORY, FUTURE)
        histories.append(history)
        futures.append(future)
    lane = np.array([[-20.0, 0.0], [0.0, 0.0], [40.0, 0.0]]) + shift
    return make_scenario(futures, histories, lanes=[lane], scenario_id=scenario_id)


def noisy_modes(scenario, k=2, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    truth = scenario.futures()
    modes = truth[None] + rng.normal(scale=scale, size=(k,) + truth.shape)
    return ModeSet(scenario_id=scenario.scenario_id, modes=modes)


def batch_of(scenarios, modesets, lane_points=4):
    return SceneBatch.from_scenarios(scenarios, modesets, lane_points=lane_points)


def rigid(points, angle, shift):
    c, s = np.cos(angle), np.sin(angle)
    return np.asarray(points) @ np.array([[c, s], [-s, c]]) + np.asarray(shift)


def rebuild(scene, move=None, extra_lanes=()):
    move = move or (lambda points: np.asarray(points))
    return make_scenario(
        [move(agent.future) for agent in scene.agents],
        [move(agent.history) for agent in scene.agents],
        lanes=[move(lane.centerline) for lane in scene.lanes] + [move(lane) for lane in extra_lanes],
        scenario_id=scene.scenario_id,
    )


@pytest.fixture
def model(tiny_config):
    return SoftBraidRefiner(tiny_config.refiner, FUTURE, seed=3)


@pytest.mark.unit
class TestBatching:
    def test_padding_and_masks(self):
        small = build_scene(scenario_id="small", agents=AGENTS[:2])
        large = build_scene(scenario_id="large")
        batch = batch_of([small, large], [noisy_modes(small), noisy_modes(large)])
        assert batch.modes.shape == (2, 2, 3, FUTURE, 2)
        np.testing.assert_array_equal(batch.agent_mask, [[True, True, False], [True, True, True]])
        np.testing.assert_array_equal(batch.modes[0, :, 2], 0.0)
        assert [m.shape for m in batch.unpad_modes(batch.modes)] == [(2, 2, FUTURE, 2), (2, 3, FUTURE, 2)]

    def test_origins_and_headings_from_history(self):
        scene = build_scene()
        batch = batch_of([scene], [noisy_modes(scene)])
        np.testing.assert_allclose(batch.origins[0], [start for start, _ in AGENTS])
        np.testing.assert_allclose(batch.headings[0, 0], 0.0, atol=1e-12)
        np.testing.assert_allclose(batch.headings[0, 1], np.pi / 2)

    def test_centered_origins_ignore_padding(self):
        small = build_scene(scenario_id="small", agents=AGENTS[:2])
        large = build_scene(scenario_id="large")
        batch = batch_of([small, large], [noisy_modes(small), noisy_modes(large)])
        centered = batch.centered_origins()
        np.testing.assert_allclose(centered[0, :2].sum(axis=0), 0.0, atol=1e-12)
        np.testing.assert_array_equal(centered[0, 2], 0.0)

    def test_lane_points_are_local(self):
        scene = build_scene()
        batch = batch_of([scene], [noisy_modes(scene)])
        # agent 0 sits on the lane heading +x: its local lane points have y == 0
        np.testing.assert_allclose(batch.lane_points_local[0, 0, 0, :, 1], 0.0, atol=1e-12)
        np.testing.assert_allclose(batch.lane_points_local[0, 0, 0, [0, -1], 0], [-20.0, 40.0])

    def test_mismatched_inputs(self):
        scene = build_scene()
        with pytest.raises(InvalidInputError):
            batch_of([], [])
        with pytest.raises(InvalidInputError):
            batch_of([scene], [])
        wrong = ModeSet(scenario_id="other", modes=noisy_modes(scene).modes)
        with pytest.raises(InvalidInputError):
            batch_of([scene], [wrong])

    def test_resample_polyline(self):
        points = resample_polyline(np.array([[0.0, 0.0], [10.0, 0.0], [10.0, 10.0]]), 5)
        np.testing.assert_allclose(points, [[0, 0], [5, 0], [10, 0], [10, 5], [10, 10]])
        single = resample_polyline(np.array([[3.0, 4.0]]), 3)
        np.testing.assert_array_equal(single, [[3, 4]] * 3)


@pytest.mark.unit
class TestPositionalLift:
    def test_raw_scales_only(self):
        coords = np.array([[10.0, -20.0]])
        np.testing.assert_allclose(positional_lift(coords, "raw", 4, 20.0), [[0.5, -1.0]])

    def test_sinusoidal_width(self, tiny_config):
        coords = np.zeros((3, FUTURE, 2))
        lifted = positional_lift(coords, "sinusoidal", 2, 20.0)
        assert lifted.shape == (3, FUTURE, 2 * 5)
        assert encoder_input_dim(tiny_config.refiner, FUTURE) == 3 + FUTURE * 2 * 5


@pytest.mark.unit
class TestRefinerInvariants:
    def test_zero_head_is_identity(self, model):
        scene = build_scene()
        modeset = noisy_modes(scene)
        model.zero_head()
        refined = model.predict(batch_of([scene], [modeset]))
        np.testing.assert_array_equal(refined[0], modeset.modes)

    def test_output_shape_and_padding(self, model):
        small = build_scene(scenario_id="small", agents=AGENTS[:2])
        large = build_scene(scenario_id="large")
        refined = model.predict(batch_of([small, large], [noisy_modes(small), noisy_modes(large)]))
        assert refined.shape == (2, 2, 3, FUTURE, 2)
        assert np.all(np.isfinite(refined))
        np.testing.assert_array_equal(refined[0, :, 2], 0.0)

    def test_far_agent_does_not_affect_others(self, model):
        scene = build_scene(far=True)
        modeset = noisy_modes(scene)
        moved = modeset.modes.copy()
        moved[:, 2] += np.array([0.7, -0.4])
        before = model.predict(batch_of([scene], [modeset]))
        after = model.predict(batch_of([scene], [ModeSet(scenario_id="scene", modes=moved)]))
        np.testing.assert_array_equal(before[0, :, :2], after[0, :, :2])
        assert not np.array_equal(before[0, :, 2], after[0, :, 2])

    def test_translation_equivariance(self, model):
        scene = build_scene()
        shifted = build_scene(shift=(120.0, -75.0))
        modes = noisy_modes(scene).modes
        refined = model.predict(batch_of([scene], [ModeSet(scenario_id="scene", modes=modes)]))
        moved = model.predict(
            batch_of([shifted], [ModeSet(scenario_id="scene", modes=modes + np.array([120.0, -75.0]))])
        )
        np.testing.assert_allclose(moved - np.array([120.0, -75.0]), refined, atol=1e-6)

    def test_mode_permutation_equivariance(self, model):
        scene = build_scene()
        modes = noisy_modes(scene, k=3).modes
        forward = model.predict(batch_of([scene], [ModeSet(scenario_id="scene", modes=modes)]))
        reverse = model.predict(batch_of([scene], [ModeSet(scenario_id="scene", modes=modes[::-1].copy())]))
        np.testing.assert_allclose(reverse[0, ::-1], forward[0], atol=1e-9)

    def test_scenarios_in_a_batch_are_independent(self, model):
        small = build_scene(scenario_id="small", agents=AGENTS[:2])
        large = build_scene(scenario_id="large")
        small_modes, large_modes = noisy_modes(small), noisy_modes(large, seed=1)
        alone = model.predict(batch_of([small], [small_modes]))
        together = model.predict(batch_of([small, large], [small_modes, large_modes]))
        np.testing.assert_allclose(together[0, :, :2], alone[0], atol=1e-9)

    def test_seed_fixes_initial_weights(self, tiny_config):
        a = SoftBraidRefiner(tiny_config.refiner, FUTURE, seed=5).parameters()
        b = SoftBraidRefiner(tiny_config.refiner, FUTURE, seed=5).parameters()
        c = SoftBraidRefiner(tiny_config.refiner, FUTURE, seed=6).parameters()
        assert all(np.array_equal(a[name].data, b[name].data) for name in a)
        assert not all(np.array_equal(a[name].data, c[name].data) for name in a)


@pytest.mark.unit
class TestTopologyUpdate:
    def test_recomputed_every_iteration(self, model):
        scene = build_scene()
        result = model.refine(batch_of([scene], [noisy_modes(scene)]), keep_topology=True)
        assert len(result.outputs) == len(result.topologies) == 2
        assert result.topologies[0] is not result.topologies[1]
        assert not np.array_equal(result.topologies[0].tt_distance, result.topologies[1].tt_distance)

    def test_frozen_topology_is_reused(self, tiny_config):
        config = tiny_config.refiner.model_copy(update={"topology_update": False})
        frozen = SoftBraidRefiner(config, FUTURE, seed=3)
        scene = build_scene()
        result = frozen.refine(batch_of([scene], [noisy_modes(scene)]), keep_topology=True)
        assert result.topologies[0] is result.topologies[1]

    @pytest.mark.parametrize(
        "update",
        [
            {"topology_mode": "braid"},
            {"topology_mode": "none"},
            {"topology_mode": "soft_braid_tt_only"},
            {"use_tt_attention": False},
            {"use_tl_attention": False},
            {"residual_norm": False},
            {"pe_mode": "raw"},
        ],
        ids=lambda u: "-".join(f"{k}={v}" for k, v in u.items()),
    )
    def test_variants_run(self, tiny_config, update):
        config = tiny_config.refiner.model_copy(update=update)
        scene = build_scene()
        refined = SoftBraidRefiner(config, FUTURE, seed=3).predict(batch_of([scene], [noisy_modes(scene)]))
        assert refined.shape == (1, 2, 3, FUTURE, 2)
        assert np.all(np.isfinite(refined))

    @pytest.mark.parametrize("mode", ["none", "braid"])
    def test_topology_mode_changes_output(self, tiny_config, mode):
        scene = build_scene()
        batch = batch_of([scene], [noisy_modes(scene)])
        soft = SoftBraidRefiner(tiny_config.refiner, FUTURE, seed=3).predict(batch)
        config = tiny_config.refiner.model_copy(update={"topology_mode": mode})
        other = SoftBraidRefiner(config, FUTURE, seed=3).predict(batch)
        assert np.max(np.abs(other - soft)) > 1e-6


def lane_keys_of(model, scene, modeset):
    batch = batch_of([scene], [modeset])
    topology = scene_topology(batch.modes, batch, model.config)
    return model.lane_keys(batch, topology).data, topology.tl_mask


@pytest.mark.unit
class TestLaneKeys:
    @pytest.mark.parametrize("angle", [0.0, 0.8, 2.9, -1.7])
    def test_rigid_transform_leaves_keys_unchanged(self, model, angle):
        scene = build_scene()
        modeset = noisy_modes(scene)
        shift = (35.0, -12.0)
        moved_scene = rebuild(scene, move=lambda points: rigid(points, angle, shift))
        moved_modes = ModeSet(scenario_id="scene", modes=rigid(modeset.modes, angle, shift))
        keys, mask = lane_keys_of(model, scene, modeset)
        moved_keys, moved_mask = lane_keys_of(model, moved_scene, moved_modes)
        np.testing.assert_array_equal(moved_mask, mask)
        np.testing.assert_allclose(moved_keys, keys, atol=1e-9)

    def test_duplicate_lane_adds_an_identical_key(self, model):
        scene = build_scene()
        modeset = noisy_modes(scene)
        doubled = rebuild(scene, extra_lanes=[scene.lanes[0].centerline])
        keys, mask = lane_keys_of(model, doubled, modeset)
        assert keys.shape[3] == 2
        np.testing.assert_array_equal(keys[..., 1, :], keys[..., 0, :])
        np.testing.assert_array_equal(mask[..., 1], mask[..., 0])

    def test_duplicate_lane_output_stays_finite(self, model):
        scene = build_scene()
        modeset = noisy_modes(scene)
        doubled = rebuild(scene, extra_lanes=[scene.lanes[0].centerline])
        single = model.predict(batch_of([scene], [modeset]))
        twice = model.predict(batch_of([doubled], [modeset]))
        assert np.all(np.isfinite(twice))
        # equal keys share the softmax weight, so the attended value is unchanged
        np.testing.assert_allclose(twice, single, atol=1e-9)


@pytest.mark.unit
class TestCheckpointing:
    def test_archive_round_trip(self, model):
        scene = build_scene()
        batch = batch_of([scene], [noisy_modes(scene)])
        restored = SoftBraidRefiner.from_archive(model.to_archive(step=4))
        assert restored.config == model.config
        assert restored.parameter_count() == model.parameter_count()
        np.testing.assert_array_equal(restored.predict(batch), model.predict(batch))

    def test_missing_parameters(self, model):
        arrays = model.to_archive().parameters()
        arrays.pop("head.2.weight")
        with pytest.raises(ShapeError, match="head.2.weight"):
            model.load_parameters(arrays)

    def test_incomplete_archive_config(self, model):
        archive = model.to_archive()
        archive.config.pop("future_len")
        with pytest.raises(ConfigError):
            SoftBraidRefiner.from_archive(archive)

    def test_horizon_checks(self, tiny_config, model):
        with pytest.raises(ConfigError):
            SoftBraidRefiner(tiny_config.refiner, 2)
        other = SoftBraidRefiner(tiny_config.refiner, FUTURE + 1)
        scene = build_scene()
        with pytest.raises(ShapeError):
            other.predict(batch_of([scene], [noisy_modes(scene)]))


@pytest.mark.unit
@pytest.mark.slow
@pytest.mark.timeout(900)
def test_gradients_match_finite_differences(model):
    scene = build_scene()
    batch = batch_of([scene], [noisy_modes(scene, scale=2.0)])

    def loss() -> float:
        with no_grad():
            value, _ = total_loss(model.refine(batch).outputs, batch.future, batch.agent_mask)
        return value.item()

    model.zero_grad()
    value, _ = total_loss(model.refine(batch).outputs, batch.future, batch.agent_mask)
    value.backward()

    worst = {}
    for name, param in model.parameters().items():
        assert param.grad is not None, name
        worst[name] = max_relative_error(loss, param.data, param.grad)
    assert max(worst.values()) < 1e-5, worst
