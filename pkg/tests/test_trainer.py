import math

import numpy as np
import pytest

from vrbqn.envs import GatherEnv, ShooterEnv
from vrbqn.exceptions import ConfigurationError
from vrbqn.qlearn import QHead, greedy_action, q_values
from vrbqn.rbf import activate_state, sample_layer
from vrbqn.replay import ReplayBuffer
from vrbqn.trainer import (
    LOG_COLUMNS,
    TrainConfig,
    evaluate,
    train,
    weight_init,
    window_mean_return,
    write_log,
)

from toy_envs import OneStateEnv


def small_shooter():
    return ShooterEnv(width=12, height=12)


@pytest.fixture(scope="module")
def layer12():
    return sample_layer(0, 16, 12, 12, sigma_z_value=0.3)


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"total_steps": -1},
            {"batch_size": 0},
            {"learning_rate": 0.0},
            {"gamma": 1.5},
            {"epsilon_schedule": (1.2, 0.1, 0, 10)},
            {"epsilon_schedule": (1.0, 0.1, -1, 10)},
            {"target_update_period": 0},
            {"seeds": []},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            TrainConfig(**kwargs)

    def test_epsilon_schedule(self):
        cfg = TrainConfig(epsilon_schedule=(1.0, 0.1, 1000, 10_000))
        assert cfg.epsilon(0) == 1.0
        assert cfg.epsilon(999) == 1.0
        assert cfg.epsilon(6000) == pytest.approx(0.55)
        assert cfg.epsilon(50_000) == pytest.approx(0.1)
        assert TrainConfig().epsilon(123) == 0.0


class TestWeightInit:
    def test_zero_q_and_action_zero(self, layer12):
        head = weight_init(QHead(np.ones((8, 32))))
        env = small_shooter()
        feats = activate_state(layer12, env.reset(0))
        assert np.all(q_values(head, feats) == 0.0)
        assert greedy_action(head, feats) == 0


class TestTrain:
    def test_zero_steps(self, layer12):
        head, log = train(small_shooter(), layer12, TrainConfig(total_steps=0))
        assert log == []
        assert np.all(head.weights == 0) and head.step_count == 0

    def test_geometry_mismatch(self):
        with pytest.raises(ConfigurationError):
            train(small_shooter(), sample_layer(0, 4, 16, 16), TrainConfig(total_steps=1))

    def test_deterministic(self, layer12):
        cfg = TrainConfig(total_steps=400, batch_size=16)
        h1, l1 = train(small_shooter(), layer12, cfg)
        h2, l2 = train(small_shooter(), layer12, cfg)
        np.testing.assert_array_equal(h1.weights, h2.weights)
        # loss is NaN for episodes that end before learning starts
        assert [{k: repr(v) for k, v in row.items()} for row in l1] == [
            {k: repr(v) for k, v in row.items()} for row in l2
        ]

    def test_seed_changes_run(self, layer12):
        cfg = TrainConfig(total_steps=300, batch_size=16, epsilon_schedule=(0.5, 0.5, 0, 0))
        h1, _ = train(small_shooter(), layer12, cfg, seed=0)
        h2, _ = train(small_shooter(), layer12, cfg, seed=1)
        assert not np.array_equal(h1.weights, h2.weights)

    def test_no_target_equals_period_one(self, layer12):
        base = dict(total_steps=300, batch_size=16)
        h1, l1 = train(small_shooter(), layer12, TrainConfig(**base))
        h2, l2 = train(small_shooter(), layer12, TrainConfig(target_update_period=1, **base))
        np.testing.assert_array_equal(h1.weights, h2.weights)
        assert [r["return"] for r in l1] == [r["return"] for r in l2]

    def test_log_rows(self, layer12, tmp_path):
        _, log = train(small_shooter(), layer12, TrainConfig(total_steps=600, batch_size=16))
        assert log
        steps = [row["step"] for row in log]
        assert all(b > a for a, b in zip(steps, steps[1:]))
        assert [row["episode"] for row in log] == list(range(len(log)))
        assert all(tuple(row) == LOG_COLUMNS for row in log)
        write_log(log, tmp_path / "log.csv")
        lines = (tmp_path / "log.csv").read_text().splitlines()
        assert lines[0] == ",".join(LOG_COLUMNS)
        assert len(lines) == len(log) + 1

    def test_no_update_before_batch_fills(self, layer12):
        head, _ = train(small_shooter(), layer12, TrainConfig(total_steps=20, batch_size=21))
        assert head.step_count == 0
        head, _ = train(small_shooter(), layer12, TrainConfig(total_steps=21, batch_size=21))
        assert head.step_count == 1

    def test_replay_features_match_raw_states(self, layer12):
        # replay the same episode seeds and actions outside the trainer
        env = small_shooter()
        replay = ReplayBuffer(1000)
        cfg = TrainConfig(total_steps=200, batch_size=1000, epsilon_schedule=(1.0, 1.0, 0, 0))
        train(env, layer12, cfg, replay=replay)
        check = small_shooter()
        seeds = np.random.default_rng([0, 0])
        state = check.reset(int(seeds.integers(0, 2**63 - 1)))
        rng = np.random.default_rng(5)
        sampled = set(rng.choice(len(replay), size=20, replace=False).tolist())
        for k, t in enumerate(replay):
            if k in sampled:
                np.testing.assert_array_equal(t.features, activate_state(layer12, state))
            state, reward, done = check.step(t.action)
            assert reward == t.reward and done == t.terminal
            if k in sampled:
                np.testing.assert_array_equal(t.next_features, activate_state(layer12, state))
            if done:
                state = check.reset(int(seeds.integers(0, 2**63 - 1)))

    def test_one_state_fixed_point(self):
        env = OneStateEnv()
        layer = sample_layer(0, 8, 8, 8)
        head, log = train(env, layer, TrainConfig(total_steps=5000, batch_size=32))
        assert head.step_count <= 5000
        q = q_values(head, activate_state(layer, env.reset(0)))[0]
        assert abs(q - 1.0) < 1e-3
        assert all(row["return"] == 1.0 for row in log)


class TestEvaluate:
    def test_single_episode_std_zero(self, layer12):
        head = QHead.zeros(8, 32)
        report = evaluate(small_shooter(), layer12, head, 1, [0])
        assert report.std_return == 0.0
        assert report.episodes == 1
        assert len(report.per_seed) == 1

    def test_zero_head_plays_action_zero(self, layer12):
        # action 0 is move_right, which never shoots: every episode times out
        report = evaluate(small_shooter(), layer12, QHead.zeros(8, 32), 3, [0, 1])
        assert report.episodes == 6
        assert report.mean_return == -ShooterEnv.default_timeout
        assert report.mean_alive_steps == ShooterEnv.default_timeout

    def test_random_policy_ignores_head(self):
        a = evaluate(small_shooter(), None, None, 4, [3], policy="random")
        b = evaluate(small_shooter(), None, None, 4, [3], policy="random")
        np.testing.assert_array_equal(a.returns, b.returns)

    def test_pooled_statistics(self, layer12):
        head = QHead(np.random.default_rng(0).normal(size=(5, 32)))
        layer = sample_layer(0, 16, 12, 12)
        report = evaluate(GatherEnv(width=12, height=12), layer, head, 2, [0, 1])
        assert report.mean_return == pytest.approx(report.returns.mean())
        assert report.mean_return == pytest.approx(np.mean([s.mean_return for s in report.per_seed]))

    def test_csv(self, layer12, tmp_path):
        report = evaluate(small_shooter(), layer12, QHead.zeros(8, 32), 1, [0, 1])
        report.write_csv(tmp_path / "e.csv")
        lines = (tmp_path / "e.csv").read_text().splitlines()
        assert len(lines) == 4 and lines[-1].startswith("all,")

    def test_bad_inputs(self, layer12):
        with pytest.raises(ConfigurationError):
            evaluate(small_shooter(), layer12, QHead.zeros(8, 32), 0, [0])
        with pytest.raises(ConfigurationError):
            evaluate(small_shooter(), layer12, QHead.zeros(8, 30), 1, [0])
        with pytest.raises(ConfigurationError):
            evaluate(small_shooter(), layer12, QHead.zeros(8, 32), 1, [0], policy="softmax")


def test_window_mean_return():
    log = [{"step": 10, "return": 1.0}, {"step": 1500, "return": 3.0}, {"step": 2000, "return": 5.0}]
    assert window_mean_return(log, 2000, 1000) == 4.0
    assert math.isnan(window_mean_return([], 2000))
