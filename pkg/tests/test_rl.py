import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qroute.environment import (
    DELIVERY,
    DEPOT,
    PICKUP,
    FleetSpec,
    RequestNode,
    RoutingEnv,
    generate_instance,
    make_instance,
    route_cost,
)
from qroute.errors import CapacityError, InvalidArgumentError, NotReadyError
from qroute.pqc import CircuitConfig, PQCNetwork
from qroute.rl.dqn import (
    TrainerConfig,
    TrainingCurve,
    dataset_env_factory,
    dqn_update,
    masked_argmax,
    td_targets,
    train_dqn,
)
from qroute.rl.evaluate import GreedyQPolicy, OraclePolicy, RandomFeasiblePolicy, evaluate, summarize
from qroute.rl.features import feature_size, state_features
from qroute.rl.mlp import MlpNet, MlpQNetwork
from qroute.rl.optim import Adam, Sgd, make_optimizer
from qroute.rl.oracle import brute_force_solve, enumerate_optimum
from qroute.rl.ppo import (
    PpoAgent,
    PpoConfig,
    clipped_surrogate_grad,
    gae,
    masked_log_softmax,
    policy_loss_grads,
    train_ppo,
)
from qroute.rl.replay import PrioritizedReplayBuffer, Transition, sample_batch, soft_update


def transition(i=0, n=3, reward=0.0, done=False):
    x = np.full(n, float(i))
    m = np.ones(n, bool)
    return Transition(x, m, i % n, reward, x, m, done)


class TableNet:
    """Q-values looked up by the first feature; gradients are one-hot."""

    def __init__(self, table):
        self.table = np.array(table, dtype=float)

    def q_batch(self, X):
        return self.table[np.asarray(X)[:, 0].astype(int)]

    def grad_batch(self, X, dq):
        g = np.zeros_like(self.table)
        np.add.at(g, np.asarray(X)[:, 0].astype(int), dq)
        return self.q_batch(X), [g]

    def get_params(self):
        return [self.table]

    def set_params(self, params):
        self.table = np.array(params[0], dtype=float)


# --- replay -----------------------------------------------------------------


def test_uniform_priorities():
    buf = PrioritizedReplayBuffer(100, rng=0)
    for i in range(50):
        buf.add(transition(i))
    assert np.allclose(buf.probabilities(), 1 / 50)
    _, w, _ = sample_batch(buf, 16)
    assert np.allclose(w, 1.0)


def test_dominant_priority_frequency():
    buf = PrioritizedReplayBuffer(10, alpha=1.0, rng=1)
    for i in range(10):
        buf.add(transition(i), priority=1.0)
    buf.update_priorities([3], [1000.0])
    p = buf.probabilities()
    counts = np.zeros(10)
    for _ in range(10_000 // 10):
        _, _, idx = buf.sample(10)
        np.add.at(counts, idx, 1)
    expected = p * 10_000
    chi2 = np.sum((counts - expected) ** 2 / expected)
    assert counts.argmax() == 3
    # 9 degrees of freedom; the 99.9% quantile is about 27.9
    assert chi2 < 27.9


def test_beta_zero_weights_one():
    buf = PrioritizedReplayBuffer(10, rng=2)
    for i in range(10):
        buf.add(transition(i), priority=float(i + 1))
    _, w, _ = buf.sample(8, beta=0.0)
    assert np.allclose(w, 1.0)


def test_beta_anneals_and_weights_normalised():
    buf = PrioritizedReplayBuffer(10, beta_start=0.4, beta_steps=4, rng=3)
    for i in range(10):
        buf.add(transition(i), priority=float(i + 1))
    betas = []
    for _ in range(6):
        betas.append(buf.beta)
        _, w, _ = buf.sample(5)
        assert w.max() == pytest.approx(1.0)
    assert betas[0] == 0.4 and betas[-1] == 1.0
    assert all(b2 >= b1 for b1, b2 in zip(betas, betas[1:]))


def test_underfull_and_ring():
    buf = PrioritizedReplayBuffer(4, rng=0)
    with pytest.raises(NotReadyError):
        buf.sample(1)
    for i in range(7):
        buf.add(transition(i))
    assert len(buf) == 4
    assert sorted(int(t.features[0]) for t in buf.storage) == [3, 4, 5, 6]
    with pytest.raises(InvalidArgumentError):
        PrioritizedReplayBuffer(0)


@given(st.lists(st.floats(0, 100, allow_nan=False), min_size=1, max_size=30))
@settings(max_examples=40, deadline=None)
def test_priorities_positive_probabilities_sum_to_one(prios):
    buf = PrioritizedReplayBuffer(len(prios), rng=0)
    for i, p in enumerate(prios):
        buf.add(transition(i), priority=p)
    assert np.all(buf.priorities[: len(buf)] > 0)
    assert buf.probabilities().sum() == pytest.approx(1.0)


def test_soft_update_examples():
    online, target = [np.array([2.0])], [np.array([0.0])]
    assert soft_update(target, online, 1.0)[0][0] == 2.0
    assert soft_update(target, online, 0.0)[0][0] == 0.0
    assert soft_update(target, online, 0.5)[0][0] == 1.0
    with pytest.raises(InvalidArgumentError):
        soft_update([np.zeros(2)], [np.zeros(3)], 0.5)


# --- DQN --------------------------------------------------------------------


def test_trainer_config_validation():
    with pytest.raises(InvalidArgumentError):
        TrainerConfig(gamma=1.5)
    with pytest.raises(InvalidArgumentError):
        TrainerConfig(tau=0.0)
    with pytest.raises(InvalidArgumentError):
        TrainerConfig(eps_start=0.1, eps_end=0.5)
    cfg = TrainerConfig(episodes=100)
    assert cfg.epsilon(0) == 1.0 and cfg.epsilon(60) == pytest.approx(0.05) and cfg.epsilon(99) == pytest.approx(0.05)


def test_masked_argmax_rows():
    q = np.array([[5.0, 1.0, 2.0], [0.0, 9.0, 1.0]])
    m = np.array([[False, True, True], [True, False, True]])
    assert masked_argmax(q, m).tolist() == [2, 2]


def test_gamma_zero_step_moves_toward_reward():
    net = TableNet([[0.0, 0.0]])
    batch = [Transition(np.zeros(1), np.ones(2, bool), 1, 3.0, np.zeros(1), np.ones(2, bool), False)]
    cfg = TrainerConfig(gamma=0.0, learning_rate=0.1)
    y, _ = td_targets(net, net, batch, 0.0, True)
    assert y[0] == 3.0
    before = abs(net.table[0, 1] - 3.0)
    dqn_update(net, TableNet(net.table), batch, np.ones(1), cfg)
    assert abs(net.table[0, 1] - 3.0) < before


def test_double_q_uses_online_argmax():
    online = TableNet([[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]])
    target = TableNet([[0.0, 0.0, 0.0], [1.0, 5.0, 2.0]])
    mask = np.array([True, True, True])
    batch = [Transition(np.zeros(1), mask, 0, 1.0, np.ones(1), mask, False)]
    y, a = td_targets(online, target, batch, 0.5, double_q=True)
    assert a[0] == 0 and y[0] == pytest.approx(1.0 + 0.5 * 1.0)
    y, a = td_targets(online, target, batch, 0.5, double_q=False)
    assert a[0] == 1 and y[0] == pytest.approx(1.0 + 0.5 * 5.0)


def test_terminal_and_masked_bootstrap():
    net = TableNet([[0.0, 0.0], [7.0, 9.0]])
    batch = [
        Transition(np.zeros(1), np.ones(2, bool), 0, 1.0, np.ones(1), np.ones(2, bool), True),
        Transition(np.zeros(1), np.ones(2, bool), 0, 1.0, np.ones(1), np.array([True, False]), False),
    ]
    y, _ = td_targets(net, net, batch, 1.0, True)
    assert y.tolist() == [1.0, 8.0]


def test_td_fixed_point_two_state_chain():
    # A --(r=1)--> B --(r=2)--> end with one action each; Q(B)=2, Q(A)=1+g*2
    gamma = 0.5
    net = MlpQNetwork(1, hidden=16, rng=0)
    a_feat = np.zeros(feature_size(1))
    b_feat = np.zeros(feature_size(1))
    a_feat[0], b_feat[1] = 1.0, 1.0
    m = np.ones(1, bool)
    batch = [Transition(a_feat, m, 0, 1.0, b_feat, m, False), Transition(b_feat, m, 0, 2.0, b_feat, np.zeros(1, bool), True)]
    cfg = TrainerConfig(gamma=gamma, learning_rate=0.05, tau=0.1)
    target = net.copy()
    for _ in range(3000):
        dqn_update(net, target, batch, np.ones(2), cfg)
        target.set_params(soft_update(target.get_params(), net.get_params(), cfg.tau))
    q = net.q_batch(np.stack([a_feat, b_feat]))[:, 0]
    assert q == pytest.approx([1.0 + gamma * 2.0, 2.0], abs=1e-2)


def test_priority_update_after_step():
    net = TableNet([[0.0, 0.0]])
    buf = PrioritizedReplayBuffer(8, rng=0)
    for r in range(8):
        buf.add(Transition(np.zeros(1), np.ones(2, bool), r % 2, float(r), np.zeros(1), np.ones(2, bool), True))
    batch, w, idx = buf.sample(4)
    td, _, _ = dqn_update(net, TableNet(net.table), batch, w, TrainerConfig(gamma=0.0))
    buf.update_priorities(idx, td)
    for i, e in zip(idx, td):
        assert buf.priorities[i] == pytest.approx(abs(e) + buf.eps)


class RecordingEnv(RoutingEnv):
    def __init__(self, inst):
        super().__init__(inst)
        self.illegal = 0

    def step(self, state, action):
        if not self.feasible_actions(state)[action]:
            self.illegal += 1
        return super().step(state, action)


def test_masked_training_never_illegal_and_curve_shape():
    envs = [RecordingEnv(generate_instance(s, 2)) for s in range(4)]
    factory = lambda ep, rng: envs[int(rng.integers(4))]
    net, curve = train_dqn(factory, MlpQNetwork(5, hidden=32, rng=0), TrainerConfig(episodes=25, seed=0))
    assert sum(e.illegal for e in envs) == 0
    assert len(curve) == 25 and len(list(curve.rows())) == 25
    assert all(np.isfinite(curve.cost)) and all(np.isfinite(curve.loss))


def test_single_request_greedy_follows_unique_route():
    inst = generate_instance(5, 1)
    net, _ = train_dqn(dataset_env_factory([inst]), PQCNetwork(2, rng=0), TrainerConfig(episodes=10, seed=0))
    ev = evaluate(GreedyQPolicy(net), [inst])
    routes, opt = brute_force_solve(inst)
    assert routes == [[0, 1, 2, 0]]
    assert ev.costs[0] == pytest.approx(opt)


def test_training_deterministic():
    factory = dataset_env_factory([generate_instance(s, 2) for s in range(3)])
    _, c1 = train_dqn(factory, MlpQNetwork(5, hidden=16, rng=0), TrainerConfig(episodes=8, seed=4))
    _, c2 = train_dqn(factory, MlpQNetwork(5, hidden=16, rng=0), TrainerConfig(episodes=8, seed=4))
    assert list(c1.rows()) == list(c2.rows())


def test_pqc_training_runs():
    factory = dataset_env_factory([generate_instance(s, 2) for s in range(3)])
    net, curve = train_dqn(factory, PQCNetwork(4, CircuitConfig(1, encode_flags=True), rng=0),
                           TrainerConfig(episodes=6, seed=0, optimizer="adam", learning_rate=5e-3))
    assert len(curve) == 6 and np.all(np.isfinite(net.theta))


def test_curve_tail_mean():
    c = TrainingCurve()
    for i in range(10):
        c.append(i, 0, 0, 0, 0)
    assert c.tail_mean(0.2) == pytest.approx(8.5)


# --- networks and optimisers ------------------------------------------------------


def test_mlp_backprop_matches_finite_difference():
    rng = np.random.default_rng(0)
    net = MlpNet([4, 6, 5, 3], rng)
    # nonzero biases keep pre-activations off the ReLU kink at exactly 0
    net.biases = [rng.normal(size=b.shape) for b in net.biases]
    X = rng.normal(size=(7, 4))
    dout = rng.normal(size=(7, 3))
    out, cache = net.forward(X, keep=True)
    grads = net.backward(cache, dout)
    params = net.get_params()
    h = 1e-6
    for pi, p in enumerate(params):
        for idx in list(np.ndindex(p.shape))[:6]:
            bumped = [q.copy() for q in params]
            bumped[pi][idx] += h
            net.set_params(bumped)
            up = np.sum(dout * net.forward(X))
            bumped[pi][idx] -= 2 * h
            net.set_params(bumped)
            dn = np.sum(dout * net.forward(X))
            assert grads[pi][idx] == pytest.approx((up - dn) / (2 * h), abs=1e-5)
        net.set_params(params)


def test_mlp_checkpoint_roundtrip(tmp_path):
    import json

    net = MlpQNetwork(5, hidden=8, rng=1)
    net.save(tmp_path / "m.json")
    back = MlpQNetwork.from_dict(json.loads((tmp_path / "m.json").read_text()))
    X = np.random.default_rng(0).normal(size=(3, feature_size(5)))
    assert np.array_equal(back.q_batch(X), net.q_batch(X))
    other = net.copy()
    other.set_params([p + 1 for p in other.get_params()])
    assert not np.array_equal(other.q_batch(X), net.q_batch(X))


def test_optimisers():
    p = [np.array([1.0, -1.0])]
    g = [np.array([0.5, -0.5])]
    assert np.allclose(Sgd(p, 0.1).step(p, g)[0], [0.95, -0.95])
    # Adam's first step moves each coordinate by lr against the gradient sign
    assert np.allclose(Adam(p, 0.1).step(p, g)[0], [0.9, -0.9])
    with pytest.raises(InvalidArgumentError):
        make_optimizer("rmsprop", p, 0.1)


def test_state_features_layout():
    inst = generate_instance(0, 2)
    env = RoutingEnv(inst)
    s = env.step(env.reset(), 1).next_state
    f = state_features(inst, s)
    assert len(f) == feature_size(5) == 16
    assert f[10:15].tolist() == [0, 1, 0, 0, 0]
    assert f[15] == 0.0
    assert np.all(np.abs(f[:10]) <= 1)


# --- PPO --------------------------------------------------------------------


def test_masked_log_softmax():
    logits = np.array([[1.0, 2.0, 3.0]])
    mask = np.array([[True, False, True]])
    lp = masked_log_softmax(logits, mask)
    assert lp[0, 1] == -np.inf
    assert np.exp(lp[0, [0, 2]]).sum() == pytest.approx(1.0)


def ppo_batch(agent, M, actions, adv, rng):
    X = rng.normal(size=(len(actions), feature_size(agent.num_nodes)))
    logp = masked_log_softmax(agent.q_batch(X), M)[np.arange(len(actions)), actions]
    return X, logp


def test_forced_action_zero_logprob_and_loss():
    agent = PpoAgent(3, hidden=8, rng=0)
    rng = np.random.default_rng(0)
    M = np.zeros((6, 3), bool)
    M[:, 1] = True
    actions = np.ones(6, int)
    X, logp = ppo_batch(agent, M, actions, None, rng)
    assert np.allclose(logp, 0.0)
    returns = agent.value(X)
    adv = rng.normal(size=6)
    adv = (adv - adv.mean()) / adv.std()  # normalised as in training
    loss, g_actor, _ = policy_loss_grads(agent, X, M, actions, logp, adv, returns,
                                         PpoConfig(entropy_coef=0.0))
    assert abs(loss) < 1e-9
    assert all(np.allclose(g, 0) for g in g_actor)


def test_zero_advantage_gives_no_policy_gradient():
    agent = PpoAgent(4, hidden=8, rng=1)
    rng = np.random.default_rng(1)
    M = np.ones((5, 4), bool)
    actions = rng.integers(0, 4, 5)
    X, logp = ppo_batch(agent, M, actions, None, rng)
    _, g_actor, _ = policy_loss_grads(agent, X, M, actions, logp, np.zeros(5), agent.value(X),
                                      PpoConfig(entropy_coef=0.0))
    assert all(np.allclose(g, 0) for g in g_actor)


def test_ratio_clipping():
    ratio = np.array([1.5, 1.5, 0.5, 0.5, 1.1, 0.9])
    adv = np.array([1.0, -1.0, -1.0, 1.0, 1.0, -1.0])
    g = clipped_surrogate_grad(ratio, adv, 0.2)
    assert g[0] == 0.0 and g[2] == 0.0
    assert g[1] != 0.0 and g[3] != 0.0 and g[4] != 0.0 and g[5] != 0.0


def test_actor_gradient_matches_finite_difference():
    agent = PpoAgent(3, hidden=6, rng=2)
    rng = np.random.default_rng(2)
    M = np.array([[True, True, False], [True, True, True], [False, True, True], [True, False, True]])
    actions = np.array([0, 2, 1, 2])
    X, logp = ppo_batch(agent, M, actions, None, rng)
    old = logp - 0.05
    adv = rng.normal(size=4)
    cfg = PpoConfig(entropy_coef=0.05, clip=0.5)
    returns = rng.normal(size=4)
    _, g_actor, g_critic = policy_loss_grads(agent, X, M, actions, old, adv, returns, cfg)
    h = 1e-6
    for net, grads in ((agent.actor, g_actor), (agent.critic, g_critic)):
        params = net.get_params()
        for pi, p in enumerate(params):
            for idx in list(np.ndindex(p.shape))[:4]:
                bumped = [q.copy() for q in params]
                bumped[pi][idx] += h
                net.set_params(bumped)
                up = policy_loss_grads(agent, X, M, actions, old, adv, returns, cfg)[0]
                bumped[pi][idx] -= 2 * h
                net.set_params(bumped)
                dn = policy_loss_grads(agent, X, M, actions, old, adv, returns, cfg)[0]
                net.set_params(params)
                assert grads[pi][idx] == pytest.approx((up - dn) / (2 * h), abs=1e-5)


def test_gae_matches_hand_computation():
    r, v = [1.0, 2.0, 3.0], [0.5, 0.4, 0.3]
    adv, ret = gae(r, v, np.array([0.0, 0.0, 1.0]), 9.0, 0.9, 0.8)
    d2 = 3.0 - 0.3
    d1 = 2.0 + 0.9 * 0.3 - 0.4
    d0 = 1.0 + 0.9 * 0.4 - 0.5
    expect = [d0 + 0.72 * (d1 + 0.72 * d2), d1 + 0.72 * d2, d2]
    assert adv == pytest.approx(expect)
    assert ret == pytest.approx(np.array(expect) + v)


def test_ppo_config_validation():
    with pytest.raises(InvalidArgumentError):
        PpoConfig(clip=1.5)


def test_train_ppo_short_run(tmp_path):
    factory = dataset_env_factory([generate_instance(s, 2) for s in range(3)])
    agent, curve = train_ppo(factory, 5, PpoConfig(episodes=12, rollout_steps=32, seed=0))
    assert len(curve) == 12 and all(np.isfinite(curve.cost))
    agent.save(tmp_path / "p.json")
    import json

    back = PpoAgent.from_dict(json.loads((tmp_path / "p.json").read_text()))
    X = np.random.default_rng(0).normal(size=(2, feature_size(5)))
    assert np.array_equal(back.q_batch(X), agent.q_batch(X))
    _, again = train_ppo(factory, 5, PpoConfig(episodes=12, rollout_steps=32, seed=0))
    assert list(again.rows()) == list(curve.rows())


# --- oracle and evaluation --------------------------------------------------------


def test_oracle_single_request():
    inst = generate_instance(2, 1)
    routes, cost = brute_force_solve(inst)
    w = inst.travel
    assert routes == [[0, 1, 2, 0]]
    assert cost == pytest.approx(0.6 * (w[0, 1] + w[1, 2] + w[2, 0]))


@pytest.mark.parametrize("seed", range(15))
def test_oracle_enumerators_agree(seed):
    inst = generate_instance(seed, 2 + seed % 2, FleetSpec(1, 3 + seed % 3, 20.0))
    routes, cost = brute_force_solve(inst)
    _, cost2 = enumerate_optimum(inst)
    assert cost == pytest.approx(cost2, abs=1e-12)
    assert route_cost(inst, routes).cost == pytest.approx(cost, abs=1e-12)
    assert route_cost(inst, routes).feasible


def test_oracle_symmetric_instance():
    nodes = [
        RequestNode(0, DEPOT, (0.5, 0.5)),
        RequestNode(1, PICKUP, (0.2, 0.5), 1, 40.0, 2),
        RequestNode(2, DELIVERY, (0.1, 0.5), -1, 40.0, 1),
        RequestNode(3, PICKUP, (0.8, 0.5), 1, 40.0, 4),
        RequestNode(4, DELIVERY, (0.9, 0.5), -1, 40.0, 3),
    ]
    inst = make_instance(nodes, FleetSpec(1, 5, 20.0))
    routes, cost = brute_force_solve(inst)
    a = route_cost(inst, [[0, 1, 2, 0], [0, 3, 4, 0]]).cost
    b = route_cost(inst, [[0, 3, 4, 0], [0, 1, 2, 0]]).cost
    assert a == pytest.approx(b) and cost <= a + 1e-12


def test_oracle_capacity_limit():
    with pytest.raises(CapacityError):
        brute_force_solve(generate_instance(0, 5))
    assert brute_force_solve(generate_instance(0, 0)) == ([], 0.0)


def test_oracle_policy_zero_gap():
    ev = evaluate(OraclePolicy(), [generate_instance(s, 1) for s in range(10)])
    assert all(g == pytest.approx(0.0, abs=1e-12) for g in ev.gaps)


def test_random_policy_gap_nonnegative_and_deterministic():
    insts = [generate_instance(s, 2) for s in range(20)]
    a = evaluate(RandomFeasiblePolicy(3), insts)
    b = evaluate(RandomFeasiblePolicy(3), insts)
    assert all(g >= -1e-12 for g in a.gaps)
    assert a.stats == b.stats and all(a.feasible)


def test_every_policy_bounded_by_optimum():
    insts = [generate_instance(s, 2) for s in range(10)]
    for policy in (RandomFeasiblePolicy(0), GreedyQPolicy(MlpQNetwork(5, hidden=8, rng=0)),
                   GreedyQPolicy(PQCNetwork(4, rng=0))):
        ev = evaluate(policy, insts)
        for inst, c in zip(insts, ev.costs):
            assert c >= brute_force_solve(inst)[1] - 1e-12


def test_summarize_empty_and_values():
    assert summarize([])["median"] is None
    s = summarize([1.0, 2.0, 3.0, None])
    assert s["count"] == 3 and s["median"] == 2.0 and s["q1"] == 1.5
