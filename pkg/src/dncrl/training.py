"""Online actor-critic with a pluggable continuous-to-discrete mapper.

Per step: sample a continuous action from the Gaussian actor, map it to a
discrete action (DNC, MinMax or kNN), act, map the successor's sampled action
the same way, form the TD error and take one SGD step on critic then actor.
The critic scores discrete actions; the actor's score function uses the
continuous sample.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from dncrl.envs.base import Env
from dncrl.mapping import ActionSpaceSpec, enumerate_action_space
from dncrl.numeric import (SIGMA_FLOOR, GaussianPolicyParams, MlpParams, gaussian_log_prob_grad,
                           gaussian_sample, huber_loss_grad, make_streams, mlp_forward, mlp_grad,
                           sgd_step, sigmoid, softplus)


@dataclass
class TrainConfig:
    gamma: float = 0.99
    alpha_cr: float = 1e-2
    alpha_ac: float = 1e-3
    sigma: float | str = 0.5          # constant value, or "learned"
    n_episodes: int = 1000
    eval_every: int = 100
    eval_episodes: int = 10
    actor_hidden: int = 0             # nodes per hidden layer; 0 means a linear network
    critic_hidden: int = 32
    n_hidden_layers: int = 2
    huber_delta: float = 1.0
    reward_scale: float = 1.0         # rewards are multiplied by this for learning only

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.alpha_cr < 0 or self.alpha_ac < 0:
            raise ValueError("learning rates must be non-negative")
        if self.alpha_ac > self.alpha_cr:
            raise ValueError("actor learning rate must not exceed the critic's")
        if self.sigma != "learned" and not float(self.sigma) > 0:
            raise ValueError("sigma must be positive or 'learned'")
        if self.eval_every < 1 or self.n_episodes < 0:
            raise ValueError("bad episode schedule")
        if not self.huber_delta > 0 or not self.reward_scale > 0:
            raise ValueError("huber_delta and reward_scale must be positive")

    @property
    def learned_sigma(self) -> bool:
        return self.sigma == "learned"


def _layers(n_in: int, hidden: int, n_layers: int, n_out: int) -> tuple:
    return (n_in,) + ((hidden,) * n_layers if hidden > 0 else ()) + (n_out,)


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------

class GaussianActor:
    """Gaussian policy with tanh-squashed means and optional softplus sigma heads."""

    def __init__(self, params: MlpParams, n_actions: int, sigma):
        self.params = params
        self.n_actions = n_actions
        self.sigma = sigma  # float, or "learned"

    @classmethod
    def init(cls, n_features, n_actions, cfg: TrainConfig, rng):
        n_out = 2 * n_actions if cfg.learned_sigma else n_actions
        params = MlpParams.init(_layers(n_features, cfg.actor_hidden, cfg.n_hidden_layers, n_out), rng)
        return cls(params, n_actions, "learned" if cfg.learned_sigma else float(cfg.sigma))

    def dist(self, phi):
        z, cache = mlp_forward(self.params, phi)
        n = self.n_actions
        mu = np.tanh(z[:n])
        if self.sigma == "learned":
            sigma = softplus(z[n:]) + SIGMA_FLOOR
        else:
            sigma = np.full(n, self.sigma)
        return GaussianPolicyParams(mu, sigma), cache

    def mean(self, phi) -> np.ndarray:
        return self.dist(phi)[0].mu

    def sample(self, phi, rng) -> np.ndarray:
        return gaussian_sample(self.dist(phi)[0], rng)

    def with_params(self, params: MlpParams) -> "GaussianActor":
        return GaussianActor(params, self.n_actions, self.sigma)


class CategoricalActor:
    """Softmax policy over an enumerated action list."""

    def __init__(self, params: MlpParams, actions: np.ndarray):
        self.params = params
        self.actions = actions

    @classmethod
    def init(cls, n_features, actions, cfg: TrainConfig, rng):
        layers = _layers(n_features, cfg.actor_hidden, cfg.n_hidden_layers, len(actions))
        return cls(MlpParams.init(layers, rng), actions)

    def probs(self, phi):
        z, cache = mlp_forward(self.params, phi)
        z = z - z.max()
        e = np.exp(z)
        return e / e.sum(), cache


class Critic:
    """Q(s, a) network on [state features, min-max normalized action]."""

    def __init__(self, params: MlpParams, spec: ActionSpaceSpec, n_features: int):
        self.params = params
        self.spec = spec
        self.n_features = n_features

    @classmethod
    def init(cls, n_features, spec: ActionSpaceSpec, cfg: TrainConfig, rng):
        layers = _layers(n_features + spec.n_dims, cfg.critic_hidden, cfg.n_hidden_layers, 1)
        return cls(MlpParams.init(layers, rng), spec, n_features)

    def inputs(self, phi, action) -> np.ndarray:
        return np.concatenate([phi, self.spec.normalize(action)])

    def q(self, phi, action) -> float:
        out, _ = mlp_forward(self.params, self.inputs(phi, action))
        return float(out[0])

    def oracle(self, phi) -> "CriticOracle":
        return CriticOracle(self, phi)

    def with_params(self, params: MlpParams) -> "Critic":
        return Critic(params, self.spec, self.n_features)


class CriticOracle:
    """Batch scorer ``(state, actions) -> Q`` for one fixed state's features.

    The state part of the first layer is computed once per state.
    """

    def __init__(self, critic: Critic, phi):
        p = critic.params
        nf = critic.n_features
        w0 = p.weights[0]
        self.state_part = w0[:, :nf] @ phi + p.biases[0]
        self.w_act = np.ascontiguousarray(w0[:, nf:])
        self.rest = list(zip(p.weights[1:], p.biases[1:]))
        self.low = critic.spec.low
        self.span = critic.spec.high - critic.spec.low
        self._packed = None

    def __call__(self, state, actions) -> np.ndarray:
        h = ((np.asarray(actions, dtype=np.float64) - self.low) / self.span) @ self.w_act.T
        h = h + self.state_part
        for w, b in self.rest:
            h = np.maximum(h, 0.0) @ w.T + b
        return h[:, 0]

    def packed(self):
        """Arguments for the compiled search kernel."""
        if self._packed is None:
            flat = np.concatenate([a.ravel() for w, b in self.rest for a in (w.T, b)]) \
                if self.rest else np.zeros(0)
            dims = np.array([self.state_part.shape[0]] + [w.shape[0] for w, _ in self.rest],
                            dtype=np.int64)
            self._packed = (self.state_part, np.ascontiguousarray(self.w_act.T), flat, dims)
        return self._packed


# ---------------------------------------------------------------------------
# updates
# ---------------------------------------------------------------------------

def td_error(r: float, gamma: float, q_next: float, q_curr: float, done: bool) -> float:
    return r + (0.0 if done else gamma * q_next) - q_curr


def critic_update(critic: Critic, phi, action, delta: float, alpha_cr: float,
                  huber_delta: float = 1.0) -> Critic:
    """One SGD step on Huber(Q(s, a), Q(s, a) + delta); the target is held fixed."""
    if not math.isfinite(delta):
        raise FloatingPointError(f"non-finite TD error {delta}")
    out, cache = mlp_forward(critic.params, critic.inputs(phi, action))
    pred = float(out[0])
    _, dpred = huber_loss_grad(pred, pred + delta, huber_delta)
    grad = mlp_grad(critic.params, cache, np.array([dpred]))
    return critic.with_params(sgd_step(critic.params, grad, alpha_cr))


def actor_update(actor: GaussianActor, phi, a_hat, delta: float, alpha_ac: float) -> GaussianActor:
    """Ascent step on ``delta * log pi(a_hat | s)``."""
    z, cache = mlp_forward(actor.params, phi)
    n = actor.n_actions
    mu = np.tanh(z[:n])
    if actor.sigma == "learned":
        sigma = softplus(z[n:]) + SIGMA_FLOOR
    else:
        sigma = np.full(n, actor.sigma)
    _, dmu, dsigma = gaussian_log_prob_grad(GaussianPolicyParams(mu, sigma), a_hat)
    dz = dmu * (1.0 - mu * mu)
    if actor.sigma == "learned":
        dz = np.concatenate([dz, dsigma * sigmoid(z[n:])])
    grad = mlp_grad(actor.params, cache, -delta * dz)
    return actor.with_params(sgd_step(actor.params, grad, alpha_ac))


def categorical_update(actor: CategoricalActor, phi, index: int, delta: float,
                       alpha_ac: float) -> CategoricalActor:
    p, cache = actor.probs(phi)
    dlogits = -p
    dlogits[index] += 1.0
    grad = mlp_grad(actor.params, cache, -delta * dlogits)
    return CategoricalActor(sgd_step(actor.params, grad, alpha_ac), actor.actions)


# ---------------------------------------------------------------------------
# loops
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    episode_returns: list = field(default_factory=list)
    eval_points: list = field(default_factory=list)   # (episode, mean return)
    episode_seconds: list = field(default_factory=list)
    steps: int = 0
    actor: object = None
    critic: Critic | None = None


def _eval_seed(seed: int, point: int) -> int:
    return int(np.random.SeedSequence([seed, 7919, point]).generate_state(1)[0])


def eval_policy(env: Env, actor, mapper, n_episodes: int, seed: int,
                critic: Critic | None = None) -> float:
    """Mean undiscounted return using the actor's mean action (no sampling noise)."""
    streams = make_streams(seed)
    features = env.feature_map()
    total = 0.0
    for _ in range(n_episodes):
        state = env.reset(streams.env)
        done, ep_return = False, 0.0
        while not done:
            phi = features(env.observe(state))
            if isinstance(actor, CategoricalActor):
                p, _ = actor.probs(phi)
                action = actor.actions[int(np.argmax(p))]
            else:
                oracle = critic.oracle(phi) if critic is not None else None
                action = mapper(state, actor.mean(phi), oracle, streams.search)
            state, reward, done = env.step(action, streams.env)
            ep_return += reward
        total += ep_return
    return total / max(n_episodes, 1)


def train_run(env: Env, mapper, cfg: TrainConfig, seed: int, step_callback=None,
              progress=None, engine: str = "auto", visits=None) -> TrainResult:
    """Train a Gaussian actor and MLP critic for ``cfg.n_episodes`` episodes.

    ``engine`` picks the compiled loop ("compiled"), this Python loop
    ("python"), or the compiled one whenever it supports the combination
    ("auto"). ``visits`` is an optional square count grid that accumulates
    post-step maze positions.
    """
    if engine not in ("auto", "python", "compiled"):
        raise ValueError(f"unknown engine {engine!r}")
    fast_ok = compiled_supported(env, mapper) and step_callback is None
    if engine == "compiled" and not fast_ok:
        raise ValueError("the compiled loop supports maze/inventory with dnc/minmax and no callback")
    if engine != "python" and fast_ok:
        return _compiled_run(env, mapper, cfg, seed, progress, visits)
    if visits is not None:
        step_callback = _visit_counter(visits, step_callback)
    streams = make_streams(seed)
    features = env.feature_map()
    spec = env.action_spec
    actor = GaussianActor.init(features.n_features, spec.n_dims, cfg, streams.init)
    critic = Critic.init(features.n_features, spec, cfg, streams.init)
    result = TrainResult()
    start = time.perf_counter()

    for episode in range(cfg.n_episodes):
        state = env.reset(streams.env)
        phi = features(env.observe(state))
        done, ep_return = False, 0.0
        while not done:
            try:
                a_hat = actor.sample(phi, streams.policy)
                action = mapper(state, a_hat, critic.oracle(phi), streams.search)
                next_state, reward, done = env.step(action, streams.env)
                terminal = done and not env.truncated
                next_phi = features(env.observe(next_state))
                q_next = 0.0
                if not terminal:
                    a_hat_next = actor.sample(next_phi, streams.policy)
                    next_action = mapper(next_state, a_hat_next, critic.oracle(next_phi),
                                         streams.search)
                    q_next = critic.q(next_phi, next_action)
                delta = td_error(cfg.reward_scale * reward, cfg.gamma, q_next,
                                 critic.q(phi, action), terminal)
                critic = critic_update(critic, phi, action, delta, cfg.alpha_cr, cfg.huber_delta)
                actor = actor_update(actor, phi, a_hat, delta, cfg.alpha_ac)
            except Exception as exc:
                raise RuntimeError(f"seed {seed}, episode {episode}, step {env.t}: {exc}") from exc
            if step_callback is not None:
                step_callback(state, action, reward, next_state, done)
            result.steps += 1
            ep_return += reward
            state, phi = next_state, next_phi
        result.episode_returns.append(ep_return)
        result.episode_seconds.append(time.perf_counter() - start)
        if (episode + 1) % cfg.eval_every == 0:
            point = (episode + 1) // cfg.eval_every
            value = eval_policy(env, actor, mapper, cfg.eval_episodes, _eval_seed(seed, point), critic)
            result.eval_points.append((episode + 1, value))
            if progress is not None:
                progress(episode + 1, value)
    result.actor, result.critic = actor, critic
    return result


def _visit_counter(visits, inner):
    n_bins = visits.shape[0]

    def callback(state, action, reward, next_state, done):
        ix = min(max(int(next_state[0] * n_bins), 0), n_bins - 1)
        iy = min(max(int(next_state[1] * n_bins), 0), n_bins - 1)
        visits[iy, ix] += 1
        if inner is not None:
            inner(state, action, reward, next_state, done)
    return callback


# ---------------------------------------------------------------------------
# compiled route
# ---------------------------------------------------------------------------

def compiled_supported(env: Env, mapper) -> bool:
    from dncrl.envs.inventory import InventoryEnv
    from dncrl.envs.maze import MazeEnv
    from dncrl.mapping import DncMapper, MinMaxMapper

    if not isinstance(env, (MazeEnv, InventoryEnv)):
        return False
    return isinstance(mapper, MinMaxMapper) or (isinstance(mapper, DncMapper) and mapper.compiled)


def _packs(env: Env, mapper, cfg: TrainConfig, features):
    from dncrl import _loop
    from dncrl.envs.maze import MazeEnv
    from dncrl.mapping import DncMapper, _iteration_bound

    spec = env.action_spec
    if isinstance(env, MazeEnv):
        c = env.cfg
        fparams = [c.step_length, c.noise_prob, c.step_reward, c.goal_reward, *c.goal]
        walls = np.array(c.walls, dtype=np.float64).reshape(-1, 4)
        ep = _loop.EnvPack(_loop.MAZE, env.horizon, env.state_low, env.state_high,
                           features.coeffs, np.array(fparams, dtype=np.float64), walls, env._dirs)
    else:
        c = env.cfg
        fparams = [c.holding, c.backorder, c.order_cost, c.common_order_cost]
        ep = _loop.EnvPack(_loop.INVENTORY, env.horizon, env.state_low, env.state_high,
                           features.coeffs, np.array(fparams, dtype=np.float64),
                           np.zeros((0, 4)), np.zeros((0, 2)))
    sp = _loop.SpacePack(spec.low, spec.high, spec.step, spec.max_index, float(spec.c_min),
                         float(spec.c_max))
    if isinstance(mapper, DncMapper):
        sa, d = mapper.sparams, mapper.pparams.depth
        k = sa.k_init_fraction * (2 * d * spec.n_dims + 1)
        se = _loop.SearchPack(_loop.DNC, mapper.eps_steps, d, k, sa.cooling_fraction * k,
                              sa.beta_init, sa.cooling_fraction * sa.beta_init, sa.max_iters,
                              sa.acceptance == "complement", 2 * _iteration_bound(sa))
    else:
        se = _loop.SearchPack(_loop.MINMAX, np.zeros(spec.n_dims, dtype=np.int64), 1, 0.0, 0.0,
                              1.0, 0.0, 1, False, 0)
    lp = _loop.LearnPack(cfg.gamma, cfg.alpha_cr, cfg.alpha_ac, cfg.huber_delta, cfg.reward_scale,
                         0.0 if cfg.learned_sigma else float(cfg.sigma), cfg.learned_sigma,
                         spec.n_dims)
    return ep, sp, se, lp


def _episode_demand(env: Env):
    demand = getattr(env, "demand", None)
    return demand if demand is not None else np.zeros((0, env.action_spec.n_dims))


def _compiled_eval(env, packs, actor_flat, actor_dims, critic_flat, critic_dims,
                   n_episodes: int, seed: int) -> float:
    from dncrl._loop import run_episode

    streams = make_streams(seed)
    no_visits = np.zeros((0, 0), dtype=np.int64)
    total = 0.0
    for _ in range(n_episodes):
        state = env.reset(streams.env)
        ret, _, _ = run_episode(state, _episode_demand(env), *packs, actor_flat, actor_dims,
                                critic_flat, critic_dims, False, streams.env, streams.policy,
                                streams.search, no_visits)
        total += ret
    return total / max(n_episodes, 1)


def _compiled_run(env: Env, mapper, cfg: TrainConfig, seed: int, progress, visits) -> TrainResult:
    from dncrl._loop import NONFINITE, run_episode

    streams = make_streams(seed)
    features = env.feature_map()
    spec = env.action_spec
    actor = GaussianActor.init(features.n_features, spec.n_dims, cfg, streams.init)
    critic = Critic.init(features.n_features, spec, cfg, streams.init)
    packs = _packs(env, mapper, cfg, features)
    a_flat, c_flat = actor.params.flat(), critic.params.flat()
    a_dims = np.array(actor.params.layer_sizes, dtype=np.int64)
    c_dims = np.array(critic.params.layer_sizes, dtype=np.int64)
    grid = visits if visits is not None else np.zeros((0, 0), dtype=np.int64)
    result = TrainResult()
    start = time.perf_counter()
    for episode in range(cfg.n_episodes):
        state = env.reset(streams.env)
        ret, steps, status = run_episode(state, _episode_demand(env), *packs, a_flat, a_dims,
                                         c_flat, c_dims, True, streams.env, streams.policy,
                                         streams.search, grid)
        if status == NONFINITE:
            raise RuntimeError(f"seed {seed}, episode {episode}: non-finite TD error or gradient")
        result.steps += steps
        result.episode_returns.append(ret)
        result.episode_seconds.append(time.perf_counter() - start)
        if (episode + 1) % cfg.eval_every == 0:
            point = (episode + 1) // cfg.eval_every
            value = _compiled_eval(env, packs, a_flat, a_dims, c_flat, c_dims, cfg.eval_episodes,
                                   _eval_seed(seed, point))
            result.eval_points.append((episode + 1, value))
            if progress is not None:
                progress(episode + 1, value)
    result.actor = actor.with_params(MlpParams.from_flat(actor.params.layer_sizes, a_flat))
    result.critic = critic.with_params(MlpParams.from_flat(critic.params.layer_sizes, c_flat))
    return result


def vac_train_run(env: Env, cfg: TrainConfig, seed: int, limit: int = 10**6,
                  step_callback=None, progress=None, visits=None) -> TrainResult:
    """Same loop with a categorical actor over the enumerated action space."""
    if visits is not None:
        step_callback = _visit_counter(visits, step_callback)
    actions = enumerate_action_space(env.action_spec, limit)
    streams = make_streams(seed)
    features = env.feature_map()
    actor = CategoricalActor.init(features.n_features, actions, cfg, streams.init)
    critic = Critic.init(features.n_features, env.action_spec, cfg, streams.init)
    result = TrainResult()
    start = time.perf_counter()

    for episode in range(cfg.n_episodes):
        state = env.reset(streams.env)
        phi = features(env.observe(state))
        done, ep_return = False, 0.0
        while not done:
            p, _ = actor.probs(phi)
            index = int(streams.policy.choice(len(actions), p=p))
            action = actions[index]
            next_state, reward, done = env.step(action, streams.env)
            terminal = done and not env.truncated
            next_phi = features(env.observe(next_state))
            q_next = 0.0
            if not terminal:
                p_next, _ = actor.probs(next_phi)
                q_next = critic.q(next_phi, actions[int(streams.policy.choice(len(actions), p=p_next))])
            delta = td_error(cfg.reward_scale * reward, cfg.gamma, q_next, critic.q(phi, action),
                             terminal)
            critic = critic_update(critic, phi, action, delta, cfg.alpha_cr, cfg.huber_delta)
            actor = categorical_update(actor, phi, index, delta, cfg.alpha_ac)
            if step_callback is not None:
                step_callback(state, action, reward, next_state, done)
            result.steps += 1
            ep_return += reward
            state, phi = next_state, next_phi
        result.episode_returns.append(ep_return)
        result.episode_seconds.append(time.perf_counter() - start)
        if (episode + 1) % cfg.eval_every == 0:
            point = (episode + 1) // cfg.eval_every
            value = eval_policy(env, actor, None, cfg.eval_episodes, _eval_seed(seed, point))
            result.eval_points.append((episode + 1, value))
            if progress is not None:
                progress(episode + 1, value)
    result.actor, result.critic = actor, critic
    return result
