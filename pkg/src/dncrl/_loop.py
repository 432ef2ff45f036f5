"""Compiled episode loop for the maze and inventory environments.

Covers Gaussian actors with DNC or MinMax mapping and an MLP critic. Random
numbers are drawn in the same order as ``training.train_run`` so that both
routes follow the same trajectory up to floating-point summation order.

Network parameters live in one flat vector per network: for each layer the
(out, in) weight matrix row-major, then its bias. ``dims`` lists the layer sizes.
"""
import math
from collections import namedtuple

import numpy as np
from numba import njit

from dncrl._kernels import sa_search_mlp

MAZE, INVENTORY = 0, 1
MINMAX, DNC = 0, 1
OK, NONFINITE = 0, 1

EnvPack = namedtuple("EnvPack", "kind horizon s_low s_high coeffs fparams walls dirs")
SpacePack = namedtuple("SpacePack", "low high step max_index c_min c_max")
SearchPack = namedtuple("SearchPack", "method eps_steps depth k c_k beta c_beta max_iters "
                                      "complement n_draws")
LearnPack = namedtuple("LearnPack", "gamma alpha_cr alpha_ac huber_delta reward_scale sigma "
                                    "learned_sigma n_act")


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------

@njit(cache=True)
def mlp_forward(flat, dims, x, hs, zs):
    """Fills ``hs[l]`` (input of layer l) and ``zs[l]`` (its pre-activation)."""
    n_layers = dims.shape[0] - 1
    hs[0, :dims[0]] = x
    off = 0
    for layer in range(n_layers):
        n_in = dims[layer]
        n_out = dims[layer + 1]
        b_off = off + n_in * n_out
        for o in range(n_out):
            acc = 0.0
            row = off + o * n_in
            for i in range(n_in):
                acc += flat[row + i] * hs[layer, i]
            zs[layer, o] = acc + flat[b_off + o]
        off = b_off + n_out
        if layer < n_layers - 1:
            for o in range(n_out):
                hs[layer + 1, o] = max(zs[layer, o], 0.0)
    return zs[n_layers - 1, :dims[n_layers]].copy()


@njit(cache=True)
def mlp_backward_step(flat, dims, hs, zs, g_out, lr):
    """SGD step on ``sum(output * g_out)`` using the activations of the last forward pass.

    Returns False (leaving ``flat`` untouched) if any gradient entry is non-finite.
    """
    n_layers = dims.shape[0] - 1
    offs = np.empty(n_layers, dtype=np.int64)
    off = 0
    for layer in range(n_layers):
        offs[layer] = off
        off += dims[layer] * dims[layer + 1] + dims[layer + 1]
    grad = np.empty(off)
    g = g_out.copy()
    for layer in range(n_layers - 1, -1, -1):
        n_in = dims[layer]
        n_out = dims[layer + 1]
        w_off = offs[layer]
        b_off = w_off + n_in * n_out
        for o in range(n_out):
            for i in range(n_in):
                grad[w_off + o * n_in + i] = g[o] * hs[layer, i]
            grad[b_off + o] = g[o]
        if layer > 0:
            g_prev = np.zeros(n_in)
            for o in range(n_out):
                row = w_off + o * n_in
                for i in range(n_in):
                    g_prev[i] += flat[row + i] * g[o]
            for i in range(n_in):
                if zs[layer - 1, i] <= 0.0:
                    g_prev[i] = 0.0
            g = g_prev
    for j in range(off):
        if not math.isfinite(grad[j]):
            return False
    for j in range(off):
        flat[j] -= lr * grad[j]
    return True


@njit(cache=True)
def fourier(state, s_low, s_high, coeffs):
    n_feat, dim = coeffs.shape
    s = np.empty(dim)
    for j in range(dim):
        v = min(max(state[j], s_low[j]), s_high[j])
        s[j] = min(max((v - s_low[j]) / (s_high[j] - s_low[j]), 0.0), 1.0)
    phi = np.empty(n_feat)
    for r in range(n_feat):
        acc = 0.0
        for j in range(dim):
            acc += coeffs[r, j] * s[j]
        phi[r] = math.cos(np.pi * acc)
    return phi


# ---------------------------------------------------------------------------
# environments
# ---------------------------------------------------------------------------

@njit(cache=True)
def _segment_hits_rect(px, py, qx, qy, x0, y0, x1, y1):
    dx = qx - px
    dy = qy - py
    t0 = 0.0
    t1 = 1.0
    nums = (px - x0, x1 - px, py - y0, y1 - py)
    dens = (-dx, dx, -dy, dy)
    for m in range(4):
        num = nums[m]
        den = dens[m]
        if den == 0.0:
            if num < 0.0:
                return False
            continue
        t = num / den
        if den < 0:
            t0 = max(t0, t)
        else:
            t1 = min(t1, t)
        if t0 > t1:
            return False
    return True


@njit(cache=True)
def maze_step(pos, action, fparams, walls, dirs, rng):
    """fparams: step_length, noise_prob, step_reward, goal_reward, goal x, goal y, goal radius."""
    step_len = fparams[0]
    active = 0.0
    mx = 0.0
    my = 0.0
    for i in range(action.shape[0]):
        active += action[i]
        mx += action[i] * dirs[i, 0]
        my += action[i] * dirs[i, 1]
    scale = max(1.0, active)
    mx = step_len * mx / scale
    my = step_len * my / scale
    if rng.random() < fparams[1]:
        mx += -step_len + 2.0 * step_len * rng.random()
        my += -step_len + 2.0 * step_len * rng.random()
    x = pos[0]
    y = pos[1]
    nx = x + mx
    ny = y + my
    blocked = not (0.0 <= nx <= 1.0 and 0.0 <= ny <= 1.0)
    if not blocked:
        for w in range(walls.shape[0]):
            if _segment_hits_rect(x, y, nx, ny, walls[w, 0], walls[w, 1], walls[w, 2], walls[w, 3]):
                blocked = True
                break
    if blocked:
        nx = x
        ny = y
    out = np.empty(2)
    out[0] = nx
    out[1] = ny
    if math.hypot(nx - fparams[4], ny - fparams[5]) <= fparams[6]:
        return out, fparams[3], True
    return out, fparams[2], False


@njit(cache=True)
def inventory_step(levels, order_up_to, fparams, demand):
    """fparams: holding, backorder, per-item order cost, common order cost."""
    n = levels.shape[0]
    new = np.empty(n)
    n_orders = 0
    q_sum = 0.0
    holding = 0.0
    backorder = 0.0
    for i in range(n):
        q = max(0.0, order_up_to[i] - levels[i])
        if q != 0.0:
            n_orders += 1
        q_sum += q
        new[i] = levels[i] + q - demand[i]
        holding += max(new[i], 0.0)
        backorder += max(-new[i], 0.0)
    fixed = fparams[2] * n_orders + (fparams[3] if q_sum > 0 else 0.0)
    cost = fparams[0] * holding + fparams[1] * backorder + fixed
    return new, -cost, False


# ---------------------------------------------------------------------------
# mapping
# ---------------------------------------------------------------------------

@njit(cache=True)
def base_index(a_hat, sp):
    n = a_hat.shape[0]
    idx = np.empty(n, dtype=np.int64)
    for i in range(n):
        unit = (min(max(a_hat[i], sp.c_min), sp.c_max) - sp.c_min) / (sp.c_max - sp.c_min)
        y = unit * (sp.high[i] - sp.low[i]) + sp.low[i]
        v = math.floor((y - sp.low[i]) / sp.step[i] + 0.5)
        idx[i] = int(min(max(v, 0.0), float(sp.max_index[i])))
    return idx


@njit(cache=True)
def _split_critic(flat, dims, phi, n_act):
    """First-layer state part, transposed action weights and transposed remaining layers."""
    n_feat = phi.shape[0]
    n_in = dims[0]
    h = dims[1]
    state_part = np.empty(h)
    w_act_t = np.empty((n_act, h))
    for o in range(h):
        acc = 0.0
        row = o * n_in
        for i in range(n_feat):
            acc += flat[row + i] * phi[i]
        state_part[o] = acc + flat[n_in * h + o]
        for j in range(n_act):
            w_act_t[j, o] = flat[row + n_feat + j]
    rest = np.empty(flat.shape[0] - (n_in * h + h))
    src = n_in * h + h
    dst = 0
    for layer in range(1, dims.shape[0] - 1):
        a = dims[layer]
        b = dims[layer + 1]
        for i in range(a):
            for o in range(b):
                rest[dst + i * b + o] = flat[src + o * a + i]
        dst += a * b
        src += a * b
        for o in range(b):
            rest[dst + o] = flat[src + o]
        dst += b
        src += b
    return state_part, w_act_t, rest, dims[1:].copy()


@njit(cache=True)
def map_action(a_hat, phi, critic_flat, critic_dims, sp, se, rng_search):
    """Grid index of the mapped action."""
    base = base_index(a_hat, sp)
    if se.method == MINMAX:
        return base
    draws = np.empty(se.n_draws)
    for j in range(se.n_draws):
        draws[j] = rng_search.random()
    state_part, w_act_t, rest, dims = _split_critic(critic_flat, critic_dims, phi, a_hat.shape[0])
    best, _ = sa_search_mlp(base, sp.max_index, sp.low, sp.step, sp.high - sp.low, se.eps_steps,
                            se.depth, se.k, se.c_k, se.beta, se.c_beta, se.max_iters,
                            se.complement, draws, state_part, w_act_t, rest, dims)
    return best


# ---------------------------------------------------------------------------
# episodes
# ---------------------------------------------------------------------------

@njit(cache=True)
def _policy(actor_flat, actor_dims, phi, lp, hs, zs):
    z = mlp_forward(actor_flat, actor_dims, phi, hs, zs)
    n = lp.n_act
    mu = np.tanh(z[:n])
    sigma = np.empty(n)
    for i in range(n):
        if lp.learned_sigma:
            sigma[i] = np.logaddexp(0.0, z[n + i]) + 1e-6
        else:
            sigma[i] = lp.sigma
    return z, mu, sigma


@njit(cache=True)
def _critic_input(phi, idx, sp):
    n_feat = phi.shape[0]
    x = np.empty(n_feat + idx.shape[0])
    x[:n_feat] = phi
    for i in range(idx.shape[0]):
        v = sp.low[i] + idx[i] * sp.step[i]
        x[n_feat + i] = (v - sp.low[i]) / (sp.high[i] - sp.low[i])
    return x


@njit(cache=True)
def _env_step(ep, state, values, t, demand, rng_env):
    if ep.kind == MAZE:
        return maze_step(state, values, ep.fparams, ep.walls, ep.dirs, rng_env)
    return inventory_step(state, values, ep.fparams, demand[t])


@njit(cache=True)
def run_episode(state, demand, ep, sp, se, lp, actor_flat, actor_dims, critic_flat, critic_dims,
                train, rng_env, rng_policy, rng_search, visits):
    """One episode from ``state``; updates the flat parameters in place when ``train``.

    Returns (undiscounted return, steps, status). ``visits`` (may be 0 x 0)
    accumulates the post-step position of maze runs on a square grid.
    """
    width = max(actor_dims.max(), critic_dims.max())
    a_hs = np.zeros((actor_dims.shape[0], width))
    a_zs = np.zeros((actor_dims.shape[0], width))
    c_hs = np.zeros((critic_dims.shape[0], width))
    c_zs = np.zeros((critic_dims.shape[0], width))
    n = lp.n_act
    n_bins = visits.shape[0]
    phi = fourier(state, ep.s_low, ep.s_high, ep.coeffs)
    total = 0.0
    t = 0
    done = False
    while not done:
        z, mu, sigma = _policy(actor_flat, actor_dims, phi, lp, a_hs, a_zs)
        if train:
            a_hat = np.empty(n)
            for i in range(n):
                a_hat[i] = mu[i] + sigma[i] * rng_policy.standard_normal()
        else:
            a_hat = mu
        idx = map_action(a_hat, phi, critic_flat, critic_dims, sp, se, rng_search)
        values = sp.low + idx * sp.step
        next_state, reward, terminal = _env_step(ep, state, values, t, demand, rng_env)
        t += 1
        done = terminal or t >= ep.horizon
        total += reward
        if n_bins > 0:
            ix = min(max(int(next_state[0] * n_bins), 0), n_bins - 1)
            iy = min(max(int(next_state[1] * n_bins), 0), n_bins - 1)
            visits[iy, ix] += 1
        next_phi = fourier(next_state, ep.s_low, ep.s_high, ep.coeffs)
        if train:
            q_next = 0.0
            if not terminal:
                _, mu_n, sigma_n = _policy(actor_flat, actor_dims, next_phi, lp, a_hs, a_zs)
                a_next = np.empty(n)
                for i in range(n):
                    a_next[i] = mu_n[i] + sigma_n[i] * rng_policy.standard_normal()
                idx_next = map_action(a_next, next_phi, critic_flat, critic_dims, sp, se,
                                      rng_search)
                q_next = mlp_forward(critic_flat, critic_dims,
                                     _critic_input(next_phi, idx_next, sp), c_hs, c_zs)[0]
            pred = mlp_forward(critic_flat, critic_dims, _critic_input(phi, idx, sp), c_hs, c_zs)[0]
            delta = lp.reward_scale * reward + (0.0 if terminal else lp.gamma * q_next) - pred
            if not math.isfinite(delta):
                return total, t, NONFINITE
            # Huber gradient at target pred + delta
            dpred = min(max(-delta, -lp.huber_delta), lp.huber_delta)
            g = np.empty(1)
            g[0] = dpred
            if not mlp_backward_step(critic_flat, critic_dims, c_hs, c_zs, g, lp.alpha_cr):
                return total, t, NONFINITE
            z, mu, sigma = _policy(actor_flat, actor_dims, phi, lp, a_hs, a_zs)
            dz = np.empty(z.shape[0])
            for i in range(n):
                diff = a_hat[i] - mu[i]
                inv_var = 1.0 / (sigma[i] * sigma[i])
                dz[i] = -delta * (diff * inv_var * (1.0 - mu[i] * mu[i]))
                if lp.learned_sigma:
                    dsig = diff * diff * inv_var / sigma[i] - 1.0 / sigma[i]
                    dz[n + i] = -delta * (dsig * 0.5 * (1.0 + math.tanh(0.5 * z[n + i])))
            if not mlp_backward_step(actor_flat, actor_dims, a_hs, a_zs, dz, lp.alpha_ac):
                return total, t, NONFINITE
        state = next_state
        phi = next_phi
    return total, t, OK
