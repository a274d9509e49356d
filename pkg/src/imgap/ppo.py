"""On-policy optimization: GAE, clipped surrogate, value regression, entropy bonus.

Operates on fixed feature batches (latent embeddings or raw observations), so
an update can never reach back into whatever produced the features.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import PpoConfig
from .nn import (
    AdamState,
    MlpParams,
    adam_step_mlp,
    entropy,
    kl_categorical,
    log_prob,
    log_softmax,
    mlp_backward,
    mlp_forward,
    softmax,
)


@dataclass
class AlignedRollout:
    """Fixed-size on-policy buffer, time-major over a pool of lockstep episodes.

    Arrays are (T, E) or (T, E, obs_dim); flat views use C order, i.e. row
    t*E + e corresponds to tick t of slot e.
    """
    obs_t: np.ndarray
    obs_s: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    values: np.ndarray
    logps: np.ndarray
    last_values: np.ndarray  # bootstrap for unfinished episodes, (E,)
    episode_returns: list = field(default_factory=list)
    episode_successes: list = field(default_factory=list)

    @property
    def n_steps(self) -> int:
        return self.rewards.size

    def flat_obs_t(self) -> np.ndarray:
        return self.obs_t.reshape(-1, self.obs_t.shape[-1])

    def flat_obs_s(self) -> np.ndarray:
        return self.obs_s.reshape(-1, self.obs_s.shape[-1])


@dataclass
class AdvantageSet:
    advantages: np.ndarray
    returns: np.ndarray


def compute_gae(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray,
                gamma: float, lam: float) -> AdvantageSet:
    """Reverse-recursion advantage estimate.

    `values` carries one extra leading entry: the bootstrap value(s) after the
    final step. Shapes may be (T,) / (T+1,) or (T, E) / (T+1, E).
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    t_len = rewards.shape[0]
    if values.shape[0] != t_len + 1 or dones.shape[0] != t_len:
        raise ValueError("compute_gae: misaligned array lengths")
    advantages = np.zeros_like(rewards)
    carry = np.zeros_like(rewards[0] if rewards.ndim > 1 else np.float64(0.0))
    for t in range(t_len - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        delta = rewards[t] + gamma * values[t + 1] * nonterminal - values[t]
        carry = delta + gamma * lam * nonterminal * carry
        advantages[t] = carry
    return AdvantageSet(advantages, advantages + values[:t_len])


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + 1e-8)


@dataclass
class PpoStats:
    policy_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    ratio_p95_after_first_epoch: float


def clipped_objective(ratio: np.ndarray, advantages: np.ndarray,
                      clip_eps: float) -> np.ndarray:
    """Per-sample pessimistic surrogate: min(ratio*A, clip(ratio)*A)."""
    ratio = np.asarray(ratio, dtype=np.float64)
    clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)
    return np.minimum(ratio * advantages, clipped * advantages)


def _entropy_grad(logits: np.ndarray) -> np.ndarray:
    lp = log_softmax(logits)
    p = np.exp(lp)
    h = -(p * lp).sum(axis=1, keepdims=True)
    return -p * (lp + h)


def _kl_grad(logits_p: np.ndarray, logits_q: np.ndarray) -> np.ndarray:
    """d KL(p_theta || q) / d logits_p with q held fixed."""
    lp = log_softmax(logits_p)
    lq = log_softmax(logits_q)
    p = np.exp(lp)
    kl = (p * (lp - lq)).sum(axis=1, keepdims=True)
    return p * ((lp - lq) - kl)


def ppo_update(policy: MlpParams, value_net: MlpParams,
               features: np.ndarray, critic_features: np.ndarray,
               actions: np.ndarray, advantages: np.ndarray, returns: np.ndarray,
               old_logp: np.ndarray, cfg: PpoConfig, rng: np.random.Generator,
               policy_opt: AdamState, value_opt: AdamState,
               kl_ref_logits: np.ndarray | None = None, kl_coef: float = 0.0):
    """Clipped-surrogate update of policy and value nets on a frozen feature batch.

    Optionally adds `kl_coef * KL(pi_theta || ref)` to the policy loss against
    fixed reference logits. Returns updated nets, optimizer states and stats.
    """
    n = features.shape[0]
    adv = np.asarray(advantages, dtype=np.float64)
    returns = np.asarray(returns, dtype=np.float64)
    old_logp = np.asarray(old_logp, dtype=np.float64)
    for name, arr in (("features", features), ("advantages", adv),
                      ("returns", returns), ("old_logp", old_logp)):
        if not np.all(np.isfinite(arr)):
            raise FloatingPointError(f"non-finite {name} passed to ppo_update")
    adv = normalize_advantages(adv)
    actions = np.asarray(actions, dtype=int)

    pol_losses, val_losses, entropies, clip_fracs = [], [], [], []
    ratio_p95 = 1.0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            mb = perm[start:start + cfg.minibatch]
            m = mb.size

            logits, pcache = mlp_forward(policy, features[mb])
            logp = log_prob(logits, actions[mb])
            ratio = np.exp(logp - old_logp[mb])
            surr1 = ratio * adv[mb]
            surr2 = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv[mb]
            take_unclipped = surr1 <= surr2
            pol_loss = -clipped_objective(ratio, adv[mb], cfg.clip_eps).mean()
            ent = entropy(logits)

            dlogp = np.where(take_unclipped, -adv[mb] * ratio, 0.0) / m
            one_hot = np.zeros_like(logits)
            one_hot[np.arange(m), actions[mb]] = 1.0
            dlogits = dlogp[:, None] * (one_hot - softmax(logits))
            dlogits -= (cfg.c_entropy / m) * _entropy_grad(logits)
            if kl_ref_logits is not None and kl_coef > 0.0:
                dlogits += (kl_coef / m) * _kl_grad(logits, kl_ref_logits[mb])
            if not np.all(np.isfinite(dlogits)):
                raise FloatingPointError("non-finite policy gradient in ppo_update")
            pgrads, _ = mlp_backward(pcache, dlogits)
            policy, policy_opt = adam_step_mlp(policy, pgrads, policy_opt)

            v_pred, vcache = mlp_forward(value_net, critic_features[mb])
            v_err = v_pred[:, 0] - returns[mb]
            val_loss = cfg.c_value * float((v_err ** 2).mean())
            dv = (2.0 * cfg.c_value / m) * v_err[:, None]
            vgrads, _ = mlp_backward(vcache, dv)
            value_net, value_opt = adam_step_mlp(value_net, vgrads, value_opt)

            pol_losses.append(float(pol_loss))
            val_losses.append(val_loss)
            entropies.append(float(ent.mean()))
            clip_fracs.append(float((~take_unclipped).mean()))
        if epoch == 0:
            logits_all, _ = mlp_forward(policy, features)
            ratios_all = np.exp(log_prob(logits_all, actions) - old_logp)
            ratio_p95 = float(np.percentile(np.abs(ratios_all - 1.0), 95))

    stats = PpoStats(
        policy_loss=float(np.mean(pol_losses)),
        value_loss=float(np.mean(val_losses)),
        entropy=float(np.mean(entropies)),
        clip_fraction=float(np.mean(clip_fracs)),
        ratio_p95_after_first_epoch=ratio_p95,
    )
    return policy, value_net, policy_opt, value_opt, stats


def sitt_shaped_rewards(rewards: np.ndarray, teacher_logits: np.ndarray,
                        student_logits: np.ndarray, alpha: float) -> np.ndarray:
    """Per-step reward penalty: r - alpha * KL(teacher || student)."""
    kl = kl_categorical(teacher_logits, student_logits)
    return rewards - alpha * kl.reshape(rewards.shape)


def collect_aligned(vec_env, horizon: int, step_fn, bootstrap_fn) -> AlignedRollout:
    """Roll the acting policy for `horizon` lockstep ticks, recording both views.

    `step_fn(obs_t, obs_s) -> (actions, logps, values)` over the env batch;
    `bootstrap_fn(obs_t, obs_s) -> values` for the trailing value estimate.
    """
    n_envs = vec_env.n_envs
    obs_t0, obs_s0 = vec_env.observations()
    obs_t = np.empty((horizon, n_envs, obs_t0.shape[-1]))
    obs_s = np.empty((horizon, n_envs, obs_s0.shape[-1]))
    actions = np.empty((horizon, n_envs), dtype=int)
    rewards = np.empty((horizon, n_envs))
    dones = np.empty((horizon, n_envs))
    values = np.empty((horizon, n_envs))
    logps = np.empty((horizon, n_envs))
    ep_returns: list[float] = []
    ep_successes: list[bool] = []
    for t in range(horizon):
        o_t, o_s = vec_env.observations()
        obs_t[t] = o_t
        obs_s[t] = o_s
        act, logp, val = step_fn(o_t, o_s)
        r, d, finished = vec_env.step(act)
        actions[t] = act
        rewards[t] = r
        dones[t] = d
        values[t] = val
        logps[t] = logp
        for ret, success in finished:
            ep_returns.append(float(ret))
            ep_successes.append(bool(success))
    o_t, o_s = vec_env.observations()
    last_values = np.asarray(bootstrap_fn(o_t, o_s), dtype=np.float64)
    return AlignedRollout(obs_t, obs_s, actions, rewards, dones, values, logps,
                          last_values, ep_returns, ep_successes)
