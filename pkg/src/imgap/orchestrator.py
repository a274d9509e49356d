"""Alternating two-phase training: encoders on the latent losses, then PPO.

Each iteration collects one on-policy rollout, snapshots the nets, trains the
encoder pair against the snapshot (phase 1), then trains policy and value on
embeddings recomputed under the now-frozen encoders (phase 2). The two phases
are mutually stop-gradient: phase 1 never writes policy/value parameters and
phase 2 never writes encoder parameters, and both contracts are asserted
bitwise every iteration.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig, rollout_size
from .embedding import (
    EncoderPair,
    embedding_loss,
    encode,
    flatten_encoder_pair,
    init_encoder_pair,
    unflatten_encoder_pair,
)
from .evaluation import evaluate, greedy_actor
from .grid_env import N_ACTIONS, TEACHER_OBS_DIM, VecGridEnv
from .nn import (
    AdamState,
    MlpParams,
    adam_init,
    adam_step,
    flatten_params,
    init_mlp,
    log_prob,
    mlp_forward,
    sample_categorical,
)
from .ppo import AlignedRollout, PpoStats, collect_aligned, compute_gae, ppo_update

CURVE_COLUMNS = ("env_steps", "sr_teacher", "sr_student", "loss_contrastive",
                 "loss_alignment", "loss_stability", "tau", "mean_return")


@dataclass
class TrainSnapshot:
    """Frozen nets at a phase boundary plus the logits they produced."""
    encoders: EncoderPair
    policy: MlpParams
    old_logits_t: np.ndarray
    old_logits_s: np.ndarray


@dataclass
class IterationStats:
    iteration: int
    env_steps: int
    loss_contrastive: float
    loss_alignment: float
    loss_stability: float
    tau: float
    mean_return: float
    ppo: PpoStats


@dataclass
class TrainerState:
    cfg: ExperimentConfig
    encoders: EncoderPair
    policy: MlpParams
    value_net: MlpParams
    enc_opt: AdamState
    pol_opt: AdamState
    val_opt: AdamState
    vec_env: VecGridEnv
    sample_rng: np.random.Generator
    eval_rng: np.random.Generator
    iteration: int = 0
    env_steps: int = 0
    last_mean_return: float = 0.0
    replay: list = field(default_factory=list)


@dataclass
class TrainResult:
    encoders: EncoderPair
    policy: MlpParams
    value_net: MlpParams
    curves: list
    sr_teacher: float
    sr_student: float
    env_steps: int
    wall_time_s: float


def _params_bytes(p: MlpParams) -> bytes:
    return flatten_params(p).tobytes()


def init_trainer(cfg: ExperimentConfig, seed: int) -> TrainerState:
    root = np.random.SeedSequence(seed)
    env_ss, sample_ss, init_ss, eval_ss = root.spawn(4)
    init_rng = np.random.default_rng(init_ss)
    encoders = init_encoder_pair(cfg.net, init_rng, cfg.embed.tau_init)
    policy = init_mlp((cfg.net.embed_dim, *cfg.net.policy_hidden, N_ACTIONS),
                      init_rng, cfg.net.activation, out_gain=cfg.net.policy_out_gain)
    critic_in = TEACHER_OBS_DIM if cfg.ppo.asymmetric_critic else cfg.net.embed_dim
    value_net = init_mlp((critic_in, *cfg.net.value_hidden, 1),
                         init_rng, cfg.net.activation, out_gain=1.0)
    return TrainerState(
        cfg=cfg,
        encoders=encoders,
        policy=policy,
        value_net=value_net,
        enc_opt=adam_init(flatten_encoder_pair(encoders).size, lr=cfg.embed.lr),
        pol_opt=adam_init(flatten_params(policy).size, lr=cfg.ppo.lr),
        val_opt=adam_init(flatten_params(value_net).size, lr=cfg.ppo.lr),
        vec_env=VecGridEnv(cfg.env, cfg.train.n_envs, env_ss),
        sample_rng=np.random.default_rng(sample_ss),
        eval_rng=np.random.default_rng(eval_ss),
    )


def _critic_features(ts: TrainerState, obs_t: np.ndarray, z: np.ndarray) -> np.ndarray:
    return obs_t if ts.cfg.ppo.asymmetric_critic else z


def collect_rollout(ts: TrainerState) -> AlignedRollout:
    """One on-policy rollout: actions sampled from the policy on teacher embeddings."""
    def step_fn(obs_t, obs_s):
        z = encode(ts.encoders.teacher, obs_t)
        logits, _ = mlp_forward(ts.policy, z)
        actions = sample_categorical(logits, ts.sample_rng)
        logps = log_prob(logits, actions)
        values, _ = mlp_forward(ts.value_net, _critic_features(ts, obs_t, z))
        return actions, logps, values[:, 0]

    def bootstrap_fn(obs_t, obs_s):
        z = encode(ts.encoders.teacher, obs_t)
        values, _ = mlp_forward(ts.value_net, _critic_features(ts, obs_t, z))
        return values[:, 0]

    return collect_aligned(ts.vec_env, ts.cfg.train.horizon, step_fn, bootstrap_fn)


def take_snapshot(ts: TrainerState, obs_t_flat: np.ndarray,
                  obs_s_flat: np.ndarray) -> TrainSnapshot:
    encoders = ts.encoders.copy()
    policy = ts.policy.copy()
    old_logits_t, _ = mlp_forward(policy, encode(encoders.teacher, obs_t_flat))
    old_logits_s, _ = mlp_forward(policy, encode(encoders.student, obs_s_flat))
    return TrainSnapshot(encoders, policy, old_logits_t, old_logits_s)


def embedding_phase(ts: TrainerState, snapshot: TrainSnapshot,
                    obs_t_flat: np.ndarray, obs_s_flat: np.ndarray) -> dict:
    """Phase 1: minibatch descent on the combined latent loss, encoders only."""
    cfg = ts.cfg.embed
    policy_before = _params_bytes(ts.policy)
    value_before = _params_bytes(ts.value_net)
    n = obs_t_flat.shape[0]
    sums = {"contrastive": 0.0, "alignment": 0.0, "stability": 0.0}
    count = 0
    for _ in range(cfg.epochs):
        perm = ts.sample_rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            mb = perm[start:start + cfg.minibatch]
            _, grads, terms = embedding_loss(
                ts.encoders, ts.policy, obs_t_flat[mb], obs_s_flat[mb],
                snapshot.old_logits_t[mb], snapshot.old_logits_s[mb],
                cfg.w_contrastive, cfg.w_alignment, cfg.w_stability)
            flat, ts.enc_opt = adam_step(flatten_encoder_pair(ts.encoders),
                                         flatten_encoder_pair(grads), ts.enc_opt)
            flat[-1] = max(flat[-1], np.log(cfg.tau_min))  # temperature floor
            ts.encoders = unflatten_encoder_pair(flat, ts.encoders)
            for k in sums:
                sums[k] += terms[k]
            count += 1
    if _params_bytes(ts.policy) != policy_before or _params_bytes(ts.value_net) != value_before:
        raise RuntimeError("embedding phase altered policy/value parameters")
    return {k: v / max(count, 1) for k, v in sums.items()}


def policy_phase(ts: TrainerState, snapshot: TrainSnapshot,
                 rollout: AlignedRollout) -> PpoStats:
    """Phase 2: PPO on embeddings recomputed under the frozen, updated encoders."""
    cfg = ts.cfg
    enc_before = flatten_encoder_pair(ts.encoders).tobytes()

    obs_t_flat = rollout.flat_obs_t()
    z = encode(ts.encoders.teacher, obs_t_flat)
    # ratios start at 1: behavior logps are recomputed under the snapshot policy
    # on the refreshed embeddings
    snap_logits, _ = mlp_forward(snapshot.policy, z)
    actions_flat = rollout.actions.reshape(-1)
    old_logp = log_prob(snap_logits, actions_flat)

    values = np.vstack([rollout.values, rollout.last_values[None, :]])
    adv_set = compute_gae(rollout.rewards, values, rollout.dones,
                          cfg.ppo.gamma, cfg.ppo.lam)

    ts.policy, ts.value_net, ts.pol_opt, ts.val_opt, stats = ppo_update(
        ts.policy, ts.value_net, z, _critic_features(ts, obs_t_flat, z),
        actions_flat, adv_set.advantages.reshape(-1), adv_set.returns.reshape(-1),
        old_logp, cfg.ppo, ts.sample_rng, ts.pol_opt, ts.val_opt)

    if flatten_encoder_pair(ts.encoders).tobytes() != enc_before:
        raise RuntimeError("policy phase altered encoder parameters")
    return stats


def train_iteration(ts: TrainerState) -> IterationStats:
    rollout = collect_rollout(ts)
    obs_t_flat = rollout.flat_obs_t()
    obs_s_flat = rollout.flat_obs_s()

    if ts.cfg.embed.replay_rollouts > 1:
        ts.replay.append((obs_t_flat, obs_s_flat))
        ts.replay = ts.replay[-ts.cfg.embed.replay_rollouts:]
        emb_t = np.concatenate([x[0] for x in ts.replay])
        emb_s = np.concatenate([x[1] for x in ts.replay])
    else:
        emb_t, emb_s = obs_t_flat, obs_s_flat

    snapshot = take_snapshot(ts, emb_t, emb_s)
    terms = embedding_phase(ts, snapshot, emb_t, emb_s)
    ppo_stats = policy_phase(ts, snapshot, rollout)

    ts.iteration += 1
    ts.env_steps += rollout.n_steps
    if rollout.episode_returns:
        ts.last_mean_return = float(np.mean(rollout.episode_returns))
    return IterationStats(
        iteration=ts.iteration,
        env_steps=ts.env_steps,
        loss_contrastive=terms["contrastive"],
        loss_alignment=terms["alignment"],
        loss_stability=terms["stability"],
        tau=ts.encoders.tau,
        mean_return=ts.last_mean_return,
        ppo=ppo_stats,
    )


def apply_lr_schedule(ts: TrainerState, progress: float) -> None:
    """Linear decay to zero across the budget (progress in [0, 1))."""
    scale = 1.0 - progress
    if ts.cfg.ppo.anneal_lr:
        ts.pol_opt.lr = ts.cfg.ppo.lr * scale
        ts.val_opt.lr = ts.cfg.ppo.lr * scale
    if ts.cfg.embed.anneal_lr:
        ts.enc_opt.lr = ts.cfg.embed.lr * scale


def teacher_actor(ts: TrainerState):
    return greedy_actor(
        lambda obs: mlp_forward(ts.policy, encode(ts.encoders.teacher, obs))[0])


def student_actor(ts: TrainerState):
    """Zero-shot student: the same policy head on student-encoder embeddings."""
    return greedy_actor(
        lambda obs: mlp_forward(ts.policy, encode(ts.encoders.student, obs))[0])


def train(cfg: ExperimentConfig, seed: int, curve_writer=None,
          checkpoint_writer=None) -> TrainResult:
    """Full run under an env-step budget with periodic greedy evaluation."""
    if cfg.budget <= 0:
        raise ValueError("budget must be positive")
    started = time.perf_counter()
    ts = init_trainer(cfg, seed)
    n_iters = cfg.budget // rollout_size(cfg)
    curves = []
    sr_teacher = sr_student = 0.0
    for it in range(1, n_iters + 1):
        apply_lr_schedule(ts, (it - 1) / n_iters)
        stats = train_iteration(ts)
        if it % cfg.train.eval_every == 0 or it == n_iters:
            eval_seed = int(ts.eval_rng.integers(0, 2**63))
            sr_teacher = evaluate(teacher_actor(ts), cfg.env,
                                  cfg.train.eval_episodes, eval_seed, side="teacher")
            sr_student = evaluate(student_actor(ts), cfg.env,
                                  cfg.train.eval_episodes, eval_seed, side="student")
            row = {
                "env_steps": stats.env_steps,
                "sr_teacher": sr_teacher,
                "sr_student": sr_student,
                "loss_contrastive": stats.loss_contrastive,
                "loss_alignment": stats.loss_alignment,
                "loss_stability": stats.loss_stability,
                "tau": stats.tau,
                "mean_return": stats.mean_return,
            }
            curves.append(row)
            if curve_writer is not None:
                curve_writer(row)
            if checkpoint_writer is not None:
                checkpoint_writer(ts, stats.env_steps)
    return TrainResult(ts.encoders, ts.policy, ts.value_net, curves,
                       sr_teacher, sr_student, ts.env_steps,
                       time.perf_counter() - started)
