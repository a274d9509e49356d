"""Comparison methods: behavior cloning from an isolated teacher, and a jointly
trained teacher penalized for diverging from its student (KL on both the reward
signal and the policy loss). Ablations of the main method are config toggles.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, replace as dc_replace

import numpy as np

from .config import ExperimentConfig, config_from_dict, config_to_dict, rollout_size
from .evaluation import evaluate, greedy_actor
from .grid_env import N_ACTIONS, STUDENT_OBS_DIM, TEACHER_OBS_DIM, VecGridEnv
from .nn import (
    AdamState,
    MlpParams,
    adam_init,
    adam_step_mlp,
    flatten_params,
    init_mlp,
    log_prob,
    log_softmax,
    mlp_backward,
    mlp_forward,
    sample_categorical,
    softmax,
)
from .ppo import collect_aligned, compute_gae, ppo_update, sitt_shaped_rewards

TEACHER_SUCCESS_FLOOR = 0.95


@dataclass
class BcDataset:
    """Aligned supervision: student views labelled with full teacher action dists."""
    obs_s: np.ndarray        # (n, 11)
    teacher_probs: np.ndarray  # (n, 8)


@dataclass
class BaselineResult:
    policy: MlpParams          # teacher net on raw teacher obs
    student: MlpParams | None  # student net on raw student obs
    value_net: MlpParams
    curves: list
    sr_teacher: float
    sr_student: float
    env_steps: int
    wall_time_s: float


@dataclass
class _RawAgent:
    cfg: ExperimentConfig
    policy: MlpParams
    value_net: MlpParams
    pol_opt: AdamState
    val_opt: AdamState
    vec_env: VecGridEnv
    sample_rng: np.random.Generator
    eval_rng: np.random.Generator
    init_rng: np.random.Generator
    env_steps: int = 0
    last_mean_return: float = 0.0


def _init_raw_agent(cfg: ExperimentConfig, seed: int) -> _RawAgent:
    root = np.random.SeedSequence(seed)
    env_ss, sample_ss, init_ss, eval_ss = root.spawn(4)
    init_rng = np.random.default_rng(init_ss)
    policy = init_mlp((TEACHER_OBS_DIM, *cfg.net.policy_hidden, N_ACTIONS),
                      init_rng, cfg.net.activation, out_gain=cfg.net.policy_out_gain)
    value_net = init_mlp((TEACHER_OBS_DIM, *cfg.net.value_hidden, 1),
                         init_rng, cfg.net.activation, out_gain=1.0)
    return _RawAgent(
        cfg=cfg,
        policy=policy,
        value_net=value_net,
        pol_opt=adam_init(flatten_params(policy).size, lr=cfg.ppo.lr),
        val_opt=adam_init(flatten_params(value_net).size, lr=cfg.ppo.lr),
        vec_env=VecGridEnv(cfg.env, cfg.train.n_envs, env_ss),
        sample_rng=np.random.default_rng(sample_ss),
        eval_rng=np.random.default_rng(eval_ss),
        init_rng=init_rng,
    )


def _collect_raw(agent: _RawAgent):
    def step_fn(obs_t, obs_s):
        logits, _ = mlp_forward(agent.policy, obs_t)
        actions = sample_categorical(logits, agent.sample_rng)
        logps = log_prob(logits, actions)
        values, _ = mlp_forward(agent.value_net, obs_t)
        return actions, logps, values[:, 0]

    def bootstrap_fn(obs_t, obs_s):
        values, _ = mlp_forward(agent.value_net, obs_t)
        return values[:, 0]

    rollout = collect_aligned(agent.vec_env, agent.cfg.train.horizon, step_fn, bootstrap_fn)
    agent.env_steps += rollout.n_steps
    if rollout.episode_returns:
        agent.last_mean_return = float(np.mean(rollout.episode_returns))
    return rollout


def _raw_ppo_step(agent: _RawAgent, rollout, rewards=None,
                  kl_ref_logits=None, kl_coef=0.0):
    obs_t_flat = rollout.flat_obs_t()
    actions_flat = rollout.actions.reshape(-1)
    values = np.vstack([rollout.values, rollout.last_values[None, :]])
    adv_set = compute_gae(rollout.rewards if rewards is None else rewards,
                          values, rollout.dones,
                          agent.cfg.ppo.gamma, agent.cfg.ppo.lam)
    agent.policy, agent.value_net, agent.pol_opt, agent.val_opt, stats = ppo_update(
        agent.policy, agent.value_net, obs_t_flat, obs_t_flat, actions_flat,
        adv_set.advantages.reshape(-1), adv_set.returns.reshape(-1),
        rollout.logps.reshape(-1), agent.cfg.ppo, agent.sample_rng,
        agent.pol_opt, agent.val_opt, kl_ref_logits=kl_ref_logits, kl_coef=kl_coef)
    return stats


def _apply_anneal(agent: _RawAgent, progress: float) -> None:
    if agent.cfg.ppo.anneal_lr:
        scale = 1.0 - progress
        agent.pol_opt.lr = agent.cfg.ppo.lr * scale
        agent.val_opt.lr = agent.cfg.ppo.lr * scale


def bc_cross_entropy(student: MlpParams, obs_s: np.ndarray,
                     target_probs: np.ndarray):
    """Mean cross-entropy between teacher action dists and student logits."""
    logits, cache = mlp_forward(student, obs_s)
    lp = log_softmax(logits)
    n = obs_s.shape[0]
    loss = -float((target_probs * lp).sum() / n)
    dlogits = (softmax(logits) - target_probs) / n
    grads, _ = mlp_backward(cache, dlogits)
    return loss, grads


def _train_student_supervised(student: MlpParams, opt: AdamState,
                              dataset: BcDataset, epochs: int, minibatch: int,
                              rng: np.random.Generator):
    n = dataset.obs_s.shape[0]
    losses = []
    for _ in range(epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        batches = 0
        for start in range(0, n, minibatch):
            mb = perm[start:start + minibatch]
            loss, grads = bc_cross_entropy(student, dataset.obs_s[mb],
                                           dataset.teacher_probs[mb])
            student, opt = adam_step_mlp(student, grads, opt)
            epoch_loss += loss
            batches += 1
        losses.append(epoch_loss / batches)
    return student, opt, losses


def _curve_row(env_steps: int, sr_teacher: float, sr_student: float,
               mean_return: float) -> dict:
    return {
        "env_steps": env_steps,
        "sr_teacher": sr_teacher,
        "sr_student": sr_student,
        "loss_contrastive": 0.0,
        "loss_alignment": 0.0,
        "loss_stability": 0.0,
        "tau": 0.0,
        "mean_return": mean_return,
    }


def _teacher_actor(agent: _RawAgent):
    return greedy_actor(lambda obs: mlp_forward(agent.policy, obs)[0])


def _student_actor(student: MlpParams):
    return greedy_actor(lambda obs: mlp_forward(student, obs)[0])


def train_bc(cfg: ExperimentConfig, seed: int, curve_writer=None) -> BaselineResult:
    """Isolated privileged teacher, then a student cloned from its action dists.

    The env-step budget covers both teacher RL and dataset collection; the
    supervised student consumes no env steps.
    """
    started = time.perf_counter()
    agent = _init_raw_agent(cfg, seed)
    per_iter = rollout_size(cfg)
    teacher_iters = max(1, int(round(cfg.budget * cfg.bc.teacher_frac / per_iter)))
    dataset_iters = cfg.budget // per_iter - teacher_iters
    if dataset_iters < 1:
        teacher_iters = cfg.budget // per_iter - 1
        dataset_iters = 1
    curves = []

    def emit(sr_t, sr_s):
        row = _curve_row(agent.env_steps, sr_t, sr_s, agent.last_mean_return)
        curves.append(row)
        if curve_writer is not None:
            curve_writer(row)

    sr_teacher = 0.0
    for it in range(1, teacher_iters + 1):
        _apply_anneal(agent, (it - 1) / teacher_iters)
        rollout = _collect_raw(agent)
        _raw_ppo_step(agent, rollout)
        if it % cfg.train.eval_every == 0 or it == teacher_iters:
            eval_seed = int(agent.eval_rng.integers(0, 2**63))
            sr_teacher = evaluate(_teacher_actor(agent), cfg.env,
                                  cfg.train.eval_episodes, eval_seed, side="teacher")
            emit(sr_teacher, float("nan"))
    if sr_teacher < TEACHER_SUCCESS_FLOOR:
        warnings.warn(
            f"BC teacher success {sr_teacher:.2f} below {TEACHER_SUCCESS_FLOOR}; "
            "cloning targets may be weak", stacklevel=2)

    # dataset collection from the frozen teacher
    chunks_s, chunks_probs = [], []
    for _ in range(dataset_iters):
        rollout = _collect_raw(agent)
        logits, _ = mlp_forward(agent.policy, rollout.flat_obs_t())
        chunks_s.append(rollout.flat_obs_s())
        chunks_probs.append(softmax(logits))
    dataset = BcDataset(np.concatenate(chunks_s), np.concatenate(chunks_probs))

    student = init_mlp((STUDENT_OBS_DIM, *cfg.net.policy_hidden, N_ACTIONS),
                       agent.init_rng, cfg.net.activation, out_gain=cfg.net.policy_out_gain)
    student_opt = adam_init(flatten_params(student).size, lr=cfg.bc.lr)
    student, student_opt, _ = _train_student_supervised(
        student, student_opt, dataset, cfg.bc.epochs, cfg.bc.minibatch,
        agent.sample_rng)

    eval_seed = int(agent.eval_rng.integers(0, 2**63))
    sr_teacher = evaluate(_teacher_actor(agent), cfg.env,
                          cfg.train.eval_episodes, eval_seed, side="teacher")
    sr_student = evaluate(_student_actor(student), cfg.env,
                          cfg.train.eval_episodes, eval_seed, side="student")
    emit(sr_teacher, sr_student)
    return BaselineResult(agent.policy, student, agent.value_net, curves,
                          sr_teacher, sr_student, agent.env_steps,
                          time.perf_counter() - started)


def train_sitt(cfg: ExperimentConfig, alpha: float, seed: int,
               curve_writer=None) -> BaselineResult:
    """Joint teacher/student loop with a KL imitability penalty on the teacher.

    The per-step reward becomes r - alpha * KL(teacher || student) and the same
    KL (against the frozen student) is added to the teacher's policy loss. The
    student is refit to the teacher's action dists on every fresh rollout.
    """
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    started = time.perf_counter()
    agent = _init_raw_agent(cfg, seed)
    student = init_mlp((STUDENT_OBS_DIM, *cfg.net.policy_hidden, N_ACTIONS),
                       agent.init_rng, cfg.net.activation, out_gain=cfg.net.policy_out_gain)
    student_opt = adam_init(flatten_params(student).size, lr=cfg.sitt.student_lr)
    n_iters = cfg.budget // rollout_size(cfg)
    curves = []
    sr_teacher = sr_student = 0.0
    for it in range(1, n_iters + 1):
        _apply_anneal(agent, (it - 1) / n_iters)
        rollout = _collect_raw(agent)
        teacher_logits, _ = mlp_forward(agent.policy, rollout.flat_obs_t())
        student_logits, _ = mlp_forward(student, rollout.flat_obs_s())
        shaped = sitt_shaped_rewards(rollout.rewards, teacher_logits,
                                     student_logits, alpha)
        _raw_ppo_step(agent, rollout, rewards=shaped,
                      kl_ref_logits=student_logits, kl_coef=alpha)
        dataset = BcDataset(rollout.flat_obs_s(), softmax(teacher_logits))
        student, student_opt, _ = _train_student_supervised(
            student, student_opt, dataset, cfg.sitt.student_epochs,
            cfg.sitt.student_minibatch, agent.sample_rng)
        if it % cfg.train.eval_every == 0 or it == n_iters:
            eval_seed = int(agent.eval_rng.integers(0, 2**63))
            sr_teacher = evaluate(_teacher_actor(agent), cfg.env,
                                  cfg.train.eval_episodes, eval_seed, side="teacher")
            sr_student = evaluate(_student_actor(student), cfg.env,
                                  cfg.train.eval_episodes, eval_seed, side="student")
            row = _curve_row(agent.env_steps, sr_teacher, sr_student,
                             agent.last_mean_return)
            curves.append(row)
            if curve_writer is not None:
                curve_writer(row)
    return BaselineResult(agent.policy, student, agent.value_net, curves,
                          sr_teacher, sr_student, agent.env_steps,
                          time.perf_counter() - started)


def method_config(cfg: ExperimentConfig, method: str) -> ExperimentConfig:
    """Config transform for the ablation toggles; identity for everything else."""
    out = config_from_dict(config_to_dict(cfg))
    if method == "ours_no_align":
        out.embed = dc_replace(out.embed, w_alignment=0.0)
    elif method == "ours_no_stab":
        out.embed = dc_replace(out.embed, w_stability=0.0)
    out.method = method
    return out


def ours_no_alignment(cfg: ExperimentConfig, seed: int, curve_writer=None):
    from .orchestrator import train
    return train(method_config(cfg, "ours_no_align"), seed, curve_writer)


def ours_no_stability(cfg: ExperimentConfig, seed: int, curve_writer=None):
    from .orchestrator import train
    return train(method_config(cfg, "ours_no_stab"), seed, curve_writer)
