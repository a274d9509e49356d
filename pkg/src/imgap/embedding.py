"""Paired encoders onto a shared unit sphere, and the losses that shape it.

Three terms train the encoders: a symmetric in-batch contrastive loss with a
learnable temperature, an explicit alignment term on paired embeddings, and a
stability term that anchors the policy logits produced from fresh embeddings
to their values at the start of the training phase. The policy network is
traversed for the stability term but its own gradients are discarded here.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import NetConfig
from .nn import (
    MlpParams,
    flatten_params,
    init_mlp,
    l2_normalize_backward,
    l2_normalize_with_cache,
    mlp_backward,
    mlp_forward,
    unflatten_params,
)

from .grid_env import STUDENT_OBS_DIM, TEACHER_OBS_DIM


@dataclass
class EncoderPair:
    """Teacher/student encoders plus the contrastive temperature in log-space.

    Doubles as its own gradient container, like MlpParams.
    """
    teacher: MlpParams
    student: MlpParams
    log_tau: float

    @property
    def tau(self) -> float:
        return float(np.exp(self.log_tau))

    def copy(self) -> "EncoderPair":
        return EncoderPair(self.teacher.copy(), self.student.copy(), self.log_tau)


def init_encoder_pair(net: NetConfig, rng: np.random.Generator,
                      tau_init: float = 0.1) -> EncoderPair:
    # small random output biases guard against an exactly-zero pre-normalization vector
    teacher = init_mlp((TEACHER_OBS_DIM, *net.encoder_hidden, net.embed_dim), rng,
                       net.activation, bias_scale=0.01)
    student = init_mlp((STUDENT_OBS_DIM, *net.encoder_hidden, net.embed_dim), rng,
                       net.activation, bias_scale=0.01)
    return EncoderPair(teacher, student, float(np.log(tau_init)))


def flatten_encoder_pair(enc: EncoderPair) -> np.ndarray:
    return np.concatenate([flatten_params(enc.teacher), flatten_params(enc.student),
                           np.array([enc.log_tau])])


def unflatten_encoder_pair(flat: np.ndarray, template: EncoderPair) -> EncoderPair:
    nt = flatten_params(template.teacher).size
    ns = flatten_params(template.student).size
    if flat.size != nt + ns + 1:
        raise ValueError("flat vector length does not match encoder pair")
    return EncoderPair(
        unflatten_params(flat[:nt], template.teacher),
        unflatten_params(flat[nt:nt + ns], template.student),
        float(flat[-1]),
    )


def encode(enc: MlpParams, obs: np.ndarray) -> np.ndarray:
    """Unit-norm embedding of an observation batch (or single observation)."""
    z, _ = encode_forward(enc, obs)
    return z


def encode_forward(enc: MlpParams, obs: np.ndarray):
    raw, mlp_cache = mlp_forward(enc, obs)
    z, norm_cache = l2_normalize_with_cache(raw)
    return z, (mlp_cache, norm_cache)


def encode_backward(cache, dz: np.ndarray) -> MlpParams:
    mlp_cache, norm_cache = cache
    draw = l2_normalize_backward(norm_cache, dz)
    grads, _ = mlp_backward(mlp_cache, draw)
    return grads


def infonce_loss(z_t: np.ndarray, z_s: np.ndarray, tau: float):
    """Symmetric paired-batch contrastive loss with dot-product similarity.

    Each row's aligned partner is its only positive; every other row in the
    batch is a negative, in both the teacher-anchored and student-anchored
    directions. Returns (loss, dz_t, dz_s, dlog_tau).
    """
    z_t = np.atleast_2d(np.asarray(z_t, dtype=np.float64))
    z_s = np.atleast_2d(np.asarray(z_s, dtype=np.float64))
    if z_t.shape != z_s.shape:
        raise ValueError("embedding batches must have equal shapes")
    if not (np.all(np.isfinite(z_t)) and np.all(np.isfinite(z_s))):
        raise ValueError("non-finite embeddings")
    if tau <= 0:
        raise ValueError("temperature must be positive")
    n = z_t.shape[0]
    scores = (z_t @ z_s.T) / tau

    row = scores - scores.max(axis=1, keepdims=True)
    log_p_row = row - np.log(np.exp(row).sum(axis=1, keepdims=True))
    col = scores - scores.max(axis=0, keepdims=True)
    log_p_col = col - np.log(np.exp(col).sum(axis=0, keepdims=True))

    diag = np.arange(n)
    loss = -(log_p_row[diag, diag].sum() + log_p_col[diag, diag].sum()) / (2.0 * n)

    g = (np.exp(log_p_row) + np.exp(log_p_col) - 2.0 * np.eye(n)) / (2.0 * n)
    dz_t = (g @ z_s) / tau
    dz_s = (g.T @ z_t) / tau
    dlog_tau = -float((g * scores).sum())
    return float(loss), dz_t, dz_s, dlog_tau


def alignment_loss(z_t: np.ndarray, z_s: np.ndarray):
    """Negative mean dot product of paired embeddings; in [-1, 1] for unit rows."""
    z_t = np.atleast_2d(z_t)
    z_s = np.atleast_2d(z_s)
    n = z_t.shape[0]
    loss = -float((z_t * z_s).sum() / n)
    return loss, -z_s / n, -z_t / n


def _cosine_rows(a: np.ndarray, b: np.ndarray):
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    if np.any(na < 1e-12) or np.any(nb < 1e-12):
        raise ValueError("zero-norm logits row in stability loss")
    cos = (a * b).sum(axis=1, keepdims=True) / (na * nb)
    # gradient w.r.t. b only (a is the frozen snapshot)
    dcos_db = (a / na - cos * b / nb) / nb
    return cos[:, 0], dcos_db


def stability_loss(old_logits_t: np.ndarray, old_logits_s: np.ndarray,
                   new_logits_t: np.ndarray, new_logits_s: np.ndarray):
    """Negative mean cosine between snapshot and current policy logits, both streams.

    Bounded in [-2, 2]; gradients flow into the new logits only.
    """
    old_t = np.atleast_2d(np.asarray(old_logits_t, dtype=np.float64))
    old_s = np.atleast_2d(np.asarray(old_logits_s, dtype=np.float64))
    new_t = np.atleast_2d(np.asarray(new_logits_t, dtype=np.float64))
    new_s = np.atleast_2d(np.asarray(new_logits_s, dtype=np.float64))
    n = new_t.shape[0]
    cos_t, dcos_t = _cosine_rows(old_t, new_t)
    cos_s, dcos_s = _cosine_rows(old_s, new_s)
    loss = -float((cos_t.sum() + cos_s.sum()) / n)
    return loss, -dcos_t / n, -dcos_s / n


def embedding_loss(enc: EncoderPair, policy: MlpParams,
                   obs_t: np.ndarray, obs_s: np.ndarray,
                   old_logits_t: np.ndarray, old_logits_s: np.ndarray,
                   w_contrastive: float = 1.0, w_alignment: float = 1.0,
                   w_stability: float = 1.0):
    """Weighted sum of the three encoder losses on one aligned batch.

    Returns (loss, grads as an EncoderPair, dict of unweighted terms). The
    policy network only carries the stability chain rule; its parameter
    gradients are dropped so this update cannot move the policy.
    """
    z_t, cache_t = encode_forward(enc.teacher, obs_t)
    z_s, cache_s = encode_forward(enc.student, obs_s)

    l_con, dz_t, dz_s, dlog_tau = infonce_loss(z_t, z_s, enc.tau)
    l_ali, dz_t_a, dz_s_a = alignment_loss(z_t, z_s)

    logits_t, pcache_t = mlp_forward(policy, z_t)
    logits_s, pcache_s = mlp_forward(policy, z_s)
    l_sta, dl_t, dl_s = stability_loss(old_logits_t, old_logits_s, logits_t, logits_s)

    _, dz_t_sta = mlp_backward(pcache_t, w_stability * dl_t)
    _, dz_s_sta = mlp_backward(pcache_s, w_stability * dl_s)

    dz_t_total = w_contrastive * dz_t + w_alignment * dz_t_a + dz_t_sta
    dz_s_total = w_contrastive * dz_s + w_alignment * dz_s_a + dz_s_sta

    grads = EncoderPair(
        teacher=encode_backward(cache_t, dz_t_total),
        student=encode_backward(cache_s, dz_s_total),
        log_tau=w_contrastive * dlog_tau,
    )
    loss = w_contrastive * l_con + w_alignment * l_ali + w_stability * l_sta
    terms = {"contrastive": l_con, "alignment": l_ali, "stability": l_sta}
    return float(loss), grads, terms
