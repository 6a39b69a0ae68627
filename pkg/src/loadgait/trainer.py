"""PPO training loop: rollouts, advantages, clipped-surrogate updates.

Rollout collection builds a fresh simulator per episode (dynamics
randomization), draws speed commands uniformly and resamples them
mid-episode, and tags every episode with its model kind. In general-policy
mode each kind gets an equal per-iteration timestep quota: episodes are
added for a kind until its cumulative steps reach the quota, so per-kind
totals differ by at most one episode's length.

All randomness derives from the run's master seed through fixed stream
tags — (seed, 0): policy init, (seed, 1, iteration, kind, episode): one
episode's dynamics + commands + action noise, (seed, 2, iteration):
minibatch shuffling — so identical configs reproduce bitwise, episode by
episode, regardless of collection order.

Updates run configured epochs of whole-episode minibatches: log-probs are
recomputed by replaying each episode from its initial hidden state, the
clipped surrogate and value loss are backpropagated through time exactly,
the global gradient norm is clipped, and Adam applies the step. A
non-finite loss or gradient aborts the update and restores parameters.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .biped import BipedModel, N_JOINTS, OBS_SIZE
from .config import LOAD_KINDS, ConfigError, RunConfig, TrainConfig
from .env import WalkingEnv
from .policy import (
    Adam,
    RecurrentActorCritic,
    gaussian_logp,
    load_checkpoint,
    save_checkpoint,
)
from .biped import randomize_dynamics


class TrainingDivergedError(RuntimeError):
    """More than half of an iteration's episodes blew up numerically."""


# --- data -----------------------------------------------------------------------------


@dataclass
class Episode:
    """One episode's training data; observations are the policy's inputs."""

    obs: np.ndarray        # (T, obs) rows seen at decision time
    actions: np.ndarray    # (T, joints)
    logps: np.ndarray      # (T,) log-probs at collection time
    rewards: np.ndarray    # (T,)
    values: np.ndarray     # (T,) critic estimates at collection time
    final_value: float     # bootstrap value after the last step (0 if terminal)
    terminated: bool       # True: episode ended itself; False: truncated
    kind: str              # model kind tag
    reason: str            # termination reason value ("none" when truncated)


@dataclass
class RolloutBatch:
    episodes: list[Episode]
    total_steps: int
    kind_steps: dict[str, int]


@dataclass(frozen=True)
class LearningCurvePoint:
    iteration: int
    timesteps: int
    mean_reward: float
    mean_ep_len: float


@dataclass
class UpdateStats:
    aborted: bool = False
    surrogate_per_epoch: list[float] = field(default_factory=list)
    value_loss_per_epoch: list[float] = field(default_factory=list)


@dataclass
class TrainResult:
    curve: list[LearningCurvePoint]
    checkpoints: list[Path]
    final_checkpoint: Path
    policy: RecurrentActorCritic
    total_steps: int
    stopped_early: bool


# --- rollout collection ------------------------------------------------------------------


def expand_model_kinds(models) -> tuple[str, ...]:
    """Resolve the configured model list ('all' means every kind)."""
    models = tuple(models)
    if "all" in models:
        return LOAD_KINDS
    for m in models:
        if m not in LOAD_KINDS:
            raise ConfigError(f"unknown model kind {m!r}; expected {LOAD_KINDS}")
    return models


def run_episode(policy: RecurrentActorCritic, env: WalkingEnv,
                rng: np.random.Generator, max_steps: int,
                resample_every: int, kind: str) -> Episode:
    """Roll one episode: stochastic actions, per-step values, command schedule."""
    command = float(rng.uniform(0.0, 4.0))
    obs = env.reset(command, rng=rng)   # jittered start states during training
    actor_h = policy.zero_hidden()
    critic_h = policy.zero_hidden()
    obs_rows, actions, logps, rewards, values = [], [], [], [], []
    terminated = False
    reason = "none"
    for t in range(max_steps):
        if t > 0 and t % resample_every == 0:
            env.set_command(float(rng.uniform(0.0, 4.0)))
            obs = env.current_obs()
        action, logp, actor_h = policy.act(obs, actor_h, rng)
        value, critic_h = policy.value(obs, critic_h)
        res = env.step(action)
        obs_rows.append(obs)
        actions.append(action)
        logps.append(logp)
        rewards.append(res.reward)
        values.append(value)
        obs = res.obs
        if res.done:
            terminated = True
            reason = res.reason.value
            break
    final_value = 0.0
    if not terminated:
        final_value, _ = policy.value(obs, critic_h)
    return Episode(
        obs=np.asarray(obs_rows),
        actions=np.asarray(actions),
        logps=np.asarray(logps),
        rewards=np.asarray(rewards),
        values=np.asarray(values),
        final_value=final_value,
        terminated=terminated,
        kind=kind,
        reason=reason,
    )


def collect_rollouts(policy: RecurrentActorCritic, cfg: RunConfig,
                     iteration: int) -> RolloutBatch:
    """Gather one iteration's batch with an even per-kind timestep quota."""
    kinds = expand_model_kinds(cfg.train.models)
    quota = math.ceil(cfg.train.steps_per_iteration / len(kinds))
    episodes: list[Episode] = []
    kind_steps: dict[str, int] = {}
    for ki, kind in enumerate(kinds):
        spec = cfg.loads.spec_for(kind)
        total = 0
        ep_idx = 0
        while total < quota:
            rng = np.random.default_rng(
                np.random.SeedSequence([cfg.seed, 1, iteration, ki, ep_idx]))
            params = randomize_dynamics(cfg.model, cfg.rand, rng)
            model = BipedModel(params, cfg.gains, spec)
            env = WalkingEnv(model, cfg.reward, mode=cfg.train.reward_mode)
            ep = run_episode(policy, env, rng, cfg.train.max_episode_steps,
                             cfg.train.command_resample_steps, kind)
            episodes.append(ep)
            total += len(ep.rewards)
            ep_idx += 1
        kind_steps[kind] = total
    return RolloutBatch(episodes, sum(kind_steps.values()), kind_steps)


def check_divergence(batch: RolloutBatch) -> None:
    """Fail the run when most of an iteration's episodes blew up."""
    n = len(batch.episodes)
    diverged = sum(1 for e in batch.episodes if e.reason == "divergence")
    if n > 0 and diverged > 0.5 * n:
        raise TrainingDivergedError(
            f"{diverged}/{n} episodes diverged; dynamics or policy unstable")


# --- advantages -------------------------------------------------------------------------


def compute_gae(batch: RolloutBatch, gamma: float, lam: float,
                normalize: bool = True):
    """Generalized advantage estimates and value targets, per episode.

    Targets are raw advantages plus values; the returned advantages are
    normalized to zero mean / unit variance across the whole batch unless
    `normalize` is False (the raw values are what the arithmetic oracles
    check).
    """
    advantages, targets = [], []
    for ep in batch.episodes:
        T = len(ep.rewards)
        vs = np.append(ep.values, ep.final_value)
        deltas = ep.rewards + gamma * vs[1:] - vs[:-1]
        adv = np.empty(T)
        acc = 0.0
        for t in range(T - 1, -1, -1):
            acc = deltas[t] + gamma * lam * acc
            adv[t] = acc
        advantages.append(adv)
        targets.append(adv + ep.values)
    if normalize:
        flat = np.concatenate(advantages)
        mean = flat.mean()
        std = flat.std()
        advantages = [(a - mean) / (std + 1e-8) for a in advantages]
    return advantages, targets


# --- clipped surrogate --------------------------------------------------------------------


def ppo_surrogate(ratio, advantage, eps):
    """min(ratio * A, clip(ratio, 1-eps, 1+eps) * A), elementwise."""
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.asarray(advantage, dtype=float)
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantage
    out = np.minimum(ratio * advantage, clipped)
    return float(out) if out.ndim == 0 else out


def surrogate_ratio_grad(ratio, advantage, eps):
    """d surrogate / d ratio: the advantage where the unclipped branch is
    active (ties included), zero where the clip has flattened the objective."""
    ratio = np.asarray(ratio, dtype=float)
    advantage = np.asarray(advantage, dtype=float)
    clipped = np.clip(ratio, 1.0 - eps, 1.0 + eps) * advantage
    out = np.where(ratio * advantage <= clipped, advantage, 0.0)
    return float(out) if out.ndim == 0 else out


def clip_gradient(grad: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(grad))
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


# --- the update --------------------------------------------------------------------------


def ppo_update(policy: RecurrentActorCritic, batch: RolloutBatch,
               advantages: list[np.ndarray], targets: list[np.ndarray],
               tcfg: TrainConfig, opt: Adam,
               rng: np.random.Generator) -> UpdateStats:
    """Epochs of whole-episode minibatch ascent on the clipped objective."""
    stats = UpdateStats()
    snapshot = policy.flat.copy()
    opt_state = (opt.m.copy(), opt.v.copy(), opt.t)
    n_eps = len(batch.episodes)
    eps_clip = tcfg.clip_eps
    sigma2 = None  # recomputed per minibatch (log_std trains)

    def abort() -> UpdateStats:
        policy.flat[:] = snapshot
        opt.m, opt.v, opt.t = opt_state[0], opt_state[1], opt_state[2]
        stats.aborted = True
        return stats

    for _ in range(tcfg.epochs):
        order = rng.permutation(n_eps)
        surrogate_sum = 0.0
        value_loss_sum = 0.0
        step_count = 0
        for mb in np.array_split(order, tcfg.n_minibatches):
            if len(mb) == 0:
                continue
            total_T = sum(len(batch.episodes[i].rewards) for i in mb)
            grad = np.zeros(policy.n_params)
            mb_surr = 0.0
            mb_vloss = 0.0
            for i in mb:
                ep = batch.episodes[i]
                adv = advantages[i]
                tgt = targets[i]
                fwd = policy.actor_sequence(ep.obs)
                logp_new = gaussian_logp(fwd.out, policy.log_std, ep.actions)
                ratio = np.exp(logp_new - ep.logps)
                mb_surr += float(np.sum(ppo_surrogate(ratio, adv, eps_clip)))
                # dL/dlogp for L = -mean(surrogate): chain through ratio
                w = -(surrogate_ratio_grad(ratio, adv, eps_clip) * ratio) / total_T
                sigma2 = np.exp(2.0 * policy.log_std)
                diff = ep.actions - fwd.out
                d_means = w[:, None] * diff / sigma2
                d_log_std = np.sum(w[:, None] * (diff * diff / sigma2 - 1.0), axis=0)
                grad += policy.actor_backward(fwd, d_means, d_log_std)
                cfwd = policy.critic_sequence(ep.obs)
                v = cfwd.out[:, 0]
                mb_vloss += float(np.sum((v - tgt) ** 2))
                d_values = (tcfg.value_coef * 2.0 * (v - tgt) / total_T)[:, None]
                grad += policy.critic_backward(cfwd, d_values)
            loss = -mb_surr / total_T + tcfg.value_coef * mb_vloss / total_T
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                return abort()
            grad = clip_gradient(grad, tcfg.grad_clip)
            policy.flat[:] = opt.step(policy.flat, grad)
            surrogate_sum += mb_surr
            value_loss_sum += mb_vloss
            step_count += total_T
        stats.surrogate_per_epoch.append(surrogate_sum / max(1, step_count))
        stats.value_loss_per_epoch.append(value_loss_sum / max(1, step_count))
    return stats


# --- orchestration -------------------------------------------------------------------------


def initial_policy(cfg: RunConfig) -> RecurrentActorCritic:
    """Scratch policy (actor biased to the nominal crouch) or checkpoint load."""
    hidden = cfg.train.hidden_size
    expect = (OBS_SIZE, hidden, hidden, N_JOINTS, 1)
    if cfg.train.init != "scratch":
        return load_checkpoint(cfg.train.init, expect_sizes=expect)
    crouch = BipedModel(cfg.model, cfg.gains, None).nominal_pose()[3:7]
    seed = int(np.random.SeedSequence([cfg.seed, 0]).generate_state(1)[0])
    return RecurrentActorCritic(
        OBS_SIZE, hidden, N_JOINTS, seed=seed,
        init_action=crouch, action_std=cfg.train.action_std_init,
    )


def train(cfg: RunConfig, out_dir, target_reward: float | None = None,
          progress=None) -> TrainResult:
    """Full training run: iterations of collect -> GAE -> update.

    Writes `learning_curve.csv` row by row, a checkpoint every
    `checkpoint_every` iterations, and `checkpoint_final.ckpt` at the end.
    `target_reward` enables early stopping once the 3-iteration moving
    average of mean episode reward reaches it.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    policy = initial_policy(cfg)
    opt = Adam(policy.n_params, cfg.train.learning_rate)
    init_path = out_dir / "checkpoint_init.ckpt"
    save_checkpoint(init_path, policy)
    checkpoints = [init_path]
    curve: list[LearningCurvePoint] = []
    cumulative = 0
    stopped_early = False
    curve_path = out_dir / "learning_curve.csv"
    with curve_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "timesteps", "mean_reward", "mean_ep_len"])
        for it in range(cfg.train.iterations):
            if cfg.train.lr_final is not None and cfg.train.iterations > 1:
                frac = it / (cfg.train.iterations - 1)
                opt.lr = (1.0 - frac) * cfg.train.learning_rate + frac * cfg.train.lr_final
            batch = collect_rollouts(policy, cfg, it)
            check_divergence(batch)
            cumulative += batch.total_steps
            returns = [float(e.rewards.sum()) for e in batch.episodes]
            lengths = [len(e.rewards) for e in batch.episodes]
            point = LearningCurvePoint(
                iteration=it,
                timesteps=cumulative,
                mean_reward=float(np.mean(returns)),
                mean_ep_len=float(np.mean(lengths)),
            )
            curve.append(point)
            writer.writerow([point.iteration, point.timesteps,
                             repr(point.mean_reward), repr(point.mean_ep_len)])
            fh.flush()
            if progress is not None:
                progress(point)
            adv, tgt = compute_gae(batch, cfg.train.gamma, cfg.train.gae_lambda)
            ppo_update(policy, batch, adv, tgt, cfg.train, opt,
                       np.random.default_rng(np.random.SeedSequence([cfg.seed, 2, it])))
            if cfg.train.checkpoint_every and (it + 1) % cfg.train.checkpoint_every == 0:
                path = out_dir / f"checkpoint_{it + 1:04d}.ckpt"
                save_checkpoint(path, policy)
                checkpoints.append(path)
            if target_reward is not None and len(curve) >= 3:
                recent = np.mean([p.mean_reward for p in curve[-3:]])
                if recent >= target_reward:
                    stopped_early = True
                    break
    final_path = out_dir / "checkpoint_final.ckpt"
    save_checkpoint(final_path, policy)
    checkpoints.append(final_path)
    return TrainResult(
        curve=curve,
        checkpoints=checkpoints,
        final_checkpoint=final_path,
        policy=policy,
        total_steps=cumulative,
        stopped_early=stopped_early,
    )
