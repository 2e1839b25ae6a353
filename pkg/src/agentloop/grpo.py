"""Group-relative policy optimization on a tabular softmax policy.

Rewards are normalized within each group of G rollouts sampled from the
same prompt (advantage = (r - mean) / (population std + eps)), and a per-step
KL penalty toward a periodically refreshed reference policy regularizes the
ascent. The trainer runs on a small symbolic tool-use environment whose
rewards come straight from the reward engine, so the full verifiable-reward
path is exercised without any language model.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grammar import Termination, Trajectory, parse_turn
from .rewards import AnswerKey, TokenFrequencyEmbedding, total_reward


@dataclass
class GrpoConfig:
    group_size: int = 8
    beta: float = 0.04
    eps_std: float = 1e-6
    learning_rate: float = 0.1
    updates: int = 500
    seed: int = 0
    groups_per_update: int = 2
    ref_refresh_every: int = 10

    def __post_init__(self) -> None:
        if self.group_size < 2:
            raise ValueError("group_size must be at least 2")
        if self.beta < 0 or self.eps_std <= 0 or self.learning_rate <= 0:
            raise ValueError("beta must be nonnegative; eps_std and learning_rate positive")


class PolicyParams:
    """State -> action-logit table for a softmax policy."""

    def __init__(self, states: list[str], n_actions: int):
        self.n_actions = n_actions
        self.logits: dict[str, np.ndarray] = {
            s: np.zeros(n_actions, dtype=np.float64) for s in states
        }

    def copy(self) -> "PolicyParams":
        clone = PolicyParams(list(self.logits), self.n_actions)
        for s, v in self.logits.items():
            clone.logits[s] = v.copy()
        return clone

    def probs(self, state: str) -> np.ndarray:
        z = self.logits[state]
        shifted = z - z.max()
        e = np.exp(shifted)
        return e / e.sum()

    def logp(self, state: str, action: int) -> float:
        z = self.logits[state]
        shifted = z - z.max()
        return float(shifted[action] - math.log(np.exp(shifted).sum()))

    def check_finite(self) -> None:
        for s, v in self.logits.items():
            if not np.all(np.isfinite(v)):
                raise FloatingPointError(f"non-finite logits in state {s!r}")


@dataclass
class StepRecord:
    state: str
    action: int
    logp_theta: float
    logp_ref: float = 0.0


@dataclass
class RolloutSample:
    steps: list[StepRecord]
    reward: float
    trajectory: Trajectory | None = None


@dataclass
class RolloutGroup:
    samples: list[RolloutSample]

    @property
    def rewards(self) -> list[float]:
        return [s.reward for s in self.samples]


def group_advantages(rewards, eps_std: float = 1e-6) -> list[float]:
    """Center by the group mean and scale by population std + eps."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise ValueError("a group needs at least 2 rewards")
    centered = r - r.mean()
    scale = float(r.std()) + eps_std
    return [float(c / scale) for c in centered]


def kl_penalty(logp_theta: float, logp_ref: float) -> float:
    """Nonnegative k3 estimator exp(d) - d - 1 with d = logp_ref - logp_theta."""
    delta = logp_ref - logp_theta
    return math.exp(delta) - delta - 1.0


def grpo_objective(policy: PolicyParams, groups: list[RolloutGroup], cfg: GrpoConfig) -> float:
    """Surrogate maximized by one update step; log-probs under ``policy``,
    reference log-probs taken from the collected samples."""
    total = 0.0
    for group in groups:
        advantages = group_advantages(group.rewards, cfg.eps_std)
        for adv, sample in zip(advantages, group.samples):
            for step in sample.steps:
                lp = policy.logp(step.state, step.action)
                total += adv * lp
                total -= cfg.beta * kl_penalty(lp, step.logp_ref)
    return total


def grpo_gradient(
    policy: PolicyParams, groups: list[RolloutGroup], cfg: GrpoConfig
) -> dict[str, np.ndarray]:
    grad: dict[str, np.ndarray] = {}
    for group in groups:
        advantages = group_advantages(group.rewards, cfg.eps_std)
        for adv, sample in zip(advantages, group.samples):
            for step in sample.steps:
                probs = policy.probs(step.state)
                lp = policy.logp(step.state, step.action)
                onehot = np.zeros_like(probs)
                onehot[step.action] = 1.0
                coeff = adv + cfg.beta * (math.exp(step.logp_ref - lp) - 1.0)
                grad.setdefault(step.state, np.zeros_like(probs))
                grad[step.state] += coeff * (onehot - probs)
    return grad


def grpo_update(
    policy: PolicyParams, groups: list[RolloutGroup], cfg: GrpoConfig
) -> tuple[PolicyParams, float]:
    """One gradient-ascent step; aborts before touching the policy if any
    gradient entry is non-finite. Returns the policy and the gradient norm."""
    grad = grpo_gradient(policy, groups, cfg)
    sq = 0.0
    for state, g in grad.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for state {state!r}")
        sq += float((g * g).sum())
    for state, g in grad.items():
        policy.logits[state] += cfg.learning_rate * g
    policy.check_finite()
    return policy, math.sqrt(sq)


# --- toy tool-use environment -------------------------------------------------


@dataclass(frozen=True)
class ToyEnvSpec:
    """Two-turn symbolic task scored by the real reward engine.

    The episode follows a fixed script: a search turn, then an answer
    turn. At each turn the policy first picks a tag token (the wrong tag
    for the phase emits untagged garbage, i.e. a format violation) and
    then a content token, rendered as ``tok<i>``. The hidden key of the
    task is the reference query token; the keyed answer token is scored
    by F1. A fully correct rollout is four actions long.
    """

    vocab_size: int = 16
    search_tag_action: int = 0
    answer_tag_action: int = 1
    key_query_action: int = 7
    key_answer_action: int = 11

    def states(self) -> list[str]:
        return ["turn0:tag", "turn0:search", "turn1:tag", "turn1:answer"]

    def answer_key(self) -> AnswerKey:
        return AnswerKey(
            gold_answers=[f"tok{self.key_answer_action}"],
            reference_queries=[f"tok{self.key_query_action}"],
        )

    def oracle_actions(self) -> dict[str, int]:
        return {
            "turn0:tag": self.search_tag_action,
            "turn0:search": self.key_query_action,
            "turn1:tag": self.answer_tag_action,
            "turn1:answer": self.key_answer_action,
        }


def make_policy(spec: ToyEnvSpec) -> PolicyParams:
    return PolicyParams(spec.states(), spec.vocab_size)


def oracle_policy(spec: ToyEnvSpec, strength: float = 25.0) -> PolicyParams:
    policy = make_policy(spec)
    for state, action in spec.oracle_actions().items():
        policy.logits[state][action] = strength
    return policy


def toy_env_rollout(
    policy: PolicyParams, spec: ToyEnvSpec, seed: int
) -> RolloutSample:
    rng = np.random.Generator(np.random.PCG64(seed))
    steps: list[StepRecord] = []

    def act(state: str) -> int:
        probs = policy.probs(state)
        action = int(rng.choice(spec.vocab_size, p=probs))
        steps.append(StepRecord(state, action, policy.logp(state, action)))
        return action

    turns = []
    termination = Termination.FORMAT_VIOLATION
    tag0 = act("turn0:tag")
    if tag0 != spec.search_tag_action:
        turns.append(parse_turn(f"tok{tag0}"))
    else:
        query = act("turn0:search")
        turns.append(parse_turn(f"<think>t</think><search>tok{query}</search>"))
        tag1 = act("turn1:tag")
        if tag1 != spec.answer_tag_action:
            turns.append(parse_turn(f"tok{tag1}"))
        else:
            answer = act("turn1:answer")
            turns.append(parse_turn(f"<think>t</think><answer>tok{answer}</answer>"))
            termination = Termination.ANSWER
    trajectory = Trajectory(turns, termination)
    reward = total_reward(trajectory, spec.answer_key(), TokenFrequencyEmbedding()).total
    return RolloutSample(steps=steps, reward=reward, trajectory=trajectory)


def attach_reference_logps(samples: list[RolloutSample], ref: PolicyParams) -> None:
    for sample in samples:
        for step in sample.steps:
            step.logp_ref = ref.logp(step.state, step.action)


@dataclass
class TrainResult:
    policy: PolicyParams
    history: list[dict] = field(default_factory=list)


def train_toy(
    cfg: GrpoConfig,
    spec: ToyEnvSpec | None = None,
    log_path: str | Path | None = None,
) -> TrainResult:
    """Run the GRPO loop on the toy environment, logging one JSON record
    per update: {update, mean_reward, mean_kl, grad_norm}."""
    spec = spec or ToyEnvSpec()
    policy = make_policy(spec)
    ref = policy.copy()
    seeder = np.random.Generator(np.random.PCG64(cfg.seed))
    history: list[dict] = []
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for update in range(1, cfg.updates + 1):
            groups = []
            rewards = []
            kls = []
            for _ in range(cfg.groups_per_update):
                samples = [
                    toy_env_rollout(policy, spec, int(seeder.integers(0, 2**63)))
                    for _ in range(cfg.group_size)
                ]
                attach_reference_logps(samples, ref)
                groups.append(RolloutGroup(samples))
                rewards.extend(s.reward for s in samples)
                kls.extend(
                    kl_penalty(st.logp_theta, st.logp_ref)
                    for s in samples
                    for st in s.steps
                )
            policy, grad_norm = grpo_update(policy, groups, cfg)
            record = {
                "update": update,
                "mean_reward": float(np.mean(rewards)),
                "mean_kl": float(np.mean(kls)) if kls else 0.0,
                "grad_norm": grad_norm,
            }
            history.append(record)
            if log_file:
                log_file.write(json.dumps(record) + "\n")
            if cfg.ref_refresh_every and update % cfg.ref_refresh_every == 0:
                ref = policy.copy()
    finally:
        if log_file:
            log_file.close()
    return TrainResult(policy=policy, history=history)
