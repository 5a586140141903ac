"""Reward and metric arithmetic: planner reward, GRPO advantages and surrogate, MAPPO penalties,
behavior reward, answer perplexity, normalized win rate.

Everything here is a pure function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

STD_GUARD = 1e-12


class Feedback(str, Enum):
    ACCEPTED = "Accepted"
    REJECTED = "Rejected"


@dataclass(frozen=True)
class RewardConfig:
    alpha_answer: float = 1.0
    alpha_feedback: float = 1.0
    beta_feedback: float = -1.0
    alpha_format: float = 1.0
    beta_format: float = -1.0
    alpha_execution: float = 1.0

    def __post_init__(self):
        for name in ("alpha_answer", "alpha_feedback", "alpha_format", "alpha_execution"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("beta_feedback", "beta_format"):
            if not getattr(self, name) < 0:
                raise ValueError(f"{name} must be negative")


@dataclass(frozen=True)
class RewardBreakdown:
    answer: float
    feedback: float
    format: float
    execution: float

    @property
    def total(self) -> float:
        return self.answer + self.feedback + self.format + self.execution

    def to_row(self) -> dict:
        return {"answer": self.answer, "feedback": self.feedback, "format": self.format,
                "execution": self.execution, "total": self.total}


@dataclass(frozen=True)
class GrpoParams:
    epsilon: float = 0.2
    beta: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")


def planner_reward(correct: bool, feedback: Feedback | str | None, well_formatted: bool,
                   exec_scores: Sequence[float], cfg: RewardConfig = RewardConfig()) -> RewardBreakdown:
    for f in exec_scores:
        if not 0.0 <= f <= 1.0:
            raise ValueError(f"execution score {f} outside [0, 1]")
    if feedback is not None:
        feedback = Feedback(feedback)
    fb = {Feedback.ACCEPTED: cfg.alpha_feedback, Feedback.REJECTED: cfg.beta_feedback, None: 0.0}[feedback]
    m = len(exec_scores)
    execution = cfg.alpha_execution / m * math.fsum(exec_scores) if m else 0.0
    return RewardBreakdown(
        answer=cfg.alpha_answer if correct else 0.0,
        feedback=fb,
        format=cfg.alpha_format if well_formatted else cfg.beta_format,
        execution=execution,
    )


def grpo_advantages(rewards: Sequence[float]) -> list[float]:
    """(r - mean) / population std; all zeros when the group has no spread."""
    if len(rewards) == 0:
        raise ValueError("need at least one reward")
    r = np.asarray(rewards, dtype=np.float64)
    std = float(r.std())
    if std < STD_GUARD:
        return [0.0] * len(r)
    return list(((r - r.mean()) / std).tolist())


def grpo_surrogate_term(ratio: float, advantage: float, kl: float = 0.0,
                        params: GrpoParams = GrpoParams()) -> float:
    if ratio <= 0:
        raise ValueError("probability ratio must be positive")
    if kl < 0:
        raise ValueError("KL divergence must be non-negative")
    clipped = min(max(ratio, 1.0 - params.epsilon), 1.0 + params.epsilon)
    return min(ratio * advantage, clipped * advantage) - params.beta * kl


MAX_SUBQUESTIONS = 4
PENALTY_QR = -0.5
PENALTY_SELECTION = -1.0
PENALTY_LENGTH = -0.5


def mappo_rewards(shared: float, n_subquestions: int, selection_valid: bool,
                  answer_len_ok: bool) -> tuple[float, float, float]:
    """Per-agent rewards (rewriter, selector, generator) = shared reward plus each agent's penalty."""
    if not math.isfinite(shared):
        raise ValueError("shared reward must be finite")
    r_qr = shared + (PENALTY_QR if n_subquestions > MAX_SUBQUESTIONS else 0.0)
    r_s = shared + (0.0 if selection_valid else PENALTY_SELECTION)
    r_g = shared + (0.0 if answer_len_ok else PENALTY_LENGTH)
    return r_qr, r_s, r_g


def _bucket(count: float, width: float) -> int:
    if count < 0:
        raise ValueError("engagement counts must be non-negative")
    return math.floor(math.log1p(count) / width)


def behavior_reward(pv: float, clicks: float, like: float, dislike: float, width: float = 0.5) -> float:
    if width <= 0:
        raise ValueError("bucket width must be positive")
    b = [_bucket(c, width) for c in (pv, clicks, like, dislike)]
    denom = b[0] + b[1]
    if denom == 0:
        raise ZeroDivisionError("no exposure after smoothing (pv + clicks buckets are 0)")
    return (b[2] - b[3]) / denom


def answer_perplexity(token_logprobs: Sequence[float]) -> float:
    if len(token_logprobs) == 0:
        raise ValueError("perplexity of an empty sequence is undefined")
    if any(lp > 0 for lp in token_logprobs):
        raise ValueError("log-probabilities must be <= 0")
    return math.exp(-math.fsum(token_logprobs) / len(token_logprobs))


def nwr(win: int, tie: int, lose: int) -> float:
    total = win + tie + lose
    if min(win, tie, lose) < 0:
        raise ValueError("counts must be non-negative")
    if total == 0:
        raise ZeroDivisionError("no judgments")
    return (win - lose) / total
