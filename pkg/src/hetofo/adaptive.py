"""Cosine-similarity adaptive step sizes over groups of variables.

Each group compares the direction of its Lagrangian gradient at two
consecutive iterations.  Persistent directions grow the group's step sizes
by ``kappa_up``; reversals shrink them by ``kappa_down``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .operators import StepSizeGroups

SIMILARITY_EPS = 1e-14


@dataclass(frozen=True)
class GroupRule:
    kappa_up: float = 1.005
    kappa_down: float = 0.95
    s_hi: float = 0.9
    s_lo: float = 0.0

    def __post_init__(self):
        if not self.kappa_up > 1:
            raise ValueError("kappa_up must exceed 1")
        if not 0 < self.kappa_down < 1:
            raise ValueError("kappa_down must lie in (0, 1)")
        if not -1 <= self.s_lo <= self.s_hi <= 1:
            raise ValueError("thresholds must satisfy -1 <= s_lo <= s_hi <= 1")


@dataclass(frozen=True)
class AdaptiveConfig:
    """Per-group rules plus clamp bounds on every step size."""

    rules: Mapping[str, GroupRule] = field(default_factory=dict)
    default_rule: GroupRule = GroupRule()
    gamma_min: float = 1e-6
    gamma_max: float = 1e3
    zero_grad_policy: str = "hold"

    def __post_init__(self):
        if not 0 < self.gamma_min <= self.gamma_max:
            raise ValueError("need 0 < gamma_min <= gamma_max")
        if self.zero_grad_policy != "hold":
            raise ValueError("only the 'hold' zero-gradient policy is supported")

    def rule(self, group: str) -> GroupRule:
        return self.rules.get(group, self.default_rule)


def standard_rule(group: str) -> GroupRule:
    """Demo settings: common thresholds and growth, decrease factor by group kind."""
    if "vpp" in group.lower():
        down = 0.5
    elif "volt" in group.lower():
        down = 0.995
    else:
        down = 0.95
    return GroupRule(kappa_up=1.005, kappa_down=down, s_hi=0.9, s_lo=0.0)


def standard_config(groups, gamma_min: float = 1e-6, gamma_max: float = 1e3) -> AdaptiveConfig:
    return AdaptiveConfig({g: standard_rule(g) for g in groups}, gamma_min=gamma_min,
                          gamma_max=gamma_max)


def cosine_similarity(g_now, g_prev) -> float | None:
    """Cosine of the angle between two gradients, or ``None`` if either is ~0."""
    a = np.asarray(g_now, dtype=float).reshape(-1)
    b = np.asarray(g_prev, dtype=float).reshape(-1)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < SIMILARITY_EPS or nb < SIMILARITY_EPS:
        return None
    return float(np.clip((a @ b) / (na * nb), -1.0, 1.0))


def update_group_stepsize(gamma, s: float, rule: GroupRule,
                          gamma_min: float = 1e-6, gamma_max: float = 1e3) -> np.ndarray:
    """Threshold rule: grow above ``s_hi``, shrink below ``s_lo``, else keep."""
    gamma = np.asarray(gamma, dtype=float)
    if s > rule.s_hi:
        gamma = rule.kappa_up * gamma
    elif s < rule.s_lo:
        gamma = rule.kappa_down * gamma
    return np.clip(gamma, gamma_min, gamma_max)


def adapt_all(gammas: StepSizeGroups, grad_now, grad_prev, cfg: AdaptiveConfig):
    """Apply the rule to every group independently.

    ``grad_now``/``grad_prev`` are stacked ``(grad_x L, grad_lam L)`` vectors
    aligned with ``gammas.labels``.  Without a previous gradient every step
    size is held.

    Returns
    -------
    StepSizeGroups, dict
        Updated step sizes and the per-group similarity (``None`` if undefined).
    """
    if grad_prev is None:
        return gammas, {g: None for g in gammas.groups()}
    grad_now = np.asarray(grad_now, dtype=float)
    grad_prev = np.asarray(grad_prev, dtype=float)
    gamma = gammas.gamma.copy()
    sims = {}
    for name, idx in gammas.groups().items():
        s = cosine_similarity(grad_now[idx], grad_prev[idx])
        sims[name] = s
        if s is None:
            continue
        gamma[idx] = update_group_stepsize(gamma[idx], s, cfg.rule(name),
                                           cfg.gamma_min, cfg.gamma_max)
    return gammas.with_gamma(gamma), sims
