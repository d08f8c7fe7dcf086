"""Adaptive-moment optimizer (Adam, with optional variance rectification)
and cosine learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class ScheduleConfig:
    lr_init: float = 1e-3
    lr_final: float = 1e-8
    total_steps: int = 1000


def cosine_lr(step: int, cfg: ScheduleConfig) -> float:
    """Cosine decay from lr_init (step 0) to lr_final (step total_steps)."""
    s = min(max(step, 0), cfg.total_steps)
    cos = np.cos(np.pi * s / cfg.total_steps)
    return cfg.lr_final + 0.5 * (cfg.lr_init - cfg.lr_final) * (1.0 + cos)


class AdamOpt:
    """Adam-family optimizer over a flat dict of named parameter arrays.

    rectified=True enables the warmup-aware variance rectification variant;
    both modes share moments and hyperparameters. Per-parameter constraint
    callables (e.g. clamps) run immediately after each update.
    """

    def __init__(self, params: dict[str, np.ndarray],
                 schedule: ScheduleConfig, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8,
                 rectified: bool = True,
                 constraints: dict[str, Callable[[np.ndarray], None]] | None = None,
                 lr_scales: dict[str, float] | None = None):
        self.params = params
        self.schedule = schedule
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.rectified = rectified
        self.constraints = constraints or {}
        self.lr_scales = lr_scales or {}
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    @property
    def lr(self) -> float:
        return cosine_lr(self.step_count, self.schedule)

    def step(self, grads: dict[str, np.ndarray]) -> float:
        """One update; returns the learning rate used."""
        lr = self.lr
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** t
        bc2 = 1.0 - b2 ** t
        if self.rectified:
            rho_inf = 2.0 / (1.0 - b2) - 1.0
            rho_t = rho_inf - 2.0 * t * (b2 ** t) / bc2
            if rho_t > 4.0:
                r_t = np.sqrt(((rho_t - 4) * (rho_t - 2) * rho_inf)
                              / ((rho_inf - 4) * (rho_inf - 2) * rho_t))
            else:
                r_t = None  # warmup: un-adapted (momentum-only) update
        for name, g in grads.items():
            p = self.params[name]
            m = self.m[name]
            v = self.v[name]
            lr_p = lr * self.lr_scales.get(name, 1.0)
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / bc1
            if self.rectified:
                if r_t is not None:
                    vhat = np.sqrt(v / bc2) + self.eps
                    p -= lr_p * r_t * mhat / vhat
                else:
                    p -= lr_p * mhat
            else:
                vhat = np.sqrt(v / bc2) + self.eps
                p -= lr_p * mhat / vhat
            cons = self.constraints.get(name)
            if cons is not None:
                cons(p)
        return lr

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Moment arrays keyed for checkpointing."""
        out = {}
        for k in self.params:
            out[f"opt.m.{k}"] = self.m[k]
            out[f"opt.v.{k}"] = self.v[k]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray],
                          step_count: int) -> None:
        for k in self.params:
            self.m[k] = arrays[f"opt.m.{k}"].copy()
            self.v[k] = arrays[f"opt.v.{k}"].copy()
        self.step_count = step_count
