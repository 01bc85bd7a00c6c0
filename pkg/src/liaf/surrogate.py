"""Rectangular-window surrogate for the firing discontinuity."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class SurrogateCfg:
    mu: float = 0.5

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"surrogate half-width must be positive, got {self.mu}")


def rect_window(x: float, mu: float) -> float:
    """1 inside the open window ``|x| < mu``, else 0."""
    return 1.0 if abs(x) < mu else 0.0


def heaviside(x: float) -> float:
    return 1.0 if x >= 0 else 0.0


def surrogate_tau_grad(u: float, cfg: SurrogateCfg, v_th: float, v_reset: float, alpha: float) -> float:
    """d(next potential)/d(current potential) with the delta replaced by a window.

    The state map is ``alpha * (S * v_reset + (1 - S) * u) + beta`` with
    ``S = heaviside(u - v_th)``; its derivative picks up
    ``alpha * window(u - v_th) * (v_reset - u)`` from the reset switch.
    """
    return (alpha * rect_window(u - v_th, cfg.mu) * (v_reset - u)
            + alpha * (1.0 - heaviside(u - v_th)))
