"""Myopic rule-based benchmark: charge on surplus, discharge on deficit.

The dispatcher's DISCHARGE branch already cascades any uncovered deficit to
the generator, so this controller never needs to emit GENERATOR itself.
"""

from __future__ import annotations

import math

from .simcore import MetaAction


def rule_based_act(delta_p: float) -> MetaAction:
    """Map the realized residual generation to a battery status.

    A zero residual maps to CHARGE; the resulting zero-power charge is a
    no-op, so the tie is cost-identical either way.
    """
    if not math.isfinite(delta_p):
        raise ValueError("delta_p must be finite")
    return MetaAction.CHARGE if delta_p >= 0.0 else MetaAction.DISCHARGE


class RuleBasedController:
    """Stateless heuristic controller for the episode runner."""

    name = "heuristic"

    def act(self, env) -> MetaAction:
        return rule_based_act(env.state.delta_p)
