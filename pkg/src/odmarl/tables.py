"""Matrix-game transition/return tables computed from analytic visible MDPs."""

from __future__ import annotations

from dataclasses import dataclass

from .empirical import exact_model_from_env
from .env import matrix_game, stationary_policy
from .learner import LearnConfig, modified_value_iteration
from .transforms import TransformSpec, modified_transitions

BEHAVIOR = ([0.8, 0.2], [0.4, 0.6])

# (agent, action) -> outcome payoffs in the order the rows are printed
ROW_ORDER = {
    (0, 0): (1, 5), (0, 1): (6, 1),
    (1, 0): (1, 6), (1, 1): (5, 1),
}

REFERENCE = {
    "none": {
        (0, 0): ((0.4, 0.6), 3.4), (0, 1): ((0.4, 0.6), 3.0),
        (1, 0): ((0.8, 0.2), 2.0), (1, 1): ((0.8, 0.2), 4.2),
    },
    "vd": {
        (0, 0): ((0.12, 0.88), 4.52), (0, 1): ((0.8, 0.2), 5.0),
        (1, 0): ((0.4, 0.6), 4.0), (1, 1): ((0.95, 0.05), 4.8),
    },
    "vd_tn": {
        (0, 0): ((0.17, 0.83), 4.33), (0, 1): ((0.86, 0.14), 5.29),
        (1, 0): ((0.14, 0.86), 5.29), (1, 1): ((0.83, 0.17), 4.33),
    },
}

TOLERANCE = {"none": 1e-9, "vd": 0.005, "vd_tn": 0.005}
TITLES = {
    "none": "offline transition probabilities",
    "vd": "value deviation only",
    "vd_tn": "value deviation + transition normalization",
}


@dataclass(frozen=True)
class Cell:
    mode: str
    agent: int
    action: int
    label: str
    computed: float
    expected: float
    tol: float

    @property
    def passed(self) -> bool:
        return abs(self.computed - self.expected) <= self.tol


def table_cells(mode: str, spec: TransformSpec | None = None, gamma: float = 0.9) -> list[Cell]:
    env = matrix_game()
    behavior = stationary_policy(env, BEHAVIOR)
    spec = spec or TransformSpec(mode=mode)
    config = LearnConfig(gamma=gamma, transform=spec)
    state_of = {1: 1, 5: 2, 6: 3}
    cells = []
    for agent in range(2):
        model = exact_model_from_env(env, behavior, agent)
        q = modified_value_iteration(model, config)
        for action in range(2):
            ws = modified_transitions(model, q, 0, action, gamma, spec).probs()
            ref_probs, ref_ret = REFERENCE[mode][agent, action]
            for payoff, ref in zip(ROW_ORDER[agent, action], ref_probs):
                cells.append(Cell(mode, agent, action, f"p({payoff}|a{action + 1})",
                                  ws.get(state_of[payoff], 0.0), ref, TOLERANCE[mode]))
            cells.append(Cell(mode, agent, action, "return", float(q.values[0, action]),
                              ref_ret, TOLERANCE[mode]))
    return cells


def reproduce_tables(overrides: dict[str, TransformSpec] | None = None) -> list[Cell]:
    overrides = overrides or {}
    cells = []
    for mode in ("none", "vd", "vd_tn"):
        cells += table_cells(mode, overrides.get(mode))
    return cells


def format_tables(cells: list[Cell]) -> str:
    lines = []
    for mode in ("none", "vd", "vd_tn"):
        rows = [c for c in cells if c.mode == mode]
        if not rows:
            continue
        lines.append(f"== {TITLES[mode]} ({mode}) ==")
        lines.append(f"{'agent':<6}{'action':<8}{'cell':<12}{'computed':>10}{'ref':>8}  status")
        for c in rows:
            lines.append(
                f"{c.agent + 1:<6}{'a' + str(c.action + 1):<8}{c.label:<12}"
                f"{c.computed:>10.4f}{c.expected:>8.2f}  {'PASS' if c.passed else 'FAIL'}"
            )
        lines.append("")
    n_pass = sum(c.passed for c in cells)
    lines.append(f"{n_pass}/{len(cells)} cells PASS")
    return "\n".join(lines)
