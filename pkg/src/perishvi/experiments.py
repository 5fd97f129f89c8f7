"""Named experiment presets, e.g. ``a/m2/exp1`` or ``c/m3/exp2``."""

from __future__ import annotations

from .config import ExperimentConfig
from .errors import ConfigError

# Scenario A experiments 1..8: wastage cost, lead time and issuing rule.
A_WASTE_COST = (7.0, 7.0, 10.0, 10.0, 7.0, 7.0, 10.0, 10.0)
A_LEAD_TIME = (1, 1, 1, 1, 2, 2, 2, 2)
A_ISSUING = ("lifo", "fifo") * 4

# Scenario B (m, experiment) -> Poisson means and explicit order caps (None: newsvendor).
B_EXPERIMENTS = {
    (2, 1): dict(mu_a=5.0, mu_b=5.0),
    (2, 2): dict(mu_a=7.0, mu_b=3.0),
    (3, 1): dict(mu_a=5.0, mu_b=5.0),
    (3, 2): dict(mu_a=7.0, mu_b=3.0),
    (3, 3): dict(mu_a=5.0, mu_b=5.0, A_a_max=13, A_b_max=13),
    (3, 4): dict(mu_a=7.0, mu_b=3.0, A_a_max=20, A_b_max=4),
}
# Fixed 100-sweep benchmark settings for the two-product model with m = 2.
B_BENCHMARKS = {
    "P1": dict(mu_a=5.0, mu_b=5.0, A_a_max=10, A_b_max=10),
    "P2": dict(mu_a=5.0, mu_b=6.0, A_a_max=10, A_b_max=12),
    "P3": dict(mu_a=6.0, mu_b=6.0, A_a_max=12, A_b_max=12),
    "P4": dict(mu_a=7.0, mu_b=7.0, A_a_max=13, A_b_max=13),
}


def _build() -> dict:
    presets = {}
    for m in (2, 3, 4, 5):
        for exp in range(1, 9):
            name = f"a/m{m}/exp{exp}"
            presets[name] = ExperimentConfig(
                scenario="a", name=name,
                params=dict(m=m, L=A_LEAD_TIME[exp - 1], issuing=A_ISSUING[exp - 1],
                            C_w=A_WASTE_COST[exp - 1]),
                simopt=dict(method="grid"),
            )
    for (m, exp), values in B_EXPERIMENTS.items():
        name = f"b/m{m}/exp{exp}"
        presets[name] = ExperimentConfig(
            scenario="b", name=name, params=dict(m=m, **values), simopt=dict(method="ga"),
        )
    for label, values in B_BENCHMARKS.items():
        name = f"b/{label}"
        presets[name] = ExperimentConfig(
            scenario="b", name=name, params=dict(m=2, fixed_iterations=100, **values),
            simopt=dict(method="ga"),
        )
    for m in (3, 5, 8):
        for exp in (1, 2):
            name = f"c/m{m}/exp{exp}"
            presets[name] = ExperimentConfig(
                scenario="c", name=name, params=dict(m=m, experiment=exp),
                simopt=dict(method="ga"),
            )
    return presets


PRESETS = _build()


def preset_names() -> list[str]:
    return list(PRESETS)


def get_preset(name: str) -> ExperimentConfig:
    try:
        cfg = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; see 'perishvi preset list'") from None
    # hand out a copy so callers can override fields freely
    return ExperimentConfig(
        scenario=cfg.scenario, name=cfg.name, params=dict(cfg.params), vi=dict(cfg.vi),
        simopt=dict(cfg.simopt), evaluation=dict(cfg.evaluation), output=cfg.output,
    )
