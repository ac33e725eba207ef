"""Run configuration: a flat key = value text format with strict parsing.

Unknown keys are rejected; every field has a typed default. Booleans accept
true/false/1/0/yes/no. A ``#`` starts a comment anywhere on a line.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

ALGORITHMS = ("hsm_admm", "uniform_admm", "prox_dsgd", "prox_gt")
TOPOLOGIES = ("ring", "star", "hub_leaf", "random_connected", "from_edge_list")
PROBLEM_KINDS = ("least_squares", "logistic", "nonconvex_robust")
REGULARIZER_KINDS = ("l1", "none")


class ConfigInvalid(Exception):
    """Malformed or out-of-range run configuration."""


@dataclass
class RunConfig:
    """Everything a run needs: problem, topology, algorithm, schedule
    constants, budgets, seeds, and output/checker switches."""

    algorithm: str = "hsm_admm"
    topology: str = "ring"
    n: int = 8
    p: int = 10
    hubs: int = 1
    edge_prob: float = 0.3
    edge_list: str = ""
    graph_seed: int = 0
    problem: str = "least_squares"
    samples_per_agent: int = 50
    dataset_seed: int = 1
    noniid: bool = False
    regularizer: str = "none"
    l1_weight: float = 0.0
    alpha: float = 0.0
    noise_std: float = 0.1
    dataset_csv: str = ""
    dataset_manifest: str = ""
    c_rho: float = 1.0
    c_a: float = 1.0
    c_eta: float = 2.0
    batch_size: int = 1
    m0: int = 32
    step_scale: float = 0.1
    K: int = 1000
    seed: int = 0
    replicas: int = 1
    workers: int = 1
    out_dir: str = "results/run"
    metric_every: int = 0
    check_dual_bound: bool = False
    track_lyapunov: bool = True
    record_accumulation: bool = False
    divergence_guard: float = 1e12
    plots: bool = False
    theta: float = 1.0
    c_mu: float = 1.0
    c_gamma: float = 1.0

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigInvalid(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.topology not in TOPOLOGIES:
            raise ConfigInvalid(f"topology must be one of {TOPOLOGIES}, got {self.topology!r}")
        if self.problem not in PROBLEM_KINDS:
            raise ConfigInvalid(f"problem must be one of {PROBLEM_KINDS}, got {self.problem!r}")
        if self.regularizer not in REGULARIZER_KINDS:
            raise ConfigInvalid(f"regularizer must be one of {REGULARIZER_KINDS}")
        if self.regularizer == "none" and self.l1_weight > 0:
            raise ConfigInvalid("l1_weight > 0 requires regularizer = l1")
        if self.n < 2:
            raise ConfigInvalid(f"n must be >= 2, got {self.n}")
        if self.p < 1:
            raise ConfigInvalid(f"p must be >= 1, got {self.p}")
        if self.topology == "random_connected" and not (0.0 < self.edge_prob <= 1.0):
            raise ConfigInvalid(f"edge_prob must be in (0, 1], got {self.edge_prob}")
        if self.topology == "from_edge_list" and not self.edge_list:
            raise ConfigInvalid("from_edge_list requires edge_list")
        if self.topology == "hub_leaf" and not (1 <= self.hubs < self.n):
            raise ConfigInvalid(f"hubs must be in [1, n), got {self.hubs}")
        if self.samples_per_agent < 1:
            raise ConfigInvalid("samples_per_agent must be >= 1")
        for name in ("c_rho", "c_a", "c_eta", "step_scale", "theta", "c_mu",
                     "c_gamma", "divergence_guard"):
            if getattr(self, name) <= 0:
                raise ConfigInvalid(f"{name} must be positive")
        for name in ("l1_weight", "alpha", "noise_std"):
            if getattr(self, name) < 0:
                raise ConfigInvalid(f"{name} must be nonnegative")
        if self.batch_size < 0:
            raise ConfigInvalid("batch_size must be >= 0 (0 = full batch)")
        if self.m0 < 1:
            raise ConfigInvalid("m0 must be >= 1")
        if self.K < 0:
            raise ConfigInvalid("K must be >= 0")
        if self.replicas < 1 or self.workers < 1:
            raise ConfigInvalid("replicas and workers must be >= 1")
        if self.metric_every < 0:
            raise ConfigInvalid("metric_every must be >= 0 (0 = automatic cadence)")
        if bool(self.dataset_csv) != bool(self.dataset_manifest):
            raise ConfigInvalid("dataset_csv and dataset_manifest go together")


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(name: str, raw: str):
    ftype = _FIELDS[name].type
    raw = raw.strip()
    if ftype in ("bool", bool):
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigInvalid(f"{name}: expected a boolean, got {raw!r}")
    try:
        if ftype in ("int", int):
            return int(raw)
        if ftype in ("float", float):
            return float(raw)
    except ValueError as exc:
        raise ConfigInvalid(f"{name}: cannot parse {raw!r}") from exc
    return raw


def parse_config_text(text: str) -> RunConfig:
    values = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigInvalid(f"line {ln}: expected 'key = value', got {raw.rstrip()!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in _FIELDS:
            raise ConfigInvalid(f"line {ln}: unknown key {key!r}")
        if key in values:
            raise ConfigInvalid(f"line {ln}: duplicate key {key!r}")
        values[key] = _coerce(key, val)
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def config_to_text(cfg: RunConfig) -> str:
    lines = []
    for f in dataclasses.fields(RunConfig):
        val = getattr(cfg, f.name)
        if isinstance(val, bool):
            val = "true" if val else "false"
        lines.append(f"{f.name} = {val}")
    return "\n".join(lines) + "\n"


def write_config(cfg: RunConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_to_text(cfg))
