"""Synthetic student cohorts with controllable demographic/behaviour coupling.

Generation per student: demographic cell from independent marginals, then a
behavioural archetype from the cell's coupling row, then behaviour = the
archetype's mean trajectory plus i.i.d. Gaussian noise, then the label from
``Bernoulli(sigmoid(outcome_logit[archetype]))``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .data import AttributeSchema, Dataset, StudentRecord, save_dataset
from .errors import InvalidConfig, UnknownPreset


@dataclass(frozen=True)
class ScenarioConfig:
    n_students: int
    attributes: tuple              # ((name, (values...), (probs...)), ...)
    archetypes: tuple              # archetype names
    trajectories: np.ndarray       # K x T x D mean trajectories
    noise: tuple                   # per-archetype sigma
    coupling: np.ndarray           # n_cells x K, rows follow product(values...) order
    outcome_logits: tuple          # per archetype
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        attrs = tuple((str(n), tuple(map(str, v)), tuple(map(float, p)))
                      for n, v, p in self.attributes)
        object.__setattr__(self, "attributes", attrs)
        object.__setattr__(self, "trajectories", np.asarray(self.trajectories, dtype=float))
        object.__setattr__(self, "coupling", np.asarray(self.coupling, dtype=float))
        object.__setattr__(self, "noise", tuple(np.broadcast_to(
            np.asarray(self.noise, dtype=float), (len(self.archetypes),)).tolist()))
        object.__setattr__(self, "outcome_logits", tuple(map(float, self.outcome_logits)))
        self.validate()

    def validate(self):
        if self.n_students < 1:
            raise InvalidConfig("n_students must be >= 1")
        if not self.attributes:
            raise InvalidConfig("at least one demographic attribute is required")
        for name, values, probs in self.attributes:
            if len(values) != len(probs) or len(values) < 2:
                raise InvalidConfig(f"{name}: values and probabilities must align (>= 2 values)")
            if min(probs) < 0 or abs(sum(probs) - 1) > 1e-9:
                raise InvalidConfig(f"{name}: marginal must sum to 1")
        k = len(self.archetypes)
        if k < 1:
            raise InvalidConfig("at least one archetype is required")
        if self.trajectories.ndim != 3 or self.trajectories.shape[0] != k:
            raise InvalidConfig("trajectories must be K x T x D")
        if min(self.trajectories.shape) < 1:
            raise InvalidConfig("T and D must be >= 1")
        if min(self.noise) <= 0:
            raise InvalidConfig("noise sigma must be positive")
        if len(self.outcome_logits) != k:
            raise InvalidConfig("one outcome logit per archetype")
        if self.coupling.shape != (self.n_cells, k):
            raise InvalidConfig(f"coupling must be {self.n_cells} x {k}")
        if self.coupling.min() < 0 or np.abs(self.coupling.sum(axis=1) - 1).max() > 1e-9:
            raise InvalidConfig("coupling rows must be distributions")

    @property
    def n_cells(self) -> int:
        return int(np.prod([len(v) for _, v, _ in self.attributes]))

    def cells(self) -> list:
        return list(product(*(v for _, v, _ in self.attributes)))

    def cell_probs(self) -> np.ndarray:
        return np.array([np.prod(p) for p in product(*(p for _, _, p in self.attributes))])

    def schema(self) -> AttributeSchema:
        return AttributeSchema(tuple((n, v) for n, v, _ in self.attributes))

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    def to_json(self) -> dict:
        return {
            "name": self.name, "n_students": self.n_students, "seed": self.seed,
            "attributes": [{"name": n, "values": list(v), "probs": list(p)}
                           for n, v, p in self.attributes],
            "archetypes": list(self.archetypes),
            "trajectories": self.trajectories.tolist(),
            "noise": list(self.noise),
            "coupling": self.coupling.tolist(),
            "outcome_logits": list(self.outcome_logits),
        }

    @classmethod
    def from_json(cls, obj) -> "ScenarioConfig":
        return cls(
            n_students=int(obj["n_students"]),
            attributes=tuple((a["name"], a["values"], a["probs"]) for a in obj["attributes"]),
            archetypes=tuple(obj["archetypes"]),
            trajectories=np.asarray(obj["trajectories"]),
            noise=tuple(obj["noise"]),
            coupling=np.asarray(obj["coupling"]),
            outcome_logits=tuple(obj["outcome_logits"]),
            seed=int(obj.get("seed", 0)),
            name=obj.get("name", "custom"),
        )


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.asarray(z, dtype=float)))


@dataclass(frozen=True)
class Cohort:
    dataset: Dataset
    archetypes: dict  # student_id -> archetype index
    config: ScenarioConfig

    def write(self, out_dir, fmt: str = "jsonl"):
        """Write records, schema and the ground-truth archetype sidecar."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ext = "csv" if fmt == "csv" else "jsonl"
        save_dataset(self.dataset, out / f"records.{ext}", out / "schema.json", fmt)
        sidecar = {"archetype_names": list(self.config.archetypes), "archetypes": self.archetypes}
        (out / "ground_truth.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
        (out / "scenario.json").write_text(json.dumps(self.config.to_json(), indent=2) + "\n")
        return out


def generate(config: ScenarioConfig) -> Cohort:
    config.validate()
    rng = np.random.default_rng(config.seed)
    n = config.n_students
    cells = config.cells()
    cell_idx = rng.choice(len(cells), size=n, p=config.cell_probs())
    u = rng.random(n)
    cum = np.cumsum(config.coupling, axis=1)
    arche = np.minimum((u[:, None] >= cum[cell_idx]).sum(axis=1), len(config.archetypes) - 1)
    traj = config.trajectories
    sigma = np.asarray(config.noise)[arche]
    behavior = traj[arche] + rng.standard_normal((n, *traj.shape[1:])) * sigma[:, None, None]
    p1 = _sigmoid(np.asarray(config.outcome_logits))[arche]
    labels = (rng.random(n) < p1).astype(int)

    names = [a[0] for a in config.attributes]
    width = len(str(n - 1))
    records = []
    truth = {}
    for i in range(n):
        sid = f"s{i:0{width}d}"
        records.append(StudentRecord(sid, dict(zip(names, cells[cell_idx[i]])), behavior[i],
                                     int(labels[i])))
        truth[sid] = int(arche[i])
    return Cohort(Dataset(config.schema(), records), truth, config)


def population_summary(config: ScenarioConfig) -> dict:
    """Exact population-level marginals implied by ``config``."""
    cell_p = config.cell_probs()
    joint = cell_p[:, None] * config.coupling          # P(cell, archetype)
    p_label = _sigmoid(np.asarray(config.outcome_logits))
    pos = joint * p_label[None, :]                     # P(cell, archetype, y=1)
    total_pos = pos.sum()
    out = {
        "archetype_shares": dict(zip(config.archetypes, joint.sum(axis=0).tolist())),
        "label_rate": float(total_pos),
        "attributes": {},
    }
    cells = config.cells()
    for j, (name, values, probs) in enumerate(config.attributes):
        given_pos = {}
        label_rate = {}
        for v in values:
            mask = np.array([c[j] == v for c in cells])
            given_pos[v] = float(pos[mask].sum() / total_pos)
            label_rate[v] = float(pos[mask].sum() / joint[mask].sum())
        out["attributes"][name] = {
            "marginal": dict(zip(values, probs)),
            "share_of_positives": given_pos,
            "label_rate": label_rate,
        }
    return out


def fit_coupling(cell_probs: np.ndarray, tilt: np.ndarray, shares: np.ndarray,
                 iters: int = 500) -> np.ndarray:
    """Coupling rows proportional to ``base * tilt[cell]`` whose archetype marginal is ``shares``.

    ``tilt`` is n_cells x K (relative propensities); ``base`` is found by
    iterative proportional scaling.
    """
    base = np.asarray(shares, dtype=float).copy()
    for _ in range(iters):
        rows = tilt * base[None, :]
        rows /= rows.sum(axis=1, keepdims=True)
        marginal = cell_probs @ rows
        base *= shares / marginal
    rows = tilt * base[None, :]
    return rows / rows.sum(axis=1, keepdims=True)


# ------------------------------------------------------------------ presets

PRESETS = ("flipped-like", "tuglet-like", "uniform-null")
_T = 10


def latent_trajectories(positions, loadings, n_steps: int = _T) -> np.ndarray:
    """K x T x D linear-growth trajectories from latent archetype positions.

    Feature ``d`` of archetype ``k`` grows linearly to ``positions[k] @ loadings[d]``
    at the last step.
    """
    end = np.asarray(positions, dtype=float) @ np.asarray(loadings, dtype=float).T   # K x D
    ramp = np.arange(1, n_steps + 1) / n_steps
    return end[:, None, :] * ramp[None, :, None]


def _tilted(attributes, cell_tilt, shares) -> np.ndarray:
    """Coupling with archetype marginal ``shares``; ``cell_tilt(cell)`` gives K propensities."""
    probs = np.array([np.prod(p) for p in product(*(p for _, _, p in attributes))])
    cells = list(product(*(v for _, v, _ in attributes)))
    tilt = np.array([cell_tilt(dict(zip((a[0] for a in attributes), c))) for c in cells])
    return fit_coupling(probs, tilt, np.asarray(shares, dtype=float))


def _logits(p) -> tuple:
    p = np.asarray(p, dtype=float)
    return tuple(np.log(p / (1 - p)))


def with_label_rate(config: ScenarioConfig, rate: float) -> ScenarioConfig:
    """Shift every outcome logit by one constant so the population label rate is ``rate``."""
    base = np.asarray(config.outcome_logits)

    def excess(shift):
        return population_summary(config.with_(outcome_logits=tuple(base + shift)))["label_rate"] - rate

    return config.with_(outcome_logits=tuple(base + brentq(excess, -20.0, 20.0, xtol=1e-12)))


def _flipped_like() -> ScenarioConfig:
    attributes = (("gender", ("F", "M"), (0.35, 0.65)),
                  ("country", ("CO", "CF", "other"), (0.49, 0.47, 0.04)))
    shares = (0.15, 0.16, 0.26, 0.24, 0.20)

    def tilt(cell):
        t = np.ones(5)
        if cell["gender"] == "F":
            t[4] *= 6.0           # profile E over-represents women
        else:
            t[[0, 1]] *= 2.0
        if cell["country"] == "CO":
            t[[0, 1]] *= 5.5      # struggling profiles concentrate in CO
        elif cell["country"] == "CF":
            t[[2, 4]] *= 2.5
        return t

    config = ScenarioConfig(
        n_students=400,
        attributes=attributes,
        archetypes=("A", "B", "C", "D", "E"),
        trajectories=latent_trajectories([[0, 0], [1, 0], [1, 1], [2, 1], [2, 2]],
                                         [[1, 0], [0, 1], [0.5, 0.5]]),
        noise=0.3,
        coupling=_tilted(attributes, tilt, shares),
        outcome_logits=_logits([0.85, 0.75, 0.30, 0.35, 0.21]),
        name="flipped-like",
    )
    return with_label_rate(config, 0.42)


# fitted so that oversampling on profiles or on school x label narrows the school FNR gap
_TUGLET = {
    "positions": [[1.54, 0.11], [1.24, 0.57], [1.19, 0.71], [1.74, 2.29], [3.0, 0.97], [1.56, 0.33]],
    "loadings": [[-0.19, 0.92], [-0.93, 0.97], [0.2, -0.42]],
    "risk": [0.688, 0.331, 0.881, 0.099, 0.149, 0.645],
    "school_h_tilt": [1.41, 0.32, 0.88, 0.98, 0.91, 1.87],
    "noise": 0.328,
}


def _tuglet_like() -> ScenarioConfig:
    attributes = (("gender", ("F", "M", "other"), (0.48, 0.51, 0.01)),
                  ("school", ("H", "M"), (0.52, 0.48)))
    shares = (0.14, 0.23, 0.34, 0.04, 0.13, 0.12)
    h_tilt = np.asarray(_TUGLET["school_h_tilt"])

    def build(m_tilt, shift):
        def tilt(cell):
            if cell["school"] == "H":
                return h_tilt
            t = np.ones(6)
            t[2] = m_tilt          # non explorers lean towards school M
            return t

        return ScenarioConfig(
            n_students=400,
            attributes=attributes,
            archetypes=("systematic explorers", "explorers", "non explorers",
                        "slow explorers", "mixed explorers", "slow passers"),
            trajectories=latent_trajectories(_TUGLET["positions"], _TUGLET["loadings"]),
            noise=_TUGLET["noise"],
            coupling=_tilted(attributes, tilt, shares),
            outcome_logits=tuple(np.asarray(_logits(_TUGLET["risk"])) + shift),
            name="tuglet-like",
        )

    def m_share(m_tilt, shift):
        summary = population_summary(build(m_tilt, shift))
        return summary["attributes"]["school"]["share_of_positives"]["M"]

    # alternate the two one-dimensional solves; both targets move only slightly together
    log_tilt, shift = 0.0, 0.0
    for _ in range(6):
        log_tilt = brentq(lambda v: m_share(np.exp(v), shift) - 0.58, -8.0, 8.0, xtol=1e-12)
        config = with_label_rate(build(np.exp(log_tilt), shift), 0.47)
        shift += config.outcome_logits[0] - build(np.exp(log_tilt), shift).outcome_logits[0]
    return build(np.exp(log_tilt), shift)


def _uniform_null() -> ScenarioConfig:
    attributes = (("gender", ("F", "M"), (0.5, 0.5)),
                  ("region", ("north", "south"), (0.5, 0.5)))
    return ScenarioConfig(
        n_students=2000,
        attributes=attributes,
        archetypes=("low", "mid", "high"),
        trajectories=latent_trajectories([[0, 0], [1, 0], [1, 1]], [[1, 0], [0, 1], [0.5, 0.5]]),
        noise=0.3,
        coupling=np.full((4, 3), 1 / 3),
        outcome_logits=_logits([0.3, 0.5, 0.7]),
        name="uniform-null",
    )


def preset(name: str) -> ScenarioConfig:
    """Named scenario mirroring the published population statistics of one context.

    ``"flipped-like"``: gender 35/65, country 49/47 plus 4% other, 42% label-1,
    62% of label-1 students from CO, five profiles (15/16/26/24/20%) where E
    has a low intervention rate and more women.
    ``"tuglet-like"``: gender 48/51 plus 1% other, school 52/48, 47% label-1,
    58% of label-1 students from school M, six profiles (14/23/34% for the
    three fast-passing ones).
    ``"uniform-null"``: balanced attributes, demographics independent of behaviour.
    """
    builders = {"flipped-like": _flipped_like, "tuglet-like": _tuglet_like,
                "uniform-null": _uniform_null}
    if name not in builders:
        raise UnknownPreset(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    return builders[name]()
