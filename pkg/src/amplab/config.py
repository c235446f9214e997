"""Experiment configuration: a single strict JSON document.

Unknown keys are rejected at every level so that typos fail loudly instead of
silently running a default. All defaults are documented here and echoed by the
CLI's --dry-run as canonical JSON.
"""

import json
from dataclasses import dataclass, field

from .ensembles import EnsembleSpec, PriorSpec
from .errors import ConfigError, RejectedInputError
from .nonlinear import Denoiser, TestFunction
from .state_evolution import QuadratureSpec

EXPERIMENTS = (
    "universality",
    "state_evolution",
    "bbp",
    "interpolation",
    "concentration",
    "power_bound",
)

_TOP_KEYS = {
    "experiment",
    "n_grid",
    "trials",
    "master_seed",
    "K",
    "gamma",
    "gamma_grid",
    "t_grid",
    "ensemble",
    "prior",
    "denoiser",
    "phi",
    "engine",
    "init",
    "power_depth",
    "diag_shift",
    "couple_streams",
    "gauss_hermite_nodes",
    "gauss_legendre_nodes",
    "mc_samples",
    "se_seed",
    "records_csv",
    "summary_json",
    "threads",
}

_ENSEMBLE_KEYS = {"kind", "param", "diagonal_policy"}
_PRIOR_KEYS = {"kind", "values", "probs"}
_DENOISER_KEYS = {"kind", "schedule", "weights", "offset", "delta"}
_PHI_KEYS = {"kind", "clip"}
_INIT_KEYS = {"kind"}


@dataclass
class ExperimentConfig:
    experiment: str
    n_grid: tuple
    trials: int = 50
    master_seed: int = 0
    K: int = 5
    gamma: float = 0.0
    gamma_grid: tuple | None = None
    t_grid: tuple | None = None
    ensemble: EnsembleSpec = field(default_factory=lambda: EnsembleSpec("gaussian"))
    prior: PriorSpec = field(default_factory=lambda: PriorSpec("rademacher"))
    denoiser_kind: str = "scaled_tanh"
    denoiser_schedule: object = "bayes"  # "bayes" or an explicit tuple
    denoiser_weights: tuple = ()
    denoiser_offset: float = 0.0
    denoiser_delta: float = 1e-2
    phi: TestFunction = field(default_factory=lambda: TestFunction("tanh_product"))
    engine: str = "onsager"
    init: str = "independent"
    power_depth: object = "auto"
    diag_shift: float = 3.0
    couple_streams: bool = False
    gauss_hermite_nodes: int = 61
    gauss_legendre_nodes: int = 64
    mc_samples: int = 100_000
    se_seed: int = 0
    records_csv: str | None = None
    summary_json: str | None = None
    threads: int = 1

    def quadrature(self):
        return QuadratureSpec(
            gauss_hermite_nodes=self.gauss_hermite_nodes,
            gauss_legendre_nodes=self.gauss_legendre_nodes,
            mc_samples=self.mc_samples,
            seed=self.se_seed,
        )

    def build_denoiser(self):
        """The configured Denoiser, or the marker "bayes" (resolved at run time)."""
        if self.denoiser_kind == "scaled_tanh" and self.denoiser_schedule == "bayes":
            return "bayes"
        kwargs = {"kind": self.denoiser_kind}
        if self.denoiser_kind in ("scaled_tanh", "smooth_soft_threshold"):
            if not isinstance(self.denoiser_schedule, tuple):
                raise ConfigError(
                    f"{self.denoiser_kind} needs an explicit schedule or 'bayes'"
                )
            kwargs["schedule"] = self.denoiser_schedule
            if self.denoiser_kind == "smooth_soft_threshold":
                kwargs["delta"] = self.denoiser_delta
        if self.denoiser_kind == "linear_combo":
            kwargs["weights"] = self.denoiser_weights
            kwargs["offset"] = self.denoiser_offset
        try:
            return Denoiser(**kwargs)
        except RejectedInputError as exc:
            raise ConfigError(str(exc)) from exc

    def resolved_dict(self):
        """Full configuration with defaults applied, as plain JSON data."""
        return {
            "experiment": self.experiment,
            "n_grid": list(self.n_grid),
            "trials": self.trials,
            "master_seed": self.master_seed,
            "K": self.K,
            "gamma": self.gamma,
            "gamma_grid": None if self.gamma_grid is None else list(self.gamma_grid),
            "t_grid": None if self.t_grid is None else list(self.t_grid),
            "ensemble": {
                "kind": self.ensemble.kind,
                "param": self.ensemble.param,
                "diagonal_policy": self.ensemble.diagonal_policy,
            },
            "prior": {
                "kind": self.prior.kind,
                "values": list(self.prior.values),
                "probs": list(self.prior.probs),
            },
            "denoiser": {
                "kind": self.denoiser_kind,
                "schedule": (
                    self.denoiser_schedule
                    if isinstance(self.denoiser_schedule, str) or self.denoiser_schedule is None
                    else list(self.denoiser_schedule)
                ),
                "weights": list(self.denoiser_weights),
                "offset": self.denoiser_offset,
                "delta": self.denoiser_delta,
            },
            "phi": {"kind": self.phi.kind, "clip": self.phi.clip},
            "engine": self.engine,
            "init": {"kind": self.init},
            "power_depth": self.power_depth,
            "diag_shift": self.diag_shift,
            "couple_streams": self.couple_streams,
            "gauss_hermite_nodes": self.gauss_hermite_nodes,
            "gauss_legendre_nodes": self.gauss_legendre_nodes,
            "mc_samples": self.mc_samples,
            "se_seed": self.se_seed,
            "records_csv": self.records_csv,
            "summary_json": self.summary_json,
            "threads": self.threads,
        }

    def canonical_json(self):
        return json.dumps(self.resolved_dict(), sort_keys=True, indent=2)


def _reject_unknown(d, allowed, where):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} keys: {sorted(unknown)}")


def _as_int(value, name, minimum=None):
    if not isinstance(value, int) or isinstance(value, bool):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    return value


def _as_number(value, name):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    return float(value)


def parse_config(data):
    """Validate a decoded JSON document and build an ExperimentConfig."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    _reject_unknown(data, _TOP_KEYS, "configuration")
    if "experiment" not in data:
        raise ConfigError("missing required key 'experiment'")
    experiment = data["experiment"]
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; expected one of {EXPERIMENTS}")
    if "n_grid" not in data:
        raise ConfigError("missing required key 'n_grid'")
    n_grid = tuple(_as_int(v, "n_grid entry", minimum=1) for v in data["n_grid"])
    if not n_grid:
        raise ConfigError("n_grid must be nonempty")
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ConfigError("n_grid must be strictly ascending")

    cfg = ExperimentConfig(experiment=experiment, n_grid=n_grid)
    if "trials" in data:
        cfg.trials = _as_int(data["trials"], "trials", minimum=1)
    if "master_seed" in data:
        cfg.master_seed = _as_int(data["master_seed"], "master_seed")
    if "K" in data:
        cfg.K = _as_int(data["K"], "K", minimum=0)
    if "gamma" in data:
        cfg.gamma = _as_number(data["gamma"], "gamma")
        if cfg.gamma < 0:
            raise ConfigError(f"gamma must be >= 0, got {cfg.gamma}")
    if data.get("gamma_grid") is not None:
        cfg.gamma_grid = tuple(_as_number(v, "gamma_grid entry") for v in data["gamma_grid"])
        if not cfg.gamma_grid:
            raise ConfigError("gamma_grid must be nonempty")
    if data.get("t_grid") is not None:
        cfg.t_grid = tuple(_as_number(v, "t_grid entry") for v in data["t_grid"])
        if any(not (0.0 <= t <= 1.0) for t in cfg.t_grid):
            raise ConfigError("t_grid values must lie in [0, 1]")

    try:
        if "ensemble" in data:
            ens = dict(data["ensemble"])
            _reject_unknown(ens, _ENSEMBLE_KEYS, "ensemble")
            cfg.ensemble = EnsembleSpec(
                kind=ens.get("kind", "gaussian"),
                param=ens.get("param"),
                diagonal_policy=ens.get("diagonal_policy", "same_law"),
            )
        if "prior" in data:
            pri = dict(data["prior"])
            _reject_unknown(pri, _PRIOR_KEYS, "prior")
            cfg.prior = PriorSpec(
                kind=pri.get("kind", "rademacher"),
                values=tuple(pri.get("values", ())),
                probs=tuple(pri.get("probs", ())),
            )
        if "phi" in data:
            phi = dict(data["phi"])
            _reject_unknown(phi, _PHI_KEYS, "phi")
            cfg.phi = TestFunction(kind=phi.get("kind", "tanh_product"), clip=phi.get("clip", 10.0))
    except RejectedInputError as exc:
        raise ConfigError(str(exc)) from exc

    if "denoiser" in data:
        den = dict(data["denoiser"])
        _reject_unknown(den, _DENOISER_KEYS, "denoiser")
        cfg.denoiser_kind = den.get("kind", "scaled_tanh")
        schedule = den.get("schedule", "bayes" if cfg.denoiser_kind == "scaled_tanh" else None)
        if isinstance(schedule, str):
            if schedule != "bayes":
                raise ConfigError(f"schedule must be a list or 'bayes', got {schedule!r}")
            cfg.denoiser_schedule = "bayes"
        elif schedule is None:
            cfg.denoiser_schedule = None
        else:
            cfg.denoiser_schedule = tuple(_as_number(v, "schedule entry") for v in schedule)
        cfg.denoiser_weights = tuple(
            _as_number(v, "weights entry") for v in den.get("weights", ())
        )
        cfg.denoiser_offset = _as_number(den.get("offset", 0.0), "offset")
        cfg.denoiser_delta = _as_number(den.get("delta", 1e-2), "delta")

    if "engine" in data:
        if data["engine"] not in ("onsager", "generalized"):
            raise ConfigError(f"engine must be 'onsager' or 'generalized', got {data['engine']!r}")
        cfg.engine = data["engine"]
    if "init" in data:
        init = data["init"]
        if isinstance(init, str):
            init = {"kind": init}
        init = dict(init)
        _reject_unknown(init, _INIT_KEYS, "init")
        if init.get("kind") not in ("independent", "spectral"):
            raise ConfigError(f"init kind must be 'independent' or 'spectral', got {init.get('kind')!r}")
        cfg.init = init["kind"]
    if "power_depth" in data:
        depth = data["power_depth"]
        if depth != "auto":
            depth = _as_int(depth, "power_depth", minimum=1)
        cfg.power_depth = depth
    if "diag_shift" in data:
        cfg.diag_shift = _as_number(data["diag_shift"], "diag_shift")
    if "couple_streams" in data:
        if not isinstance(data["couple_streams"], bool):
            raise ConfigError("couple_streams must be a boolean")
        cfg.couple_streams = data["couple_streams"]
    for key, minimum in (
        ("gauss_hermite_nodes", 2),
        ("gauss_legendre_nodes", 2),
        ("mc_samples", 10_000),
        ("se_seed", None),
        ("threads", 1),
    ):
        if key in data:
            setattr(cfg, key, _as_int(data[key], key, minimum=minimum))
    for key in ("records_csv", "summary_json"):
        if data.get(key) is not None:
            if not isinstance(data[key], str):
                raise ConfigError(f"{key} must be a string path")
            setattr(cfg, key, data[key])

    _validate_experiment(cfg)
    return cfg


def _validate_experiment(cfg):
    if cfg.experiment == "bbp":
        if cfg.gamma_grid is None:
            raise ConfigError("bbp requires gamma_grid")
    if cfg.experiment == "interpolation":
        if cfg.t_grid is None:
            raise ConfigError("interpolation requires t_grid")
    if cfg.experiment == "concentration":
        if cfg.ensemble.kind != "gaussian":
            raise ConfigError("concentration measures the Gaussian orbit; ensemble must be gaussian")
    if cfg.experiment == "power_bound":
        if max(cfg.n_grid) > 256:
            raise ConfigError("power_bound runs at oracle scale; n_grid must stay <= 256")
    if cfg.experiment == "state_evolution":
        if cfg.init == "spectral" and cfg.gamma <= 1.0:
            raise ConfigError("spectral-init state evolution requires gamma > 1")
        if cfg.init == "independent" and cfg.prior.kind != "gaussian":
            raise ConfigError(
                "independent-init state evolution compares against the Gaussian "
                "covariance recursion; prior must be gaussian"
            )
    if cfg.denoiser_schedule == "bayes" and cfg.denoiser_kind == "scaled_tanh":
        needs_se = cfg.experiment in ("universality", "state_evolution", "interpolation", "concentration")
        if needs_se and cfg.gamma <= 1.0:
            raise ConfigError("the bayes tanh schedule requires gamma > 1")
    if isinstance(cfg.denoiser_schedule, tuple) and len(cfg.denoiser_schedule) < cfg.K:
        raise ConfigError(
            f"schedule of length {len(cfg.denoiser_schedule)} does not cover K={cfg.K} iterations"
        )
    if cfg.couple_streams and cfg.ensemble.kind != "gaussian":
        raise ConfigError("couple_streams makes both sides identical; ensemble must be gaussian")


def load_config(path):
    """Read and parse a JSON config file; errors carry the offending path."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    return parse_config(data)
