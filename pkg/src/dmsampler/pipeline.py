"""End-to-end runs of the three latent samplers and the ambient baseline.

Every run is a pure function of its configuration and global seed. Artifacts
are written to the output directory as they are produced:

- ``data.csv``: training points (ambient)
- ``latent.csv``: selected Diffusion-Maps coordinates of the training points
- ``dmaps_model.json``, ``gh_model.json`` and the generator model JSON
- ``latent_generated.csv`` / ``latent_selected.csv``: latent samples before/after filtering
- ``samples.csv``: lifted ambient samples
- ``reference.csv``: fresh ground-truth draw (generated S-curve data only)
- ``marginals.csv``: per-coordinate density histograms of samples and data
- ``training_log.csv``: per-epoch training loss of the network, when one is trained
- ``metrics.json``: the metrics report (wall-clock ``timings`` are the only nondeterministic field)
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import dmaps as dm
from . import latent_harmonics as lh
from . import manifold_filter as mf
from . import neural as nn
from . import plom
from . import score_diffusion as sd
from .datasets import DEFAULT_T_RANGE, gen_s_curve, read_csv, write_csv
from .errors import ConfigurationError, ParameterError
from .metrics import distance_metrics, histogram_table, marginal_metrics

__all__ = [
    "METHODS",
    "PipelineConfig",
    "MetricsReport",
    "load_config",
    "subseed",
    "fit_latent_stage",
    "run_msgm1",
    "run_msgm2",
    "run_mplom",
    "run_ambient_baseline",
    "run",
    "evaluate_files",
]

METHODS = ("msgm1", "msgm2", "mplom")
SEED_TAGS = ("data", "reference", "pairs", "train", "generate", "plom")

# Method-specific defaults applied when the config leaves a value unset.
_DEFAULT_EPOCHS = {"msgm1": 200, "msgm2": 500, "ambient": 200}
_DEFAULT_INTEGRATOR = {"msgm1": "ode_rk4", "msgm2": "sde_euler_maruyama", "ambient": "ode_rk4"}


def subseed(seed: int, tag: str) -> int:
    """Independent 32-bit seed for one consumer of randomness."""
    return int(np.random.SeedSequence([int(seed), SEED_TAGS.index(tag)]).generate_state(1)[0])


@dataclass
class DataSection:
    path: Optional[str] = None
    n: int = 3000
    t_range: tuple = DEFAULT_T_RANGE


@dataclass
class DMapsSection:
    epsilon: float = 0.1
    alpha: float = 1.0
    n_eig: int = 10
    threshold: float = dm.DEFAULT_THRESHOLD
    bandwidth_factor: float = dm.DEFAULT_BANDWIDTH_FACTOR
    coords: Optional[list] = None


@dataclass
class GHSection:
    epsilon2: Optional[float] = 0.02
    cutoff_delta: float = lh.DEFAULT_CUTOFF


@dataclass
class ScoreSection:
    minibatch_size: int = sd.DEFAULT_MINIBATCH
    steps: int = 500
    integrator: Optional[str] = None
    grid: str = "sqrt"
    n_pairs: int = 3000


@dataclass
class NetworkSection:
    hidden: tuple = (64, 64, 64)
    activation: str = "tanh"


@dataclass
class TrainSection:
    learning_rate: float = 1e-3
    epochs: Optional[int] = None
    batch_size: int = 128
    weighting: str = "beta2"


@dataclass
class PLoMSection:
    f0: float = 1.0
    delta_r: float = 5e-4
    pca_tol: float = 1e-6
    epsilon: float = 10.0
    m: Optional[int] = None
    n_eig: int = 20
    burn_in: Optional[int] = None
    thinning: Optional[int] = None
    n_samples: int = 30000


@dataclass
class FilterSection:
    n_generate: int = 100000
    n_neighbors: int = 10
    dedup: bool = False


@dataclass
class EvalSection:
    n_reference: int = 30000
    bins: int = 50


_SECTIONS = {
    "data": DataSection,
    "dmaps": DMapsSection,
    "gh": GHSection,
    "score": ScoreSection,
    "network": NetworkSection,
    "train": TrainSection,
    "plom": PLoMSection,
    "filter": FilterSection,
    "eval": EvalSection,
}


@dataclass
class PipelineConfig:
    method: str = "msgm1"
    seed: int = 0
    out: str = "run"
    data: DataSection = field(default_factory=DataSection)
    dmaps: DMapsSection = field(default_factory=DMapsSection)
    gh: GHSection = field(default_factory=GHSection)
    score: ScoreSection = field(default_factory=ScoreSection)
    network: NetworkSection = field(default_factory=NetworkSection)
    train: TrainSection = field(default_factory=TrainSection)
    plom: PLoMSection = field(default_factory=PLoMSection)
    filter: FilterSection = field(default_factory=FilterSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; choose from {METHODS}")
        if int(self.seed) < 0 or int(self.seed) >= 2**64:
            raise ConfigurationError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        # Building the typed sub-configs validates them.
        try:
            self.dmaps_config()
            self.score_config()
            self.train_config()
            self.plom_config()
            self.architecture()
        except (ParameterError, TypeError, ValueError) as exc:
            raise ConfigurationError(f"invalid configuration: {exc}") from None
        if self.filter.n_neighbors < 1 or self.filter.n_generate < 1:
            raise ConfigurationError("filter counts must be positive")
        if self.data.path is None and int(self.data.n) < 2:
            raise ConfigurationError("need at least two data points")

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        unknown = set(d) - {"method", "seed", "out", *_SECTIONS}
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        kw = {k: d[k] for k in ("method", "seed", "out") if k in d}
        for name, section in _SECTIONS.items():
            sub = d.get(name) or {}
            allowed = {f.name for f in fields(section)}
            bad = set(sub) - allowed
            if bad:
                raise ConfigurationError(f"unknown keys in {name!r}: {sorted(bad)}")
            vals = {k: tuple(v) if isinstance(v, list) and k in ("t_range", "hidden") else v for k, v in sub.items()}
            try:
                kw[name] = section(**vals)
            except TypeError as exc:
                raise ConfigurationError(f"bad {name!r} section: {exc}") from None
        return cls(**kw)

    def to_dict(self) -> dict:
        return asdict(self)

    def dmaps_config(self) -> dm.DMapsConfig:
        return dm.DMapsConfig(self.dmaps.epsilon, self.dmaps.alpha, self.dmaps.n_eig)

    def score_config(self, method: Optional[str] = None) -> sd.ScoreConfig:
        method = method or self.method
        s = self.score
        integ = s.integrator or _DEFAULT_INTEGRATOR.get(method, "ode_rk4")
        return sd.ScoreConfig(s.minibatch_size, subseed(self.seed, "pairs"), s.steps, integ, s.grid)

    def train_config(self, method: Optional[str] = None) -> nn.TrainConfig:
        method = method or self.method
        t = self.train
        epochs = t.epochs if t.epochs is not None else _DEFAULT_EPOCHS.get(method, 200)
        return nn.TrainConfig(t.learning_rate, epochs, t.batch_size, subseed(self.seed, "train"), t.weighting)

    def architecture(self) -> nn.Architecture:
        return nn.Architecture(tuple(self.network.hidden), self.network.activation)

    def plom_config(self) -> plom.PLoMConfig:
        p = self.plom
        return plom.PLoMConfig(p.f0, p.delta_r, p.pca_tol, p.epsilon, p.m, p.n_eig, p.burn_in, p.thinning)


def load_config(path) -> PipelineConfig:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigurationError("config must be a JSON object")
    return PipelineConfig.from_dict(d)


@dataclass
class MetricsReport:
    method: str
    counts: dict
    ks: list
    ks_vs_train: list
    mean_delta: list
    var_delta: list
    distance: Optional[dict] = None
    unfiltered_distance: Optional[dict] = None
    extras: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)


def _header(prefix, k):
    return [f"{prefix}{i}" for i in range(k)]


AMBIENT_HEADER = ["x", "y", "z"]


class _Run:
    """Shared state of one pipeline run: config, output directory, timings."""

    def __init__(self, cfg: PipelineConfig, out=None):
        self.cfg = cfg
        self.out = Path(out if out is not None else cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.timings = {}
        self._t = time.perf_counter()
        _write_json(self.out / "config.json", cfg.to_dict())

    def lap(self, name):
        now = time.perf_counter()
        self.timings[name] = now - self._t
        self._t = now

    def csv(self, name, data, header):
        write_csv(self.out / name, data, header)

    def json(self, name, obj):
        _write_json(self.out / name, obj)

    def training_log(self, losses):
        self.csv("training_log.csv", np.column_stack([np.arange(len(losses)), losses]), ["epoch", "loss"])

    @property
    def generated_data(self) -> bool:
        return self.cfg.data.path is None

    def load_data(self):
        if self.cfg.data.path is not None:
            X, header = read_csv(self.cfg.data.path)
        else:
            X, _ = gen_s_curve(self.cfg.data.n, self.cfg.data.t_range, subseed(self.cfg.seed, "data"))
            header = AMBIENT_HEADER
        if X.shape[0] < 2:
            raise ConfigurationError("dataset needs at least two rows")
        self.csv("data.csv", X, header)
        self.header = list(header)
        return X


def fit_latent_stage(X, cfg: PipelineConfig):
    """Diffusion Maps with coordinate selection, then Latent Harmonics on the selection."""
    model = dm.fit_dmaps(X, cfg.dmaps_config(), cfg.dmaps.threshold, cfg.dmaps.bandwidth_factor)
    if cfg.dmaps.coords is not None:
        model = dm.select_coordinates(model, tuple(int(c) for c in cfg.dmaps.coords))
    latent = model.latent
    gh = lh.fit_latent_harmonics(latent, X, cfg.gh.epsilon2, cfg.gh.cutoff_delta)
    return model, latent, gh


def _report(run: _Run, method, samples, X, extras, unfiltered=None) -> MetricsReport:
    cfg = run.cfg
    if run.generated_data:
        ref, _ = gen_s_curve(cfg.eval.n_reference, cfg.data.t_range, subseed(cfg.seed, "reference"))
        run.csv("reference.csv", ref, AMBIENT_HEADER)
    else:
        ref = X
    mm = marginal_metrics(samples, ref)
    mt = marginal_metrics(samples, X)
    dist = distance_metrics(samples, cfg.data.t_range) if run.generated_data else None
    udist = None
    if unfiltered is not None and run.generated_data:
        udist = distance_metrics(unfiltered, cfg.data.t_range)
    hs = histogram_table(samples, cfg.eval.bins)
    hd = histogram_table(X, cfg.eval.bins)
    run.csv("marginals.csv", np.column_stack([hs, hd[:, 1:]]),
            ["coord", "sample_left", "sample_right", "sample_density", "data_left", "data_right", "data_density"])
    run.lap("evaluate")
    rep = MetricsReport(
        method=method,
        counts={"train": int(X.shape[0]), "samples": int(samples.shape[0]), "reference": int(ref.shape[0]), **extras.pop("counts", {})},
        ks=mm["ks"],
        ks_vs_train=mt["ks"],
        mean_delta=mm["mean_delta"],
        var_delta=mm["var_delta"],
        distance=dist,
        unfiltered_distance=udist,
        extras=extras,
        timings=dict(run.timings),
    )
    run.json("metrics.json", rep.to_dict())
    return rep


def _prepare(run: _Run):
    X = run.load_data()
    model, latent, gh = fit_latent_stage(X, run.cfg)
    run.json("dmaps_model.json", model.to_dict())
    run.json("gh_model.json", gh.to_dict())
    run.csv("latent.csv", latent, _header("phi", latent.shape[1]))
    run.lap("fit_latent")
    return X, model, latent, gh


def _filter_and_lift(run: _Run, generated, latent, gh, X, extras, method):
    cfg = run.cfg
    k = latent.shape[1]
    run.csv("latent_generated.csv", generated, _header("phi", k))
    index = mf.build_index(generated)
    selected = mf.select_neighbors(index, latent, cfg.filter.n_neighbors, cfg.filter.dedup)
    run.csv("latent_selected.csv", selected, _header("phi", k))
    run.lap("filter")
    samples = lh.lift(gh, selected)
    unfiltered = lh.lift(gh, generated) if run.generated_data else None
    run.csv("samples.csv", samples, run.header)
    run.lap("lift")
    extras["counts"] = {"generated": int(generated.shape[0]), "selected": int(selected.shape[0])}
    return _report(run, method, samples, X, extras, unfiltered)


def run_msgm1(cfg: PipelineConfig, out=None) -> MetricsReport:
    """Monte-Carlo score pairs, supervised generator, filter and lift."""
    run = _Run(cfg, out)
    X, model, latent, gh = _prepare(run)
    pairs = sd.generate_labeled_pairs(latent, cfg.score.n_pairs, cfg.score_config("msgm1"))
    run.csv("pairs.csv", np.hstack([pairs.inputs, pairs.outputs]),
            _header("y", latent.shape[1]) + _header("phi", latent.shape[1]))
    run.lap("pairs")
    res = nn.mlp_train_mse(pairs, cfg.architecture(), cfg.train_config("msgm1"))
    run.json("generator_model.json", res.net.to_dict())
    run.training_log(res.losses)
    run.lap("train")
    generated = nn.nn_sample(res.net, cfg.filter.n_generate, subseed(cfg.seed, "generate"))
    run.lap("generate")
    extras = {"selected_coords": list(model.selected), "final_loss": res.final_loss}
    return _filter_and_lift(run, generated, latent, gh, X, extras, "msgm1")


def run_msgm2(cfg: PipelineConfig, out=None) -> MetricsReport:
    """Score network by denoising score matching, reverse-time sampling, filter and lift."""
    run = _Run(cfg, out)
    X, model, latent, gh = _prepare(run)
    net, losses = nn.train_score_matching(latent, cfg.architecture(), cfg.train_config("msgm2"))
    run.json("score_model.json", net.to_dict())
    run.training_log(losses)
    run.lap("train")
    scfg = cfg.score_config("msgm2")
    rng = np.random.default_rng(subseed(cfg.seed, "generate"))
    y = rng.standard_normal((cfg.filter.n_generate, latent.shape[1]))
    generated = sd.reverse_integrate(net, y, scfg, rng)
    run.lap("generate")
    probe = net(np.zeros((1, latent.shape[1])), 0.5)[0]
    extras = {"selected_coords": list(model.selected), "final_loss": float(losses[-1]) if losses else None,
              "score_probe_origin": probe.tolist()}
    return _filter_and_lift(run, generated, latent, gh, X, extras, "msgm2")


def run_mplom(cfg: PipelineConfig, out=None) -> MetricsReport:
    """PLoM on the latent coordinates, then lift (no filter)."""
    run = _Run(cfg, out)
    X, model, latent, gh = _prepare(run)
    pm = plom.plom_fit(latent.T, cfg.plom_config())
    run.json("plom_model.json", pm.to_dict())
    run.lap("plom_fit")
    H = plom.isde_run(pm, cfg.plom.n_samples, subseed(cfg.seed, "plom"))
    generated = plom.pca_reconstruct(pm.pca, H).T
    run.csv("latent_generated.csv", generated, _header("phi", latent.shape[1]))
    run.lap("generate")
    samples = lh.lift(gh, generated)
    run.csv("samples.csv", samples, run.header)
    run.lap("lift")
    lam = pm.eigvals[1:]
    extras = {
        "selected_coords": list(model.selected),
        "plom_m": pm.m,
        "plom_eigvals": pm.eigvals.tolist(),
        "plom_gap_ratio": float(lam[1] / lam[2]) if lam.size >= 3 and lam[2] > 0 else None,
        "counts": {"generated": int(generated.shape[0])},
    }
    return _report(run, "mplom", samples, X, extras)


def run_ambient_baseline(cfg: PipelineConfig, out=None, n_samples: Optional[int] = None):
    """Supervised score-based sampler trained directly on ambient data, without filter or lift."""
    run = _Run(cfg, out)
    X = run.load_data()
    pairs = sd.generate_labeled_pairs(X, cfg.score.n_pairs, cfg.score_config("ambient"))
    res = nn.mlp_train_mse(pairs, cfg.architecture(), cfg.train_config("ambient"))
    run.json("generator_model.json", res.net.to_dict())
    run.lap("train")
    samples = nn.nn_sample(res.net, n_samples or cfg.filter.n_generate, subseed(cfg.seed, "generate"))
    run.csv("samples.csv", samples, run.header)
    run.lap("generate")
    return _report(run, "ambient", samples, X, {"final_loss": res.final_loss})


_RUNNERS = {"msgm1": run_msgm1, "msgm2": run_msgm2, "mplom": run_mplom}


def run(cfg: PipelineConfig, out=None) -> MetricsReport:
    return _RUNNERS[cfg.method](cfg, out)


def evaluate_files(a_path, b_path, out_path=None, s_curve: bool = False, t_range=DEFAULT_T_RANGE) -> dict:
    """Compare the sample CSV ``a_path`` against ``b_path``; optionally write the result as JSON."""
    a, _ = read_csv(a_path)
    b, _ = read_csv(b_path)
    mm = marginal_metrics(a, b)
    rep = {"ks": mm["ks"], "mean_delta": mm["mean_delta"], "var_delta": mm["var_delta"],
           "counts": {"a": mm["n_a"], "b": mm["n_b"]}}
    if s_curve:
        rep["distance"] = distance_metrics(a, t_range)
    if out_path is not None:
        _write_json(Path(out_path), rep)
    return rep
