"""Experiment orchestration: configuration, pipelines, persistence, reports.

A run builds one of the registered problems, executes the selected sampling
pipeline end-to-end and persists chains (binary containers), a report CSV
and the run extras needed to reassemble the report without re-sampling.
Everything downstream of the config seed is deterministic, so repeated runs
produce byte-identical artifacts.
"""

import io
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .chains import ChainSet
from .container import read_array, write_array
from .diagnostics import credible_interval, epsr, ness_per_coordinate
from .errors import ArgError, FormatError
from .linalg import DiagonalFactor
from .mala import MalaConfig, TargetDensity, mala_sample
from .mixing import ReducedVEvaluator, WSpaceEvaluator
from .model import ExponentialMixing
from .problems import build_deblurring, build_storm, build_toy
from .reduction import (
    ccs_w_sampler,
    ccs_x_sampler,
    estimate_diagnostic_w,
    estimate_diagnostic_x,
    hellinger_bound_estimate,
    map_w_approx,
    map_w_sampler,
    map_x_approx,
    map_x_sampler,
    split_by_diagnostic,
    split_top_r,
    _epsilon_curve,
)
from .rto import RtoWorkspace

__all__ = ["RunConfig", "RunReport", "run", "summarize", "compare", "diagnose_curve"]

METHODS = ("reference", "ccs-w", "ccs-x", "map-w", "map-x")
EXPERIMENTS = ("toy", "deblur1d", "storm2d")
CI_LEVELS = (0.60, 0.90, 0.99)

# cap on pooled samples entering the Hellinger estimate
_HELLINGER_CAP = 2000


@dataclass
class RunConfig:
    """Configuration of one experiment run; the seed is mandatory."""

    experiment: str
    method: str
    seed: int
    n_samples: int = 5000
    n_chains: int = 5
    burn_in: float = 0.2
    r: int = None
    tau: float = None
    r_max: int = None
    scale: str = "full"
    n_diagnostic: int = 256
    diagnostic_source: str = "prior"  # or "map": re-estimate from MAP-approx draws
    workers: int = 1
    output_dir: str = None

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ArgError(f"unknown experiment {self.experiment!r}")
        if self.method not in METHODS:
            raise ArgError(f"unknown method {self.method!r}")
        if self.seed is None:
            raise ArgError("seed is mandatory")
        if self.scale not in ("full", "small"):
            raise ArgError("scale must be 'full' or 'small'")
        if self.n_samples < 1 or self.n_chains < 1:
            raise ArgError("n_samples and n_chains must be >= 1")
        if not 0.0 <= self.burn_in < 1.0:
            raise ArgError("burn_in must be a fraction in [0, 1)")
        if self.method in ("ccs-w", "ccs-x"):
            has_r = self.r is not None
            has_tau = self.tau is not None and self.r_max is not None
            if has_r == has_tau:
                raise ArgError("CCS methods need either r or (tau and r_max)")
        if self.diagnostic_source not in ("prior", "map"):
            raise ArgError("diagnostic_source must be 'prior' or 'map'")
        return self

    def to_json(self):
        payload = {k: v for k, v in self.__dict__.items()}
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text):
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ArgError(f"invalid config JSON: {exc}") from exc
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(payload) - known
        if unknown:
            raise ArgError(f"unknown config fields: {sorted(unknown)}")
        return cls(**payload).validate()


@dataclass
class RunReport:
    """Per-coordinate posterior statistics plus scalar run diagnostics."""

    experiment: str
    method: str
    seed: int
    n_chains: int
    n_samples: int
    mean: np.ndarray
    ci: dict  # level -> (lo, hi)
    epsr: np.ndarray  # per monitored coordinate
    monitored: np.ndarray  # coordinate indices the MCMC diagnostics cover
    ness: dict  # role -> mean nESS over its coordinates
    acceptance: list
    eps_r: float = None
    hellinger_estimate: float = None
    w_map_l0: int = None
    r: int = None
    timings: dict = field(default_factory=dict)  # not persisted

    def scalar_metadata(self):
        meta = {
            "experiment": self.experiment,
            "method": self.method,
            "seed": self.seed,
            "n_chains": self.n_chains,
            "n_samples": self.n_samples,
            "r": self.r,
            "w_map_l0": self.w_map_l0,
            "eps_r": self.eps_r,
            "hellinger_estimate": self.hellinger_estimate,
            "acceptance": ",".join(_fmt(a) for a in self.acceptance),
            "epsr_max": float(np.max(self.epsr)) if self.epsr.size else None,
        }
        for role in sorted(self.ness):
            meta[f"ness_{role}"] = self.ness[role]
        return meta

    def to_csv(self):
        buf = io.StringIO()
        buf.write("# gmixpost report\n")
        for key, value in self.scalar_metadata().items():
            buf.write(f"# {key}: {_fmt(value)}\n")
        cols = ["index", "mean"]
        for level in CI_LEVELS:
            tag = f"ci{int(round(level * 100))}"
            cols += [f"{tag}_lo", f"{tag}_hi"]
        cols.append("epsr")
        buf.write(",".join(cols) + "\n")
        epsr_full = np.full(self.mean.size, np.nan)
        epsr_full[self.monitored] = self.epsr
        for i in range(self.mean.size):
            row = [str(i), _fmt(self.mean[i])]
            for level in CI_LEVELS:
                lo, hi = self.ci[level]
                row += [_fmt(lo[i]), _fmt(hi[i])]
            row.append(_fmt(epsr_full[i]))
            buf.write(",".join(row) + "\n")
        return buf.getvalue()


def _fmt(value):
    if value is None:
        return "-"
    if isinstance(value, float):
        if np.isnan(value):
            return "nan"
        return format(value, ".17g")
    return str(value)


def build_problem(config):
    """Instantiate (model, prior, data) for the configured experiment."""
    if config.experiment == "toy":
        return build_toy(config.seed)
    if config.experiment == "deblur1d":
        if config.scale == "small":
            return build_deblurring(config.seed, n=256, levels=8)
        return build_deblurring(config.seed, n=1024, levels=10)
    if config.scale == "small":
        return build_storm(config.seed, coarse_side=16, oversample=2)
    return build_storm(config.seed, coarse_side=32, oversample=4)


def _mala_config(config, label):
    return MalaConfig(
        n_samples=config.n_samples,
        n_chains=config.n_chains,
        seed=config.seed,
        burn_in=int(round(config.burn_in * config.n_samples)),
        n_workers=config.workers,
        stream_label=label,
    )


def _component_draws(model, w_chains, config, label):
    """One posterior-component draw per mixing sample (parallel over chains)."""
    ws = RtoWorkspace(model)

    def draw_chain(c):
        gen = rngmod.stream(config.seed, label, c)
        out = np.empty((w_chains.n_samples, model.d))
        for t in range(w_chains.n_samples):
            factor = DiagonalFactor(w_chains.samples[c, t])
            out[t] = ws.draw(np.zeros(model.d), factor, 1, gen)[0]
        return out

    indices = range(w_chains.n_chains)
    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            stacks = list(pool.map(draw_chain, indices))
    else:
        stacks = [draw_chain(c) for c in indices]
    return ChainSet(np.stack(stacks), seeds=w_chains.seeds)


def _select_split(config, diagnostic):
    if config.r is not None:
        split = split_top_r(diagnostic, config.r)
        curve = _epsilon_curve(diagnostic.h)
    else:
        split, curve = split_by_diagnostic(diagnostic, config.tau, config.r_max)
    return split, curve


def _ccs_w_approx_logpdf(red, split):
    """Unnormalized log of the coordinate-selected approximation in w-space."""
    lam_comp = red.inner.rates[split.complement]

    def logpdf(w):
        w_sel = w[split.selected]
        w_comp = w[split.complement]
        if np.any(w_sel <= 0.0) or np.any(w_comp < 0.0):
            return -np.inf
        v_sel = np.log(w_sel)
        return red.log_density(v_sel) - float(np.sum(v_sel)) - float(lam_comp @ w_comp)

    return logpdf


def _reference_target(model, prior):
    at = model.whitened_forward()
    yt = model.whitened_data()
    delta = prior.rates

    def value_and_grad(x):
        resid = np.asarray(at @ x) - yt
        value = -0.5 * float(resid @ resid) - float(delta @ np.abs(x))
        grad = -np.asarray(at.T @ resid) - delta * np.sign(x)
        return value, grad

    return TargetDensity(
        dim=model.d,
        log_density=lambda x: value_and_grad(x)[0],
        grad_log_density=lambda x: value_and_grad(x)[1],
        value_and_grad=value_and_grad,
    )


def _execute(config, model, prior, data):
    """Run the configured pipeline; returns (role -> ChainSet, extras dict)."""
    extras = {"r": None, "eps_r": None, "hellinger_estimate": None, "w_map_l0": None}
    roles = {}
    timings = {}
    tic = time.perf_counter()

    if config.method == "reference":
        chains = mala_sample(
            _reference_target(model, prior), _mala_config(config, "reference-mala")
        )
        roles["x"] = chains
        extras["monitored"] = np.arange(model.d)
        extras["acceptance"] = chains.acceptance

    elif config.method == "ccs-w":
        ev = WSpaceEvaluator(model, prior.mixing_rates())
        gen = rngmod.stream(config.seed, "diagnostic-w")
        if config.diagnostic_source == "map":
            w_approx = map_w_approx(ev)
            diag_samples = map_w_sampler(w_approx, config.n_diagnostic, gen)
            source = "map-approx"
        else:
            mix = ExponentialMixing(prior.mixing_rates())
            diag_samples = mix.sample(config.n_diagnostic, gen)
            source = "prior"
        diagnostic = estimate_diagnostic_w(ev, diag_samples, source=source)
        split, curve = _select_split(config, diagnostic)
        extras["r"] = int(split.r)
        extras["eps_r"] = float(curve[split.r - 1])
        red = ReducedVEvaluator(ev, split)
        w_chains = ccs_w_sampler(ev, split, _mala_config(config, "ccs-w-mala"), reduced=red)
        timings["mixing_sampling"] = time.perf_counter() - tic
        tic = time.perf_counter()
        x_chains = _component_draws(model, w_chains, config, "ccs-w-rto")
        timings["component_sampling"] = time.perf_counter() - tic
        pooled = w_chains.pooled()
        subset = pooled[: min(_HELLINGER_CAP, pooled.shape[0])]
        extras["hellinger_estimate"] = hellinger_bound_estimate(
            ev.log_density_w, _ccs_w_approx_logpdf(red, split), subset
        )
        roles["w"] = w_chains
        roles["x"] = x_chains
        extras["monitored"] = split.selected
        extras["acceptance"] = w_chains.acceptance
        extras["eps_curve"] = curve

    elif config.method == "ccs-x":
        gen = rngmod.stream(config.seed, "diagnostic-x")
        if config.diagnostic_source == "map":
            x_approx = map_x_approx(model, prior)
            diag_samples = map_x_sampler(model, x_approx, config.n_diagnostic, gen)
            source = "map-approx"
        else:
            diag_samples = prior.sample(config.n_diagnostic, gen)
            source = "prior"
        diagnostic = estimate_diagnostic_x(model, prior, diag_samples, source=source)
        split, curve = _select_split(config, diagnostic)
        extras["r"] = int(split.r)
        extras["eps_r"] = float(curve[split.r - 1])
        chains = ccs_x_sampler(model, prior, split, _mala_config(config, "ccs-x-mala"))
        roles["x"] = chains
        extras["monitored"] = split.selected
        extras["acceptance"] = chains.acceptance
        extras["eps_curve"] = curve

    elif config.method == "map-w":
        ev = WSpaceEvaluator(model, prior.mixing_rates())
        approx = map_w_approx(ev)
        timings["map_optimization"] = time.perf_counter() - tic
        tic = time.perf_counter()
        extras["w_map_l0"] = int(approx.support_size)
        extras["r"] = int(approx.support_size)
        stacks = []
        for c in range(config.n_chains):
            gen = rngmod.stream(config.seed, "map-w-sampler", c)
            stacks.append(map_w_sampler(approx, config.n_samples, gen))
        w_chains = ChainSet(np.stack(stacks), seeds=list(range(config.n_chains)))
        timings["mixing_sampling"] = time.perf_counter() - tic
        tic = time.perf_counter()
        x_chains = _component_draws(model, w_chains, config, "map-w-rto")
        timings["component_sampling"] = time.perf_counter() - tic
        roles["w"] = w_chains
        roles["x"] = x_chains
        extras["monitored"] = approx.split.selected
        extras["acceptance"] = [1.0] * config.n_chains  # independent draws

    else:  # map-x
        approx = map_x_approx(model, prior)
        timings["map_optimization"] = time.perf_counter() - tic
        tic = time.perf_counter()
        stacks = []
        for c in range(config.n_chains):
            gen = rngmod.stream(config.seed, "map-x-rto", c)
            stacks.append(map_x_sampler(model, approx, config.n_samples, gen))
        chains = ChainSet(np.stack(stacks), seeds=list(range(config.n_chains)))
        roles["x"] = chains
        extras["monitored"] = np.arange(model.d)
        extras["acceptance"] = [1.0] * config.n_chains
        timings["component_sampling"] = time.perf_counter() - tic

    extras["timings"] = timings
    return roles, extras


def _assemble_report(config, roles, extras):
    x_chains = roles["x"]
    pooled = x_chains.pooled()
    mean = pooled.mean(axis=0)
    ci = {level: credible_interval(pooled, level) for level in CI_LEVELS}
    monitored = np.asarray(extras["monitored"], dtype=int)
    if monitored.size:
        epsr_vals = epsr(x_chains.samples[:, :, monitored])
    else:
        epsr_vals = np.empty(0)

    ness = {}
    if monitored.size:
        ness["x_I"] = float(np.mean(ness_per_coordinate(x_chains.samples[:, :, monitored])))
    ness["x"] = float(np.mean(ness_per_coordinate(x_chains.samples)))
    if "w" in roles and monitored.size:
        ness["w_I"] = float(
            np.mean(ness_per_coordinate(roles["w"].samples[:, :, monitored]))
        )

    return RunReport(
        experiment=config.experiment,
        method=config.method,
        seed=config.seed,
        n_chains=config.n_chains,
        n_samples=config.n_samples,
        mean=mean,
        ci=ci,
        epsr=epsr_vals,
        monitored=monitored,
        ness=ness,
        acceptance=list(extras.get("acceptance", [])),
        eps_r=extras.get("eps_r"),
        hellinger_estimate=extras.get("hellinger_estimate"),
        w_map_l0=extras.get("w_map_l0"),
        r=extras.get("r"),
        timings=extras.get("timings", {}),
    )


def _persist(config, roles, extras, report, outdir):
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "run_config.json").write_text(config.to_json() + "\n")
    for role, chains in sorted(roles.items()):
        for c in range(chains.n_chains):
            write_array(
                outdir / f"chain{c:02d}_{role}.bin",
                chains.samples[c],
                role=role,
                seed=config.seed,
                extra={"chain": c},
            )
    persisted_extras = {
        "acceptance": [float(a) for a in extras.get("acceptance", [])],
        "monitored": [int(i) for i in np.asarray(extras["monitored"]).tolist()],
        "r": extras.get("r"),
        "eps_r": extras.get("eps_r"),
        "hellinger_estimate": extras.get("hellinger_estimate"),
        "w_map_l0": extras.get("w_map_l0"),
    }
    (outdir / "extras.json").write_text(
        json.dumps(persisted_extras, sort_keys=True, separators=(",", ":")) + "\n"
    )
    if extras.get("eps_curve") is not None:
        curve = extras["eps_curve"]
        lines = ["r,eps"] + [f"{i + 1},{_fmt(float(v))}" for i, v in enumerate(curve)]
        (outdir / "eps_curve.csv").write_text("\n".join(lines) + "\n")
    (outdir / "report.csv").write_text(report.to_csv())


def run(config, output_dir=None):
    """Execute the configured pipeline; persists artifacts when a directory is set."""
    config.validate()
    model, prior, data = build_problem(config)
    roles, extras = _execute(config, model, prior, data)
    report = _assemble_report(config, roles, extras)
    outdir = output_dir or config.output_dir
    if outdir is not None:
        _persist(config, roles, extras, report, outdir)
    return report


def _load_roles(outdir):
    outdir = Path(outdir)
    files = sorted(outdir.glob("chain*_*.bin"))
    if not files:
        raise FormatError(f"no chain files under {outdir}")
    grouped = {}
    for path in files:
        arr, header = read_array(path)
        grouped.setdefault(header["role"], []).append((header.get("chain", 0), arr))
    roles = {}
    for role, entries in grouped.items():
        entries.sort(key=lambda pair: pair[0])
        roles[role] = ChainSet(
            np.stack([arr for _, arr in entries]),
            seeds=[int(chain) for chain, _ in entries],
        )
    return roles


def summarize(chains_dir):
    """Recompute the report from persisted chains and run extras."""
    outdir = Path(chains_dir)
    config_path = outdir / "run_config.json"
    extras_path = outdir / "extras.json"
    if not config_path.exists():
        raise FormatError(f"missing run_config.json under {outdir}")
    config = RunConfig.from_json(config_path.read_text())
    roles = _load_roles(outdir)
    extras = {"monitored": np.arange(roles["x"].dim)}
    if extras_path.exists():
        loaded = json.loads(extras_path.read_text())
        extras.update(loaded)
        extras["monitored"] = np.asarray(loaded.get("monitored", []), dtype=int)
    return _assemble_report(config, roles, extras)


def compare(report_a, report_b):
    """CSV comparison: nESS/summary rows, then per-coordinate mean and CI curves."""
    buf = io.StringIO()
    buf.write("# gmixpost comparison\n")
    buf.write("quantity,a,b,delta\n")
    keys = ["experiment", "method", "seed"]
    for key in keys:
        va, vb = getattr(report_a, key), getattr(report_b, key)
        buf.write(f"{key},{va},{vb},-\n")
    scalar_pairs = []
    for role in sorted(set(report_a.ness) | set(report_b.ness)):
        scalar_pairs.append(
            (f"ness_{role}", report_a.ness.get(role), report_b.ness.get(role))
        )
    scalar_pairs += [
        ("epsr_max", _max_or_none(report_a.epsr), _max_or_none(report_b.epsr)),
        ("eps_r", report_a.eps_r, report_b.eps_r),
        ("hellinger_estimate", report_a.hellinger_estimate, report_b.hellinger_estimate),
        ("w_map_l0", report_a.w_map_l0, report_b.w_map_l0),
    ]
    for name, va, vb in scalar_pairs:
        delta = (
            _fmt(float(va) - float(vb))
            if va is not None and vb is not None
            else "-"
        )
        buf.write(f"{name},{_fmt(va)},{_fmt(vb)},{delta}\n")
    buf.write("index,mean_a,mean_b,dmean,ci90_lo_a,ci90_hi_a,ci90_lo_b,ci90_hi_b\n")
    n = min(report_a.mean.size, report_b.mean.size)
    lo_a, hi_a = report_a.ci[0.90]
    lo_b, hi_b = report_b.ci[0.90]
    for i in range(n):
        buf.write(
            ",".join(
                [
                    str(i),
                    _fmt(report_a.mean[i]),
                    _fmt(report_b.mean[i]),
                    _fmt(report_a.mean[i] - report_b.mean[i]),
                    _fmt(lo_a[i]),
                    _fmt(hi_a[i]),
                    _fmt(lo_b[i]),
                    _fmt(hi_b[i]),
                ]
            )
            + "\n"
        )
    return buf.getvalue()


def _max_or_none(arr):
    arr = np.asarray(arr)
    return float(np.max(arr)) if arr.size else None


def diagnose_curve(config):
    """Estimate the coordinate-selection diagnostic and its bound curve."""
    config.validate()
    model, prior, data = build_problem(config)
    if config.method == "ccs-x":
        gen = rngmod.stream(config.seed, "diagnostic-x")
        if config.diagnostic_source == "map":
            approx = map_x_approx(model, prior)
            samples = map_x_sampler(model, approx, config.n_diagnostic, gen)
        else:
            samples = prior.sample(config.n_diagnostic, gen)
        diagnostic = estimate_diagnostic_x(model, prior, samples)
    else:
        ev = WSpaceEvaluator(model, prior.mixing_rates())
        gen = rngmod.stream(config.seed, "diagnostic-w")
        if config.diagnostic_source == "map":
            approx = map_w_approx(ev)
            samples = map_w_sampler(approx, config.n_diagnostic, gen)
        else:
            mix = ExponentialMixing(prior.mixing_rates())
            samples = mix.sample(config.n_diagnostic, gen)
        diagnostic = estimate_diagnostic_w(ev, samples)
    curve = _epsilon_curve(diagnostic.h)
    return diagnostic, curve
