"""End-to-end orchestration: prepare a state, sample fit/holdout datasets,
fit entanglement Hamiltonians per geometry, verify against the holdout, and
export analysis tables.  Every artifact is a deterministic function of the
configuration, and the manifest records seeds and content hashes so reruns
are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    entropy_from_eh,
    entropy_scaling,
    lattice_parabola,
    mutual_information,
    vn_entropy,
    windowed_fidelity,
)
from .eht import EHAnsatz, FitResult, build_eh, fit_eh, gibbs_state
from .errors import ValidationError
from .measurement import (
    MeasurementDataset,
    load_dataset,
    sample_dataset,
    save_dataset,
    window_settings,
)
from .noise import NoiseParams, calibrate_noise
from .spinmodel import CouplingMatrix, SpinModel, build_xxz, power_law_couplings
from .statekit import (
    CircuitParams,
    PureState,
    excited_states,
    ground_state,
    load_state,
    magnetization_sector_norms,
    neel_state,
    partial_trace_dm,
    reduced_density_matrix,
    run_circuit,
    save_state,
    vqe_optimize,
)

STATE_KINDS = ("ground", "excited", "vqe", "heated")


@dataclass
class ExperimentConfig:
    """Single-run description: model, couplings, state recipe, measurement
    plan, noise handling, and fit plan."""

    n: int
    j: float = 1.0
    delta: float = 1.0
    couplings: dict = field(default_factory=lambda: {"type": "power-law", "j0": 1.0, "alpha": 0.82})
    state: dict = field(default_factory=lambda: {"kind": "ground"})
    measurement: dict = field(default_factory=lambda: {"window": 5, "shots": 200, "seed": 0})
    noise: dict | None = None
    fit: dict = field(default_factory=dict)
    out_dir: str | None = None

    def validate(self) -> None:
        if self.n < 2:
            raise ValidationError("config needs n >= 2")
        kind = self.state.get("kind")
        if kind not in STATE_KINDS:
            raise ValidationError(f"state recipe must be one of {STATE_KINDS}, got {kind!r}")
        if self.couplings.get("type") not in ("power-law",):
            raise ValidationError("couplings.type must be 'power-law' (trap parameters are "
                                  "supplied programmatically via mode_sum_couplings)")
        shots = int(self.measurement.get("shots", 0))
        if shots < 1:
            raise ValidationError("measurement.shots must be >= 1")
        if self.measurement.get("seed") is None:
            raise ValidationError("measurement.seed is mandatory for sampled runs")
        window = int(self.measurement.get("window", 5))
        if not 1 <= window <= self.n:
            raise ValidationError("measurement.window out of range")
        for geometry in self.geometries():
            if any(s < 1 or s > self.n for s in geometry):
                raise ValidationError(f"geometry {geometry} does not fit in n={self.n}")
        if self.noise is not None:
            p1, p2 = float(self.noise.get("p1", 0.0)), float(self.noise.get("p2", 0.0))
            NoiseParams(p1, p2)

    def geometries(self) -> list[tuple[int, ...]]:
        geoms = self.fit.get("geometries")
        if geoms is None:
            length = min(4, self.n - 1)
            start = (self.n - length) // 2 + 1
            geoms = [list(range(start, start + length))]
        return [tuple(int(s) for s in g) for g in geoms]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "j": self.j,
            "delta": self.delta,
            "couplings": self.couplings,
            "state": self.state,
            "measurement": self.measurement,
            "noise": self.noise,
            "fit": self.fit,
            "out_dir": self.out_dir,
        }

    @staticmethod
    def from_dict(d: dict) -> "ExperimentConfig":
        return ExperimentConfig(
            n=int(d["n"]),
            j=float(d.get("j", 1.0)),
            delta=float(d.get("delta", 1.0)),
            couplings=dict(d.get("couplings", {"type": "power-law", "j0": 1.0, "alpha": 0.82})),
            state=dict(d.get("state", {"kind": "ground"})),
            measurement=dict(d.get("measurement", {"window": 5, "shots": 200, "seed": 0})),
            noise=dict(d["noise"]) if d.get("noise") else None,
            fit=dict(d.get("fit", {})),
            out_dir=d.get("out_dir"),
        )

    @staticmethod
    def from_json_file(path) -> "ExperimentConfig":
        with open(path) as fh:
            return ExperimentConfig.from_dict(json.load(fh))


def preset_config(name: str, seed: int = 2024) -> ExperimentConfig:
    """Named desk-scale reproduction configs."""
    if name == "minimal":
        return ExperimentConfig(
            n=6,
            state={"kind": "ground", "sector": 0},
            measurement={"window": 5, "shots": 200, "seed": seed},
            fit={"variant": "local-links", "geometries": [[3, 4], [2, 3, 4]]},
        )
    if name == "figure1c-desk-ground":
        return ExperimentConfig(
            n=12,
            state={"kind": "ground", "sector": 0},
            measurement={"window": 5, "shots": 800, "seed": seed},
            fit={
                "variant": "local-links",
                "geometries": [list(range((12 - L) // 2 + 1, (12 - L) // 2 + 1 + L)) for L in range(2, 7)],
            },
        )
    if name == "figure1c-desk-heated":
        return ExperimentConfig(
            n=12,
            state={
                "kind": "heated",
                "layers": 2,
                "theta_q": 2.0,
                "iterations": 30,
                "shots_per_basis": None,
            },
            measurement={"window": 5, "shots": 800, "seed": seed},
            fit={
                "variant": "local-links",
                "geometries": [list(range((12 - L) // 2 + 1, (12 - L) // 2 + 1 + L)) for L in range(2, 7)],
            },
        )
    if name == "figure3-desk":
        return ExperimentConfig(
            n=12,
            state={"kind": "ground", "sector": 0},
            measurement={"window": 5, "shots": 800, "seed": seed},
            fit={
                "variant": "bilocal-pairs",
                "geometries": [[3, 4, 5 + d, 6 + d] for d in range(1, 7)],
            },
        )
    raise ValidationError(f"unknown preset {name!r}")


PRESETS = ("minimal", "figure1c-desk-ground", "figure1c-desk-heated", "figure3-desk")


def derived_seeds(master: int) -> dict[str, int]:
    """Disjoint per-purpose RNG stream seeds."""
    return {
        "master": master,
        "fit": 2 * master + 1,
        "holdout": 2 * master + 2,
        "calibration": 2 * master + 3,
        "split": 2 * master + 4,
    }


def _write_text(path: Path, text: str) -> None:
    path.write_text(text)


def _float(x) -> str:
    return repr(float(x))


class PipelineRun:
    """Stage executor over one output directory."""

    def __init__(self, config: ExperimentConfig, out_dir):
        config.validate()
        self.config = config
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.seeds = derived_seeds(int(config.measurement["seed"]))
        self.stages: list[dict] = []

    # -- stage: model ------------------------------------------------------

    def build_model(self) -> tuple[SpinModel, CouplingMatrix]:
        cfg = self.config
        model = build_xxz(cfg.n, cfg.j, cfg.delta)
        cp = cfg.couplings
        couplings = power_law_couplings(cfg.n, float(cp.get("j0", 1.0)), float(cp.get("alpha", 0.82)))
        return model, couplings

    def stage_model(self) -> None:
        model, couplings = self.build_model()
        _write_text(self.out / "model.json", model.to_json())
        _write_text(self.out / "couplings.json", couplings.to_json())

    # -- stage: prepare ----------------------------------------------------

    def _prepare_state(self, model: SpinModel, couplings: CouplingMatrix) -> PureState:
        recipe = self.config.state
        kind = recipe["kind"]
        if kind == "ground":
            sector = recipe.get("sector")
            _, state = ground_state(model, sector=sector if sector is None else int(sector))
            return state
        if kind == "excited":
            k = int(recipe.get("k", 1))
            return excited_states(model, count=k)[-1][1]
        layers = int(recipe.get("layers", 2))
        params, trace = vqe_optimize(
            model,
            couplings,
            layers=layers,
            shots_per_basis=recipe.get("shots_per_basis"),
            seed=self.seeds["master"],
            iterations=int(recipe.get("iterations", 80)),
        )
        _write_text(
            self.out / "vqe.json",
            json.dumps(
                {"thetas": list(params.thetas), "trace": [float(t) for t in trace]},
                sort_keys=True,
            ),
        )
        if kind == "heated":
            params = CircuitParams(params.thetas, heating_theta=float(recipe["theta_q"]))
        return run_circuit(neel_state(model.n_sites), params, couplings)

    def stage_prepare(self) -> PureState:
        model, couplings = self.build_model()
        state = self._prepare_state(model, couplings)
        save_state(state, self.out / "state.bin")
        return state

    # -- stage: sample -----------------------------------------------------

    def _generation_noise(self) -> NoiseParams | None:
        noise_cfg = self.config.noise
        if noise_cfg is None:
            return None
        params = NoiseParams(float(noise_cfg.get("p1", 0.0)), float(noise_cfg.get("p2", 0.0)))
        return None if params.is_trivial else params

    def stage_sample(self) -> tuple[MeasurementDataset, MeasurementDataset]:
        cfg = self.config
        state = load_state(self.out / "state.bin")
        settings = window_settings(cfg.n, int(cfg.measurement.get("window", 5)))
        shots = int(cfg.measurement["shots"])
        noise = self._generation_noise()
        assert self.seeds["fit"] != self.seeds["holdout"]
        fit_data = sample_dataset(
            state, settings, shots, noise=noise, seed=self.seeds["fit"], source_label="fit"
        )
        holdout = sample_dataset(
            state, settings, shots, noise=noise, seed=self.seeds["holdout"], source_label="holdout"
        )
        save_dataset(fit_data, self.out / "dataset_fit.jsonl")
        save_dataset(holdout, self.out / "dataset_holdout.jsonl")

        fit_noise = NoiseParams(0.0, 0.0)
        noise_cfg = cfg.noise
        if noise_cfg is not None:
            if noise_cfg.get("calibrate"):
                cal_shots = int(noise_cfg.get("calibration_shots", 50000))
                cal = sample_dataset(
                    state,
                    ["Z" * cfg.n],
                    cal_shots,
                    noise=noise,
                    seed=self.seeds["calibration"],
                    source_label="calibration",
                )
                save_dataset(cal, self.out / "dataset_calibration.jsonl")
                sector_weights = magnetization_sector_norms(state)
                sector, weight = max(sector_weights.items(), key=lambda kv: kv[1])
                if weight < 1.0 - 1e-9:
                    raise ValidationError(
                        "calibration needs a fixed-magnetization state "
                        f"(largest sector weight {weight})"
                    )
                fit_noise = calibrate_noise(cal, sector)
            else:
                fit_noise = NoiseParams(
                    float(noise_cfg.get("p1", 0.0)), float(noise_cfg.get("p2", 0.0))
                )
        _write_text(self.out / "noise.json", fit_noise.to_json())
        return fit_data, holdout

    # -- stage: fit ----------------------------------------------------------

    def _geometry_label(self, geometry: tuple[int, ...]) -> str:
        return "-".join(str(s) for s in geometry)

    def _ansatz_for(self, geometry: tuple[int, ...]) -> EHAnsatz:
        cfg = self.config.fit
        return EHAnsatz(
            variant=cfg.get("variant", "local-links"),
            sites=geometry,
            anisotropy_delta=self.config.delta,
            include_cross_links=bool(cfg.get("cross_links", True)),
        )

    def stage_fit(self) -> dict[tuple[int, ...], FitResult]:
        fit_data = load_dataset(self.out / "dataset_fit.jsonl")
        noise = NoiseParams.from_json((self.out / "noise.json").read_text())
        init_cfg = self.config.fit.get("init")
        results = {}
        for geometry in self.config.geometries():
            ansatz = self._ansatz_for(geometry)
            init = np.asarray(init_cfg, dtype=float) if init_cfg else None
            res = fit_eh(fit_data, ansatz, noise=noise, init=init, seed=self.seeds["master"])
            results[geometry] = res
            _write_text(self.out / f"fit_{self._geometry_label(geometry)}.json", res.to_json())
        return results

    def _load_fits(self) -> dict[tuple[int, ...], FitResult]:
        """Rebuild fit results from their JSON artifacts."""
        fit_data_tag = None
        fit_path = self.out / "dataset_fit.jsonl"
        if fit_path.exists():
            fit_data_tag = load_dataset(fit_path).tag
        results = {}
        for geometry in self.config.geometries():
            path = self.out / f"fit_{self._geometry_label(geometry)}.json"
            if not path.exists():
                raise ValidationError(f"missing fit artifact {path.name}; run the fit stage first")
            d = json.loads(path.read_text())
            ansatz = self._ansatz_for(geometry)
            beta = np.array(d["beta"], dtype=float)
            gibbs = gibbs_state(build_eh(ansatz, beta), sites=ansatz.sites, data_tag=fit_data_tag)
            results[geometry] = FitResult(
                beta=beta,
                chi2=float(d["chi2"]),
                iterations=int(d["iterations"]),
                gradient_norm=float(d["gradient_norm"]),
                noise=NoiseParams(float(d["noise"]["p1"]), float(d["noise"]["p2"])),
                entanglement_spectrum=np.array(d["xi"], dtype=float),
                converged=bool(d["converged"]),
                ansatz=ansatz,
                gibbs=gibbs,
            )
        return results

    # -- stage: analyze ------------------------------------------------------

    def stage_analyze(self) -> None:
        fits = self._load_fits()
        state = load_state(self.out / "state.bin")

        contiguous = {
            len(g): res for g, res in fits.items() if len(res.ansatz.intervals()) == 1
        }
        if len(contiguous) >= 3:
            scaling = entropy_scaling(
                {length: res.gibbs for length, res in contiguous.items()}
            )
            lines = ["L_A,S,slope"]
            for size, ent in zip(scaling.sizes, scaling.entropies):
                lines.append(f"{int(size)},{_float(ent)},{_float(scaling.slope)}")
            lines.append(f"# classification,{scaling.classification},")
            _write_text(self.out / "scaling.csv", "\n".join(lines) + "\n")

        for geometry, res in fits.items():
            if len(res.ansatz.intervals()) != 1:
                continue
            betas = res.ansatz.link_coefficients(res.beta)
            ref = lattice_parabola(len(betas))
            scale = float(ref @ betas) / float(ref @ ref) if len(betas) else 1.0
            lines = ["site,beta,beta_ref"]
            for (i, _), b, r in zip(res.ansatz.term_pairs(), betas, ref * scale):
                lines.append(f"{i},{_float(b)},{_float(r)}")
            _write_text(
                self.out / f"profile_{self._geometry_label(geometry)}.csv",
                "\n".join(lines) + "\n",
            )

        disjoint = {g: res for g, res in fits.items() if len(res.ansatz.intervals()) == 2}
        if disjoint:
            lines = ["d12,mi_exact,mi_fit"]
            for geometry, res in sorted(disjoint.items(), key=lambda kv: kv[0]):
                a, b = res.ansatz.intervals()
                d12 = b[0] - a[-1] - 1
                rho_ab = reduced_density_matrix(state, geometry)
                rho_a = reduced_density_matrix(state, a)
                rho_b = reduced_density_matrix(state, b)
                mi_exact = mutual_information(rho_ab, rho_a, rho_b)
                pos = {s: k for k, s in enumerate(res.ansatz.sites)}
                fit_ab = res.gibbs.rho
                fit_a = partial_trace_dm(fit_ab, [pos[s] for s in a])
                fit_b = partial_trace_dm(fit_ab, [pos[s] for s in b])
                mi_fit = mutual_information(fit_ab, fit_a, fit_b)
                lines.append(f"{d12},{_float(mi_exact)},{_float(mi_fit)}")
            _write_text(self.out / "mutual_information.csv", "\n".join(lines) + "\n")

    # -- stage: verify -------------------------------------------------------

    def stage_verify(self) -> None:
        fits = self._load_fits()
        holdout = load_dataset(self.out / "dataset_holdout.jsonl")
        window = int(self.config.measurement.get("window", 5))
        for geometry, res in fits.items():
            f_max, f_mean, per_window = windowed_fidelity(
                res.gibbs, holdout, window=window, split_seed=self.seeds["split"]
            )
            lines = ["window_start,f_max,f_mean,err"]
            for rec in per_window:
                lines.append(
                    f"{rec.sites[0]},{_float(rec.f_max)},{_float(rec.f_mean)},{_float(rec.err_mean)}"
                )
            lines.append(f"# mean,{_float(f_max)},{_float(f_mean)},")
            _write_text(
                self.out / f"verification_{self._geometry_label(geometry)}.csv",
                "\n".join(lines) + "\n",
            )

    # -- manifest ------------------------------------------------------------

    def write_manifest(self) -> Path:
        artifacts = {}
        for path in sorted(self.out.iterdir()):
            if path.name == "manifest.json" or not path.is_file():
                continue
            artifacts[path.name] = hashlib.sha256(path.read_bytes()).hexdigest()
        manifest = {
            "version": __version__,
            "config": self.config.to_dict(),
            "seeds": self.seeds,
            "stages": self.stages,
            "artifacts": artifacts,
        }
        path = self.out / "manifest.json"
        _write_text(path, json.dumps(manifest, sort_keys=True, indent=2) + "\n")
        return path


STAGE_ORDER = ("model", "prepare", "sample", "fit", "analyze", "verify")


def run_stage(run: PipelineRun, name: str) -> None:
    getattr(run, f"stage_{name}")()


def run_pipeline(config: ExperimentConfig, out_dir) -> Path:
    """Execute all stages and write the manifest.  On a stage failure the
    manifest records the stage and error; artifacts already written stay."""
    run = PipelineRun(config, out_dir)
    try:
        for name in STAGE_ORDER:
            try:
                run_stage(run, name)
            except Exception as exc:
                run.stages.append({"name": name, "status": "failed", "error": str(exc)})
                raise
            run.stages.append({"name": name, "status": "ok"})
    finally:
        manifest_path = run.write_manifest()
    return manifest_path
