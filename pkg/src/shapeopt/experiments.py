"""Experiment recipes: launch-power sweeps, size studies, PMF reports.

Five shaping strategies are compared on the same link: uniform input, an
exponential-family PMF matched to the effective SNR of uniform input, a
brute-force signed-lambda search of the same family, a low-energy-ball
pruning of a dense lattice, and the greedy per-amplitude optimizer.  Each
(strategy, power) cell optimizes on its own seed and reports validation
MI on a disjoint seed.  Results go to CSV with an exact-round-trip float
encoding plus per-cell fingerprints so interrupted sweeps resume without
recomputing finished cells.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .air import AirReport, fit_gaussian_auxiliary, mutual_information
from .channel import LinkConfig, effective_snr, sample_symbols, simulate_awgn, simulate_wdm
from .constellation import (
    Constellation4D,
    amplitude_classes,
    build_product_pam16_4d,
    build_product_qam,
    mb_for_awgn_snr,
    mb_pmf,
    md_ball,
)
from .errors import ConfigError
from .exchange import read_constellation, write_constellation
from .optimizer import OptimizerConfig, optimize

STRATEGIES = ("uniform", "mb-snr-matched", "mb-bruteforce", "md-ball", "proposed")
BASES = {
    "qam16sq": lambda: build_product_qam(16),
    "qam64sq": lambda: build_product_qam(64),
    "pam16-4d": build_product_pam16_4d,
}

# brute-force lambda search: signed grid in units of 1/mean-energy,
# refined once around the best coarse point
MB_LAMBDA_GRID = tuple(np.arange(-3.0, 5.0 + 1e-9, 0.25).tolist())
MB_LAMBDA_REFINE_STEP = 0.0625

RESULT_COLUMNS = (
    "strategy", "base", "launch_power_dbm", "mi_bits_per_4d", "mi_se",
    "snr_eff_db", "papr", "entropy_bits", "nonzero_points",
    "nonzero_amplitudes", "lambda", "wall_time_s",
)
EXTRA_COLUMNS = ("status", "cell_fingerprint")
SIZE_COLUMNS = RESULT_COLUMNS + ("n_ball", "gain_bits_per_4d")


def desk_link(seed: int = 0) -> LinkConfig:
    """Small link for CI-scale runs: 3 x 8 GBaud, 1 km steps."""
    return LinkConfig(
        n_channels=3, symbol_rate=8e9, channel_spacing=15e9,
        samples_per_symbol=8, ssfm_step=1.0, n_symbols=10_000, seed=seed,
    )


def paper_link(seed: int = 0) -> LinkConfig:
    """Full-scale link: 5 x 30 GBaud, 50 GHz grid, 0.1 km steps."""
    return LinkConfig(
        n_channels=5, symbol_rate=30e9, channel_spacing=50e9,
        samples_per_symbol=16, ssfm_step=0.1, n_symbols=65536, seed=seed,
    )


PRESETS = {"desk": desk_link, "paper": paper_link}
PRESET_EVAL_SYMBOLS = {"desk": 4096, "paper": 16384}


@dataclass
class ExperimentSpec:
    strategy: str
    base: str = "qam64sq"
    power_sweep: list = field(default_factory=lambda: [0.0])
    link: LinkConfig = field(default_factory=LinkConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    n_ball: int | None = None
    aux_mode: str = "scaled-identity"
    output_dir: str = "out"

    def validate(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown strategy {self.strategy!r}")
        if self.base not in BASES:
            raise ConfigError(f"unknown base {self.base!r}")
        if not self.power_sweep:
            raise ConfigError("power_sweep must be nonempty")
        if any(b >= a for a, b in zip(self.power_sweep[1:], self.power_sweep)):
            raise ConfigError("power_sweep must be strictly increasing")
        if (self.n_ball is None) == (self.strategy == "md-ball"):
            raise ConfigError("n_ball is required exactly when strategy is md-ball")
        self.link.validate()
        self.optimizer.validate()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["optimizer"]["prob_grid"] = list(self.optimizer.prob_grid)
        d["optimizer"]["scale_grid"] = list(self.optimizer.scale_grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        link = d.pop("link", {})
        opt = d.pop("optimizer", {})
        try:
            spec = cls(
                link=LinkConfig(**link),
                optimizer=OptimizerConfig(
                    **{
                        k: tuple(v) if k in ("prob_grid", "scale_grid") else v
                        for k, v in opt.items()
                    }
                ),
                **d,
            )
        except TypeError as e:
            raise ConfigError(f"bad experiment spec: {e}") from e
        return spec


@dataclass
class ResultRow:
    strategy: str
    base: str
    launch_power_dbm: float
    mi_bits_per_4d: float
    mi_se: float
    snr_eff_db: float
    papr: float
    entropy_bits: float
    nonzero_points: int
    nonzero_amplitudes: int
    lam: float | None  # emitted under the column name "lambda"
    wall_time_s: float
    status: str = "ok"
    cell_fingerprint: str = ""
    n_ball: int | None = None
    gain_bits_per_4d: float | None = None


def _row_to_csv(row: ResultRow, columns) -> list:
    vals = {
        "strategy": row.strategy, "base": row.base,
        "launch_power_dbm": repr(row.launch_power_dbm),
        "mi_bits_per_4d": repr(row.mi_bits_per_4d), "mi_se": repr(row.mi_se),
        "snr_eff_db": repr(row.snr_eff_db), "papr": repr(row.papr),
        "entropy_bits": repr(row.entropy_bits),
        "nonzero_points": str(row.nonzero_points),
        "nonzero_amplitudes": str(row.nonzero_amplitudes),
        "lambda": "" if row.lam is None else repr(row.lam),
        "wall_time_s": repr(row.wall_time_s),
        "status": row.status, "cell_fingerprint": row.cell_fingerprint,
        "n_ball": "" if row.n_ball is None else str(row.n_ball),
        "gain_bits_per_4d": "" if row.gain_bits_per_4d is None else repr(row.gain_bits_per_4d),
    }
    return [vals[c] for c in columns]


def _row_from_csv(rec: dict) -> ResultRow:
    return ResultRow(
        strategy=rec["strategy"],
        base=rec["base"],
        launch_power_dbm=float(rec["launch_power_dbm"]),
        mi_bits_per_4d=float(rec["mi_bits_per_4d"]),
        mi_se=float(rec["mi_se"]),
        snr_eff_db=float(rec["snr_eff_db"]),
        papr=float(rec["papr"]),
        entropy_bits=float(rec["entropy_bits"]),
        nonzero_points=int(rec["nonzero_points"]),
        nonzero_amplitudes=int(rec["nonzero_amplitudes"]),
        lam=float(rec["lambda"]) if rec.get("lambda") else None,
        wall_time_s=float(rec["wall_time_s"]),
        status=rec.get("status", "ok"),
        cell_fingerprint=rec.get("cell_fingerprint", ""),
        n_ball=int(rec["n_ball"]) if rec.get("n_ball") else None,
        gain_bits_per_4d=float(rec["gain_bits_per_4d"]) if rec.get("gain_bits_per_4d") else None,
    )


def write_results_csv(path, rows, columns=None):
    columns = tuple(columns or (RESULT_COLUMNS + EXTRA_COLUMNS))
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(columns)
        for row in rows:
            w.writerow(_row_to_csv(row, columns))


def read_results_csv(path) -> list:
    with open(path, newline="") as f:
        return [_row_from_csv(rec) for rec in csv.DictReader(f)]


class _NdjsonWriter:
    """Append-only line-delimited JSON log with per-record flush."""

    def __init__(self, path):
        self.path = Path(path)

    def __call__(self, record: dict):
        with open(self.path, "a") as f:
            f.write(json.dumps(record) + "\n")


def read_ndjson(path) -> list:
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


@dataclass
class FiberEvaluator:
    """AIR of a constellation on the WDM link at a fixed configuration."""

    link: LinkConfig
    n_symbols: int
    aux_mode: str = "scaled-identity"

    def __call__(self, c: Constellation4D, seed: int) -> AirReport:
        cfg = replace(self.link, seed=seed, n_symbols=self.n_symbols)
        batch = simulate_wdm(c, cfg)
        aux = fit_gaussian_auxiliary(batch, mode=self.aux_mode)
        return mutual_information(batch, c, aux)


@dataclass
class AwgnEvaluator:
    """AIR of a constellation on the additive-Gaussian test channel."""

    snr_db: float
    n_symbols: int
    aux_mode: str = "scaled-identity"

    def __call__(self, c: Constellation4D, seed: int) -> AirReport:
        idx = sample_symbols(c, self.n_symbols, seed)
        batch = simulate_awgn(c, idx, self.snr_db, seed)
        aux = fit_gaussian_auxiliary(batch, mode=self.aux_mode)
        return mutual_information(batch, c, aux)


def _derive_seed(base_seed: int, power_dbm: float, purpose: int) -> int:
    key = (int(base_seed), int(round(power_dbm * 1000)), purpose)
    return int(np.random.SeedSequence(key).generate_state(1)[0])


def cell_fingerprint(spec: ExperimentSpec, power_dbm: float, n_ball: int | None = None) -> str:
    d = spec.to_dict()
    d.pop("output_dir")
    d["link"]["total_launch_power"] = power_dbm
    d["cell_n_ball"] = n_ball if n_ball is not None else d.get("n_ball")
    return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def build_strategy_constellation(
    spec: ExperimentSpec, power_dbm: float, opt_seed: int,
    on_record=None, n_ball: int | None = None,
):
    """Construct (and, where the strategy requires it, optimize) the
    constellation for one sweep cell.  Returns (constellation, lambda)."""
    base = BASES[spec.base]()
    link = replace(spec.link, total_launch_power=power_dbm)
    if spec.strategy == "uniform":
        return base, None
    if spec.strategy == "md-ball":
        return md_ball(base, n_ball if n_ball is not None else spec.n_ball), None
    if spec.strategy == "mb-snr-matched":
        batch = simulate_wdm(base, replace(link, seed=opt_seed))
        snr = effective_snr(batch)
        c, lam = mb_for_awgn_snr(base, snr)
        return c, lam
    if spec.strategy == "mb-bruteforce":
        ev = FiberEvaluator(link, spec.optimizer.eval_symbols, spec.aux_mode)

        def run(lams, best):
            for lam in lams:
                rep = ev(mb_pmf(base, lam), opt_seed)
                if on_record is not None:
                    on_record({"kind": "mb-eval", "lambda": lam,
                               "mi": rep.mi_bits_per_4d, "se": rep.mi_se})
                if best is None or rep.mi_bits_per_4d > best[1]:
                    best = (lam, rep.mi_bits_per_4d)
            return best

        best = run(MB_LAMBDA_GRID, None)
        step = MB_LAMBDA_GRID[1] - MB_LAMBDA_GRID[0]
        fine = np.arange(best[0] - step, best[0] + step + 1e-9, MB_LAMBDA_REFINE_STEP)
        best = run([l for l in fine if l not in MB_LAMBDA_GRID], best)
        return mb_pmf(base, best[0]), best[0]
    if spec.strategy == "proposed":
        ev = FiberEvaluator(link, spec.optimizer.eval_symbols, spec.aux_mode)
        cfg = replace(spec.optimizer, seed=opt_seed)
        trace = optimize(base, ev, cfg, on_record=on_record)
        if trace.final_constellation is None:
            raise RuntimeError("optimizer aborted before producing a constellation")
        return trace.final_constellation, None
    raise ConfigError(f"unknown strategy {spec.strategy!r}")


def run_cell(
    spec: ExperimentSpec, power_dbm: float, on_record=None, n_ball: int | None = None,
) -> tuple[ResultRow, Constellation4D | None, AirReport | None]:
    """One (strategy, power) cell: build, validate on a fresh seed, report."""
    t0 = time.perf_counter()
    opt_seed = _derive_seed(spec.link.seed, power_dbm, 0)
    val_seed = _derive_seed(spec.link.seed, power_dbm, 1)
    fp = cell_fingerprint(spec, power_dbm, n_ball)
    link = replace(spec.link, total_launch_power=power_dbm)
    try:
        c, lam = build_strategy_constellation(spec, power_dbm, opt_seed, on_record, n_ball)
        report = FiberEvaluator(link, link.n_symbols, spec.aux_mode)(c, val_seed)
        if on_record is not None:
            on_record({"kind": "cell", "strategy": spec.strategy,
                       "power_dbm": power_dbm, "opt_seeds": [opt_seed],
                       "validation_seed": val_seed, "mi": report.mi_bits_per_4d,
                       "air": report.to_dict()})
        acs = amplitude_classes(c)
        row = ResultRow(
            strategy=spec.strategy, base=spec.base, launch_power_dbm=power_dbm,
            mi_bits_per_4d=report.mi_bits_per_4d, mi_se=report.mi_se,
            snr_eff_db=report.snr_eff_db, papr=report.papr,
            entropy_bits=report.entropy_bits,
            nonzero_points=int(np.count_nonzero(c.pmf)),
            nonzero_amplitudes=sum(1 for k in acs.classes if k.class_probability > 0),
            lam=lam, wall_time_s=time.perf_counter() - t0,
            cell_fingerprint=fp,
            n_ball=n_ball if n_ball is not None else
                   (spec.n_ball if spec.strategy == "md-ball" else None),
        )
        return row, c, report
    except Exception as exc:
        if on_record is not None:
            on_record({"kind": "cell-failed", "strategy": spec.strategy,
                       "power_dbm": power_dbm, "error": repr(exc)})
        row = ResultRow(
            strategy=spec.strategy, base=spec.base, launch_power_dbm=power_dbm,
            mi_bits_per_4d=float("nan"), mi_se=float("nan"),
            snr_eff_db=float("nan"), papr=float("nan"), entropy_bits=float("nan"),
            nonzero_points=0, nonzero_amplitudes=0, lam=None,
            wall_time_s=time.perf_counter() - t0, status="failed",
            cell_fingerprint=fp, n_ball=n_ball,
        )
        return row, None, None


def _run_cell_job(spec_dict: dict, power_dbm: float, trace_path: str | None):
    spec = ExperimentSpec.from_dict(spec_dict)
    on_record = _NdjsonWriter(trace_path) if trace_path else None
    row, c, _ = run_cell(spec, power_dbm, on_record)
    return row, c


def run_power_sweep(
    spec: ExperimentSpec, workers: int = 1, resume: bool = False,
) -> list:
    """One ResultRow per launch power; writes results.csv, trace.ndjson and
    the built constellations under spec.output_dir."""
    spec.validate()
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "results.csv"
    trace_path = out / "trace.ndjson"

    done = {}
    if resume and csv_path.exists():
        for row in read_results_csv(csv_path):
            if row.status == "ok":
                done[row.cell_fingerprint] = row

    rows = []
    pending = []
    for p in spec.power_sweep:
        fp = cell_fingerprint(spec, p)
        if fp in done:
            rows.append(done[fp])
        else:
            pending.append(p)

    def finish(row, c):
        rows.append(row)
        if c is not None:
            write_constellation(
                out / f"{spec.strategy}_{row.launch_power_dbm:+.2f}dBm.json", c,
                metadata={"base": spec.base, "lambda": row.lam, "n_ball": row.n_ball},
            )
        rows.sort(key=lambda r: r.launch_power_dbm)
        write_results_csv(csv_path, rows)

    if workers > 1 and len(pending) > 1:
        from concurrent.futures import ProcessPoolExecutor, as_completed

        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = {
                pool.submit(_run_cell_job, spec.to_dict(), p, str(trace_path)): p
                for p in pending
            }
            for fut in as_completed(futs):
                row, c = fut.result()
                finish(row, c)
    else:
        writer = _NdjsonWriter(trace_path)
        for p in pending:
            row, c, _ = run_cell(spec, p, writer)
            finish(row, c)
    return rows


def run_size_study(spec: ExperimentSpec, sizes) -> list:
    """Constellation-size study of the energy-ball strategy at one power.

    Emits a baseline row (uniform 64-QAM-squared at the same power, same
    validation seed) followed by one md-ball row per size with the gain
    column filled in relative to the baseline; writes sizes.csv.
    """
    spec.validate()
    if spec.strategy != "md-ball":
        raise ConfigError("run_size_study requires strategy 'md-ball'")
    if any(not 1 <= s <= 65536 for s in sizes):
        raise ConfigError("sizes must lie in [1, 65536]")
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    power = spec.power_sweep[0]
    writer = _NdjsonWriter(out / "trace.ndjson")

    base_spec = replace(spec, strategy="uniform", base="qam64sq", n_ball=None)
    base_row, _, _ = run_cell(base_spec, power, writer)
    rows = [base_row]
    for s in sizes:
        row, _, _ = run_cell(spec, power, writer, n_ball=int(s))
        if row.status == "ok":
            row.gain_bits_per_4d = row.mi_bits_per_4d - base_row.mi_bits_per_4d
        rows.append(row)
    write_results_csv(out / "sizes.csv", rows, SIZE_COLUMNS + EXTRA_COLUMNS)
    return rows


def report_amplitude_pmf(path) -> list:
    """Per-amplitude probability table of a constellation exchange file.

    Rows ascend in energy: (energy, class size, class probability, scale,
    pruned flag); a totals row closes the table.  The scale column comes
    from the file's metadata when the producer recorded per-class scales,
    else 1.0.
    """
    c, meta = read_constellation(path)
    acs = amplitude_classes(c)
    scales = meta.get("class_scales")
    rows = []
    for i, cl in enumerate(acs.classes):
        rows.append({
            "energy": cl.energy,
            "size": cl.size,
            "probability": cl.class_probability,
            "scale": float(scales[i]) if scales and i < len(scales) else 1.0,
            "pruned": cl.class_probability == 0.0,
        })
    rows.append({
        "energy": None, "size": c.n_points,
        "probability": sum(r["probability"] for r in rows),
        "scale": None, "pruned": None,
    })
    return rows
