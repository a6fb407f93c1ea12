"""Experiment orchestration: configs, seed derivation, replica execution,
sweeps and CSV/JSON outputs.

Every replica draws from its own generator seeded by
``derive_seed(master, [kind, n, replica])``, so results do not depend on
scheduling or worker count. Outputs contain no timestamps; the same config
always produces byte-identical files.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import sys
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from gffperc import __version__
from gffperc.exploration import (ExplorationParams, LazyGraphState, Verdict,
                                 explore_component)
from gffperc.gff import GaussianReservoir, field_max_abs, sample_exact_sparse
from gffperc.green import DENSE_LIMIT, GreenColumns, conditional_law, hitting_profile
from gffperc.levelset import (ball_census, components, core_of, diameter, kernel,
                              sample_typical_distances)
from gffperc.multigraph import (generate_configuration_model, induced_subgraph,
                                vertex_tree_radii)
from gffperc import tree_process as tp

KINDS = ("giant_fraction", "second_component", "core_kernel", "diameter", "typical_distance",
         "local_limit", "tree_estimates", "green_validation")

# fields that do not influence results and are left out of the config hash
_NON_SEMANTIC = ("out_dir", "threads")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "giant_fraction"
    d: int = 3
    h: float = 0.0
    n_grid: tuple[int, ...] = (2000,)
    replicas: int = 100
    seed: int = 0
    method: str = "exact"
    kappa: float = 0.0
    log_power: float = 1.5
    K: int = 60
    tree_replicas: int = 20_000
    ball_radius: int = 2
    pairs: int = 2000
    r_min: int = 6
    tol_factor: float = 10.0
    reference: bool = True
    out_dir: str | None = None
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)

    def __post_init__(self):
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        self.validate()

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}")
        if self.d < 3:
            raise ConfigError("d must be at least 3")
        if self.replicas < 1:
            raise ConfigError("replicas must be >= 1")
        if self.method not in ("exact", "exploration"):
            raise ConfigError(f"unknown method {self.method!r}")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.kind != "tree_estimates" and not self.n_grid:
            raise ConfigError("empty n grid")
        for n in self.n_grid:
            if n < 2:
                raise ConfigError(f"n={n} too small")
            if (n * self.d) % 2:
                raise ConfigError(f"n*d must be even (n={n}, d={self.d})")
        if self.kind == "green_validation" and max(self.n_grid) > DENSE_LIMIT:
            raise ConfigError(f"green_validation needs n <= {DENSE_LIMIT}")

    def as_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["n_grid"] = list(self.n_grid)
        return out

    def semantic_dict(self) -> dict:
        return {k: v for k, v in self.as_dict().items() if k not in _NON_SEMANTIC}

    def config_hash(self) -> str:
        blob = json.dumps(self.semantic_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def load_config(path: str | os.PathLike | None = None, **overrides) -> ExperimentConfig:
    """Config from an optional TOML file; non-None keyword overrides win."""
    data = {}
    if path is not None:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        data = data.get("experiment", data)
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return ExperimentConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def derive_seed(master: int, labels: Sequence[Any]) -> int:
    """64-bit seed from a hash of the master seed and an ordered label list."""
    blob = json.dumps([int(master), [str(x) for x in labels]]).encode()
    return int.from_bytes(hashlib.blake2b(blob, digest_size=8).digest(), "little")


def replica_rng(cfg: ExperimentConfig, n: int, i: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(cfg.seed, [cfg.kind, n, i]))


# -- tree-side reference values ----------------------------------------------------


def reference_values(cfg: ExperimentConfig) -> dict:
    """Tree-side quantities the finite-graph observables are compared with."""
    d, h, s = cfg.d, cfg.h, derive_seed(cfg.seed, ["reference"])
    s = s % 2**32
    ref: dict[str, Any] = {}
    if cfg.kind in ("giant_fraction", "core_kernel", "typical_distance"):
        eta = tp.estimate_eta(d, h, cfg.K, cfg.tree_replicas, seed=s)
        ref["eta"], ref["eta_se"] = eta.point_estimate, eta.std_error
    if cfg.kind == "core_kernel":
        ck = tp.estimate_core_kernel_probs(d, h, cfg.K, cfg.tree_replicas, seed=s)
        ref.update(k1=ck.k1, k1_se=ck.k1_se, k2=ck.k2, k2_se=ck.k2_se)
    if cfg.kind == "typical_distance" or (cfg.kind == "giant_fraction" and cfg.method == "exploration"):
        lam = tp.estimate_lambda(d, h, seed=s)
        ref["lambda"], ref["lambda_se"] = lam.estimate, lam.std_error
    if cfg.kind == "local_limit":
        bd = tp.conditioned_ball_distribution(d, h, cfg.ball_radius, cfg.K, cfg.tree_replicas, seed=s)
        ref["ball_distribution"] = dict(sorted(bd.probabilities.items()))
        ref["ball_surviving"] = bd.surviving
    return ref


# -- per-replica observables ---------------------------------------------------------


def _field_and_components(cfg, n, rng):
    g = generate_configuration_model(n, cfg.d, rng)
    psi = sample_exact_sparse(g, rng)
    comps = components(g, psi.level_set(cfg.h), cfg.h)
    return g, psi, comps


def _census_string(counts: Counter) -> str:
    return "|".join(f"{code}={c}" for code, c in sorted(counts.items()))


def parse_census(s: str) -> Counter:
    out = Counter()
    if s:
        for item in s.split("|"):
            code, c = item.rsplit("=", 1)
            out[code] = int(c)
    return out


def _green_pairs(cfg, n, rng) -> dict:
    """Check the one-step conditional law at tree-like (A, y) with A = {x}."""
    g = generate_configuration_model(n, cfg.d, rng)
    if not g.is_connected():
        return {"pairs": 0, "pairs_ok": 0, "max_mean_ratio": 0.0, "max_var_ratio": 0.0}
    radii = vertex_tree_radii(g, cfg.r_min + 4)
    xs = np.flatnonzero(radii >= cfg.r_min)
    d = cfg.d
    checked = ok = 0
    worst_m = worst_v = 0.0
    if xs.size:
        green = GreenColumns(g)
        psi = sample_exact_sparse(g, rng).values
        nb = g.neighbor_table()
        for x in xs.tolist():
            r = int(radii[x])
            tol = cfg.tol_factor * (d - 1) ** (-r)
            prof = hitting_profile(g, [x])
            for y in nb[x].tolist():
                mean, var = conditional_law(g, green, prof, [psi[x]], y)
                em = float(abs(mean - psi[x] / (d - 1)) / (tol * max(abs(psi[x]), 1e-300)))
                ev = float(abs(var - d / (d - 1)) / tol)
                checked += 1
                ok += int(em <= 1.0 and ev <= 1.0)
                worst_m, worst_v = max(worst_m, em), max(worst_v, ev)
    return {"pairs": checked, "pairs_ok": ok, "max_mean_ratio": worst_m, "max_var_ratio": worst_v}


def run_replica(cfg: ExperimentConfig, n: int, i: int, lambda_hat: float | None = None) -> dict:
    """Observables of one replica; pure function of (cfg, n, i)."""
    rng = replica_rng(cfg, n, i)
    row: dict[str, Any] = {"n": n, "replica": i}
    kind = cfg.kind
    if kind == "giant_fraction" and cfg.method == "exploration":
        params = ExplorationParams(cfg.kappa, cfg.log_power, lambda_hat)
        state = LazyGraphState(n, cfg.d, rng)
        res_seed = derive_seed(cfg.seed, [kind, n, i, "reservoir"])
        out = explore_component(state, int(rng.integers(n)), cfg.h, params, "upper",
                                GaussianReservoir(seed=res_seed))
        row.update(success=int(out.verdict is Verdict.SUCCESSFUL), verdict=out.verdict.value,
                   tree_size=out.tree_size, boundary_size=out.boundary_size,
                   seen_count=out.seen_count, generations=out.generations,
                   reservoir_seed=res_seed)
        return row
    if kind == "tree_estimates":
        s = derive_seed(cfg.seed, [kind, i]) % 2**32
        eta = tp.estimate_eta(cfg.d, cfg.h, cfg.K, cfg.tree_replicas, seed=s)
        ck = tp.estimate_core_kernel_probs(cfg.d, cfg.h, cfg.K, cfg.tree_replicas, seed=s)
        row.update(eta=eta.point_estimate, eta_se=eta.std_error, k1=ck.k1, k2=ck.k2)
        try:
            row["lambda"] = tp.estimate_lambda(cfg.d, cfg.h, seed=s).estimate
        except ValueError:
            row["lambda"] = float("nan")
        return row
    if kind == "green_validation":
        row.update(_green_pairs(cfg, n, rng))
        return row

    g, psi, comps = _field_and_components(cfg, n, rng)
    c1, c2 = comps.largest(0), comps.largest(1)
    row.update(c1=len(c1), c1_frac=len(c1) / n, c2=len(c2))
    logn = math.log(n)
    if kind == "giant_fraction":
        m = field_max_abs(psi)
        row.update(max_abs=m, exceeds=int(m >= logn ** (2 / 3)))
    elif kind == "second_component":
        row.update(c2_over_log=len(c2) / logn)
    elif kind == "core_kernel":
        core = core_of(induced_subgraph(g, c1))
        ker = kernel(core)
        row.update(core_frac=core.num_vertices / n, kernel_frac=ker.num_vertices / n)
    elif kind == "diameter":
        dia = diameter(g, c1) if len(c1) else 0
        row.update(diameter=dia, diam_over_log=dia / logn)
    elif kind == "typical_distance":
        if len(c1) >= 2:
            dist = sample_typical_distances(g, c1, cfg.pairs, rng)
            row.update(pairs=len(dist), dist_median=float(np.median(dist)),
                       dist_mean=float(np.mean(dist)),
                       dist_hist=";".join(map(str, np.bincount(dist).tolist())))
        else:
            row.update(pairs=0, dist_median=float("nan"), dist_mean=float("nan"), dist_hist="")
    elif kind == "local_limit":
        counts = ball_census(g, c1, cfg.ball_radius) if len(c1) else Counter()
        row.update(census=_census_string(counts))
    return row


def _run_chunk(args):
    cfg, tasks, lam = args
    return [run_replica(cfg, n, i, lam) for n, i in tasks]


# -- aggregation -----------------------------------------------------------------------


def _numeric_columns(rows: list[dict]) -> list[str]:
    skip = {"n", "replica", "reservoir_seed"}
    cols = []
    for k, v in rows[0].items():
        if k not in skip and isinstance(v, (int, float)) and not isinstance(v, bool):
            cols.append(k)
    return cols


def _linear_fit(x: np.ndarray, y: np.ndarray) -> dict:
    if len(x) < 2 or np.ptp(x) == 0:
        return {"slope": float("nan"), "intercept": float("nan"), "r2": float("nan")}
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss if ss > 0 else float("nan")
    return {"slope": float(slope), "intercept": float(intercept), "r2": r2}


def summarize(rows: list[dict], kind: str) -> dict:
    """Aggregates that depend only on the per-replica rows."""
    by_n: dict[int, list[dict]] = {}
    for r in rows:
        by_n.setdefault(int(r["n"]), []).append(r)
    cols = _numeric_columns(rows)
    per_n = {}
    for n, rs in sorted(by_n.items()):
        stats = {"replicas": len(rs)}
        for c in cols:
            v = np.array([float(r[c]) for r in rs])
            v = v[np.isfinite(v)]
            if v.size == 0:
                continue
            se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
            stats[c] = {"mean": float(v.mean()), "std_error": se, "median": float(np.median(v)),
                        "min": float(v.min()), "max": float(v.max())}
        if kind == "local_limit":
            tot = Counter()
            for r in rs:
                tot.update(parse_census(r["census"]))
            s = sum(tot.values())
            stats["census"] = {k: v / s for k, v in sorted(tot.items())} if s else {}
        if kind == "typical_distance":
            hist = _pooled_hist(rs)
            if hist.sum():
                stats["pooled_median"] = float(_hist_median(hist))
        if kind == "green_validation":
            tot = sum(int(r["pairs"]) for r in rs)
            stats["pass_fraction"] = sum(int(r["pairs_ok"]) for r in rs) / tot if tot else float("nan")
        per_n[str(n)] = stats
    out: dict[str, Any] = {"per_n": per_n}
    ns = np.array(sorted(by_n), dtype=float)
    if len(ns) >= 2:
        logn = np.log(ns)
        if kind == "second_component":
            med = np.array([per_n[str(int(n))]["c2"]["median"] for n in ns])
            out["c2_median_vs_log_n"] = _linear_fit(logn, med)
            band = med / logn
            out["c2_median_over_log_band"] = [float(band.min()), float(band.max())]
        if kind == "diameter":
            m = np.array([per_n[str(int(n))]["diam_over_log"]["mean"] for n in ns])
            out["diam_over_log_band"] = [float(m.min()), float(m.max())]
    return out


def _pooled_hist(rows) -> np.ndarray:
    hists = [np.array([int(x) for x in r["dist_hist"].split(";")], dtype=np.int64)
             for r in rows if r.get("dist_hist")]
    if not hists:
        return np.zeros(0, dtype=np.int64)
    out = np.zeros(max(len(h) for h in hists), dtype=np.int64)
    for h in hists:
        out[:len(h)] += h
    return out


def _hist_median(hist: np.ndarray) -> float:
    c = np.cumsum(hist)
    tot = c[-1]
    lo = int(np.searchsorted(c, (tot + 1) // 2))
    if tot % 2:
        return float(lo)
    hi = int(np.searchsorted(c, tot // 2 + 1))
    return 0.5 * (lo + hi)


def comparisons(summary: dict, ref: dict, cfg: ExperimentConfig) -> dict:
    """Finite-graph versus tree-side comparisons (kept apart from the row aggregates)."""
    out = {}
    for n_str, st in summary["per_n"].items():
        n = int(n_str)
        c = {}
        if "eta" in ref and "c1_frac" in st:
            c["c1_frac_minus_eta"] = st["c1_frac"]["mean"] - ref["eta"]
        if "eta" in ref and "success" in st:
            c["success_minus_eta"] = st["success"]["mean"] - ref["eta"]
        if "k1" in ref and "core_frac" in st:
            c["core_minus_k1"] = st["core_frac"]["mean"] - ref["k1"]
            c["kernel_minus_k2"] = st["kernel_frac"]["mean"] - ref["k2"]
        if "lambda" in ref and "pooled_median" in st:
            c["log_lambda_n"] = math.log(n) / math.log(ref["lambda"])
            c["median_over_log_lambda_n"] = st["pooled_median"] / c["log_lambda_n"]
        if "ball_distribution" in ref and "census" in st:
            p, q = ref["ball_distribution"], st["census"]
            c["tv_distance"] = 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in set(p) | set(q))
        if "exceeds" in st:
            c["exceedance_count"] = int(round(st["exceeds"]["mean"] * st["replicas"]))
        if c:
            out[n_str] = c
    return out


# -- running ---------------------------------------------------------------------------


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list[dict]
    summary: dict
    reference: dict = field(default_factory=dict)
    comparison: dict = field(default_factory=dict)

    @property
    def provenance(self) -> dict:
        return {"config": self.config.semantic_dict(), "config_hash": self.config.config_hash(),
                "seed": self.config.seed, "version": __version__,
                "seed_derivation": "blake2b-64(master, [kind, n, replica])"}

    def summary_document(self) -> dict:
        return {"kind": self.config.kind, "provenance": self.provenance, "summary": self.summary,
                "reference": self.reference, "comparison": self.comparison}

    def rows_csv(self) -> str:
        buf = io.StringIO()
        cols = list(self.rows[0]) if self.rows else ["n", "replica"]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for k, v in r.items()})
        return buf.getvalue()

    def plotdata(self) -> dict[str, list[tuple[float, float, float]]]:
        """x, y, yerr series for external plotting."""
        out = {}
        cols = _numeric_columns(self.rows) if self.rows else []
        for c in cols:
            pts = []
            for n_str, st in self.summary["per_n"].items():
                if c in st:
                    pts.append((float(n_str), st[c]["mean"], st[c]["std_error"]))
            if len(pts) > 1:
                out[c] = pts
        if self.config.kind == "typical_distance":
            hist = _pooled_hist(self.rows)
            if hist.sum():
                p = hist / hist.sum()
                err = np.sqrt(p * (1 - p) / hist.sum())
                out["distance_distribution"] = list(zip(range(len(p)), p.tolist(), err.tolist()))
        return out

    def write(self, out_dir: str | os.PathLike) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "replicas.csv").write_text(self.rows_csv())
        doc = json.dumps(self.summary_document(), sort_keys=True, indent=2, allow_nan=True)
        (out / "summary.json").write_text(doc + "\n")
        for name, pts in self.plotdata().items():
            lines = ["x,y,yerr"] + [f"{x!r},{y!r},{e!r}" for x, y, e in pts]
            (out / f"plotdata_{name}.csv").write_text("\n".join(lines) + "\n")
        return out


def read_rows(path: str | os.PathLike) -> list[dict]:
    """Parse replicas.csv back, converting numeric fields."""
    with open(path, newline="") as fh:
        return parse_rows(fh.read())


def parse_rows(text: str) -> list[dict]:
    rows = []
    for r in csv.DictReader(io.StringIO(text)):
        conv = {}
        for k, v in r.items():
            try:
                conv[k] = int(v)
            except ValueError:
                try:
                    conv[k] = float(v)
                except ValueError:
                    conv[k] = v
        rows.append(conv)
    return rows


def run_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """Run every (n, replica) of ``cfg``; rows come back in (n, replica) order."""
    cfg.validate()
    ref = reference_values(cfg) if cfg.reference or cfg.method == "exploration" else {}
    lam = ref.get("lambda")
    grid = cfg.n_grid if cfg.kind != "tree_estimates" else (cfg.n_grid[:1] or (0,))
    tasks = [(n, i) for n in grid for i in range(cfg.replicas)]
    if cfg.threads == 1 or len(tasks) == 1:
        rows = _run_chunk((cfg, tasks, lam))
    else:
        chunks = [tasks[j::cfg.threads] for j in range(cfg.threads)]
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            parts = list(pool.map(_run_chunk, [(cfg, ch, lam) for ch in chunks]))
        done = {(r["n"], r["replica"]): r for part in parts for r in part}
        rows = [done[t] for t in tasks]
    # round-trip through the CSV text so summary and file agree exactly
    result = ExperimentResult(cfg, rows, {}, ref)
    rows = parse_rows(result.rows_csv())
    result.rows = rows
    result.summary = summarize(rows, cfg.kind)
    if cfg.reference:
        result.comparison = comparisons(result.summary, ref, cfg)
    if write and cfg.out_dir:
        result.write(cfg.out_dir)
    return result


def sweep(template: ExperimentConfig, parameter: str, values: Sequence[Any]) -> list[ExperimentResult]:
    """run_experiment for each value of one config field.

    With an output directory, each run goes to ``<out>/<parameter>=<value>``
    and a ``sweep.csv`` table collects the headline means.
    """
    names = {f.name for f in dataclasses.fields(ExperimentConfig)}
    if parameter not in names and parameter != "n":
        raise ConfigError(f"unknown sweep parameter {parameter!r}")
    results = []
    for v in values:
        key, val = parameter, v
        if parameter == "n_grid" and isinstance(v, (list, tuple)):
            val = tuple(v)
        elif parameter == "n":
            key, val = "n_grid", (v,)
        sub = None
        if template.out_dir:
            sub = str(Path(template.out_dir) / f"{parameter}={v}")
        cfg = template.replace(**{key: val, "out_dir": sub})
        results.append(run_experiment(cfg))
    if template.out_dir and results:
        Path(template.out_dir).mkdir(parents=True, exist_ok=True)
        (Path(template.out_dir) / "sweep.csv").write_text(sweep_table(parameter, values, results))
    return results


def sweep_table(parameter: str, values: Sequence[Any], results: list[ExperimentResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([parameter, "n", "column", "mean", "std_error"])
    for v, res in zip(values, results):
        for n_str, st in res.summary["per_n"].items():
            for c, s in st.items():
                if isinstance(s, dict) and "mean" in s:
                    w.writerow([v, n_str, c, repr(s["mean"]), repr(s["std_error"])])
    return buf.getvalue()
