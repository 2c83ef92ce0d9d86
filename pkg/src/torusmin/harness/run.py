"""Orchestration of the experiments, report assembly and file output.

Flags are recomputed from the stored tables by :func:`evaluate_flags`, so a
report on disk can always be re-judged without redoing the numerics.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..entropy.bowen import entropy_estimate, entropy_series
from ..entropy.construction import (
    beta_constant,
    build_F_eps,
    build_P_r,
    horizon_span,
    realize_member,
    select_pair,
    spanning_entropy_series,
    verify_spanning,
)
from ..entropy.tubes import SLOPE_LOG_TOL, linear_bound, triangle_family, tube_entropy
from ..errors import PreconditionError
from ..flow import PhasePoint, integrate, speed_defect
from ..geometry.distance import domain_diameter, short_range
from ..geometry.metric import equivalence_constant
from ..geometry.volume import c_epsilon
from ..minimal import (
    Line,
    accompanying_line,
    hedlund_constant,
    is_strictly_monotone,
    minimal_geodesic_for_line,
    project_to_line,
    to_fundamental_domain,
)
from .config import ExperimentConfig, parse_direction

SLOPE_TOL = 0.05
EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_UNSTABLE = 0, 1, 2, 3


@dataclass
class Flag:
    name: str
    anchor: str
    value: float
    limit: float
    passed: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class RunReport:
    experiment: str
    config: dict
    constants: dict
    tables: dict
    flags: list = field(default_factory=list)
    instability: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(f.passed for f in self.flags)

    @property
    def exit_code(self) -> int:
        if self.instability:
            return EXIT_UNSTABLE
        return EXIT_PASS if self.passed else EXIT_FAIL

    def to_dict(self) -> dict:
        """Everything except wall-clock timings, which live in a separate file."""
        return {
            "experiment": self.experiment,
            "config": self.config,
            "constants": self.constants,
            "tables": self.tables,
            "flags": [f.to_dict() for f in self.flags],
            "instability": self.instability,
            "passed": self.passed,
        }


# --- helpers -------------------------------------------------------------


def parallel_map(fn, items, jobs: int = 1) -> list:
    """Order-preserving map over a process pool (serial when jobs <= 1)."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _minimal_job(args):
    cfg_dict, angle, base, R = args
    grid = ExperimentConfig.from_dict(cfg_dict).build_grid()
    return minimal_geodesic_for_line(grid.metric, Line.from_angle(base, angle), R, grid)


def _member_job(args):
    cfg_dict, y, z, r = args
    grid = ExperimentConfig.from_dict(cfg_dict).build_grid()
    return realize_member(grid, y, z, r)


def _tube_job(args):
    cfg_dict, angle, base, mu, delta, T_list, a, T_max, n_tri = args
    grid = ExperimentConfig.from_dict(cfg_dict).build_grid()
    return tube_entropy(grid.metric, Line.from_angle(base, angle), mu, delta, T_list, grid, a,
                        T_max=T_max, n_triangles=n_tri)


def sample_witnesses(cfg: ExperimentConfig, count: int, R: float, rng, jobs: int = 1, rounds: int = 10):
    """Certified minimal records with random direction and base, footpoints moved into the unit square."""
    out, failures = [], []
    for _ in range(rounds):
        need = count - len(out)
        if need <= 0:
            break
        angles = rng.uniform(0.0, 2 * math.pi, need)
        bases = rng.uniform(0.0, 1.0, (need, 2))
        recs = parallel_map(_minimal_job, [(cfg.to_dict(), float(a), tuple(b), R) for a, b in zip(angles, bases)], jobs)
        for rec in recs:
            if rec.certified:
                out.append(to_fundamental_domain(rec))
            else:
                failures.append({"slack": rec.minimality_slack, "stability": rec.stability})
    return out, failures


def _base_constants(cfg: ExperimentConfig, grid, eps: float) -> dict:
    m = grid.metric
    return {"A": equivalence_constant(m), "a": domain_diameter(grid), "C_eps": c_epsilon(grid, eps)[0], "eps": eps}


# --- experiments -----------------------------------------------------------


def _metric_info(cfg, grid, rng, jobs, timings=None):
    m = grid.metric
    lo, hi = m.f_range
    consts = {
        "digest": m.digest,
        "amplitude": m.amplitude,
        "f_min": lo,
        "f_max": hi,
        "A": equivalence_constant(m),
        "lipschitz": m.lipschitz,
        "curvature_bound": m.curvature_bound,
        "short_range": short_range(m),
        "a": domain_diameter(grid),
        "distance_tolerance": grid.distance_tolerance,
        "tol_min": grid.tol_min,
    }
    return consts, {}, [], {}


def _geodesic(cfg, grid, rng, jobs, timings=None):
    b = cfg.block("geodesic")
    m = grid.metric
    fl = cfg.flow
    path = integrate(m, PhasePoint(b["x"], b["theta"]), float(b["T"]), h=fl["step"], spacing=fl["spacing"],
                     horizon=fl["horizon"])
    defect = speed_defect(m, path)
    tables = {"speed_defect": defect, "T": float(b["T"]), "end": path.x[-1].tolist()}
    csvs = {"path.csv": (["t", "x1", "x2", "theta"], list(path.rows()))}
    return {"digest": m.digest}, tables, [], csvs


def _minimal(cfg, grid, rng, jobs, timings=None):
    b = cfg.block("minimal")
    m = grid.metric
    angle = parse_direction(b["direction"])
    R = float(b["span"])
    bases = rng.uniform(0.0, 1.0, (int(b["count"]), 2))
    recs = parallel_map(_minimal_job, [(cfg.to_dict(), angle, tuple(x), R) for x in bases], jobs)
    rows, unstable, csvs = [], [], {}
    for k, rec in enumerate(recs):
        params = project_to_line(m, rec.path, rec.line)
        d = rec.to_dict()
        d["monotone"] = is_strictly_monotone(params)
        rows.append(d)
        if not rec.certified:
            unstable.append({"record": k, "slack": rec.minimality_slack, "stability": rec.stability})
        csvs[f"path_{k}.csv"] = (["t", "x1", "x2", "theta"], list(rec.path.rows()))
    return {"digest": m.digest, "tol_min": grid.tol_min}, {"records": rows}, unstable, csvs


def _hedlund(cfg, grid, rng, jobs, timings=None):
    b = cfg.block("hedlund")
    m = grid.metric
    angles = [parse_direction(d) for d in b["directions"]]
    recs = parallel_map(_minimal_job, [(cfg.to_dict(), a, (0.5, 0.5), float(b["span"])) for a in angles], jobs)
    rows = [{"direction": a, "deviation": r.deviation, "certified": r.certified} for a, r in zip(angles, recs)]
    unstable = [{"direction": r["direction"]} for r in rows if not r["certified"]]
    csvs = {"hedlund.csv": (["direction", "deviation"], [(r["direction"], r["deviation"]) for r in rows])}
    return {"D": hedlund_constant(m, recs, grid), "A": equivalence_constant(m)}, {"deviations": rows}, unstable, csvs


def _entropy(cfg, grid, rng, jobs, timings=None):
    b = cfg.block("entropy")
    m = grid.metric
    T_list = [float(t) for t in b["T_list"]]
    R = horizon_span(m, max(T_list) + 1)
    pop, failures = sample_witnesses(cfg, int(b["population"]), R, rng, jobs)
    rep = entropy_series(pop, m, float(b["eps"]), T_list, grid, with_spanning=True)
    rows = [{"T": T, "separated": r, "spanning": s} for T, r, s in zip(rep.T, rep.separated, rep.spanning)]
    csvs = {"entropy.csv": (["T", "separated", "spanning"], [(r["T"], r["separated"], r["spanning"]) for r in rows])}
    unstable = [{"uncertified": len(failures)}] if len(pop) < int(b["population"]) else []
    return {"digest": m.digest, "eps": float(b["eps"])}, {"entropy": rows}, unstable, csvs


def _spanning(cfg, grid, rng, jobs, timings=None):
    b = cfg.block("spanning")
    m = grid.metric
    eps = float(b["eps"])
    consts = _base_constants(cfg, grid, eps)
    A, a, C = consts["A"], consts["a"], consts["C_eps"]
    witness_r = [float(r) for r in b["witness_r"]]
    samples = {}
    all_recs = []
    unstable = []
    for r in witness_r:
        recs, fails = sample_witnesses(cfg, int(b["witnesses"]), horizon_span(m, r + 1), rng, jobs)
        if len(recs) < int(b["witnesses"]):
            unstable.append({"witness_r": r, "certified": len(recs), "failures": len(fails)})
        samples[r] = recs
        all_recs.extend(recs)
    D = hedlund_constant(m, all_recs, grid) if all_recs else 0.0
    consts["D"] = D
    consts.update(beta_constant(D, A, a, eps).to_dict())
    F = build_F_eps(grid, eps)
    rep, cons, packing = spanning_entropy_series(grid, eps, b["r_list"], a, A, D, C=C, F=F)
    consts["F_count"] = len(F)
    series = [{"r": r, "P_r": n, "F_r": con.cardinality // len(F), "volume_rate": v}
              for r, n, con, v in zip(rep.T, rep.separated, cons, rep.params["volume_rate"])]
    pack_rows = [{"r": p["r"], "lhs": p["lhs"], "min_volume": p["min_volume"]} for p in packing]
    witness_rows = []
    for r in witness_r:
        con = next((c for c in cons if c.r == r), None) or build_P_r(grid, r, eps, a, A, D, F=F)
        recs = samples[r]
        pairs = [select_pair(con, w.path) for w in recs]
        todo = sorted({(i, j) for i, j, _, _ in pairs})
        built = parallel_map(_member_job, [(cfg.to_dict(), tuple(con.F[i]), tuple(con.Fr[j]), r) for i, j in todo], jobs)
        for key, rec in zip(todo, built):
            con.store(key, rec)
        for chk in verify_spanning(con, recs, pairs):
            witness_rows.append({"r": r, "beta": con.beta, **chk.to_dict()})
        if con.dropped:
            unstable.append({"witness_r": r, "dropped": con.dropped})
    flagged = [w for w in witness_rows if w["flagged"]]
    if flagged:
        unstable.append({"flagged_witnesses": len(flagged)})
    tables = {"spanning": series, "packing": pack_rows, "witnesses": witness_rows,
              "witness_deviation": [rec.deviation for rec in all_recs]}
    csvs = {
        "spanning.csv": (["r", "cardinality", "F_r", "volume_rate"],
                         [(s["r"], s["P_r"], s["F_r"], s["volume_rate"]) for s in series]),
        "witnesses.csv": (["r", "index", "dbar", "beta", "ratio"],
                          [(w["r"], w["index"], w["dbar"], w["beta"], w["ratio"]) for w in witness_rows]),
    }
    return consts, tables, unstable, csvs


def _tube_tables(cfg, grid, rng, jobs, mu, a):
    b = cfg.block("tube")
    delta = float(b["delta"])
    T_list = [float(t) for t in b["T_list"]]
    angles = [parse_direction(d) for d in b["center_direction"]]
    bases = rng.uniform(0.0, 1.0, (len(angles), 2))
    n_tri = int(b["triangles"])
    reps = parallel_map(_tube_job, [(cfg.to_dict(), ang, tuple(x), mu, delta, T_list, a, float(b["T_max"]), n_tri)
                                    for ang, x in zip(angles, bases)], jobs)
    centers, triangles, unstable = [], [], []
    m = grid.metric
    for ang, rep in zip(angles, reps):
        centers.append({
            "direction": ang, "mu": mu, "delta": delta, "T": T_list, "counts": rep.counts,
            "C1": rep.C1, "volumes": rep.volumes, "population": len(rep.members),
            "same_image_count": rep.same_image_count, "directions_ok": rep.flags["directions_ok"],
        })
        if rep.flags["uncertified"] or rep.flags["small_population"]:
            unstable.append({"direction": ang, **{k: rep.flags[k] for k in ("uncertified", "small_population")}})
        t0s = np.linspace(-float(b["T_max"]) / 2, float(b["T_max"]) / 2, 7)
        for d in b["triangle_deltas"]:
            d = float(d)
            tris = rep.triangles if d == delta else triangle_family(m, rep.leaves, d, grid, n_tri, t0s, mu)
            triangles.extend({"direction": ang, "delta": d, "area": t.area, "sides": list(t.sides)} for t in tris)
    return {"tubes": centers, "triangles": triangles}, unstable


def _tube(cfg, grid, rng, jobs, timings=None, mu=None, consts=None):
    b = cfg.block("tube")
    m = grid.metric
    if consts is None:
        consts = {"A": equivalence_constant(m), "a": domain_diameter(grid), "eps": cfg.block("spanning")["eps"]}
    mu = mu if mu is not None else b["mu"]
    if mu is None:
        recs, _ = sample_witnesses(cfg, 8, horizon_span(m, 11.0), rng, jobs)
        consts["D"] = hedlund_constant(m, recs, grid) if recs else 0.0
        consts.update(beta_constant(consts["D"], consts["A"], consts["a"], consts["eps"]).to_dict())
        mu = consts["beta"]
    consts["mu"] = float(mu)
    tables, unstable = _tube_tables(cfg, grid, rng, jobs, float(mu), consts["a"])
    csvs = {
        "tube.csv": (["direction", "T", "cardinality"],
                     [(c["direction"], T, n) for c in tables["tubes"] for T, n in zip(c["T"], c["counts"])]),
        "triangles.csv": (["direction", "delta", "area"],
                          [(t["direction"], t["delta"], t["area"]) for t in tables["triangles"]]),
    }
    return consts, tables, unstable, csvs


def _full(cfg, grid, rng, jobs, timings=None):
    timings = {} if timings is None else timings
    start = time.perf_counter()
    consts, tables, unstable, csvs = _spanning(cfg, grid, rng, jobs)
    timings["spanning_seconds"] = time.perf_counter() - start
    start = time.perf_counter()
    tc, tt, tu, tcsv = _tube(cfg, grid, rng, jobs, mu=consts["beta"], consts=dict(consts))
    timings["tube_seconds"] = time.perf_counter() - start
    consts["mu"] = tc["mu"]
    tables.update(tt)
    csvs.update(tcsv)
    return consts, tables, unstable + tu, csvs


EXPERIMENT_RUNNERS = {
    "metric-info": _metric_info,
    "geodesic": _geodesic,
    "minimal": _minimal,
    "hedlund": _hedlund,
    "entropy": _entropy,
    "spanning": _spanning,
    "tube": _tube,
    "full": _full,
}


# --- verdicts -------------------------------------------------------------


@dataclass
class BowenVerdict:
    passed: bool
    spanning_slope: float
    tube_slopes: list
    offending: list

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def bowen_combination(spanning_slope: float, beta: float, tubes: list, tol: float = SLOPE_TOL) -> BowenVerdict:
    """Both summands of h_top <= h_top(beta) + h*(beta) numerically zero.

    ``tubes`` holds ``(mu, slope_linear)`` per tube; every mu must equal beta.
    """
    for mu, _ in tubes:
        if not math.isclose(mu, beta, rel_tol=1e-12, abs_tol=1e-12):
            raise PreconditionError(f"tube scale {mu} differs from beta {beta}")
    offending = []
    if not spanning_slope <= tol:
        offending.append("spanning entropy at scale beta")
    slopes = [s for _, s in tubes]
    if any(not s <= tol for s in slopes):
        offending.append("tail entropy inside beta-tubes")
    return BowenVerdict(not offending, spanning_slope, slopes, offending)


def _tube_slopes(row):
    return entropy_estimate(row["T"], row["counts"]) if len(row["T"]) >= 4 else (math.nan, math.nan)


def evaluate_flags(experiment: str, constants: dict, tables: dict) -> list:
    """Pass/fail flags as pure functions of the stored tables."""
    flags = []
    if experiment == "geodesic":
        lim = 1e-6 * max(1.0, tables["T"])
        flags.append(Flag("unit-speed", "g-speed equals 1 along the flow", tables["speed_defect"], lim,
                          tables["speed_defect"] <= lim))
    if experiment == "minimal":
        for k, rec in enumerate(tables["records"]):
            flags.append(Flag(f"monotone-projection[{k}]", "projection to the accompanying line is strictly monotone",
                              float(rec["monotone"]), 1.0, bool(rec["monotone"])))
    if experiment == "entropy":
        rows = tables["entropy"]
        for row in rows:
            flags.append(Flag(f"spanning<=separated[T={row['T']}]", "a maximal separated set spans",
                              row["spanning"], row["separated"], row["spanning"] <= row["separated"]))
        sep = [r["separated"] for r in rows]
        flags.append(Flag("separated-monotone", "r_T non-decreasing in T", float(np.all(np.diff(sep) >= 0)), 1.0,
                          bool(np.all(np.diff(sep) >= 0))))
    if experiment in ("spanning", "full"):
        for p in tables["packing"]:
            flags.append(Flag(f"packing[r={p['r']}]", "#F_r^eps C_eps <= vol B(x, r + a + eps/2)",
                              p["lhs"], p["min_volume"], p["lhs"] <= p["min_volume"]))
        rs = [s["r"] for s in tables["spanning"]]
        counts = [s["P_r"] for s in tables["spanning"]]
        slope = entropy_estimate(rs, counts)[0]
        flags.append(Flag("P_r-growth", "entropy at scale beta vanishes: slope of log #P_r in r", slope,
                          SLOPE_TOL, slope <= SLOPE_TOL))
        rates = [s["volume_rate"] for s in tables["spanning"]]
        dec = bool(np.all(np.diff(rates) < 0))
        flags.append(Flag("volume-rate-decreasing", "(1/r) log(vol / C_eps) decreases", float(dec), 1.0, dec))
        if tables["witnesses"]:
            worst = max(w["ratio"] for w in tables["witnesses"])
            flags.append(Flag("spanning-beta", "P_r is (r, beta)-spanning: d-bar(w, v_yz)_r <= beta", worst, 1.0,
                              worst <= 1.0))
    if experiment in ("tube", "full"):
        c2 = {}
        for t in tables["triangles"]:
            c2[t["delta"]] = min(c2.get(t["delta"], math.inf), t["area"])
        for d, v in sorted(c2.items()):
            flags.append(Flag(f"C2-positive[delta={d}]", "min-delta-triangle area bounded below", v, 0.0, v > 0))
        deltas = sorted(c2)
        mono = all(c2[x] <= c2[y] for x, y in zip(deltas, deltas[1:]))
        if len(deltas) > 1:
            flags.append(Flag("C2-monotone", "C2(delta) non-increasing as delta decreases", float(mono), 1.0, mono))
        for t in tables["triangles"]:
            mu = constants["mu"]
            ok = all(t["delta"] / 2 < l <= 2 * mu + t["delta"] / 2 + 1e-9 for l in t["sides"])
            if not ok:
                flags.append(Flag("triangle-sides", "delta/2 < l <= 2 beta + delta/2", max(t["sides"]),
                                  2 * mu + t["delta"] / 2, False))
        slopes = []
        for row in tables["tubes"]:
            tag = f"direction={row['direction']:.6g}"
            lin, log = _tube_slopes(row)
            slopes.append((row["mu"], lin))
            C2 = c2.get(row["delta"], math.nan)
            for T, n in zip(row["T"], row["counts"]):
                bound = linear_bound(row["C1"], C2, row["mu"], row["delta"], T)
                flags.append(Flag(f"tube-bound[{tag},T={T}]", "#F(T, delta) <= C1 beta (T+1+2beta+4delta)/C2 * 2beta/delta",
                                  n, bound, n <= bound))
            flags.append(Flag(f"tube-slope[{tag}]", "tube entropy vanishes: slope of log #F(T, delta) in T", lin,
                              SLOPE_TOL, lin <= SLOPE_TOL))
            flags.append(Flag(f"tube-slope-log[{tag}]", "cardinality grows at most linearly", log, SLOPE_LOG_TOL,
                              log <= SLOPE_LOG_TOL))
            lim = 2 * row["mu"] / row["delta"]
            flags.append(Flag(f"same-image[{tag}]", "same-image shifts count <= 2 beta/delta",
                              row["same_image_count"], lim, row["same_image_count"] <= lim))
        if experiment == "full":
            rs = [s["r"] for s in tables["spanning"]]
            span_slope = entropy_estimate(rs, [s["P_r"] for s in tables["spanning"]])[0]
            verdict = bowen_combination(span_slope, constants["beta"], slopes)
            flags.append(Flag("bowen", "h_top <= h_top(beta) + h*(beta) with both summands zero",
                              max([span_slope] + [s for _, s in slopes]), SLOPE_TOL, verdict.passed))
    return flags


# --- entry point ------------------------------------------------------------


def run(cfg: ExperimentConfig, experiment: str, out_dir=None, jobs: int = 1) -> RunReport:
    """Execute one experiment; write report.json, timings.json and CSV series when out_dir is set."""
    if experiment not in EXPERIMENT_RUNNERS:
        raise PreconditionError(f"unknown experiment {experiment!r}")
    start = time.perf_counter()
    grid = cfg.build_grid()
    rng = np.random.default_rng(cfg.seed)
    timings = {}
    consts, tables, unstable, csvs = EXPERIMENT_RUNNERS[experiment](cfg, grid, rng, jobs, timings)
    report = RunReport(experiment, cfg.to_dict(), _clean(consts), _clean(tables), instability=_clean(unstable))
    report.flags = evaluate_flags(experiment, report.constants, report.tables)
    report.timings = dict(timings, total_seconds=time.perf_counter() - start)
    if out_dir is not None:
        write_outputs(report, csvs, out_dir)
    return report


def write_outputs(report: RunReport, csvs: dict, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(dumps(report.to_dict()), encoding="utf-8")
    (out / "timings.json").write_text(dumps(report.timings), encoding="utf-8")
    for name, (header, rows) in csvs.items():
        write_csv(out / name, header, rows)


def rerender(path) -> RunReport:
    """Reload a stored report and recompute its flags from the tables alone."""
    p = Path(path)
    if p.is_dir():
        p = p / "report.json"
    data = json.loads(p.read_text(encoding="utf-8"))
    rep = RunReport(data["experiment"], data["config"], data["constants"], data["tables"],
                    instability=data.get("instability", []))
    rep.flags = evaluate_flags(rep.experiment, rep.constants, rep.tables)
    return rep
