"""Command-line entry point: gen, train, eval, matrix, baseline, validate-net."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import attack, grid, ids, powerflow, telemetry
from .attack import ScenarioSetting

log = logging.getLogger("pvids")

OK, VALIDATION, RUNTIME, PARTIAL = 0, 1, 2, 3
SETTINGS = ("S1", "S2", "S3", "S4")
# scheme -> (training variant, testing variant)
SCHEMES = {1: ("clean", "clean"), 2: ("clean", "missing"), 3: ("missing", "missing")}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    seed: int = 0
    settings: tuple = SETTINGS
    schemes: tuple = (1, 2, 3)
    algos: tuple = ids.ALGORITHMS
    out: Path = Path("runs")
    days: int = 30
    profiles: str = "synthetic"
    test_frac: float = 0.2
    maxp_limit_frac: float = 0.3
    model: Path | None = None
    bus_file: Path | None = None
    branch_file: Path | None = None
    extras: dict = field(default_factory=dict)

    @property
    def data_root(self) -> Path:
        return self.out / "data"

    def dataset_dir(self, setting: str, variant: str) -> Path:
        return self.data_root / setting.lower() / variant


def _settings(v: str) -> tuple:
    if v.lower() == "all":
        return SETTINGS
    out = []
    for s in v.split(","):
        s = s.strip().upper()
        if s not in SETTINGS:
            raise ConfigError(f"unknown setting {s!r}")
        out.append(s)
    return tuple(out)


def _schemes(v: str) -> tuple:
    if v.lower() == "all":
        return (1, 2, 3)
    try:
        out = tuple(int(s) for s in v.split(","))
    except ValueError:
        raise ConfigError(f"bad scheme list {v!r}") from None
    if any(s not in SCHEMES for s in out):
        raise ConfigError("schemes are 1, 2 or 3")
    return out


def _algos(v: str) -> tuple:
    out = tuple(a.strip().lower() for a in v.split(",") if a.strip())
    bad = [a for a in out if a not in ids.ALGORITHMS]
    if bad or not out:
        raise ConfigError(f"unknown algorithm(s) {bad}; expected {','.join(ids.ALGORITHMS)}")
    return out


def _seed(v) -> int:
    try:
        s = int(v)
    except (TypeError, ValueError):
        raise ConfigError(f"seed must be an integer, got {v!r}") from None
    if not 0 <= s < 2**64:
        raise ConfigError("seed must fit in 64 unsigned bits")
    return s


def _pos_int(v) -> int:
    n = int(v)
    if n < 1:
        raise ConfigError("expected a positive integer")
    return n


def _frac(v) -> float:
    x = float(v)
    if not 0 < x < 1:
        raise ConfigError("fraction must lie in (0, 1)")
    return x


PARSERS = {
    "seed": ("seed", _seed),
    "setting": ("settings", _settings),
    "scheme": ("schemes", _schemes),
    "algos": ("algos", _algos),
    "out": ("out", Path),
    "days": ("days", _pos_int),
    "profiles": ("profiles", str),
    "test_frac": ("test_frac", _frac),
    "maxp_limit_frac": ("maxp_limit_frac", _frac),
    "model": ("model", Path),
    "bus_file": ("bus_file", Path),
    "branch_file": ("branch_file", Path),
}


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment.  Returns raw strings."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in PARSERS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        try:
            PARSERS[key][1](val)
        except (ConfigError, ValueError) as exc:
            raise ConfigError(f"{path}:{lineno}: {key}: {exc}") from None
        out[key] = (val, f"{path}:{lineno}")
    return out


def resolve_config(args: argparse.Namespace, env=None) -> ExperimentConfig:
    """Merge file < environment (seed only) < flags."""
    env = os.environ if env is None else env
    raw = {}
    if getattr(args, "config", None):
        raw = {k: v for k, (v, _) in read_config(args.config).items()}
    if env.get("PVS_SEED", "") != "":
        raw["seed"] = env["PVS_SEED"]
    for key in PARSERS:
        val = getattr(args, key, None)
        if val is not None:
            raw[key] = str(val)
    cfg = ExperimentConfig()
    for key, val in raw.items():
        attr, parse = PARSERS[key]
        try:
            setattr(cfg, attr, parse(val))
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    if cfg.profiles != "synthetic" and not Path(cfg.profiles).is_dir():
        raise ConfigError(f"profiles must be 'synthetic' or a directory, got {cfg.profiles!r}")
    return cfg


# ------------------------------------------------------------------ commands


def _network(cfg: ExperimentConfig):
    if cfg.bus_file or cfg.branch_file:
        if not (cfg.bus_file and cfg.branch_file):
            raise ConfigError("bus_file and branch_file go together")
        return grid.load_network(cfg.bus_file, cfg.branch_file)
    return grid.default_network()


def _profiles(cfg: ExperimentConfig):
    if cfg.profiles == "synthetic":
        return telemetry.synth_profiles(cfg.days, seed=cfg.seed), {"profile_source": "synthetic", "days": cfg.days}
    d = Path(cfg.profiles)
    prof = telemetry.import_profiles(d / "load.csv", d / "pv.csv")
    digests = {n: telemetry.file_digest(d / n) for n in ("load.csv", "pv.csv")}
    return prof, {"profile_source": f"imported:{d}", "profile_params": digests}


def cmd_gen(cfg: ExperimentConfig) -> list[Path]:
    model = _network(cfg)
    placements = grid.default_pv_placements()
    prof, extra = _profiles(cfg)
    if cfg.profiles == "synthetic":
        extra["profile_params"] = telemetry.params_dict(telemetry.ProfileParams())
    extra["maxp_limit_frac"] = cfg.maxp_limit_frac
    written = []
    for sid in cfg.settings:
        setting = ScenarioSetting.get(sid)
        pvs = attack.scenario_pvs(setting, placements, cfg.maxp_limit_frac)
        for variant in ("clean", "missing"):
            out = cfg.dataset_dir(sid, variant)
            t0 = time.perf_counter()
            ds = telemetry.generate_dataset(model, pvs, setting, prof, cfg.seed, variant == "missing", out,
                                            meta_extra=extra)
            log.info("%s/%s: %d frames, %d attacks, %d with missing data (%.1fs)", sid, variant,
                     ds.meta.frames, ds.meta.attack_frames, ds.meta.missing_frames, time.perf_counter() - t0)
            written.append(out)
    return written


class DataCache:
    """Loads each (setting, variant) dataset at most once, and only on demand."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self._data = {}
        self.opened: list[Path] = []

    def get(self, setting: str, variant: str):
        key = (setting, variant)
        if key not in self._data:
            path = self.cfg.dataset_dir(setting, variant)
            if not (path / "features.csv").exists():
                raise FileNotFoundError(f"missing dataset {path}; run `gen` first")
            self.opened.append(path)
            ts, X, y = telemetry.load_features(path)
            meta, _ = telemetry.read_meta(path)
            self._data[key] = (ts, X, y, meta)
        return self._data[key]

    def split(self, setting: str, variant: str):
        ts, X, y, meta = self.get(setting, variant)
        return ids.train_test_split(y, self.cfg.test_frac, seed=meta.seed)


def _model_path(cfg, setting, variant, algo) -> Path:
    return cfg.out / "models" / f"{setting.lower()}_{variant}_{algo}.json"


def _train_one(cfg, cache, setting, variant, algo):
    ts, X, y, meta = cache.get(setting, variant)
    tr, _ = cache.split(setting, variant)
    t0 = time.perf_counter()
    model = ids.train(algo, X[tr], y[tr], seed=cfg.seed,
                      meta={"setting": setting, "variant": variant, "dataset_seed": meta.seed})
    log.info("trained %s on %s/%s in %.1fs", algo, setting, variant, time.perf_counter() - t0)
    return model


def cmd_train(cfg: ExperimentConfig) -> list[Path]:
    cache = DataCache(cfg)
    paths = []
    for sid in cfg.settings:
        for variant in sorted({SCHEMES[s][0] for s in cfg.schemes}):
            for algo in cfg.algos:
                model = _train_one(cfg, cache, sid, variant, algo)
                path = _model_path(cfg, sid, variant, algo)
                path.parent.mkdir(parents=True, exist_ok=True)
                ids.save_model(model, path)
                paths.append(path)
    return paths


def _test_rows(cache, setting, scheme):
    test_variant = SCHEMES[scheme][1]
    ts, X, y, _ = cache.get(setting, test_variant)
    _, te = cache.split(setting, test_variant)
    return X[te], y[te]


def cmd_eval(cfg: ExperimentConfig) -> list[dict]:
    cache = DataCache(cfg)
    rows = []
    for sid in cfg.settings:
        for scheme in cfg.schemes:
            for algo in cfg.algos:
                path = cfg.model or _model_path(cfg, sid, SCHEMES[scheme][0], algo)
                model = ids.load_model(path)
                X, y = _test_rows(cache, sid, scheme)
                rep = ids.evaluate_model(model, X, y)
                rows.append({"setting": sid, "scheme": scheme, "algorithm": model.algorithm, **rep.as_dict()})
                if cfg.model:
                    break
    return rows


@dataclass
class ResultsMatrix:
    cells: dict = field(default_factory=dict)  # (setting, scheme, algo) -> EvalReport
    failures: dict = field(default_factory=dict)  # same key -> message

    def value(self, setting, scheme, algo, metric):
        rep = self.cells.get((setting, scheme, algo))
        return None if rep is None else getattr(rep, metric)


def run_matrix(cfg: ExperimentConfig, cache: DataCache | None = None) -> ResultsMatrix:
    cache = cache or DataCache(cfg)
    res = ResultsMatrix()
    for sid in cfg.settings:
        models = {}
        for scheme in cfg.schemes:
            train_variant = SCHEMES[scheme][0]
            for algo in cfg.algos:
                key = (sid, scheme, algo)
                t0 = time.perf_counter()
                try:
                    mk = (train_variant, algo)
                    if mk not in models:
                        models[mk] = _train_one(cfg, cache, sid, train_variant, algo)
                    X, y = _test_rows(cache, sid, scheme)
                    res.cells[key] = ids.evaluate_model(models[mk], X, y)
                except Exception as exc:  # one failed cell must not sink the matrix
                    log.error("cell %s failed: %s", key, exc)
                    res.failures[key] = str(exc)
                log.info("cell %s/%d/%s %.1fs", sid, scheme, algo, time.perf_counter() - t0)
    return res


def write_matrix(res: ResultsMatrix, cfg: ExperimentConfig, out_dir: Path) -> tuple[Path, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "results.csv"
    txt_path = out_dir / "results.txt"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["setting", "scheme", "algorithm", *ids.METRICS, "tp", "fp", "tn", "fn", "status"])
        for sid in cfg.settings:
            for scheme in cfg.schemes:
                for algo in cfg.algos:
                    rep = res.cells.get((sid, scheme, algo))
                    if rep is None:
                        w.writerow([sid, scheme, algo, *[""] * (len(ids.METRICS) + 4), "failed"])
                        continue
                    w.writerow([sid, scheme, algo, *[f"{getattr(rep, m):.6f}" for m in ids.METRICS],
                                rep.tp, rep.fp, rep.tn, rep.fn, "ok"])
    lines = []
    for sid in cfg.settings:
        for scheme in cfg.schemes:
            lines.append(f"Setting {sid[1]} / Scheme {scheme} (train {SCHEMES[scheme][0]}, test {SCHEMES[scheme][1]})")
            lines.append(f"{'metric':<10}" + "".join(f"{a.upper():>10}" for a in cfg.algos))
            for metric in ids.METRICS:
                vals = [res.value(sid, scheme, a, metric) for a in cfg.algos]
                have = [v for v in vals if v is not None and v == v]
                best = max(have) if have else None
                cells = []
                for v in vals:
                    if v is None:
                        cells.append(f"{'FAIL':>10}")
                    else:
                        mark = "*" if best is not None and v == best else " "
                        cells.append(f"{v:>9.3f}{mark}")
                lines.append(f"{metric:<10}" + "".join(cells))
            lines.append("")
    lines.append("* best value per metric")
    txt_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return csv_path, txt_path


def cmd_matrix(cfg: ExperimentConfig) -> ResultsMatrix:
    res = run_matrix(cfg)
    write_matrix(res, cfg, cfg.out / "report")
    return res


@dataclass
class BaselineResult:
    apparent_loss: np.ndarray
    labels: np.ndarray
    threshold: float
    direction: str  # "above": attack if loss > threshold
    train_accuracy: float
    test_accuracy: float
    best_test_accuracy: float  # best threshold chosen with the test labels (upper bound)


def best_threshold(x: np.ndarray, y: np.ndarray) -> tuple[float, str, float]:
    """Exhaustive sweep over cut points between sorted values, both directions."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ys = y[order].astype(int)
    n = len(xs)
    pos = ys.sum()
    # predicting attack for everything above cut i (i values at or below)
    below_pos = np.r_[0, np.cumsum(ys)]
    k = np.arange(n + 1)
    correct_above = (k - below_pos) + (pos - below_pos)
    correct_below = n - correct_above
    valid = np.r_[True, xs[1:] != xs[:-1], True]  # cuts only between distinct values
    ca = np.where(valid, correct_above, -1)
    cb = np.where(valid, correct_below, -1)
    ia, ib = int(np.argmax(ca)), int(np.argmax(cb))

    def cut(i):
        if i == 0:
            return float(xs[0]) - 1.0
        if i == n:
            return float(xs[-1])
        return 0.5 * float(xs[i - 1] + xs[i])

    if ca[ia] >= cb[ib]:
        return cut(ia), "above", ca[ia] / n
    return cut(ib), "below", cb[ib] / n


def _apply_threshold(x, thr, direction):
    return (x > thr).astype(int) if direction == "above" else (x <= thr).astype(int)


def run_baseline(dataset_dir, test_frac: float = 0.2) -> BaselineResult:
    meas = telemetry.load_snapshots(dataset_dir)
    meta, _ = telemetry.read_meta(dataset_dir)
    loss = telemetry.apparent_loss(meas)
    y = meas.labels
    tr, te = ids.train_test_split(y, test_frac, seed=meta.seed)
    thr, direction, acc_tr = best_threshold(loss[tr], y[tr])
    acc_te = float((_apply_threshold(loss[te], thr, direction) == y[te]).mean())
    _, _, best_te = best_threshold(loss[te], y[te])
    return BaselineResult(loss, y, thr, direction, float(acc_tr), acc_te, float(best_te))


def cmd_baseline(cfg: ExperimentConfig) -> list[BaselineResult]:
    out = []
    for sid in cfg.settings:
        path = cfg.dataset_dir(sid, "clean")
        res = run_baseline(path, cfg.test_frac)
        dst = cfg.out / "baseline" / sid.lower()
        dst.mkdir(parents=True, exist_ok=True)
        ts = telemetry.load_snapshots(path).timestamps
        with open(dst / "apparent_loss.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["timestamp", "apparent_loss_kw", "label"])
            for t, v, lab in zip(ts, res.apparent_loss, res.labels):
                w.writerow([int(t), f"{v:.6f}", int(lab)])
        summary = {
            "setting": sid, "threshold_kw": res.threshold, "direction": res.direction,
            "train_accuracy": res.train_accuracy, "test_accuracy": res.test_accuracy,
            "best_test_accuracy": res.best_test_accuracy,
        }
        (dst / "threshold.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        out.append(res)
    return out


def cmd_validate_net(cfg: ExperimentConfig) -> powerflow.PowerFlowSolution:
    model = _network(cfg)
    p, q = grid.nominal_injections(model) if cfg.bus_file is None else (np.zeros(model.n_bus), np.zeros(model.n_bus))
    return powerflow.solve(model, powerflow.InjectionSet(p, q), powerflow.SolverConfig(tol=1e-10))


# ---------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--seed", help="64-bit unsigned seed (overrides PVS_SEED and the config file)")
    common.add_argument("--setting", help="s1|s2|s3|s4, comma list or 'all'")
    common.add_argument("--scheme", help="1|2|3, comma list or 'all'")
    common.add_argument("--algos", help="comma list of lr,knn,rf,gbt,mlp")
    common.add_argument("--out", help="output root directory")
    common.add_argument("--days", help="days of per-minute profiles")
    common.add_argument("--profiles", help="'synthetic' or a directory holding load.csv and pv.csv")
    common.add_argument("--model", help="model file for eval")
    common.add_argument("-v", "--verbose", action="store_true")
    p = argparse.ArgumentParser(prog="pvids", description="PV control-mode attack detection experiments")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="generate clean and missing-data datasets")
    sub.add_parser("train", parents=[common], help="train models on a scheme's training variant")
    sub.add_parser("eval", parents=[common], help="evaluate saved models on a scheme's test split")
    sub.add_parser("matrix", parents=[common], help="settings x schemes x algorithms results matrix")
    sub.add_parser("baseline", parents=[common], help="apparent-loss threshold baseline")
    vn = sub.add_parser("validate-net", parents=[common], help="validate a network case and solve it")
    vn.add_argument("--bus-file", dest="bus_file")
    vn.add_argument("--branch-file", dest="branch_file")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(args)
        if args.command == "gen":
            for path in cmd_gen(cfg):
                print(path)
        elif args.command == "train":
            for path in cmd_train(cfg):
                print(path)
        elif args.command == "eval":
            for row in cmd_eval(cfg):
                print(" ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
        elif args.command == "matrix":
            res = cmd_matrix(cfg)
            print((cfg.out / "report" / "results.txt").read_text(encoding="utf-8"), end="")
            if res.failures:
                return PARTIAL
        elif args.command == "baseline":
            for sid, r in zip(cfg.settings, cmd_baseline(cfg)):
                print(f"{sid}: threshold {r.threshold:.3f} kW ({r.direction}) test accuracy {r.test_accuracy:.4f} "
                      f"best possible {r.best_test_accuracy:.4f}")
        elif args.command == "validate-net":
            sol = cmd_validate_net(cfg)
            vmin = int(np.argmin(sol.vm))
            print(f"ok: loss {sol.total_loss_p:.3f} kW / {sol.total_loss_q:.3f} kvar, "
                  f"min V {sol.vm[vmin]:.5f} pu at bus {vmin + 1}, {sol.iterations} iterations")
    except (ConfigError, grid.NetworkError, telemetry.ProfileError, attack.AttackError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return VALIDATION
    except (telemetry.SimulationError, powerflow.VoltageCollapseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME
    return OK


if __name__ == "__main__":
    sys.exit(main())
