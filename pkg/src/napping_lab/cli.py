"""Command-line front end: ``train``, ``run``, ``sweep`` and ``report``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure,
3 competence target missed.

``NAPPING_LAB_OUTPUT_DIR`` overrides a manifest's ``output_dir`` and
``NAPPING_LAB_WORKERS`` its ``workers``.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import os
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import baseline as B
from . import envs
from . import trial as T

log = logging.getLogger("napping_lab")

SCHEMA_VERSION = 1
OUTPUT_DIR_ENV = "NAPPING_LAB_OUTPUT_DIR"
WORKERS_ENV = "NAPPING_LAB_WORKERS"

EPISODE_COLUMNS = ("trial_id", "domain", "agent_mode", "novelty_json", "episode_index", "reward",
                   "steps", "detected", "principles_open", "principles_closed", "terminal_cause")
TRIAL_COLUMNS = ("trial_id", "domain", "agent_mode", "novelty_json", "seed", "post_median_reward",
                 "post_last10_mean", "failed")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_COMPETENCE = 0, 1, 2, 3

RUN_KEYS = {"schema_version", "domain", "agent_modes", "trials", "master_seed", "policy",
            "novelty", "output_dir", "workers", "keep_stores"}
SWEEP_KEYS = (RUN_KEYS - {"trials", "novelty"}) | {"grid", "trials_per_cell"}
NOVELTY_KEYS = {"middle_half", "base", "bases"}


class ConfigError(ValueError):
    """Bad manifest, config file or arguments (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- config files -------------------------------------------------------------

def read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: no such file")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a JSON object")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"{path}: schema_version must be {SCHEMA_VERSION}, "
                          f"got {doc.get('schema_version')!r}")
    return doc


def _check_keys(doc: dict, allowed: set, where: str):
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")


def load_train_config(domain: str, path=None) -> B.TrainConfig:
    if path is None:
        return B.default_train_config(domain)
    doc = read_json(path)
    if doc.get("domain", domain) != domain:
        raise ConfigError(f"{path}: config is for {doc['domain']}, not {domain}")
    fields = {k: v for k, v in doc.items() if k not in ("schema_version", "domain")}
    if "hidden" in fields:
        fields["hidden"] = tuple(fields["hidden"])
    try:
        return B.default_train_config(domain, **fields)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _int_field(doc, key, default, minimum):
    value = doc.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigError(f"{key} must be an integer >= {minimum}, got {value!r}")
    return value


def parse_manifest(path, kind: str = "run") -> dict:
    """Validate a run or sweep manifest and fill in defaults."""
    doc = read_json(path)
    _check_keys(doc, RUN_KEYS if kind == "run" else SWEEP_KEYS, str(path))
    domain = doc.get("domain")
    if domain not in envs.DOMAINS:
        raise ConfigError(f"{path}: domain must be one of {list(envs.DOMAINS)}, got {domain!r}")
    modes = doc.get("agent_modes", list(T.AGENT_MODES))
    if not modes or not isinstance(modes, list) or any(m not in T.AGENT_MODES for m in modes):
        raise ConfigError(f"{path}: agent_modes must be a non-empty subset of {list(T.AGENT_MODES)}")
    if len(set(modes)) != len(modes):
        raise ConfigError(f"{path}: agent_modes has duplicates")
    base_dir = Path(path).resolve().parent
    out = {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "domain": domain,
        "agent_modes": sorted(modes, key=T.AGENT_MODES.index),
        "master_seed": _int_field(doc, "master_seed", 0, 0),
        "workers": _int_field(doc, "workers", 1, 1),
        "keep_stores": bool(doc.get("keep_stores", False)),
        "policy": str(base_dir / doc["policy"]) if doc.get("policy") else None,
        "output_dir": str(base_dir / doc.get("output_dir", "results")),
    }
    if kind == "run":
        out["trials"] = _int_field(doc, "trials", 10, 1)
        novelty = doc.get("novelty", {})
        if not isinstance(novelty, dict):
            raise ConfigError(f"{path}: novelty must be an object")
        _check_keys(novelty, NOVELTY_KEYS, f"{path}: novelty")
        bases = novelty.get("bases") or ([novelty["base"]] if novelty.get("base") else [])
        if bases and domain != "crossroad":
            raise ConfigError(f"{path}: novelty bases only apply to crossroad")
        for b in bases:
            if b not in envs.NOVELTY_BASES:
                raise ConfigError(f"{path}: unknown crossroad base {b!r}")
        out["novelty"] = {"middle_half": bool(novelty.get("middle_half", False)), "bases": bases}
    else:
        out["trials_per_cell"] = _int_field(doc, "trials_per_cell", 1, 1)
        out["grid"] = _parse_grid(doc.get("grid"), domain, path)
    return out


def _parse_grid(grid, domain, path):
    if not isinstance(grid, dict) or not grid:
        raise ConfigError(f"{path}: sweep needs a non-empty grid object")
    allowed = {"base"} if domain == "crossroad" else set(
        envs.params_to_dict(envs.default_params(domain))) - {"domain"}
    axes = {}
    for name in sorted(grid):
        if name not in allowed:
            raise ConfigError(f"{path}: cannot sweep {name!r} for {domain}")
        spec = grid[name]
        if isinstance(spec, dict) and set(spec) == {"linspace"}:
            lo, hi, n = spec["linspace"]
            values = [float(v) for v in np.linspace(lo, hi, int(n))]
        elif isinstance(spec, list) and spec:
            values = spec
        else:
            raise ConfigError(f"{path}: grid axis {name!r} must be a list or {{\"linspace\": [lo, hi, n]}}")
        if name == "base" and any(v not in envs.NOVELTY_BASES for v in values):
            raise ConfigError(f"{path}: unknown crossroad base in grid")
        axes[name] = values
    return axes


# -- trial planning -------------------------------------------------------------

def _trial_streams(master_seed: int, trial_id: int):
    novelty_ss, trial_ss = np.random.SeedSequence([master_seed, trial_id]).spawn(2)
    return np.random.default_rng(novelty_ss), int(trial_ss.generate_state(1)[0])


def plan_trials(manifest: dict):
    """``[(trial_id, seed, novelty_params)]``; every agent mode replays the same list."""
    domain = manifest["domain"]
    plan = []
    if manifest["kind"] == "run":
        nov = manifest["novelty"]
        for i in range(manifest["trials"]):
            rng, seed = _trial_streams(manifest["master_seed"], i)
            base = nov["bases"][i % len(nov["bases"])] if nov["bases"] else None
            params = envs.sample_novelty(domain, rng, base=base, middle_half=nov["middle_half"])
            plan.append((i, seed, params))
        return plan
    names = list(manifest["grid"])
    cells = list(itertools.product(*(manifest["grid"][n] for n in names)))
    per_cell = manifest["trials_per_cell"]
    for c, values in enumerate(cells):
        for r in range(per_cell):
            trial_id = c * per_cell + r
            rng, seed = _trial_streams(manifest["master_seed"], trial_id)
            setting = dict(zip(names, values))
            if domain == "crossroad":
                params = envs.add_crossroad_noise(envs.crossroad_base(setting["base"]), rng)
            else:
                try:
                    params = envs.PARAM_TYPES[domain](**setting)
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"grid cell {setting}: {exc}") from None
            plan.append((trial_id, seed, params))
    return plan


def novelty_json(params) -> str:
    return json.dumps(envs.params_to_dict(params), sort_keys=True, separators=(",", ":"))


def _bool(flag) -> str:
    return "true" if flag else "false"


def trial_rows(trial_id: int, record: T.TrialRecord):
    cfg = record.config
    nj = novelty_json(cfg.novelty)
    episodes = [
        (trial_id, cfg.domain, cfg.agent_mode, nj, e.episode_index, float(e.total_reward), e.steps,
         _bool(e.detected_flag), e.principles_open, e.principles_closed, e.terminal_cause)
        for e in record.episodes
    ]
    summary = (trial_id, cfg.domain, cfg.agent_mode, nj, cfg.seed, record.post_median_reward,
               record.post_last10_mean, _bool(record.failed))
    return episodes, summary


def _run_job(job):
    trial_id, mode, seed, params, policy, keep_store = job
    record = T.run_trial(T.TrialConfig(params.domain, mode, params, seed=seed), policy,
                         keep_store=keep_store)
    episodes, summary = trial_rows(trial_id, record)
    return trial_id, mode, episodes, summary, record.store


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _resolve_policy(manifest: dict) -> B.BaselinePolicy:
    if manifest["policy"]:
        try:
            policy = B.load(manifest["policy"])
        except (OSError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        if policy.domain != manifest["domain"]:
            raise ConfigError(f"policy {manifest['policy']} is for {policy.domain}")
        return policy
    log.info("no policy given; training a %s baseline with the default config", manifest["domain"])
    return B.train(manifest["domain"])


def execute(manifest: dict) -> Path:
    """Run every (trial, agent mode) pair and write the CSVs. Returns the output directory."""
    out_dir = Path(os.environ.get(OUTPUT_DIR_ENV) or manifest["output_dir"])
    workers = int(os.environ.get(WORKERS_ENV) or manifest["workers"])
    if workers < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1")
    policy = _resolve_policy(manifest)
    plan = plan_trials(manifest)
    jobs = [(tid, mode, seed, params, policy, manifest["keep_stores"])
            for mode in manifest["agent_modes"] for tid, seed, params in plan]
    log.info("%d trials x %d modes on %d worker(s)", len(plan), len(manifest["agent_modes"]), workers)
    if workers == 1:
        results = [_run_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))

    order = {m: i for i, m in enumerate(T.AGENT_MODES)}
    results.sort(key=lambda r: (r[0], order[r[1]]))
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "episodes.csv", EPISODE_COLUMNS, [row for r in results for row in r[2]])
    _write_csv(out_dir / "trials.csv", TRIAL_COLUMNS, [r[3] for r in results])
    resolved = {k: v for k, v in manifest.items() if k not in ("output_dir", "workers")}
    (out_dir / "run.json").write_text(json.dumps(resolved, indent=1, sort_keys=True) + "\n")
    if manifest["keep_stores"]:
        store_dir = out_dir / "stores"
        store_dir.mkdir(exist_ok=True)
        for tid, mode, _, _, store in results:
            if store is not None:
                (store_dir / f"trial{tid:05d}_{mode}.json").write_text(json.dumps(store) + "\n")
    return out_dir


# -- report -------------------------------------------------------------------

def _read_csv(path: Path, columns):
    if not path.is_file():
        return []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != tuple(columns):
            raise ConfigError(f"{path}: unexpected header {reader.fieldnames}")
        return list(reader)


def build_report(results_dir) -> dict:
    """Median/mean curves per mode, failure counts and principle statistics."""
    results_dir = Path(results_dir)
    trials = _read_csv(results_dir / "trials.csv", TRIAL_COLUMNS)
    episodes = _read_csv(results_dir / "episodes.csv", EPISODE_COLUMNS)
    if not trials or not episodes:
        raise ConfigError(f"no data in {results_dir}")
    domains = {r["domain"] for r in trials}
    if len(domains) != 1:
        raise ConfigError(f"{results_dir}: mixed domains {sorted(domains)}")
    domain = domains.pop()

    curves, finals, modes = {}, {}, {}
    for row in episodes:
        key = (row["agent_mode"], int(row["episode_index"]))
        curves.setdefault(key, []).append(float(row["reward"]))
        final = finals.setdefault((row["agent_mode"], row["trial_id"]), [None, None])
        idx = int(row["episode_index"])
        if final[0] is None or idx > final[0]:
            final[0] = idx
            final[1] = (int(row["principles_open"]), int(row["principles_closed"]))
    for row in trials:
        modes.setdefault(row["agent_mode"], []).append(row)

    report = {"schema_version": SCHEMA_VERSION, "domain": domain, "modes": {}, "curves": {}}
    for mode in sorted(modes, key=T.AGENT_MODES.index):
        idx = sorted(i for m, i in curves if m == mode)
        med = [statistics.median(curves[(mode, i)]) for i in idx]
        mean = [statistics.fmean(curves[(mode, i)]) for i in idx]
        report["curves"][mode] = {"episode_index": idx, "median": med, "mean": mean,
                                  "n": [len(curves[(mode, i)]) for i in idx]}
        post = [j for j, i in enumerate(idx) if i >= 0]
        counts = [finals[(mode, r["trial_id"])][1] for r in modes[mode]]
        totals = [o + c for o, c in counts]
        report["modes"][mode] = {
            "n_trials": len(modes[mode]),
            "failures": sum(r["failed"] == "true" for r in modes[mode]),
            "median_post_median_reward": statistics.median(float(r["post_median_reward"]) for r in modes[mode]),
            "first5_median": statistics.fmean(med[j] for j in post[:5]) if post else None,
            "last10_median": statistics.fmean(med[j] for j in post[-10:]) if post else None,
            "principles_mean": statistics.fmean(totals),
            "principles_max": max(totals),
            "principles_open_mean": statistics.fmean(o for o, _ in counts),
            "principles_closed_mean": statistics.fmean(c for _, c in counts),
        }
    frozen = report["modes"].get("frozen", {}).get("failures")
    napping = report["modes"].get("napping", {}).get("failures")
    report["failure_reduction_pct"] = (
        100.0 * (frozen - napping) / frozen if frozen and napping is not None else None)
    return report


def write_report(report: dict, results_dir) -> None:
    results_dir = Path(results_dir)
    for mode, curve in report["curves"].items():
        rows = zip(curve["episode_index"], curve["median"], curve["mean"], curve["n"])
        _write_csv(results_dir / f"curve_{mode}.csv",
                   ("episode_index", "median_reward", "mean_reward", "n_trials"), rows)
    summary = {k: v for k, v in report.items() if k != "curves"}
    (results_dir / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")


def format_table(report: dict) -> str:
    lines = [f"domain: {report['domain']}",
             f"{'mode':<10}{'trials':>7}{'failed':>8}{'first5':>9}{'last10':>9}{'principles':>12}"]
    for mode, s in report["modes"].items():
        lines.append(f"{mode:<10}{s['n_trials']:>7}{s['failures']:>8}{s['first5_median']:>9.2f}"
                     f"{s['last10_median']:>9.2f}{s['principles_mean']:>12.1f}")
    pct = report["failure_reduction_pct"]
    lines.append("failure reduction vs frozen: " + ("n/a" if pct is None else f"{pct:.1f}%"))
    return "\n".join(lines)


# -- commands -----------------------------------------------------------------

def cmd_train(args) -> int:
    out = Path(args.out)
    if not out.parent.is_dir() or not os.access(out.parent, os.W_OK):
        print(f"error: cannot write {out}", file=sys.stderr)
        return EXIT_RUNTIME
    config = load_train_config(args.domain, args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    try:
        policy = B.train(args.domain, config)
    except B.CompetenceError as exc:
        B.save(exc.policy, out)
        print(f"competence target missed: {exc.stats}; best policy written to {out}", file=sys.stderr)
        return EXIT_COMPETENCE
    B.save(policy, out)
    print(f"{args.domain}: train_score {policy.train_score:.3f} -> {out}")
    return EXIT_OK


def cmd_run(args, kind="run") -> int:
    manifest = parse_manifest(args.manifest, kind)
    try:
        out_dir = execute(manifest)
    except B.CompetenceError as exc:
        print(f"baseline below competence target: {exc.stats}", file=sys.stderr)
        return EXIT_COMPETENCE
    print(f"wrote {out_dir / 'episodes.csv'} and {out_dir / 'trials.csv'}")
    return EXIT_OK


def cmd_report(args) -> int:
    report = build_report(args.results_dir)
    write_report(report, args.results_dir)
    print(format_table(report))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="napping-lab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a baseline policy and write its weight file")
    p.add_argument("domain", choices=envs.DOMAINS)
    p.add_argument("--out", required=True, help="weight file to write")
    p.add_argument("--config", help="JSON training config (schema_version 1)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", help="run sampled-novelty trials from a manifest")
    p.add_argument("manifest")
    p.set_defaults(func=lambda a: cmd_run(a, "run"))

    p = sub.add_parser("sweep", help="run trials over an explicit parameter grid")
    p.add_argument("manifest")
    p.set_defaults(func=lambda a: cmd_run(a, "sweep"))

    p = sub.add_parser("report", help="summarise a results directory")
    p.add_argument("results_dir")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        log.debug("unhandled error", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
