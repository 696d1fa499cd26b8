"""Command-line pipeline: gen-data, train, optimize, eval, rerun.

Every command writes its primary outputs plus a run manifest
(`<out>.run.json`) holding the resolved config; `seqtuner rerun MANIFEST`
replays the command from that config.  Outputs contain no timestamps, so a
rerun on the same machine reproduces them byte for byte (the manifest's own
elapsed-seconds field is the one thing that varies).

Exit codes: 0 success, 2 usage, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys
import time
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .acquisition import AcqKind, AcquisitionSpec, suggest_with_acquisition
from .bbob import TRAIN_FAMILIES, Family, evaluate, task_from_descriptor
from .core import (
    REGISTERED_ALGORITHMS,
    Goal,
    Metadata,
    ParameterConfig,
    ParamKind,
    Trial,
    normalize_param,
    set_index,
)
from .data import (
    GenerationSpec,
    StudyParseError,
    _canonical_json,
    generate,
    iter_studies,
    truncate_study_tokens,
)
from .metrics import calibration_cdf, ece, log_pred_likelihood, performance_profile
from .policies import make_policy
from .tokenizer import Vocab

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

OUT_DIR_ENV = "SEQTUNER_OUT_DIR"

_POLICY_ALIASES = {"random": "random_search", "grid": "grid_search"}


class CliError(Exception):
    def __init__(self, code: int, message: str) -> None:
        super().__init__(message)
        self.code = code


def _resolve_out(path: str) -> str:
    base = os.environ.get(OUT_DIR_ENV)
    if base and not os.path.isabs(path):
        return os.path.join(base, path)
    return path


def _fmt(x: float) -> str:
    return format(float(x) + 0.0, ".17g")


def _policy_name(name: str) -> str:
    name = _POLICY_ALIASES.get(name, name.replace("-", "_"))
    if name not in REGISTERED_ALGORITHMS:
        raise CliError(EXIT_USAGE, f"unknown policy {name!r}; choices: {sorted(REGISTERED_ALGORITHMS)}")
    return name


def _write_run_manifest(command: str, config: dict, outputs: list[str], t0: float, results: dict | None = None) -> str:
    manifest = {
        "format": "seqtuner-run-v1",
        "command": command,
        "config": config,
        "seeds": {k: v for k, v in config.items() if "seed" in k},
        "versions": {
            "seqtuner": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "outputs": outputs,
        "results": results or {},
        "elapsed_seconds": round(time.perf_counter() - t0, 3),
    }
    path = outputs[0] + ".run.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _load_json_file(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError as exc:
        raise CliError(EXIT_DATA, str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_DATA, f"{path}: {exc}") from exc


def _load_studies(path: str):
    try:
        return list(iter_studies(path))
    except FileNotFoundError as exc:
        raise CliError(EXIT_DATA, str(exc)) from exc


def _load_task(spec: str):
    if spec.lstrip().startswith("{"):
        try:
            desc = json.loads(spec)
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_DATA, f"bad inline task JSON: {exc}") from exc
    else:
        desc = _load_json_file(spec)
    try:
        return task_from_descriptor(desc)
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(EXIT_DATA, f"bad task descriptor: {exc}") from exc


def _unit_position(cfg: ParameterConfig, value) -> float:
    """Value's position in [0, 1), matching the token-to-unit map."""
    if cfg.kind in (ParamKind.DOUBLE, ParamKind.INTEGER):
        return float(normalize_param(value, cfg))
    return (set_index(value, cfg) + 0.5) / cfg.set_size


# ---------------------------------------------------------------------------
# gen-data

def run_gen_data(cfg: dict) -> list[str]:
    t0 = time.perf_counter()
    try:
        spec = GenerationSpec(
            policies=tuple(_policy_name(p) for p in cfg["policies"]),
            num_studies=cfg["num_studies"],
            num_trials=cfg["trials"],
            seed=cfg["seed"],
            dim_range=tuple(cfg["dim_range"]),
            families=tuple(Family(n) for n in cfg["families"]),
            force_continuous=cfg["force_continuous"],
            forced_noise=cfg["forced_noise"],
        )
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from exc
    out = _resolve_out(cfg["out"])
    manifest = generate(spec, out, workers=cfg["workers"])
    outputs = [out, out + ".manifest.json"]
    _write_run_manifest("gen-data", cfg, outputs, t0, results={
        "studies_written": manifest["studies_written"],
        "studies_skipped": manifest["studies_skipped"],
    })
    return outputs


# ---------------------------------------------------------------------------
# train

def run_train(cfg: dict) -> list[str]:
    import torch

    from .model import ModelConfig, TrainConfig, TrainState, check_study_fits, save_checkpoint, train

    t0 = time.perf_counter()
    overrides = _load_json_file(cfg["config"]) if cfg["config"] else {}
    vocab = Vocab()
    try:
        model_cfg = ModelConfig(vocab_size=vocab.size, **overrides.get("model", {}))
        train_cfg = TrainConfig(steps=cfg["steps"], data_seed=cfg["seed"], **overrides.get("train", {}))
    except (TypeError, ValueError) as exc:
        raise CliError(EXIT_USAGE, f"bad config: {exc}") from exc

    train_studies = [truncate_study_tokens(s, model_cfg.max_history_len) for _, s, _ in _load_studies(cfg["data"])]
    val_studies = [truncate_study_tokens(s, model_cfg.max_history_len) for _, s, _ in _load_studies(cfg["val_data"])]
    if not train_studies:
        raise CliError(EXIT_DATA, f"{cfg['data']}: no studies")
    if not val_studies:
        raise CliError(EXIT_DATA, f"{cfg['val_data']}: no studies")
    try:
        for s in train_studies + val_studies:
            check_study_fits(s, model_cfg, vocab)
    except ValueError as exc:
        raise CliError(EXIT_DATA, str(exc)) from exc

    state = TrainState()
    if cfg["resume"]:
        try:
            blob = torch.load(cfg["resume"], weights_only=True)
        except FileNotFoundError as exc:
            raise CliError(EXIT_DATA, str(exc)) from exc
        state = TrainState(**blob)

    try:
        model, records = train(model_cfg, train_cfg, train_studies, val_studies, vocab, state=state)
    except ValueError as exc:
        raise CliError(EXIT_NUMERIC, str(exc)) from exc

    out = _resolve_out(cfg["out"])
    save_checkpoint(model, out, extra={"steps": train_cfg.steps, "best_val": state.best_val})
    torch.save(
        {
            "step": state.step,
            "best_val": state.best_val,
            "stale": state.stale,
            "model_state": state.model_state,
            "opt_state": state.opt_state,
            "best_state": state.best_state,
        },
        out + ".state.pt",
    )
    log_path = out + ".losses.tsv"
    with open(log_path, "w", encoding="utf-8") as f:
        f.write("step\ttrain_loss\tval_loss\n")
        for r in records:
            val = "" if r.val_loss is None else _fmt(r.val_loss)
            f.write(f"{r.step}\t{_fmt(r.train_loss)}\t{val}\n")
    outputs = [out, out + ".state.pt", log_path]
    _write_run_manifest("train", cfg, outputs, t0, results={
        "final_step": state.step,
        "best_val_loss": state.best_val,
    })
    return outputs


# ---------------------------------------------------------------------------
# optimize

def run_optimize(cfg: dict) -> list[str]:
    t0 = time.perf_counter()
    if cfg["acq"] != "none" and not cfg["checkpoint"]:
        raise CliError(EXIT_USAGE, "--acq needs --checkpoint (acquisition scores come from the model)")
    task = _load_task(cfg["task"])
    rng_eval = np.random.default_rng(np.random.SeedSequence((cfg["seed"], 1)))

    session = None
    policy = None
    if cfg["checkpoint"]:
        from .decode import SuggestSession
        from .model import load_checkpoint

        try:
            model, _ = load_checkpoint(cfg["checkpoint"])
        except FileNotFoundError as exc:
            raise CliError(EXIT_DATA, str(exc)) from exc
        except ValueError as exc:
            raise CliError(EXIT_DATA, f"{cfg['checkpoint']}: {exc}") from exc
        metadata = Metadata(
            name=f"optimize-{task.family.value}-d{task.dimension}",
            metric_name="objective",
            goal=Goal.MAXIMIZE,
            algorithm=cfg["algorithm"],
            space=task.space,
        )
        budget = (task.dimension + 3) * cfg["trials"] - 1
        if budget > model.cfg.max_history_len:
            raise CliError(
                EXIT_USAGE,
                f"{cfg['trials']} trials need {budget} history tokens; model caps at {model.cfg.max_history_len}",
            )
        session = SuggestSession(model, metadata, seed=cfg["seed"])
        acq_spec = None
        if cfg["acq"] != "none":
            acq_spec = AcquisitionSpec(
                kind=AcqKind(cfg["acq"]), ucb_quantile=cfg["ucb_quantile"], n_candidates=cfg["M"]
            )
    else:
        policy = make_policy(_policy_name(cfg["policy"]), task.space, seed=cfg["seed"])

    trials: list[Trial] = []
    rows: list[str] = []
    best = -math.inf
    for t in range(cfg["trials"]):
        if policy is not None:
            x = policy.suggest(trials)
        elif acq_spec is None:
            x = session.suggest()
        else:
            x = suggest_with_acquisition(session, acq_spec)
        y = evaluate(task, x, rng_eval)
        if not math.isfinite(y):
            raise CliError(EXIT_NUMERIC, f"trial {t}: objective value {y} is not finite")
        trials.append(Trial(tuple(x), y))
        if session is not None:
            session.observe(x, y)
        best = max(best, y)
        rows.append(f"{t}\t{_canonical_json(list(x))}\t{_fmt(y)}\t{_fmt(best)}")

    out = _resolve_out(cfg["out"])
    with open(out, "w", encoding="utf-8") as f:
        f.write("trial\tx\ty\tbest_so_far\n")
        for row in rows:
            f.write(row + "\n")
    outputs = [out]
    _write_run_manifest("optimize", cfg, outputs, t0, results={"best_y": best})
    return outputs


# ---------------------------------------------------------------------------
# eval

def _require(cfg: dict, key: str, mode: str) -> None:
    if not cfg.get(key):
        flag = "--" + key.replace("_", "-")
        raise CliError(EXIT_USAGE, f"eval mode {mode!r} needs {flag}")


def _decile_fold(bins: np.ndarray, deciles: int) -> np.ndarray:
    """Collapse per-token mass onto deciles of the unit interval."""
    n = len(bins)
    out = np.zeros(deciles)
    centers = (np.arange(n) + 0.5) / n
    idx = np.minimum((centers * deciles).astype(int), deciles - 1)
    np.add.at(out, idx, bins)
    return out


def run_eval_imitation(cfg: dict, t0: float) -> list[str]:
    _require(cfg, "data", "imitation")
    if bool(cfg["checkpoint"]) == bool(cfg["imitator_policy"]):
        raise CliError(EXIT_USAGE, "eval mode 'imitation' needs exactly one of --checkpoint / --imitator-policy")
    deciles = cfg["deciles"]
    if deciles < 2:
        raise CliError(EXIT_USAGE, "--deciles must be >= 2")
    p_idx = cfg["param_index"]
    studies = [s for _, s, _ in _load_studies(cfg["data"]) if len(s.trials) > 0]
    if not studies:
        raise CliError(EXIT_DATA, f"{cfg['data']}: no non-empty studies")
    if any(p_idx >= s.metadata.space.dimension for s in studies):
        raise CliError(EXIT_USAGE, f"--param-index {p_idx} exceeds a study's dimension")
    cap = cfg["max_trials"] or None

    data_mass = np.zeros(deciles)
    imit_mass = np.zeros(deciles)
    n_obs = 0

    if cfg["checkpoint"]:
        if p_idx != 0:
            raise CliError(EXIT_USAGE, "model imitation measures the first parameter; use --param-index 0")
        from .decode import SuggestSession
        from .model import load_checkpoint

        model, _ = load_checkpoint(cfg["checkpoint"])
        studies = [truncate_study_tokens(s, model.cfg.max_history_len) for s in studies]

    for si, study in enumerate(studies):
        space = study.metadata.space
        trials = study.trials[:cap] if cap else study.trials
        if cfg["checkpoint"]:
            session = SuggestSession(model, study.metadata, seed=cfg["seed"])
            for trial in trials:
                imit_mass += _decile_fold(session.next_param_bins(), deciles)
                u = _unit_position(space[p_idx], trial.x[p_idx])
                d = min(int(u * deciles), deciles - 1)
                data_mass[d] += 1.0
                n_obs += 1
                session.observe(trial.x, trial.y)
        else:
            imitator = make_policy(
                _policy_name(cfg["imitator_policy"]), space,
                seed=int(np.random.default_rng(np.random.SeedSequence((cfg["seed"], si))).integers(2**31)),
            )
            for t, trial in enumerate(trials):
                x_imit = imitator.suggest(list(trials[:t]))
                u_i = _unit_position(space[p_idx], x_imit[p_idx])
                imit_mass[min(int(u_i * deciles), deciles - 1)] += 1.0
                u = _unit_position(space[p_idx], trial.x[p_idx])
                data_mass[min(int(u * deciles), deciles - 1)] += 1.0
                n_obs += 1

    data_mass /= n_obs
    imit_mass /= n_obs
    mae = float(np.abs(data_mass - imit_mass).mean())

    out = _resolve_out(cfg["out"])
    with open(out, "w", encoding="utf-8") as f:
        f.write("decile\tdata_mass\timitator_mass\n")
        for d in range(deciles):
            f.write(f"{d}\t{_fmt(data_mass[d])}\t{_fmt(imit_mass[d])}\n")
    print(f"imitation decile MAE: {mae:.6f} over {n_obs} observations")
    outputs = [out]
    _write_run_manifest("eval", cfg, outputs, t0, results={"decile_mae": mae, "n_observations": n_obs})
    return outputs


def run_eval_predict(cfg: dict, t0: float) -> list[str]:
    sources = [bool(cfg["checkpoint"]), bool(cfg["gp"]), bool(cfg["pred_file"])]
    if sum(sources) != 1:
        raise CliError(EXIT_USAGE, "eval mode 'predict' needs exactly one of --checkpoint / --gp / --pred-file")

    groups: list[list[tuple]] = []  # (dist, x, y) per held-out query
    if cfg["pred_file"]:
        current: dict[int, list[tuple]] = {}
        try:
            with open(cfg["pred_file"], "r", encoding="utf-8") as f:
                for lineno, line in enumerate(f, start=1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        rec = json.loads(line)
                        dist = _pred_record_dist(rec)
                        current.setdefault(int(rec.get("group", 0)), []).append((dist, None, float(rec["y"])))
                    except (KeyError, TypeError, ValueError) as exc:
                        raise CliError(EXIT_DATA, f"{cfg['pred_file']}: line {lineno}: {exc}") from exc
        except FileNotFoundError as exc:
            raise CliError(EXIT_DATA, str(exc)) from exc
        groups = [current[g] for g in sorted(current)]
    else:
        _require(cfg, "data", "predict")
        studies = [s for _, s, _ in _load_studies(cfg["data"]) if len(s.trials) >= 2]
        if cfg["max_studies"]:
            studies = studies[: cfg["max_studies"]]
        if not studies:
            raise CliError(EXIT_DATA, f"{cfg['data']}: need studies with at least 2 trials")
        if cfg["checkpoint"]:
            from .decode import SuggestSession
            from .model import load_checkpoint

            model, _ = load_checkpoint(cfg["checkpoint"])
            # keep one token of headroom: each prediction probe appends
            # pipe + x tokens + star past the observed history
            probe = max(s.metadata.space.dimension for s in studies) + 2
            studies = [
                s2 for s2 in (
                    truncate_study_tokens(s, model.cfg.max_history_len - probe) for s in studies
                )
                if len(s2.trials) >= 2
            ]
            if not studies:
                raise CliError(EXIT_DATA, "no study fits the model's token budget with 2+ trials")
        for si, study in enumerate(studies):
            k = cfg["context_trials"] or (len(study.trials) - 1)
            k = max(1, min(k, len(study.trials) - 1))
            context, queries = study.trials[:k], study.trials[k:]
            group: list[tuple] = []
            if cfg["checkpoint"]:
                session = SuggestSession(model, study.metadata, seed=cfg["seed"])
                for trial in context:
                    session.observe(trial.x, trial.y)
                for q in queries:
                    group.append((session.predict_function_dist(q.x), q.x, q.y))
            else:
                group.extend(_gp_query_dists(study.metadata.space, context, queries, cfg["seed"], si))
            groups.append(group)

    flat = [item for g in groups for item in g]
    summary = log_pred_likelihood(lambda dist, _x: dist, groups)
    dists = [d for d, _, _ in flat]
    ys = [y for _, _, y in flat]
    in_support = [(d, y) for d, y in zip(dists, ys) if d.support[0] <= y <= d.support[1]]
    n_outside = len(flat) - len(in_support)
    if not in_support:
        raise CliError(EXIT_NUMERIC, "no held-out outcome falls inside its predictive support")
    try:
        ece_pct = ece([d for d, _ in in_support], [y for _, y in in_support])
    except ValueError as exc:
        raise CliError(EXIT_NUMERIC, str(exc)) from exc
    _, _, _, sup = calibration_cdf(dists, ys)

    metrics = {
        "loglik_mean": summary.mean,
        "loglik_stderr": summary.stderr,
        "n_zero_density": summary.n_zero_density,
        "n_queries": summary.n_total,
        "ece_percent": ece_pct,
        "n_outside_support": n_outside,
        "pit_sup_deviation": sup,
    }
    out = _resolve_out(cfg["out"])
    with open(out, "w", encoding="utf-8") as f:
        f.write("metric\tvalue\n")
        for name, value in metrics.items():
            f.write(f"{name}\t{_fmt(value)}\n")
    print(f"log-lik {summary.mean:.4f} +- {summary.stderr:.4f}; ECE {ece_pct:.3f}%; PIT sup {sup:.4f}")
    outputs = [out]
    _write_run_manifest("eval", cfg, outputs, t0, results=metrics)
    return outputs


def _pred_record_dist(rec: dict):
    from .decode import PiecewiseConstDist

    lo, hi = rec["support"]
    return PiecewiseConstDist((float(lo), float(hi)), np.asarray(rec["bins"], dtype=float),
                              log_scale=bool(rec.get("log", False)))


def _gp_query_dists(space, context, queries, seed: int, study_index: int) -> list[tuple]:
    from . import gp

    inputs = [
        [_unit_position(cfg, v) for cfg, v in zip(space.parameters, t.x)] for t in context
    ]
    targets = [t.y for t in context]
    rng = np.random.default_rng(np.random.SeedSequence((seed, study_index)))
    post = gp.fit(inputs, targets, restarts=4, rng=rng)
    ys_all = [t.y for t in context] + [q.y for q in queries]
    pad = max(1e-6, 0.5 * (max(ys_all) - min(ys_all)))
    support = (min(ys_all) - pad, max(ys_all) + pad)
    out = []
    for q in queries:
        xq = [_unit_position(cfg, v) for cfg, v in zip(space.parameters, q.x)]
        out.append((gp.predictive_dist(post, xq, support), q.x, q.y))
    return out


def run_eval_profile(cfg: dict, t0: float) -> list[str]:
    if not cfg["curves"] or len(cfg["curves"]) < 2:
        raise CliError(EXIT_USAGE, "eval mode 'profile' needs two or more --curves NAME=PATH")
    results: dict[str, np.ndarray] = {}
    for item in cfg["curves"]:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise CliError(EXIT_USAGE, f"bad --curves value {item!r}; expected NAME=PATH")
        if name in results:
            raise CliError(EXIT_USAGE, f"duplicate curves name {name!r}")
        try:
            results[name] = np.loadtxt(path, delimiter="\t", ndmin=2)
        except FileNotFoundError as exc:
            raise CliError(EXIT_DATA, str(exc)) from exc
        except ValueError as exc:
            raise CliError(EXIT_DATA, f"{path}: {exc}") from exc
    try:
        profile = performance_profile(results, cfg["rule"], cfg["anchor_trial"])
    except ValueError as exc:
        raise CliError(EXIT_DATA, str(exc)) from exc

    names = list(results)
    horizon = len(profile[names[0]])
    out = _resolve_out(cfg["out"])
    with open(out, "w", encoding="utf-8") as f:
        f.write("trial\t" + "\t".join(names) + "\n")
        for t in range(horizon):
            f.write(str(t) + "\t" + "\t".join(_fmt(profile[m][t]) for m in names) + "\n")
    outputs = [out]
    final = {m: float(profile[m][-1]) for m in names}
    _write_run_manifest("eval", cfg, outputs, t0, results={"final_fractions": final})
    return outputs


def run_eval(cfg: dict) -> list[str]:
    t0 = time.perf_counter()
    mode = cfg["mode"]
    if mode == "imitation":
        return run_eval_imitation(cfg, t0)
    if mode == "predict":
        return run_eval_predict(cfg, t0)
    return run_eval_profile(cfg, t0)


# ---------------------------------------------------------------------------
# argument plumbing

_DISPATCH: dict[str, Callable[[dict], list[str]]] = {
    "gen-data": run_gen_data,
    "train": run_train,
    "optimize": run_optimize,
    "eval": run_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqtuner", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate an offline study corpus")
    g.add_argument("--benchmark", choices=["bbob"], default="bbob")
    g.add_argument("--families", nargs="+", default=[f.value for f in TRAIN_FAMILIES],
                   choices=[f.value for f in Family])
    g.add_argument("--policies", nargs="+", default=sorted(REGISTERED_ALGORITHMS))
    g.add_argument("--num-studies", type=int, default=1)
    g.add_argument("--trials", type=int, default=300)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--dim-range", nargs=2, type=int, default=[1, 20], metavar=("LO", "HI"))
    g.add_argument("--force-continuous", action="store_true")
    g.add_argument("--forced-noise", default=None, help='"none" or "kind:scale" to pin the noise setting')
    g.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train the sequence model on a study corpus")
    t.add_argument("--data", required=True)
    t.add_argument("--val-data", required=True)
    t.add_argument("--steps", type=int, default=1000)
    t.add_argument("--config", default=None, help='JSON file with {"model": {...}, "train": {...}} overrides')
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--resume", default=None, help="training-state file from a previous run")
    t.add_argument("--out", required=True)

    o = sub.add_parser("optimize", help="run one tuning trajectory on a task")
    src = o.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", default=None)
    src.add_argument("--policy", default=None)
    o.add_argument("--task", required=True, help="task descriptor: inline JSON or a JSON file path")
    o.add_argument("--trials", type=int, default=50)
    o.add_argument("--acq", choices=["none", "ei", "pi", "ucb", "ts"], default="none")
    o.add_argument("--M", type=int, default=100, help="candidate count for acquisition reranking")
    o.add_argument("--ucb-quantile", type=float, default=0.9)
    o.add_argument("--algorithm", default="", help="algorithm name to condition the model on")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--out", required=True)

    e = sub.add_parser("eval", help="metric tables: imitation, predict, or profile")
    e.add_argument("--mode", choices=["imitation", "predict", "profile"], required=True)
    e.add_argument("--data", default=None)
    e.add_argument("--checkpoint", default=None)
    e.add_argument("--imitator-policy", default=None)
    e.add_argument("--param-index", type=int, default=0)
    e.add_argument("--deciles", type=int, default=10)
    e.add_argument("--max-trials", type=int, default=None)
    e.add_argument("--gp", action="store_true", help="GP baseline predictor (predict mode)")
    e.add_argument("--pred-file", default=None, help="precomputed predictive distributions (JSON lines)")
    e.add_argument("--context-trials", type=int, default=None)
    e.add_argument("--max-studies", type=int, default=None)
    e.add_argument("--curves", action="append", default=None, metavar="NAME=PATH")
    e.add_argument("--rule", choices=["best90", "median"], default="best90")
    e.add_argument("--anchor-trial", type=int, default=50)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)

    r = sub.add_parser("rerun", help="replay a command from its run manifest")
    r.add_argument("manifest")
    return parser


def _config_from_args(args: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k != "command"}
    return {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items()}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK

    if args.command == "rerun":
        manifest = _load_json_file_or_exit(args.manifest)
        if manifest is None:
            return EXIT_DATA
        command = manifest.get("command")
        if command not in _DISPATCH:
            print(f"error: manifest names unknown command {command!r}", file=sys.stderr)
            return EXIT_DATA
        return _run(command, manifest.get("config", {}))
    return _run(args.command, _config_from_args(args))


def _load_json_file_or_exit(path: str) -> dict | None:
    try:
        return _load_json_file(path)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return None


def _run(command: str, config: dict) -> int:
    try:
        _DISPATCH[command](config)
        return EXIT_OK
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except StudyParseError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, FloatingPointError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
