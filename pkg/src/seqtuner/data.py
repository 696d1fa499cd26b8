"""Offline study-corpus generation, persistence, and splits.

Studies are stored one-per-line as JSON records with a canonical key order:

    {"metadata": {"name", "metric_name", "goal", "algorithm", "free_text",
                  "space": [{"name", "kind", ...}, ...],
                  "task": {...}},        # optional regeneration descriptor
     "trials": [{"x": [...], "y": ...}, ...]}

Floats are rendered with 17 significant digits so a parsed line re-serializes
to the identical bytes (format v1).
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .bbob import TRAIN_FAMILIES, Family, evaluate, sample_task
from .core import (
    REGISTERED_ALGORITHMS,
    Goal,
    Metadata,
    ParameterConfig,
    ParamKind,
    Scale,
    SearchSpace,
    Study,
    Trial,
)
from .policies import make_policy
from .tokenizer import Vocab, build_loss_weights, sample_augmentation, tokenize_study

logger = logging.getLogger(__name__)

FORMAT_NAME = "seqtuner-studies-v1"

_DEFAULT_VOCAB = Vocab()


class StudyParseError(ValueError):
    """A study file line that does not parse; message names the line."""


# ---------------------------------------------------------------------------
# canonical JSON rendering

def _canonical_json(obj) -> str:
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, float):
        if not math.isfinite(obj):
            raise ValueError(f"non-finite float {obj!r} cannot be serialized")
        return format(obj + 0.0, ".17g")  # +0.0 drops the sign of -0.0
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_canonical_json(v) for v in obj) + "]"
    if isinstance(obj, dict):
        return "{" + ",".join(f"{json.dumps(str(k))}:{_canonical_json(v)}" for k, v in obj.items()) + "}"
    raise TypeError(f"unsupported type in study record: {type(obj).__name__}")


def _param_record(cfg: ParameterConfig) -> dict:
    rec: dict = {"name": cfg.name, "kind": cfg.kind.name}
    if cfg.kind in (ParamKind.DOUBLE, ParamKind.INTEGER):
        rec["min"] = cfg.min_value
        rec["max"] = cfg.max_value
        rec["scale"] = cfg.scale.name
    elif cfg.kind is ParamKind.DISCRETE:
        rec["values"] = list(cfg.values)
    else:
        rec["categories"] = list(cfg.categories)
    return rec


def _param_from_record(rec: dict) -> ParameterConfig:
    kind = ParamKind[rec["kind"]]
    if kind in (ParamKind.DOUBLE, ParamKind.INTEGER):
        return ParameterConfig(
            rec["name"], kind,
            min_value=rec["min"], max_value=rec["max"],
            scale=Scale[rec["scale"]],
        )
    if kind is ParamKind.DISCRETE:
        return ParameterConfig(rec["name"], kind, values=tuple(rec["values"]))
    return ParameterConfig(rec["name"], kind, categories=tuple(rec["categories"]))


def serialize_study(study: Study, task_descriptor: dict | None = None) -> str:
    """One canonical JSON line (no trailing newline)."""
    meta: dict = {
        "name": study.metadata.name,
        "metric_name": study.metadata.metric_name,
        "goal": study.metadata.goal.name,
        "algorithm": study.metadata.algorithm,
        "free_text": study.metadata.free_text,
        "space": [_param_record(p) for p in study.metadata.space.parameters],
    }
    if task_descriptor is not None:
        meta["task"] = task_descriptor
    record = {
        "metadata": meta,
        "trials": [{"x": list(t.x), "y": t.y} for t in study.trials],
    }
    return _canonical_json(record)


def parse_study_line(line: str) -> tuple[Study, dict | None]:
    """Inverse of serialize_study.  Raises ValueError on malformed records."""
    record = json.loads(line)
    meta_rec = record["metadata"]
    space = SearchSpace(tuple(_param_from_record(p) for p in meta_rec["space"]))
    metadata = Metadata(
        name=meta_rec["name"],
        metric_name=meta_rec["metric_name"],
        goal=Goal[meta_rec["goal"]],
        algorithm=meta_rec["algorithm"],
        space=space,
        free_text=meta_rec.get("free_text", ""),
    )
    trials = tuple(Trial(tuple(t["x"]), t["y"]) for t in record["trials"])
    return Study(metadata, trials), meta_rec.get("task")


def iter_studies(path: str) -> Iterator[tuple[int, Study, dict | None]]:
    """Stream (line_number, study, task_descriptor) from a study file."""
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                study, desc = parse_study_line(line)
            except (ValueError, KeyError, TypeError) as exc:
                raise StudyParseError(f"{path}: line {lineno}: {exc}") from exc
            yield lineno, study, desc


# ---------------------------------------------------------------------------
# generation

@dataclass(frozen=True)
class GenerationSpec:
    """What to generate: a uniform policy mixture over randomized tasks."""

    policies: tuple[str, ...] = tuple(sorted(REGISTERED_ALGORITHMS))
    num_studies: int = 1
    num_trials: int = 300
    seed: int = 0
    dim_range: tuple[int, int] = (1, 20)
    families: tuple[Family, ...] = TRAIN_FAMILIES
    force_continuous: bool = False
    forced_noise: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "policies", tuple(self.policies))
        object.__setattr__(self, "families", tuple(self.families))
        object.__setattr__(self, "dim_range", tuple(self.dim_range))
        if self.num_studies < 1 or self.num_trials < 1:
            raise ValueError("num_studies and num_trials must be >= 1")
        if not self.policies:
            raise ValueError("policies must not be empty")
        unknown = set(self.policies) - REGISTERED_ALGORITHMS
        if unknown:
            raise ValueError(f"unregistered policies: {sorted(unknown)}")
        if not self.families:
            raise ValueError("families must not be empty")
        if len(self.dim_range) != 2 or self.dim_range[0] < 1 or self.dim_range[0] > self.dim_range[1]:
            raise ValueError("dim_range must be (lo, hi) with 1 <= lo <= hi")

    def config_dict(self) -> dict:
        return {
            "policies": list(self.policies),
            "num_studies": self.num_studies,
            "num_trials": self.num_trials,
            "seed": self.seed,
            "dim_range": list(self.dim_range),
            "families": [f.value for f in self.families],
            "force_continuous": self.force_continuous,
            "forced_noise": self.forced_noise,
        }

    def digest(self) -> str:
        return hashlib.sha256(_canonical_json(self.config_dict()).encode("utf-8")).hexdigest()


def _make_study(spec: GenerationSpec, index: int) -> tuple[str | None, str, str | None]:
    """Generate study `index`: (line, policy_name, error).  line is None on failure.

    All randomness for the study flows from SeedSequence((seed, index)), so
    studies are independent and the result is the same for any worker layout.
    """
    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, index)))
    policy_name = spec.policies[int(rng.integers(len(spec.policies)))]
    task_seed = int(rng.integers(2**31))
    policy_seed = int(rng.integers(2**31))
    task = sample_task(
        task_seed,
        spec.dim_range,
        spec.families,
        force_continuous=spec.force_continuous,
        forced_noise=spec.forced_noise,
    )
    try:
        policy = make_policy(policy_name, task.space, seed=policy_seed)
        trials: list[Trial] = []
        for _ in range(spec.num_trials):
            x = policy.suggest(trials)
            trials.append(Trial(tuple(x), evaluate(task, x, rng)))
    except Exception as exc:  # noqa: BLE001 - any policy fault just skips the study
        return None, policy_name, f"{type(exc).__name__}: {exc}"
    metadata = Metadata(
        name=f"{task.family.value}-d{task.dimension}-{index:06d}",
        metric_name="objective",
        goal=Goal.MAXIMIZE,
        algorithm=policy_name,
        space=task.space,
    )
    return serialize_study(Study(metadata, tuple(trials)), task.descriptor()), policy_name, None


def generate(spec: GenerationSpec, out_path: str, workers: int = 1) -> dict:
    """Write the study file plus `<out_path>.manifest.json`; returns the manifest.

    Deterministic per spec (workers only change scheduling, not content).
    Studies whose policy raises are logged and skipped.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    policy_counts: dict[str, int] = {name: 0 for name in sorted(spec.policies)}
    skipped: list[int] = []
    written = 0
    if workers == 1:
        results = (_make_study(spec, i) for i in range(spec.num_studies))
    else:
        pool = ProcessPoolExecutor(max_workers=workers)
        chunk = max(1, spec.num_studies // (workers * 4))
        results = pool.map(_make_study, [spec] * spec.num_studies, range(spec.num_studies), chunksize=chunk)
    try:
        with open(out_path, "w", encoding="utf-8") as f:
            for index, (line, policy_name, error) in enumerate(results):
                if line is None:
                    logger.warning("study %d (%s) failed: %s; skipped", index, policy_name, error)
                    skipped.append(index)
                    continue
                f.write(line)
                f.write("\n")
                policy_counts[policy_name] += 1
                written += 1
    finally:
        if workers > 1:
            pool.shutdown()
    manifest = {
        "format": FORMAT_NAME,
        "config": spec.config_dict(),
        "config_digest": spec.digest(),
        "studies_written": written,
        "studies_skipped": len(skipped),
        "skipped_indices": skipped,
        "policy_counts": policy_counts,
    }
    with open(out_path + ".manifest.json", "w", encoding="utf-8") as f:
        f.write(_canonical_json(manifest))
        f.write("\n")
    return manifest


# ---------------------------------------------------------------------------
# splits

def split(
    path: str,
    out_train: str,
    out_val: str,
    fractions: tuple[float, float] = (0.9, 0.1),
    seed: int = 0,
) -> tuple[int, int]:
    """Partition a study file into train/validation files.

    Studies sharing a task seed always land in the same split.  Groups are
    shuffled by `seed`, then assigned to train until the train quota
    round(n * fractions[0]) is filled.  Line order within each output file
    follows the input.  Returns (train_count, val_count).
    """
    if len(fractions) != 2 or any(f < 0 for f in fractions):
        raise ValueError("fractions must be two non-negative numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("fractions must sum to 1")
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln for ln in (raw.strip() for raw in f) if ln]
    if not lines:
        raise ValueError(f"{path}: empty input")

    groups: dict[object, list[int]] = {}
    for i, line in enumerate(lines):
        try:
            _, desc = parse_study_line(line)
        except (ValueError, KeyError, TypeError) as exc:
            raise StudyParseError(f"{path}: line {i + 1}: {exc}") from exc
        key = ("task", desc["seed"]) if desc and "seed" in desc else ("line", i)
        groups.setdefault(key, []).append(i)

    keys = sorted(groups, key=repr)
    order = np.random.default_rng(np.random.SeedSequence(seed)).permutation(len(keys))
    target_train = round(len(lines) * fractions[0])
    train_idx: set[int] = set()
    for k in order:
        members = groups[keys[int(k)]]
        if len(train_idx) < target_train:
            train_idx.update(members)

    counts = [0, 0]
    with open(out_train, "w", encoding="utf-8") as ftr, open(out_val, "w", encoding="utf-8") as fva:
        for i, line in enumerate(lines):
            dest = ftr if i in train_idx else fva
            dest.write(line)
            dest.write("\n")
            counts[0 if i in train_idx else 1] += 1
    return counts[0], counts[1]


# ---------------------------------------------------------------------------
# tokenized loading

def truncate_study_tokens(study: Study, max_history_tokens: int) -> Study:
    """Largest whole-trial prefix whose history stream fits the budget.

    A t-trial history over D parameters is (D + 3) * t - 1 tokens.
    """
    if max_history_tokens < 0:
        raise ValueError("max_history_tokens must be >= 0")
    per_trial = study.metadata.space.dimension + 3
    keep = min(len(study.trials), (max_history_tokens + 1) // per_trial)
    if keep == len(study.trials):
        return study
    return Study(study.metadata, study.trials[:keep])


def load_tokenized(
    path: str,
    vocab: Vocab | None = None,
    augment_seed: int | None = None,
    token_limit: int | None = None,
    drop_prob: float = 0.25,
) -> Iterator[tuple[tuple[int, ...], tuple[int, ...], tuple[float, ...]]]:
    """Stream (meta_tokens, history_tokens, loss_weights) per study.

    With augment_seed None the stream is the plain tokenization, identical
    across passes.  Otherwise each line draws its augmentation from
    SeedSequence((augment_seed, line_number)).  Truncation to token_limit
    happens before tokenization so objective scaling sees only kept trials.
    """
    v = vocab or _DEFAULT_VOCAB
    for lineno, study, _ in iter_studies(path):
        if token_limit is not None:
            study = truncate_study_tokens(study, token_limit)
        if augment_seed is None:
            tk = tokenize_study(study, vocab=v)
        else:
            rng = np.random.default_rng(np.random.SeedSequence((augment_seed, lineno)))
            perm, affine, drop = sample_augmentation(
                study.metadata.space.dimension, rng, drop_prob=drop_prob
            )
            tk = tokenize_study(study, vocab=v, perm=perm, affine=affine, drop_mask=drop)
        weights = build_loss_weights(tk.history_tokens, v)
        yield tk.meta_tokens, tk.history_tokens, tuple(weights)
