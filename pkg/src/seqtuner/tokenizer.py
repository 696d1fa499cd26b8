"""Study <-> integer token sequences.

The vocabulary is fixed and structured: a block of Q value bins, separator
tokens, keyword/enum tokens for metadata fields, and a byte-level fallback
block for free-form strings.  History trials are laid out as

    [x_1 .. x_D, *, y] | [x_1 .. x_D, *, y] | ...

with "|" between trials and no trailing "|" after the last one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .core import (
    Goal,
    Metadata,
    ParamKind,
    ParameterConfig,
    Scale,
    SearchSpace,
    Trial,
    denormalize_param,
    normalize_param,
    set_value,
)

_KEYWORDS = (
    "name",
    "metric",
    "goal",
    "type",
    "algorithm",
    "min_value",
    "max_value",
    "scale_type",
    "categories",
)
_ENUMS = ("DOUBLE", "INTEGER", "DISCRETE", "CATEGORICAL", "LINEAR", "LOG", "MAXIMIZE", "MINIMIZE")


@dataclass(frozen=True)
class Vocab:
    """Token id layout. All ids are derived from Q so blocks never overlap."""

    Q: int = 1000

    def __post_init__(self) -> None:
        if self.Q < 2:
            raise ValueError("Q must be >= 2")

    # block offsets
    @property
    def pad(self) -> int:
        return self.Q

    @property
    def bos(self) -> int:
        return self.Q + 1

    @property
    def star(self) -> int:
        return self.Q + 2

    @property
    def pipe(self) -> int:
        return self.Q + 3

    @property
    def amp(self) -> int:
        return self.Q + 4

    @property
    def _kw0(self) -> int:
        return self.Q + 5

    @property
    def _enum0(self) -> int:
        return self._kw0 + len(_KEYWORDS)

    @property
    def _byte0(self) -> int:
        return self._enum0 + len(_ENUMS)

    @property
    def size(self) -> int:
        return self._byte0 + 256

    # value bins
    def value_token(self, b: int) -> int:
        if not 0 <= b < self.Q:
            raise ValueError(f"bin {b} outside [0, {self.Q})")
        return b

    def is_value(self, tok: int) -> bool:
        return 0 <= tok < self.Q

    # keywords / enums
    def keyword(self, kw: str) -> int:
        return self._kw0 + _KEYWORDS.index(kw)

    def enum(self, name: str) -> int:
        return self._enum0 + _ENUMS.index(name)

    def is_keyword(self, tok: int) -> bool:
        return self._kw0 <= tok < self._kw0 + len(_KEYWORDS)

    def is_enum(self, tok: int) -> bool:
        return self._enum0 <= tok < self._enum0 + len(_ENUMS)

    def keyword_name(self, tok: int) -> str:
        return _KEYWORDS[tok - self._kw0]

    def enum_name(self, tok: int) -> str:
        return _ENUMS[tok - self._enum0]

    # byte fallback
    def bytes_tokens(self, s: str) -> list[int]:
        return [self._byte0 + b for b in s.encode("utf-8")]

    def is_byte(self, tok: int) -> bool:
        return self._byte0 <= tok < self._byte0 + 256

    def byte_value(self, tok: int) -> int:
        return tok - self._byte0


@dataclass(frozen=True)
class YAffine:
    """Random scale/shift applied to normalized objective values."""

    s: float
    c: float

    def __post_init__(self) -> None:
        if not (0.0 < self.s <= 1.0):
            raise ValueError("s must be in (0, 1]")
        if self.c < 0.0 or self.c + self.s > 1.0 + 1e-12:
            raise ValueError("need c >= 0 and c + s <= 1")


#: Affine used at inference time: observed min -> 0.2, observed max -> 0.8.
INFERENCE_AFFINE = YAffine(s=0.6, c=0.2)


@dataclass(frozen=True)
class DropMask:
    """Which metadata parts to omit when serializing.

    drop_text removes study/metric/parameter names and free text;
    drop_ranges removes numeric bounds and category/value lists.
    Parameter types, scales, goal, and the algorithm name always stay.
    """

    drop_text: bool = False
    drop_ranges: bool = False

    @classmethod
    def none(cls) -> "DropMask":
        return cls(False, False)

    @classmethod
    def minimal(cls) -> "DropMask":
        return cls(True, True)


@dataclass(frozen=True)
class TokenizedStudy:
    meta_tokens: tuple[int, ...]
    history_tokens: tuple[int, ...]
    y_range: tuple[float, float]
    param_order: tuple[int, ...]


# ---------------------------------------------------------------------------
# scalar quantization

def quantize(u: float, Q: int) -> int:
    """Bin index floor(u*Q), with u=1 clamped to the last bin."""
    if not (0.0 <= u <= 1.0):
        raise ValueError(f"u={u} outside [0, 1]")
    return min(int(math.floor(u * Q)), Q - 1)


def dequantize(b: int, Q: int) -> float:
    """Midpoint of bin b."""
    if not 0 <= b < Q:
        raise ValueError(f"bin {b} outside [0, {Q})")
    return (b + 0.5) / Q


def apply_y_affine(u: float, a: YAffine) -> float:
    return u * a.s + a.c


def effective_y_range(y_range: tuple[float, float], affine: YAffine) -> tuple[float, float]:
    """Objective range that maps onto the full [0, 1] token scale.

    When serialization squeezes [y_min, y_max] into [c, c+s], the bins
    outside that band still correspond to real objective values; this
    returns the widened range covering u in [0, 1].
    """
    y_min, y_max = y_range
    w = y_max - y_min
    lo = y_min - (affine.c / affine.s) * w
    return (lo, lo + w / affine.s)


# ---------------------------------------------------------------------------
# number rendering for metadata text

def _tidy_exponent(s: str) -> str:
    mant, exp = s.split("e")
    sign = "-" if exp.startswith("-") else ""
    digits = exp.lstrip("+-").lstrip("0") or "0"
    if mant.endswith(".0"):
        mant = mant[:-2]
    return f"{mant}e{sign}{digits}"


def format_number(x: float) -> str:
    """Compact decimal text for metadata bounds, e.g. 1e-6 rather than 1e-06."""
    x = float(x)
    if x != x or x in (float("inf"), float("-inf")):
        raise ValueError("bounds must be finite")
    r = repr(x)
    if "e" in r:
        return _tidy_exponent(r)
    if x != 0.0:
        exp = math.floor(math.log10(abs(x)))
        if exp <= -2:
            mant = repr(x / 10.0**exp)
            if mant.endswith(".0"):
                mant = mant[:-2]
            cand = f"{mant}e{exp}"
            if float(cand) == x and len(cand) <= len(r):
                return cand
    return r


# ---------------------------------------------------------------------------
# metadata serialization

def _quoted(v: Vocab, s: str) -> list[int]:
    s = s.replace('"', "'")
    return v.bytes_tokens('"') + v.bytes_tokens(s) + v.bytes_tokens('"')


def _field(v: Vocab, kw: str, value_tokens: list[int]) -> list[int]:
    return [v.keyword(kw)] + v.bytes_tokens(":") + value_tokens


_KIND_ENUM = {
    ParamKind.DOUBLE: "DOUBLE",
    ParamKind.INTEGER: "INTEGER",
    ParamKind.DISCRETE: "DISCRETE",
    ParamKind.CATEGORICAL: "CATEGORICAL",
}
_SCALE_ENUM = {Scale.LINEAR: "LINEAR", Scale.LOG: "LOG"}
_GOAL_ENUM = {Goal.MAXIMIZE: "MAXIMIZE", Goal.MINIMIZE: "MINIMIZE"}


def serialize_metadata(
    m: Metadata,
    drop_mask: DropMask | None = None,
    perm: Sequence[int] | None = None,
) -> list[int]:
    """Metadata token stream: description block, then one "&"-prefixed block
    per parameter, in perm order."""
    v = _vocab_for(m)
    drop = drop_mask or DropMask.none()
    order = list(perm) if perm is not None else list(range(m.space.dimension))
    if sorted(order) != list(range(m.space.dimension)):
        raise ValueError("perm must be a permutation of the parameter indices")

    comma = v.bytes_tokens(",")
    out: list[int] = []
    fields: list[list[int]] = []
    if not drop.drop_text:
        fields.append(_field(v, "name", _quoted(v, m.name)))
        fields.append(_field(v, "metric", _quoted(v, m.metric_name)))
    fields.append(_field(v, "goal", [v.enum(_GOAL_ENUM[m.goal])]))
    fields.append(_field(v, "algorithm", _quoted(v, m.algorithm)))
    if m.free_text and not drop.drop_text:
        fields.append(_quoted(v, m.free_text))
    for i, f in enumerate(fields):
        if i:
            out += comma
        out += f

    for idx in order:
        cfg = m.space.parameters[idx]
        out += [v.amp]
        blocks: list[list[int]] = []
        if not drop.drop_text:
            blocks.append(_field(v, "name", _quoted(v, cfg.name)))
        blocks.append(_field(v, "type", [v.enum(_KIND_ENUM[cfg.kind])]))
        if cfg.kind in (ParamKind.DOUBLE, ParamKind.INTEGER):
            if not drop.drop_ranges:
                blocks.append(_field(v, "min_value", v.bytes_tokens(format_number(cfg.min_value))))
                blocks.append(_field(v, "max_value", v.bytes_tokens(format_number(cfg.max_value))))
            blocks.append(_field(v, "scale_type", [v.enum(_SCALE_ENUM[cfg.scale])]))
        elif not drop.drop_ranges:
            if cfg.kind is ParamKind.DISCRETE:
                items = [v.bytes_tokens(format_number(x)) for x in cfg.values]
            else:
                items = [_quoted(v, c) for c in cfg.categories]
            body = v.bytes_tokens("[")
            for j, item in enumerate(items):
                if j:
                    body += v.bytes_tokens(", ")
                body += item
            body += v.bytes_tokens("]")
            blocks.append(_field(v, "categories", body))
        for j, b in enumerate(blocks):
            if j:
                out += comma
            out += b
    return out


_DEFAULT_VOCAB = Vocab()


def _vocab_for(_m: Metadata) -> Vocab:
    return _DEFAULT_VOCAB


class MetadataParseError(ValueError):
    pass


def _read_text_value(v: Vocab, tokens: Sequence[int], i: int) -> tuple[str, int]:
    """Read one textual field value starting at tokens[i].

    Quoted strings stop at the closing quote, bracketed lists at the closing
    bracket, bare text at the next comma; commas inside quotes/brackets do
    not terminate the value.
    """
    bs = bytearray()
    in_quote = False
    depth = 0
    first = True
    while i < len(tokens) and v.is_byte(tokens[i]):
        ch = v.byte_value(tokens[i])
        c = chr(ch)
        if first and c == ",":
            i += 1
            continue
        if c == '"':
            in_quote = not in_quote
        elif c == "[" and not in_quote:
            depth += 1
        elif c == "]" and not in_quote:
            depth -= 1
        elif c == "," and not in_quote and depth == 0:
            break
        bs.append(ch)
        first = False
        if not in_quote and depth == 0 and (c == '"' or c == "]") and bs:
            i += 1
            break
        i += 1
    return bs.decode("utf-8"), i


def parse_metadata(tokens: Sequence[int], vocab: Vocab | None = None) -> Metadata:
    """Reconstruct a Metadata object from a serialized token stream.

    Dropped fields come back as placeholders: empty names, unit bounds for
    numeric parameters, a single placeholder category.  This is the
    parse-back oracle used to check serialization fidelity.
    """
    v = vocab or _DEFAULT_VOCAB
    blocks: list[list[int]] = [[]]
    for t in tokens:
        if t == v.amp:
            blocks.append([])
        else:
            blocks[-1].append(t)
    desc, param_blocks = blocks[0], blocks[1:]
    if not param_blocks:
        raise MetadataParseError("no parameter blocks")

    def parse_fields(block: Sequence[int]) -> tuple[dict, list[str]]:
        fields: dict[str, object] = {}
        extras: list[str] = []
        i = 0
        while i < len(block):
            t = block[i]
            if v.is_keyword(t):
                kw = v.keyword_name(t)
                i += 1
                # skip ':'
                while i < len(block) and v.is_byte(block[i]) and chr(v.byte_value(block[i])) == ":":
                    i += 1
                if i < len(block) and v.is_enum(block[i]):
                    fields[kw] = v.enum_name(block[i])
                    i += 1
                else:
                    text, i = _read_text_value(v, block, i)
                    fields[kw] = text
            elif v.is_byte(t):
                text, i = _read_text_value(v, block, i)
                if text.strip(", "):
                    extras.append(text)
            else:
                raise MetadataParseError(f"unexpected token {t}")
        return fields, extras

    def unquote(s: str) -> str:
        s = s.strip()
        if len(s) >= 2 and s[0] == '"' and s[-1] == '"':
            return s[1:-1]
        return s

    dfields, dextras = parse_fields(desc)
    goal = Goal[dfields.get("goal", "MAXIMIZE")]  # type: ignore[index]
    params: list[ParameterConfig] = []
    for pi, block in enumerate(param_blocks):
        pf, _ = parse_fields(block)
        kind = ParamKind[pf.get("type", "DOUBLE")]  # type: ignore[index]
        pname = unquote(str(pf.get("name", ""))) or f"p{pi}"
        if kind in (ParamKind.DOUBLE, ParamKind.INTEGER):
            scale = Scale[pf.get("scale_type", "LINEAR")]  # type: ignore[index]
            if "min_value" in pf and "max_value" in pf:
                lo = float(str(pf["min_value"]))
                hi = float(str(pf["max_value"]))
            else:
                lo, hi = (1.0, 10.0) if scale is Scale.LOG else (0.0, 1.0)
            params.append(ParameterConfig(pname, kind, min_value=lo, max_value=hi, scale=scale))
        elif kind is ParamKind.DISCRETE:
            raw = str(pf.get("categories", "")).strip()
            if raw.startswith("[") and raw.endswith("]") and raw != "[]":
                vals = tuple(float(s) for s in raw[1:-1].split(","))
            else:
                vals = (0.0,)
            params.append(ParameterConfig(pname, kind, values=vals))
        else:
            raw = str(pf.get("categories", "")).strip()
            if raw.startswith("[") and raw.endswith("]") and raw != "[]":
                cats = tuple(unquote(s) for s in raw[1:-1].split(","))
            else:
                cats = ("c0",)
            params.append(ParameterConfig(pname, kind, categories=cats))

    free = unquote(dextras[0]) if dextras else ""
    return Metadata(
        name=unquote(str(dfields.get("name", ""))),
        metric_name=unquote(str(dfields.get("metric", ""))),
        goal=goal,
        algorithm=unquote(str(dfields.get("algorithm", ""))),
        space=SearchSpace(tuple(params)),
        free_text=free,
    )


# ---------------------------------------------------------------------------
# history serialization

def _trial_value_bins(trial: Trial, space: SearchSpace, order: Sequence[int], Q: int) -> list[int]:
    bins: list[int] = []
    for idx in order:
        cfg = space.parameters[idx]
        xv = trial.x[idx]
        if cfg.kind in (ParamKind.DOUBLE, ParamKind.INTEGER):
            bins.append(quantize(float(normalize_param(xv, cfg)), Q))
        else:
            b = int(normalize_param(xv, cfg))
            if b >= Q:
                raise ValueError(f"{cfg.name}: set index {b} does not fit in {Q} bins")
            bins.append(b)
    return bins


def quantize_y(y: float, y_range: tuple[float, float], affine: YAffine | None, Q: int) -> int:
    """Objective value -> bin, with degenerate ranges pinned to bin 0."""
    y_min, y_max = y_range
    if y_max <= y_min:
        return 0
    u = (y - y_min) / (y_max - y_min)
    u = min(max(u, 0.0), 1.0)
    if affine is not None:
        u = apply_y_affine(u, affine)
    return quantize(u, Q)


def serialize_history(
    history: Sequence[Trial],
    space: SearchSpace,
    y_range: tuple[float, float],
    affine: YAffine | None = None,
    perm: Sequence[int] | None = None,
    vocab: Vocab | None = None,
) -> list[int]:
    v = vocab or _DEFAULT_VOCAB
    order = list(perm) if perm is not None else list(range(space.dimension))
    if sorted(order) != list(range(space.dimension)):
        raise ValueError("perm must be a permutation of the parameter indices")
    out: list[int] = []
    for t_index, trial in enumerate(history):
        if t_index:
            out.append(v.pipe)
        out += [v.value_token(b) for b in _trial_value_bins(trial, space, order, v.Q)]
        out.append(v.star)
        out.append(v.value_token(quantize_y(trial.y, y_range, affine, v.Q)))
    return out


def detokenize_trial(
    tokens: Sequence[int],
    space: SearchSpace,
    y_range: tuple[float, float],
    vocab: Vocab | None = None,
    perm: Sequence[int] | None = None,
) -> Trial:
    """Inverse of one trial's serialization, via bin midpoints / set indices."""
    v = vocab or _DEFAULT_VOCAB
    toks = list(tokens)
    if toks and toks[-1] == v.pipe:
        toks.pop()
    D = space.dimension
    order = list(perm) if perm is not None else list(range(D))
    if len(toks) != D + 2 or toks[D] != v.star:
        raise ValueError(f"expected layout [{D} values, *, y], got {len(toks)} tokens")
    x: list = [None] * D
    for pos, idx in enumerate(order):
        cfg = space.parameters[idx]
        tok = toks[pos]
        if not v.is_value(tok):
            raise ValueError(f"{cfg.name}: expected a value token, got {tok}")
        if cfg.kind in (ParamKind.DOUBLE, ParamKind.INTEGER):
            x[idx] = denormalize_param(dequantize(tok, v.Q), cfg)
        else:
            if tok >= cfg.set_size:
                raise ValueError(f"{cfg.name}: bin {tok} >= set size {cfg.set_size}")
            x[idx] = set_value(tok, cfg)
    ytok = toks[D + 1]
    if not v.is_value(ytok):
        raise ValueError(f"expected a value token for y, got {ytok}")
    y_min, y_max = y_range
    y = y_min + dequantize(ytok, v.Q) * (y_max - y_min)
    return Trial(x=tuple(x), y=y)


def study_y_range(trials: Sequence[Trial]) -> tuple[float, float]:
    if not trials:
        return (0.0, 1.0)
    ys = [t.y for t in trials]
    return (min(ys), max(ys))


def tokenize_study(
    study,
    vocab: Vocab | None = None,
    perm: Sequence[int] | None = None,
    affine: YAffine | None = None,
    drop_mask: DropMask | None = None,
) -> TokenizedStudy:
    """Serialize a whole study with one consistent parameter order."""
    v = vocab or _DEFAULT_VOCAB
    D = study.metadata.space.dimension
    order = tuple(perm) if perm is not None else tuple(range(D))
    y_range = study_y_range(study.trials)
    meta = serialize_metadata(study.metadata, drop_mask, order)
    hist = serialize_history(study.trials, study.metadata.space, y_range, affine, order, v)
    return TokenizedStudy(
        meta_tokens=tuple(meta),
        history_tokens=tuple(hist),
        y_range=y_range,
        param_order=order,
    )


def build_loss_weights(history_tokens: Sequence[int], vocab: Vocab | None = None) -> list[float]:
    """1.0 on parameter/objective tokens, 0.0 on the separators."""
    v = vocab or _DEFAULT_VOCAB
    return [0.0 if t in (v.star, v.pipe) else 1.0 for t in history_tokens]


def sample_augmentation(
    dimension: int,
    rng,
    *,
    permute: bool = True,
    y_affine: bool = True,
    metadata_drop: bool = True,
    drop_prob: float = 0.25,
) -> tuple[tuple[int, ...] | None, YAffine | None, DropMask | None]:
    """Draw one set of tokenization augmentations from ``rng``.

    Draw order is fixed (permutation, affine scale, affine offset, text drop,
    range drop) so a seeded generator reproduces the same choices everywhere.
    """
    perm = tuple(int(i) for i in rng.permutation(dimension)) if permute else None
    affine = None
    if y_affine:
        s = float(rng.uniform(0.3, 1.0))
        c = float(rng.uniform(0.0, 1.0 - s))
        affine = YAffine(s=s, c=c)
    drop = None
    if metadata_drop:
        drop = DropMask(
            drop_text=bool(rng.uniform() < drop_prob),
            drop_ranges=bool(rng.uniform() < drop_prob),
        )
    return perm, affine, drop


# ---------------------------------------------------------------------------
# debug rendering

def render_tokens(tokens: Iterable[int], vocab: Vocab | None = None) -> str:
    """Human-readable text for a token stream (value bins in angle brackets)."""
    v = vocab or _DEFAULT_VOCAB
    parts: list[str] = []
    pending: bytearray = bytearray()

    def flush() -> None:
        nonlocal pending
        if pending:
            parts.append(pending.decode("utf-8", errors="replace"))
            pending = bytearray()

    for t in tokens:
        if v.is_byte(t):
            pending.append(v.byte_value(t))
            continue
        flush()
        if v.is_value(t):
            parts.append(f"<{t}>")
        elif t == v.star:
            parts.append("*")
        elif t == v.pipe:
            parts.append("|")
        elif t == v.amp:
            parts.append("&")
        elif v.is_keyword(t):
            parts.append(f"<{v.keyword_name(t)}>")
        elif v.is_enum(t):
            parts.append(f"<{v.enum_name(t)}>")
        elif t == v.pad:
            parts.append("<pad>")
        elif t == v.bos:
            parts.append("<bos>")
        else:
            parts.append(f"<?{t}>")
    flush()
    return "".join(parts)
