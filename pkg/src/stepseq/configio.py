"""Plain-text run configuration format.

One "key = value" assignment per line; '#' starts a comment; blank lines
are ignored. Parsers reject unknown keys, duplicate keys, and malformed
lines, so a stale or misspelled config fails loudly instead of being
silently half-applied.
"""

from __future__ import annotations

from stepseq.data import BenchmarkSpec
from stepseq.models import ModelConfig
from stepseq.training import TrainConfig


class ConfigError(ValueError):
    """Malformed run-config text or values."""


def dumps(mapping: dict) -> str:
    lines = []
    for key, value in mapping.items():
        if value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, (list, tuple)):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def _as_bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _as_ints(raw: str) -> tuple[int, ...]:
    return tuple(int(part) for part in raw.split(",") if part.strip())


def _as_floats(raw: str) -> tuple[float, ...]:
    return tuple(float(part) for part in raw.split(",") if part.strip())


def _apply_schema(raw: dict[str, str], schema: dict, what: str) -> dict:
    unknown = set(raw) - set(schema)
    if unknown:
        raise ConfigError(f"unknown {what} keys: {sorted(unknown)}")
    parsed = {}
    for key, value in raw.items():
        try:
            parsed[key] = schema[key](value)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"{what} key {key!r}: {exc}") from exc
    return parsed


# ---------------------------------------------------------------------------
# typed front ends

_MODEL_SCHEMA = {
    "kind": str,
    "input_dim": int,
    "hidden": int,
    "kernel_sizes": _as_ints,
    "lstm_layers": int,
    "num_classes": int,
    "dropout_rate": float,
}

_TRAIN_SCHEMA = {
    "epochs": int,
    "lr": float,
    "dropout_rate": float,
    "relevance_drop_prob": float,
    "seed": int,
    "select_best_on_val": _as_bool,
    "clip_norm": float,
    # sorting-task extras, consumed by the pretraining command
    "perm_p": int,
    "perm_seed": int,
}

_BENCHMARK_SCHEMA = {
    "n_features": int,
    "embed_dim": int,
    "embed_scale": float,
    "video_shift_std": float,
    "shift_magnitude": float,
    "noise_std": float,
    "source_videos": int,
    "target_videos": _as_ints,
    "length_range": _as_ints,
    "master_seed": int,
    "skip_prob": float,
    "revisit_prob": float,
    "irrelevant_span_rate": float,
    "oob_std": float,
    "duration_mean": _as_floats,
}


def model_config_to_text(config: ModelConfig, extra: dict | None = None) -> str:
    mapping = {
        "kind": config.kind,
        "input_dim": config.input_dim,
        "hidden": config.hidden,
        "kernel_sizes": config.kernel_sizes,
        "lstm_layers": config.lstm_layers,
        "num_classes": config.num_classes,
        "dropout_rate": config.dropout_rate,
    }
    mapping.update(extra or {})
    return dumps(mapping)


def model_config_from_text(text: str) -> tuple[ModelConfig, dict]:
    """Parse config text; extra (non-model) keys come back separately."""
    raw = loads(text)
    extra_keys = {k: v for k, v in raw.items() if k not in _MODEL_SCHEMA}
    model_raw = {k: v for k, v in raw.items() if k in _MODEL_SCHEMA}
    parsed = _apply_schema(model_raw, _MODEL_SCHEMA, "model config")
    extras = _apply_schema(
        extra_keys, {"perm_p": int, "perm_seed": int}, "checkpoint metadata"
    )
    try:
        return ModelConfig(**parsed), extras
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def train_config_from_text(text: str) -> tuple[TrainConfig, dict]:
    """Parse a train config file; sorting-task keys come back separately."""
    parsed = _apply_schema(loads(text), _TRAIN_SCHEMA, "train config")
    extras = {k: parsed.pop(k) for k in ("perm_p", "perm_seed") if k in parsed}
    try:
        return TrainConfig(**parsed), extras
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def benchmark_spec_from_text(text: str) -> BenchmarkSpec:
    parsed = _apply_schema(loads(text), _BENCHMARK_SCHEMA, "benchmark spec")
    if "length_range" in parsed:
        rng = parsed["length_range"]
        if len(rng) != 2:
            raise ConfigError("length_range needs exactly two values")
        parsed["length_range"] = (rng[0], rng[1])
    try:
        return BenchmarkSpec(**parsed)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def benchmark_spec_to_text(spec: BenchmarkSpec) -> str:
    return dumps(
        {
            "n_features": spec.n_features,
            "embed_dim": spec.embed_dim,
            "embed_scale": spec.embed_scale,
            "video_shift_std": spec.video_shift_std,
            "shift_magnitude": spec.shift_magnitude,
            "noise_std": spec.noise_std,
            "source_videos": spec.source_videos,
            "target_videos": spec.target_videos,
            "length_range": spec.length_range,
            "master_seed": spec.master_seed,
            "skip_prob": spec.skip_prob,
            "revisit_prob": spec.revisit_prob,
            "irrelevant_span_rate": spec.irrelevant_span_rate,
            "oob_std": spec.oob_std,
            "duration_mean": spec.duration_mean,
        }
    )
