"""Flat key=value run configuration files.

One `key = value` pair per line, full-line comments with `#`, blank
lines ignored.  Keys map one-to-one onto TrainConfig fields; unknown
keys are rejected so typos fail loudly instead of training with a
silently ignored setting.  Integer lists are comma-separated.

Example:

    # 16px shapes run
    dataset = shapes
    resolution = 16
    total_iterations = 300
    seed = 7
    enc_channels = 8,16,32
"""

from dataclasses import fields

from .errors import FormatError
from .train import TrainConfig

_INT_KEYS = {
    "total_iterations", "seed", "n_critic", "batch_size", "resolution",
    "checkpoint_interval", "cond_dim", "latent_dim", "kernel_size",
    "dataset_size",
}
_FLOAT_KEYS = {
    "learning_rate", "clip_c", "shapes_speed_max", "shapes_half_min",
    "shapes_half_max",
}
_STR_KEYS = {"dataset", "transform", "mnist_idx"}
_INT_LIST_KEYS = {
    "enc_channels", "gen_hidden", "merge_channels", "critic_channels",
}
KNOWN_KEYS = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS | _INT_LIST_KEYS

# every TrainConfig field must be reachable from a file
assert KNOWN_KEYS == {f.name for f in fields(TrainConfig)}


def parse_config(text):
    """Parse config text into a {key: typed value} dict."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(
                f"line {lineno}: expected key = value, got {line!r}")
        key, _, rest = line.partition("=")
        key = key.strip()
        rest = rest.strip()
        if key not in KNOWN_KEYS:
            raise FormatError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise FormatError(f"line {lineno}: duplicate key {key!r}")
        try:
            if key in _INT_KEYS:
                values[key] = int(rest)
            elif key in _FLOAT_KEYS:
                values[key] = float(rest)
            elif key in _INT_LIST_KEYS:
                values[key] = tuple(
                    int(tok.strip()) for tok in rest.split(",") if tok.strip())
            else:
                values[key] = rest
        except ValueError as exc:
            raise FormatError(
                f"line {lineno}: cannot parse value {rest!r} for {key!r}") from exc
    return values


def load_config(path, **overrides):
    """Build a TrainConfig from a file plus keyword overrides.

    Overrides (typically CLI flags) win over file values.  Required
    fields (total_iterations, seed) must come from one of the two.
    """
    with open(path, "r", encoding="utf-8") as fh:
        values = parse_config(fh.read())
    values.update({k: v for k, v in overrides.items() if v is not None})
    missing = {"total_iterations", "seed"} - set(values)
    if missing:
        raise FormatError(
            f"config is missing required keys: {', '.join(sorted(missing))}")
    return TrainConfig(**values)
