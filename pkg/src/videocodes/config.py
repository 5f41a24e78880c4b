"""Flat key=value run configuration with a closed key registry.

Configs are UTF-8 text files of ``namespace.key = value`` lines ("#"
comments allowed).  Every key must appear in the registry below — unknown
keys are hard errors so typos never silently fall back to defaults.  Each
run writes its fully-resolved config next to its outputs; re-running from
that file reproduces the run bit-identically.
"""

from __future__ import annotations


class ConfigError(ValueError):
    """Unknown key, malformed line, or value of the wrong type."""


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_tuple(text):
    if isinstance(text, (tuple, list)):
        return tuple(int(v) for v in text)
    return tuple(int(v) for v in str(text).split(","))


# key -> (parser, default)
KNOWN_KEYS = {
    # synthetic data
    "data.seed": (int, 0),
    "data.clips": (int, 64),
    "data.frames": (int, 8),
    "data.height": (int, 32),
    "data.width": (int, 32),
    "data.objects": (int, 3),
    # codec architecture + training
    "codec.E_s": (int, 3),            # strided encoder blocks
    "codec.E_c": (int, 2),            # encoder residual blocks
    "codec.D_c": (int, 2),            # decoder residual blocks
    "codec.V_e": (int, 64),           # latent channels
    "codec.T_C": (int, 2),            # codebook groups
    "codec.K": (int, 256),            # codebook size
    "codec.time_strides": (_int_tuple, (1, 1, 1)),
    "codec.patching": (str, "none"),
    "codec.steps": (int, 600),
    "codec.batch": (int, 8),
    "codec.lr": (float, 1e-3),
    "codec.optimizer": (str, "adam"),
    # augmentation networks
    "aug.family": (str, "crop"),
    "aug.steps": (int, 400),
    "aug.batch": (int, 8),
    "aug.lr": (float, 1e-3),
    "aug.requantize": (_bool, False),
    # classifiers
    "cls.source": (str, "codes"),
    "cls.classes": (int, 2),
    "cls.head": (str, "clip"),
    "cls.steps": (int, 300),
    "cls.batch": (int, 8),
    "cls.lr": (float, 3e-4),
    "cls.n_spatial": (int, 1),
    "cls.m_temporal": (int, 1),
    "cls.flip_pool": (_bool, False),
    # memory task
    "mem.kind": (str, "slot"),
    "mem.chunks": (int, 16),
    "mem.streams": (int, 4),
    "mem.steps": (int, 300),
    "mem.batch": (int, 8),
    "mem.lr": (float, 1e-3),
    "mem.eval_samples": (int, 64),
    # benchmarking
    "bench.repeats": (int, 100),
    "bench.batch": (int, 1),
}


def parse_value(key, text):
    if key not in KNOWN_KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    parser, _ = KNOWN_KEYS[key]
    try:
        return parser(text)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from exc


def defaults():
    return {k: d for k, (_, d) in KNOWN_KEYS.items()}


def parse_config_file(path):
    """Read a key=value file into a dict; unknown keys raise ConfigError."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{lineno}: expected key=value, "
                                  f"got {line.strip()!r}")
            key, _, value = stripped.partition("=")
            key = key.strip()
            out[key] = parse_value(key, value.strip())
    return out


def resolve(config_path=None, overrides=()):
    """Defaults <- config file <- command-line ``key=value`` overrides."""
    cfg = defaults()
    if config_path:
        cfg.update(parse_config_file(config_path))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, _, value = item.partition("=")
        cfg[key.strip()] = parse_value(key.strip(), value.strip())
    return cfg


def format_config(cfg):
    lines = [f"{k} = {_render(v)}" for k, v in sorted(cfg.items())]
    return "\n".join(lines) + "\n"


def _render(v):
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_resolved(cfg, path):
    """Persist the full resolved config; replaying it reproduces the run."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# resolved run configuration\n")
        fh.write(format_config(cfg))
    return path
