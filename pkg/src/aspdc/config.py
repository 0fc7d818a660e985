"""Run configuration: UTF-8 line-oriented ``key = value`` with sections.

Sections are ``[net]``, ``[train]``, ``[synth]``. Every key has a
default; unknown sections or keys are hard errors so experiment typos
surface immediately. Booleans accept true/false/1/0; the tuple-ish keys
(branch flags, dilations) are comma-separated.
"""

from .blocks import AspdcConfig
from .deblur import DeblurConfig
from .reblur import ReblurConfig


class ConfigFileError(ValueError):
    pass


DEFAULTS = {
    "net": {
        "base_width": 32,
        "n_modules": 6,
        "branch_enabled": "1,1,1,1",
        "branch_dilations": "1,1,2,4",
        "afim_enabled": True,
        "duplicate": "",          # "branch,count" or empty
        "reblur_width": 16,
    },
    "train": {
        "seed": 0,
        "batch": 6,
        "crop": 256,
        "steps": 2000,
        "lr0": 1e-4,
        "period_epochs": 1000,    # 0 = auto-scale to ~3 halvings per run
        "lr_floor": 1e-6,
        "ckpt_every": 0,          # epochs; 0 = final checkpoint only
        "lam": 0.1,
        "freeze_reblur": True,
        "finetune_lr0": 1e-5,
        "finetune_period_epochs": 200,
        "anticollapse_floor": 0.004,
    },
    "synth": {
        "seed": 0,
        "count": 4,
        "size": 64,
        "frames": 15,
        "gamma": 1.0,
        "sigma": 0.0,
        "max_disp": 5.0,
        "kind": "mixture",
    },
}


def _parse_value(raw, default):
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigFileError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def parse_config(path=None, text=None):
    """Resolve a config file over the defaults; returns {section: {key: value}}."""
    resolved = {sec: dict(vals) for sec, vals in DEFAULTS.items()}
    if path is None and text is None:
        return resolved
    if text is None:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    section = None
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in resolved:
                raise ConfigFileError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigFileError(f"line {lineno}: expected 'key = value', got {raw_line!r}")
        if section is None:
            raise ConfigFileError(f"line {lineno}: key outside any [section]")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in resolved[section]:
            raise ConfigFileError(f"line {lineno}: unknown key '{key}' in [{section}]")
        try:
            resolved[section][key] = _parse_value(value, DEFAULTS[section][key])
        except ValueError as exc:
            raise ConfigFileError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return resolved


def format_config(resolved):
    lines = []
    for section, vals in resolved.items():
        lines.append(f"[{section}]")
        for key, value in vals.items():
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


def _csv_ints(raw):
    return tuple(int(v) for v in raw.split(",") if v.strip() != "")


def deblur_config_from(net_section):
    dup_raw = net_section["duplicate"]
    duplicate = None
    if dup_raw:
        idx, count = _csv_ints(dup_raw)
        duplicate = (idx, count)
    return DeblurConfig(
        base_width=net_section["base_width"],
        n_modules=net_section["n_modules"],
        aspdc=AspdcConfig(
            branch_enabled=tuple(bool(v) for v in _csv_ints(net_section["branch_enabled"])),
            branch_dilations=_csv_ints(net_section["branch_dilations"]),
            duplicate=duplicate,
            afim_enabled=net_section["afim_enabled"],
        ),
    )


def reblur_config_from(net_section):
    return ReblurConfig(base_width=net_section["reblur_width"])
