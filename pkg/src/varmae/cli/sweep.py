"""Grid runs over one pre-training axis crossed with the objective.

A grid file looks like::

    [sweep]
    base = config.ini
    axis = masking_ratio          ; or corpus_fraction
    values = 0.05, 0.15, 0.3
    objectives = mae, varmae      ; optional, this is the default

Every cell pre-trains from scratch, fine-tunes on all tasks of the base
config, and contributes one row to ``sweep.csv``: the axis value, the
objective, the seed-mean headline metric per task and their average.
A failing cell is recorded in the CSV and the sweep continues; the exit
code is then 1.
"""

from __future__ import annotations

import configparser
import copy
import logging
import traceback
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from ..io import atomic_write_text
from .config import RunConfig, load_config, normalize_key, resolve_output

log = logging.getLogger("varmae")

AXES = ("masking_ratio", "corpus_fraction")


def read_grid(path) -> tuple[RunConfig, str, list[float], list[str]]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"grid file does not exist: {path}", key="grid")
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"malformed grid: {exc}".splitlines()[0], key="grid") from None
    if not cp.has_section("sweep"):
        raise ConfigError("grid file needs a [sweep] section", key="sweep")
    vals = {normalize_key(k): v.strip() for k, v in cp.items("sweep")}
    unknown = set(vals) - {"base", "axis", "values", "objectives"}
    if unknown:
        raise ConfigError(f"[sweep] unknown key(s) {sorted(unknown)}", key=sorted(unknown)[0])
    for key in ("base", "axis", "values"):
        if key not in vals:
            raise ConfigError(f"[sweep] {key} is required", key=key)
    base_path = Path(vals["base"])
    if not base_path.is_absolute():
        base_path = path.parent / base_path
    base = load_config(base_path)
    axis = normalize_key(vals["axis"])
    if axis not in AXES:
        raise ConfigError(f"[sweep] axis must be one of {AXES}", key="axis")
    try:
        values = [float(v) for v in vals["values"].replace(",", " ").split()]
    except ValueError:
        raise ConfigError("[sweep] values must be numbers", key="values") from None
    if not values:
        raise ConfigError("[sweep] values is empty", key="values")
    objectives = [o.strip() for o in vals.get("objectives", "mae,varmae").split(",") if o.strip()]
    for o in objectives:
        if o not in ("mae", "varmae"):
            raise ConfigError(f"[sweep] unknown objective {o!r}", key="objectives")
    if not base.tasks:
        raise ConfigError("base config defines no tasks", key="task")
    return base, axis, values, objectives


def cell_config(base: RunConfig, axis: str, value: float, objective: str) -> RunConfig:
    """The base config with one axis value and objective applied. MAE cells
    train the whole encoder because they have no latent layer to adapt."""
    cfg = copy.deepcopy(base)
    if axis == "masking_ratio":
        cfg.train.masking_ratio = value
    else:
        if not 0.0 < value <= 1.0:
            raise ConfigError("corpus_fraction must lie in (0, 1]", key="corpus_fraction")
        cfg.data.corpus_fraction = value
    cfg.train.objective = objective
    if objective == "mae":
        cfg.train.freeze_policy = "none"
    cfg.train.__post_init__()
    cfg.run_id = f"{axis}={value:g}/{objective}"
    return cfg


def run_sweep(grid, *, seed=None, output=None) -> int:
    from .main import _csv_text, run_finetune, run_pretrain

    base, axis, values, objectives = read_grid(grid)
    if seed is not None:
        base.apply_seed(seed)
    out = resolve_output(base, output)
    out.mkdir(parents=True, exist_ok=True)
    task_names = [t.name for t in base.tasks]
    header = [axis, "objective"] + task_names + ["average", "status"]
    rows = []
    failures = 0
    for value in values:
        for objective in objectives:
            cell = out / f"{axis}_{value:g}" / objective
            try:
                cfg = cell_config(base, axis, value, objective)
                run_pretrain(cfg, cell / "pretrain")
                results = run_finetune(cfg, cell / "pretrain" / "checkpoint.vmck", cell / "finetune")
                scores = []
                for task in cfg.tasks:
                    per_seed = [r.test.get(task.metric) for r in results if r.task == task.name]
                    scores.append(float(np.mean(per_seed)))
                rows.append([value, objective] + scores + [float(np.mean(scores)), "ok"])
            except Exception as exc:  # a failed cell is recorded, not fatal
                failures += 1
                log.debug("cell failed:\n%s", traceback.format_exc())
                msg = f"failed: {type(exc).__name__}: {exc}".replace("\n", " ")
                rows.append([value, objective] + [""] * len(task_names) + ["", msg])
                print(f"{axis}={value:g} {objective}: {msg}")
            else:
                print(f"{axis}={value:g} {objective}: average {rows[-1][-2]:.4f}")
            atomic_write_text(out / "sweep.csv", _csv_text(header, rows))
    return 1 if failures else 0
