"""Experiment orchestration: engines, aligned metrics, artifacts."""

from __future__ import annotations

import csv
import json
import platform
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np
import scipy
from threadpoolctl import threadpool_limits

from . import __version__
from .config import ExperimentConfig
from .eval import kl_divergence_binned, marginal_tv, tv_distance
from .plotting import heatmap_svg, kde_panel_svg, kde_panels_from_ensembles, tv_series_svg, write_svg


class RunFailure(RuntimeError):
    """An engine failed; the manifest in ``directory`` is flagged incomplete."""

    def __init__(self, message: str, directory: Path):
        super().__init__(message)
        self.directory = directory


def metric_rows(cfg: ExperimentConfig, sbtm, mc) -> list:
    rows = []
    bins = cfg.tv_bins
    for step, t, a, b in zip(sbtm.steps, sbtm.times, sbtm.positions, mc.positions):
        row = {"step": step, "time": t, "tv": tv_distance(a, b, bins), "kl": kl_divergence_binned(a, b, bins)}
        if a.shape[1] > 1:
            for j, v in enumerate(marginal_tv(a, b, 50)):
                row[f"tv_x{j + 1}"] = v
        row["notes"] = ""
        rows.append(row)
    return rows


def write_metrics(rows: list, path) -> None:
    if not rows:
        return
    cols = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([repr(float(r[c])) if isinstance(r[c], float) else r[c] for c in cols])


def _versions() -> dict:
    return {"levysbtm": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def execute(cfg: ExperimentConfig, output_dir: Optional[str] = None, concurrent: bool = False) -> Path:
    """Run the configured engines and write every artifact; returns the output directory."""
    from .mcref import em_run
    from .transport import run_sbtm

    out = Path(output_dir or cfg.output_dir or f"run_{cfg.example}_{cfg.hash()}")
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": cfg.hash(),
        "versions": _versions(),
        "engines": [],
        "complete": False,
        "wall_clock": {},
    }
    want_sbtm = cfg.engines in ("sbtm", "both")
    want_mc = cfg.engines in ("mc", "both")
    records = {}
    started = time.time()

    def run_engine(name):
        t0 = time.time()
        with threadpool_limits(1):
            rec = run_sbtm(cfg) if name == "sbtm" else em_run(cfg)
        manifest["wall_clock"][name] = time.time() - t0
        return name, rec

    names = [n for n, want in (("sbtm", want_sbtm), ("mc", want_mc)) if want]
    try:
        if concurrent and len(names) > 1:
            with ThreadPoolExecutor(max_workers=len(names)) as pool:
                results = list(pool.map(run_engine, names))
        else:
            results = [run_engine(n) for n in names]
        for name, rec in results:
            records[name] = rec
            rec.write(out / name)
            manifest["engines"].append(name)
        if "sbtm" in records:
            manifest["losses"] = [repr(float(v)) for v in records["sbtm"].losses]
            manifest["initial_relative_loss"] = records["sbtm"].meta.get("initial_relative_loss")
        if "sbtm" in records and "mc" in records:
            rows = metric_rows(cfg, records["sbtm"], records["mc"])
            write_metrics(rows, out / "metrics.csv")
            write_svg(tv_series_svg([r["time"] for r in rows], [r["tv"] for r in rows]), out / "tv.svg")
            manifest["metrics"] = {"tv_max": repr(max(r["tv"] for r in rows)), "tv_final": repr(rows[-1]["tv"])}
        main = records.get("sbtm") or records.get("mc")
        if main is not None and main.positions[0].shape[1] == 1:
            cols = slice(1, None) if len(main.times) > 1 else slice(None)
            write_svg(heatmap_svg(main.times[cols], main.positions[cols]), out / "heatmap.svg")
        if main is not None and cfg.kde_steps and main.positions[0].shape[1] >= 2:
            idx = [main.steps.index(s) for s in cfg.kde_steps if s in main.steps]
            if idx:
                panels = kde_panels_from_ensembles([f"step {main.steps[i]}" for i in idx],
                                                   [main.positions[i] for i in idx])
                write_svg(kde_panel_svg(panels), out / "kde_panel.svg")
        manifest["complete"] = True
    except (FloatingPointError, ValueError, ArithmeticError) as exc:
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        manifest["traceback_tail"] = traceback.format_exc().splitlines()[-3:]
        raise RunFailure(str(exc), out) from exc
    finally:
        manifest["wall_clock"]["total"] = time.time() - started
        (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return out
