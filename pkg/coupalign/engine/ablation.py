"""
消融实验：组件消融 (WPA 方向 × SMA × 辅助损失)、WPA 位置、掩码提议数 N

每个单元格用多个随机种子各训练一次，汇总 val 指标的均值与标准差。
"""
import csv
import itertools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Optional, Sequence

import numpy as np

from coupalign.config import RunConfig
from coupalign.data.synth import Dataset
from coupalign.engine.trainer import Trainer
from coupalign.schemas.report import EvalMetrics, TrainResult
from coupalign.utils.errors import ConfigError

logger = logging.getLogger(__name__)

METRIC_NAMES = ("oIoU", "mIoU", "prec50", "prec70", "prec90")
DEFAULT_SEEDS = (0, 1, 2)
TOLERANCE = -0.01


@dataclass(frozen=True)
class Cell:
    name: str
    overrides: dict[str, Any]


def component_grid() -> list[Cell]:
    cells = []
    for mode, sma, aux in itertools.product(("bi", "uni", "off"), (True, False), (True, False)):
        name = f"wpa={mode},sma={'on' if sma else 'off'},aux={'on' if aux else 'off'}"
        cells.append(Cell(name, {"wpa.mode": mode, "sma.enabled": sma, "aux.enabled": aux}))
    return cells


def position_grid() -> list[Cell]:
    subsets = ("1,2,3,4", "1,2", "3,4", "4", "3", "2", "1")
    return [Cell(f"stages={s}", {"wpa.mode": "bi", "wpa.stages": s}) for s in subsets]


def queries_grid() -> list[Cell]:
    return [Cell(f"N={n}", {"model.n_queries": n}) for n in (4, 16, 64)]


GRIDS: dict[str, Callable[[], list[Cell]]] = {
    "components": component_grid,
    "position": position_grid,
    "queries": queries_grid,
}

# 方向性检查：(较强, 较弱) 单元格对，均值差应 >= TOLERANCE
DIRECTIONAL = (
    ("wpa=bi,sma=on,aux=on", "wpa=uni,sma=on,aux=on"),
    ("wpa=uni,sma=on,aux=on", "wpa=off,sma=on,aux=on"),
    ("wpa=bi,sma=on,aux=on", "wpa=bi,sma=off,aux=on"),
    ("wpa=bi,sma=on,aux=on", "wpa=bi,sma=on,aux=off"),
)


def select_cells(grid: str, names: Optional[Sequence[str]] = None) -> list[Cell]:
    if grid not in GRIDS:
        raise ConfigError(f"未知的消融网格 {grid!r}，可选 {sorted(GRIDS)}")
    cells = GRIDS[grid]()
    if names:
        known = {cell.name: cell for cell in cells}
        missing = [name for name in names if name not in known]
        if missing:
            raise ConfigError(f"网格 {grid} 中不存在单元格 {missing}")
        cells = [known[name] for name in names]
    return cells


@dataclass
class AblationRow:
    cell: str
    seed: int
    metrics: EvalMetrics
    out_dir: str


@dataclass
class CellSummary:
    cell: str
    seeds: int
    mean: dict[str, float]
    sd: dict[str, float]


TrainFn = Callable[[RunConfig, Path], TrainResult]


def default_train_fn(train_set: Dataset, val_set: Dataset) -> TrainFn:
    def train(run: RunConfig, out_dir: Path) -> TrainResult:
        return Trainer(run, train_set, val_set, out_dir).fit()
    return train


def run_ablation(base: RunConfig, cells: Sequence[Cell], seeds: Sequence[int], out_dir: Path,
                 train_fn: TrainFn) -> list[AblationRow]:
    rows = []
    for cell in cells:
        for seed in seeds:
            run = base.with_overrides({**cell.overrides, "seed": seed})
            cell_dir = Path(out_dir) / _slug(cell.name) / f"seed{seed}"
            logger.info(f"消融单元格 {cell.name} seed={seed}")
            result = train_fn(run, cell_dir)
            best = max(result.epochs, key=lambda e: e.val.oIoU) if result.epochs else None
            if best is None:
                raise ConfigError(f"单元格 {cell.name} 没有完成任何 epoch")
            rows.append(AblationRow(cell.name, seed, best.val, str(cell_dir)))
    return rows


def _slug(name: str) -> str:
    return name.replace("=", "-").replace(",", "_")


def summarize(rows: Sequence[AblationRow]) -> list[CellSummary]:
    summaries = []
    for cell in dict.fromkeys(row.cell for row in rows):
        chosen = [row for row in rows if row.cell == cell]
        values = {name: np.array([getattr(row.metrics, name) for row in chosen]) for name in METRIC_NAMES}
        summaries.append(CellSummary(
            cell=cell,
            seeds=len(chosen),
            mean={name: float(v.mean()) for name, v in values.items()},
            sd={name: float(v.std(ddof=1)) if v.size > 1 else 0.0 for name, v in values.items()},
        ))
    return summaries


def directional_check(summaries: Sequence[CellSummary], metric: str = "mIoU",
                      tolerance: float = TOLERANCE) -> list[str]:
    """返回违反方向性预期的描述；参与比较的单元格缺失时跳过该对"""
    means = {s.cell: s.mean[metric] for s in summaries}
    violations = []
    for strong, weak in DIRECTIONAL:
        if strong in means and weak in means and means[strong] - means[weak] < tolerance:
            violations.append(f"{strong} ({means[strong]:.4f}) < {weak} ({means[weak]:.4f}) 超出容差 {tolerance}")
    return violations


def render_table(summaries: Sequence[CellSummary]) -> str:
    header = ["cell", "seeds"] + list(METRIC_NAMES)
    body = [[s.cell, str(s.seeds)] + [f"{s.mean[m]:.4f}±{s.sd[m]:.4f}" for m in METRIC_NAMES]
            for s in summaries]
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = ["  ".join(value.ljust(width) for value, width in zip(row, widths)).rstrip()
             for row in [header] + body]
    return "\n".join(lines) + "\n"


def write_report(out_dir: Path, rows: Sequence[AblationRow], summaries: Sequence[CellSummary],
                 violations: Sequence[str]) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "ablation.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["cell", "seed"] + list(METRIC_NAMES) + ["n"])
        for row in rows:
            writer.writerow([row.cell, row.seed] + [getattr(row.metrics, m) for m in METRIC_NAMES] + [row.metrics.n])
    with open(out_dir / "summary.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["cell", "seeds"] + [f"{m}_{k}" for m in METRIC_NAMES for k in ("mean", "sd")])
        for s in summaries:
            writer.writerow([s.cell, s.seeds] + [v for m in METRIC_NAMES for v in (s.mean[m], s.sd[m])])
    report = render_table(summaries)
    report += "\n" + ("\n".join(f"VIOLATION: {v}" for v in violations) if violations else "directional check: ok")
    (out_dir / "ablation.txt").write_text(report + "\n", encoding="utf-8")
