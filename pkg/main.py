"""
coupalign 命令行入口

    python main.py gen-data --seed 0 --out data
    python main.py train --config configs/desk.conf --out-dir runs/full
    python main.py eval --config configs/desk.conf --out-dir runs/full
    python main.py ablate --grid components --config configs/desk.conf
    python main.py reference --seeds 0,1,2
    python main.py gradcheck
    python main.py export-attn --out-dir runs/full --split val --index 0
    python main.py serve
"""
import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from coupalign.config import RunConfig, config, load_run_config
from coupalign.utils.errors import ConfigError, CoupAlignError, NumericError

logger = logging.getLogger("coupalign")


def parse_overrides(pairs: Sequence[str]) -> dict[str, str]:
    overrides = {}
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigError(f"--set 需要 key=value 形式，实际 {pair!r}")
        key, value = (part.strip() for part in pair.split("=", 1))
        overrides[key] = value
    return overrides


def resolve_run(args: argparse.Namespace) -> RunConfig:
    """默认值 < --config 文件 < --set 覆盖 < 专用参数"""
    overrides = parse_overrides(getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "data", None):
        overrides["data.dir"] = args.data
    return load_run_config(args.config, overrides)


def default_out_dir(run: RunConfig, out_dir: Optional[str]) -> Path:
    return Path(out_dir) if out_dir else Path("runs") / f"seed{run.seed}-{run.config_hash()[:8]}"


def load_splits(run: RunConfig, names: Sequence[str]) -> dict:
    from coupalign.data.store import load_split
    return {name: load_split(run.data.dir, name) for name in names}


def record(run: RunConfig, result, name: str, kind: str = "train", cell: Optional[str] = None) -> None:
    if not config.registry_enabled:
        return
    from coupalign.db.database import SessionLocal, create_tables
    from coupalign.db.registry import record_run
    try:
        create_tables()
        with SessionLocal() as db:
            record_run(db, run, result, name, kind, cell, data_dir=str(Path(run.data.dir).resolve()))
    except Exception as e:
        # 运行记录失败不影响训练产物
        logger.error(f"写入运行记录失败: {e}")


def cmd_gen_data(args: argparse.Namespace) -> int:
    from coupalign.data.store import save_dataset
    from coupalign.data.synth import generate

    run = resolve_run(args)
    out = Path(args.out or run.data.dir)
    counts = {"train": args.n or run.data.n_train, "val": run.data.n_val, "test": run.data.n_test}
    for split, count in counts.items():
        dataset = generate(run.seed, count, run.data.height, run.data.width, run.data.t_max, split)
        save_dataset(dataset, out / split)
    logger.info(f"数据集已生成: {out} ({counts})")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    from coupalign.engine.trainer import Trainer

    run = resolve_run(args)
    out_dir = default_out_dir(run, args.out_dir)
    splits = load_splits(run, ("train", "val", "test"))
    trainer = Trainer(run, splits["train"], splits["val"], out_dir)
    result = trainer.fit(resume_from=Path(args.resume) if args.resume else None, test_set=splits["test"])
    logger.info(f"训练完成: 最佳 epoch {result.best_epoch + 1}，val oIoU {result.best_val_oiou:.4f}，产物目录 {out_dir}")
    if result.test is not None:
        logger.info(f"test: oIoU {result.test.oIoU:.4f} mIoU {result.test.mIoU:.4f} prec@0.5 {result.test.prec50:.4f}")
    record(run, result, args.name or out_dir.name)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    from coupalign.engine.trainer import evaluate_splits, load_model

    run = resolve_run(args)
    out_dir = default_out_dir(run, args.out_dir)
    checkpoint = Path(args.checkpoint) if args.checkpoint else out_dir / "best.catn"
    model = load_model(run, checkpoint)
    names = [name.strip() for name in args.splits.split(",") if name.strip()]
    evaluate_splits(model, load_splits(run, names), out_dir, run.schedule.batch_size)
    return 0


def cmd_ablate(args: argparse.Namespace) -> int:
    from coupalign.engine import ablation
    from coupalign.engine.trainer import Trainer

    run = resolve_run(args)
    out_dir = Path(args.out_dir or Path("runs") / f"ablate-{args.grid}")
    cells = ablation.select_cells(args.grid, [c for c in (args.cells or "").split(";") if c])
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    splits = load_splits(run, ("train", "val"))

    def train(cell_run: RunConfig, cell_dir: Path):
        result = Trainer(cell_run, splits["train"], splits["val"], cell_dir).fit()
        record(cell_run, result, f"{out_dir.name}/{cell_dir.parent.name}/{cell_dir.name}", kind="ablate",
               cell=cell_dir.parent.name)
        return result

    rows = ablation.run_ablation(run, cells, seeds, out_dir, train)
    summaries = ablation.summarize(rows)
    violations = ablation.directional_check(summaries)
    ablation.write_report(out_dir, rows, summaries, violations)
    print(ablation.render_table(summaries), end="")
    for violation in violations:
        logger.warning(f"方向性检查未通过: {violation}")
    return 0


def cmd_reference(args: argparse.Namespace) -> int:
    from coupalign.engine import reference
    from coupalign.engine.ablation import default_train_fn

    args.config = args.config or reference.REFERENCE_CONFIG
    run = resolve_run(args)
    out_dir = Path(args.out_dir or Path("runs") / "reference")
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    splits = load_splits(run, ("train", "val"))
    rows = reference.run_reference(run, seeds, out_dir, default_train_fn(splits["train"], splits["val"]))
    reference.write_reference(Path(args.results) if args.results else reference.REFERENCE_RESULTS, rows)
    failed = [row.seed for row in rows if not row.passed]
    if failed:
        logger.warning(f"参考运行未达到冻结阈值 (mIoU >= {reference.MIN_VAL_MIOU}, prec@0.5 >= "
                       f"{reference.MIN_VAL_PREC50})：seed {failed}")
        return 1
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    from coupalign.engine.diagnostics import CHECKS, render_rows, run_suite

    names = [name.strip() for name in (args.checks or "").split(",") if name.strip()]
    unknown = [name for name in names if name not in CHECKS]
    if unknown:
        raise ConfigError(f"未知的检验项 {unknown}，可选 {list(CHECKS)}")
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    rows = run_suite(names, seeds, args.tol)
    print(render_rows(rows), end="")
    failed = [row.name for row in rows if not row.passed]
    if failed:
        raise NumericError(f"梯度检验失败: {sorted(set(failed))}")
    return 0


def cmd_export_attn(args: argparse.Namespace) -> int:
    from coupalign.data.store import load_sample
    from coupalign.engine.export import export_attention
    from coupalign.engine.trainer import load_model

    run = resolve_run(args)
    out_dir = default_out_dir(run, args.out_dir)
    checkpoint = Path(args.checkpoint) if args.checkpoint else out_dir / "best.catn"
    model = load_model(run, checkpoint)
    sample = load_sample(Path(run.data.dir) / args.split, args.index)
    export_attention(model, sample, out_dir / "attention" / f"{args.split}-{args.index}", args.top_k)
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn
    uvicorn.run("coupalign.server:app", host=args.host or config.api_host, port=args.port or config.api_port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coupalign", description="CoupAlign 指代分割：数据生成、训练、评估、消融与诊断")
    parser.add_argument("-v", "--verbose", action="store_true", help="输出 DEBUG 日志")
    sub = parser.add_subparsers(dest="command", required=True)

    def run_options(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=Path, default=None, help="key = value 格式的配置文件")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="覆盖配置项，可重复")
        p.add_argument("--data", default=None, help="数据集目录 (覆盖 data.dir)")

    p = sub.add_parser("gen-data", help="生成合成数据集")
    run_options(p)
    p.add_argument("--n", type=int, default=None, help="训练集样本数")
    p.add_argument("--out", default=None, help="输出目录 (默认 data.dir)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="训练模型")
    run_options(p)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--resume", default=None, help="从检查点继续训练")
    p.add_argument("--name", default=None, help="运行记录名称")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="评估检查点")
    run_options(p)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--checkpoint", default=None, help="默认 {out-dir}/best.catn")
    p.add_argument("--splits", default="val,test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="消融实验")
    run_options(p)
    p.add_argument("--grid", default="components", choices=["components", "position", "queries"])
    p.add_argument("--cells", default=None, help="只运行这些单元格，用 ; 分隔")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--out-dir", default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("reference", help="完整模型的 3 种子参考运行，对照冻结的验证阈值")
    run_options(p)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--out-dir", default=None)
    p.add_argument("--results", default=None, help="参考运行结果 CSV (默认 configs/reference_run.csv)")
    p.set_defaults(func=cmd_reference)

    p = sub.add_parser("gradcheck", help="梯度检验套件")
    p.add_argument("--checks", default=None, help="只运行这些检验项，用 , 分隔")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export-attn", help="导出注意力图")
    run_options(p)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--split", default="val", choices=["train", "val", "test"])
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--top-k", type=int, default=3)
    p.set_defaults(func=cmd_export_attn)

    p = sub.add_parser("serve", help="启动运行记录 HTTP 服务")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose or config.debug else getattr(logging, config.log_level.upper(), logging.INFO)
    logging.basicConfig(level=level, format='%(asctime)s - %(levelname)s - %(message)s')
    try:
        return args.func(args)
    except CoupAlignError as e:
        logger.error(f"{type(e).__name__}: {e.detail}")
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
