#!/usr/bin/env python3
"""
憶阻癲癇預測模擬器的命令列入口
python main.py <命令> [--config config.yaml]
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from pydantic import ValidationError

from memseizure.config import RunConfig, load_config
from memseizure.costmodel import ReadoutMode, estimate, format_table, write_cost_csv
from memseizure.crossbar import WeightScheme, export_conductances
from memseizure.dataset import WindowDataset
from memseizure.device import CONTINUOUS, DeviceParameters
from memseizure.digests import FileDigests
from memseizure.errors import ConfigError, InvalidInputError, MemSeizureError, MissingInputError
from memseizure.evaluation import FoldModel, SweepSettings, evaluate_backend, sweep, write_metrics_csv
from memseizure.network import IdealBackend, NetworkSpec, map_network
from memseizure.preprocess import build_dataset
from memseizure.synthetic import toy_dataset, write_edf_fixtures
from memseizure.training import FOLDS_FILE, load_fold_plan, train_folds
from memseizure.weights_io import load_weights

logger = logging.getLogger("memseizure.cli")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _states(value: str):
    if value.lower() == CONTINUOUS:
        return CONTINUOUS
    try:
        return int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"狀態數必須是整數或 continuous: {value}")


def _log_digests(paths: Sequence[Path]) -> None:
    digests = FileDigests()
    for path in paths:
        path = Path(path)
        if path.is_dir():
            for name, digest in digests.hash_directory(path).items():
                logger.info("sha256 %s  %s", digest, path / name)
        elif path.is_file():
            logger.info("sha256 %s  %s", digests.hash_file(path), path)


def _progress(args) -> bool:
    return not args.quiet and sys.stderr.isatty()


def _dataset_spec(dataset: WindowDataset) -> NetworkSpec:
    """從數據集的 meta 重建網絡規格"""
    try:
        n, p, bins = dataset.window_shape
        t = int(dataset.meta["t"])
        rate = int(dataset.meta["sample_rate"])
        return NetworkSpec(n=n, t=t, sample_rate=rate, hop=t * rate // p, frequency_bins=bins)
    except (KeyError, ZeroDivisionError, ValidationError) as e:
        raise InvalidInputError(f"數據集 meta 無法確定網絡規格: {e}") from e


def _load_models(config: RunConfig, dataset: WindowDataset) -> List[FoldModel]:
    plan = load_fold_plan(config.paths.weights / FOLDS_FILE, dataset.synthetic)
    return [
        FoldModel(fold, load_weights(config.paths.weights / f"fold_{fold}"), plan.validation[fold])
        for fold in range(plan.k)
    ]


def _fold_seed(seed: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, fold]).generate_state(1)[0])


# ---- 命令 ----

def cmd_synth_data(args, config: RunConfig) -> int:
    """生成玩具數據集和/或 EDF 樣例目錄"""
    written: List[Path] = []
    if args.kind in ("toy", "both"):
        network = config.network
        spec = NetworkSpec(n=config.channels or 1, t=network.t, sample_rate=network.sample_rate,
                           hop=network.hop, frequency_bins=network.frequency_bins)
        dataset = toy_dataset(args.count, spec, seed=config.seed)
        written.append(dataset.save(config.paths.dataset))
        print(f"玩具數據集: {config.paths.dataset} {dataset.class_counts()}")
    if args.kind in ("edf", "both"):
        files = write_edf_fixtures(
            config.paths.data_dir,
            files=args.files,
            channels=config.channels or 2,
            seconds_per_file=args.seconds,
            sample_rate=config.network.sample_rate,
            seed=config.seed,
        )
        written.extend(files)
        print(f"EDF 樣例: {config.paths.data_dir} ({len(files)} 個文件)")
    _log_digests(written)
    return EXIT_OK


def cmd_preprocess(args, config: RunConfig) -> int:
    """EDF 目錄 → 窗口數據集"""
    dataset = build_dataset(
        config.paths.data_dir,
        config.paths.dataset,
        clinical=config.clinical,
        channels=config.channels,
        workers=config.workers,
        progress=_progress(args),
    )
    counts = dataset.class_counts()
    print(f"窗口: {len(dataset)}  發作間期: {counts['interictal']}  發作前期: {counts['preictal']}  "
          f"合成: {int(dataset.synthetic.sum())}")
    print(f"重疊步長 S = {dataset.meta['step']:.6g} s")
    _log_digests([config.paths.dataset])
    return EXIT_OK


def cmd_train(args, config: RunConfig) -> int:
    """k 折訓練並寫出每折的權重"""
    dataset = WindowDataset.load(config.paths.dataset)
    spec = _dataset_spec(dataset)
    settings = config.training
    if args.epochs is not None:
        settings = settings.model_copy(update={"epochs": args.epochs})
    results = train_folds(spec, dataset, settings, config.seed, config.paths.weights, config.workers,
                          _progress(args))
    for result in results:
        if result.log:
            epoch, _, loss, accuracy = result.log[-1]
            print(f"fold {result.fold}: epoch {epoch} loss {loss:.4f} 訓練準確率 {accuracy:.4f}")
        else:
            print(f"fold {result.fold}: 未訓練 (epochs=0)")
    _log_digests([config.paths.weights])
    return EXIT_OK


def cmd_simulate(args, config: RunConfig) -> int:
    """每折在理想或憶阻後端上推理並計算指標"""
    dataset = WindowDataset.load(config.paths.dataset)
    spec = _dataset_spec(dataset)
    models = _load_models(config, dataset)

    overrides: Dict[str, Any] = {}
    if args.sigma is not None:
        overrides["sigma"] = args.sigma
    if args.states is not None:
        overrides["n_states"] = args.states
    try:
        params = DeviceParameters(**{**config.device.model_dump(), **overrides})
    except ValidationError as e:
        raise ConfigError(f"器件參數無效: {e}") from e
    crossbar = config.crossbar
    if args.scheme is not None:
        crossbar = crossbar.model_copy(update={"scheme": WeightScheme(args.scheme)})

    output = config.paths.output_dir / "simulate"
    written: List[Path] = []
    reports = []
    for model in models:
        if args.backend == "ideal":
            backend, digital = IdealBackend(), model.weights
        else:
            backend, digital = map_network(
                model.weights,
                params,
                crossbar.scheme,
                tile=crossbar.tile,
                seed=_fold_seed(config.seed, model.fold),
                read_voltage=crossbar.read_voltage,
                fold_bn=crossbar.fold_batchnorm,
            )
            if args.dump_conductances:
                path = output / f"conductances_fold_{model.fold}.csv"
                export_conductances(backend.layers, path)
                written.append(path)
        report = evaluate_backend(spec, digital, dataset, model.validation, backend, config.sweep.threshold)
        reports.append((model.fold, backend.name, report))
        print(f"fold {model.fold} [{backend.name}] 準確率 {report.accuracy:.4f} 敏感度 {report.sensitivity:.4f} "
              f"AUROC {report.auroc:.4f} FPR/h {report.fpr_per_hour:.4f}")

    written.append(write_metrics_csv(reports, output / "metrics.csv"))
    _log_digests(written)
    return EXIT_OK


def cmd_sweep(args, config: RunConfig) -> int:
    """σ × 狀態數 × 種子的器件變異掃描"""
    dataset = WindowDataset.load(config.paths.dataset)
    spec = _dataset_spec(dataset)
    models = _load_models(config, dataset)

    update: Dict[str, Any] = {}
    if args.sigmas:
        update["sigmas"] = args.sigmas
    if args.states:
        update["states"] = args.states
    if args.seeds is not None:
        update["seeds"] = args.seeds
    try:
        settings = SweepSettings(**{**config.sweep.model_dump(), **update})
    except ValidationError as e:
        raise ConfigError(f"掃描參數無效: {e}") from e

    grid = sweep(spec, models, dataset, settings, config.crossbar, config.device, config.seed, config.workers,
                 _progress(args))
    output = config.paths.output_dir / "sweep"
    written = [grid.write_csv(output / "sweep.csv"), grid.write_summary_csv(output / "sweep_summary.csv")]
    for entry in grid.summary():
        print(f"σ={entry['sigma']:g} states={entry['n_states']} 敏感度 {entry['sensitivity_mean']:.4f}"
              f"±{entry['sensitivity_std']:.4f} AUROC {entry['auroc_mean']:.4f}±{entry['auroc_std']:.4f}")
    _log_digests(written)
    return EXIT_OK


def cmd_cost(args, config: RunConfig) -> int:
    """TDM / 並行讀出的硬件成本"""
    modes = [ReadoutMode.TDM, ReadoutMode.PARALLEL] if args.mode == "both" else [ReadoutMode(args.mode)]
    reports = [estimate(config.network, config.hardware, mode, args.strict_double_column) for mode in modes]
    path = write_cost_csv(reports, config.paths.output_dir / "cost" / "cost_report.csv")
    print(format_table(reports))
    _log_digests([path])
    return EXIT_OK


def cmd_digest(args, config: RunConfig) -> int:
    """列出目錄下每個文件的摘要"""
    for name, digest in FileDigests(args.algorithm).hash_directory(args.directory).items():
        print(f"{digest}  {name}")
    return EXIT_OK


def cmd_config(args, config: RunConfig) -> int:
    if args.dump:
        print(config.dump(), end="")
    else:
        print("配置有效")
    return EXIT_OK


# ---- 參數解析 ----

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memseizure",
        description="憶阻交叉陣列癲癇預測網絡：預處理、訓練、推理模擬與硬件成本估算",
    )
    parser.add_argument("--config", help="YAML 配置文件（默認 $MEMSEIZE_CONFIG 或 ./config.yaml）")
    parser.add_argument("-v", "--verbose", action="store_true", help="輸出 DEBUG 日誌")
    parser.add_argument("--quiet", action="store_true", help="不顯示進度條")
    parser.add_argument("--seed", type=int, help="覆蓋配置中的隨機種子")
    parser.add_argument("--workers", type=int, help="覆蓋配置中的工作進程數")
    parser.add_argument("--output-dir", help="覆蓋輸出目錄")
    parser.add_argument("--data-dir", help="覆蓋 EDF 數據目錄")
    commands = parser.add_subparsers(dest="command", required=True, metavar="命令")

    synth = commands.add_parser("synth-data", help="生成玩具數據集與 EDF 樣例")
    synth.add_argument("--kind", choices=["toy", "edf", "both"], default="both")
    synth.add_argument("--count", type=int, default=64, help="玩具數據集窗口數")
    synth.add_argument("--files", type=int, default=3, help="EDF 文件數")
    synth.add_argument("--seconds", type=int, default=600, help="每個 EDF 文件的秒數")
    synth.set_defaults(handler=cmd_synth_data, action_name="生成數據")

    preprocess = commands.add_parser("preprocess", help="EDF 與摘要文件 → 窗口數據集")
    preprocess.set_defaults(handler=cmd_preprocess, action_name="預處理")

    train = commands.add_parser("train", help="k 折訓練")
    train.add_argument("--epochs", type=int, help="覆蓋訓練輪數")
    train.set_defaults(handler=cmd_train, action_name="訓練")

    simulate = commands.add_parser("simulate", help="在理想或憶阻後端上推理")
    simulate.add_argument("--backend", choices=["ideal", "memristive"], default="memristive")
    simulate.add_argument("--sigma", type=float, help="R_ON 標準差 (Ω)")
    simulate.add_argument("--states", type=_states, help="電導狀態數或 continuous")
    simulate.add_argument("--scheme", choices=[scheme.value for scheme in WeightScheme])
    simulate.add_argument("--dump-conductances", action="store_true", help="寫出每個單元的電導")
    simulate.set_defaults(handler=cmd_simulate, action_name="模擬")

    sweep_parser = commands.add_parser("sweep", help="σ × 狀態數掃描")
    sweep_parser.add_argument("--sigmas", type=float, nargs="+")
    sweep_parser.add_argument("--states", type=_states, nargs="+")
    sweep_parser.add_argument("--seeds", type=int)
    sweep_parser.set_defaults(handler=cmd_sweep, action_name="掃描")

    cost = commands.add_parser("cost", help="硬件成本估算")
    cost.add_argument("--mode", choices=["tdm", "parallel", "both"], default="both")
    cost.add_argument("--strict-double-column", action="store_true", help="雙列方案按兩倍分塊計算")
    cost.set_defaults(handler=cmd_cost, action_name="成本估算")

    digest = commands.add_parser("digest", help="列出輸出文件的摘要")
    digest.add_argument("directory")
    digest.add_argument("--algorithm", default="sha256")
    digest.set_defaults(handler=cmd_digest, action_name="摘要計算")

    config = commands.add_parser("config", help="驗證並顯示配置")
    config.add_argument("--dump", action="store_true", help="以 YAML 輸出解析後的完整配置")
    config.set_defaults(handler=cmd_config, action_name="配置")
    return parser


def _overrides(args) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    paths: Dict[str, Any] = {}
    if args.output_dir is not None:
        paths["output_dir"] = args.output_dir
    if args.data_dir is not None:
        paths["data_dir"] = args.data_dir
    if paths:
        overrides["paths"] = paths
    return overrides


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format=LOG_FORMAT, stream=sys.stderr)
    try:
        config = load_config(args.config, _overrides(args))
        logging.getLogger().setLevel(logging.DEBUG if args.verbose else config.log_level.upper())
        return args.handler(args, config)
    except (ConfigError, MissingInputError) as e:
        logger.error("%s失敗: %s", args.action_name, e)
        return EXIT_USAGE
    except MemSeizureError as e:
        logger.error("%s失敗: %s", args.action_name, e)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
