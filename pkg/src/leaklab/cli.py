from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional

from pydantic import ValidationError

from . import __version__
from .config import ExperimentConfig, load_config, settings
from .dataset import GeneratorConfig, generate, ingest_manifest, write_dataset
from .errors import ConfigError, LeakLabError
from .harness import load_videos, run_matrix, summarize, write_run
from .log import configure
from .report import emit_figure_data, load_artifacts, render_table
from .splitter import audit, load_plan, save_plan, split_clean, split_ft_leaky, split_seed


def _config(path: str | None) -> ExperimentConfig:
    return load_config(path) if path else ExperimentConfig()


def _cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = _config(args.config)
    gen = cfg.generator or GeneratorConfig()
    if args.seed is not None:
        gen = gen.model_copy(update={"seed": args.seed})
    manifest = write_dataset(generate(gen), args.out)
    print(f"[gen-data] wrote {gen.n_videos} videos to {manifest}")
    return 0


def _cmd_split(args: argparse.Namespace) -> int:
    cfg = _config(args.config)
    videos = load_videos(cfg)
    s = cfg.splits
    splitter = split_ft_leaky if args.kind == "leaky" else split_clean
    plan = splitter(
        videos,
        s.frame_fraction,
        s.train_val_ratio,
        split_seed(cfg.seed, args.split_index),
        frame_sampling=s.frame_sampling,
        video_split_ratio=s.video_split_ratio,
    )
    save_plan(plan, args.out)
    print(f"[split] {args.kind} plan: {len(plan.train_videos)}/{len(plan.val_videos)}/{len(plan.test_videos)} videos -> {args.out}")
    return 0


def _cmd_audit(args: argparse.Namespace) -> int:
    plan = load_plan(args.plan)
    videos = ingest_manifest(args.manifest) if args.manifest else load_videos(_config(args.config))
    report = audit(plan, videos)
    payload = report.model_dump()
    payload["consistent"] = report.consistent
    payload["tainted_fraction"] = report.tainted_fraction
    print(json.dumps(payload, indent=2))
    if not report.consistent:
        print("[audit] plan flags disagree with the computed audit", file=sys.stderr)
        return 1
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = _config(args.config)
    update: dict[str, object] = {}
    if args.protocol:
        update["protocols"] = {**cfg.protocols.model_dump(), "ids": args.protocol}
    if args.seeds is not None:
        update["n_splits"] = args.seeds
    if args.parallel is not None:
        update["parallel"] = args.parallel
    elif cfg.parallel == 1 and settings.parallel > 1:
        update["parallel"] = settings.parallel
    if args.cache_dir:
        update["cache_dir"] = Path(args.cache_dir)
    elif cfg.cache_dir is None and settings.cache_dir:
        update["cache_dir"] = Path(settings.cache_dir)
    if update:
        # revalidate so CLI overrides get the same checks as the file
        try:
            cfg = ExperimentConfig.model_validate({**cfg.model_dump(), **update})
        except ValidationError as e:
            raise ConfigError(f"invalid command-line override:\n{e}") from e

    videos = load_videos(cfg)
    outcome = run_matrix(videos, cfg)
    write_run(outcome, cfg, args.out)
    print(render_table(summarize(outcome.results)).to_text(), end="")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    artifacts = load_artifacts(args.in_dir)
    table = render_table(artifacts.reports, artifacts.reference)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    text = table.to_csv() if args.format == "csv" else table.to_text()
    (out / f"table.{'csv' if args.format == 'csv' else 'txt'}").write_text(text, encoding="utf-8")
    emit_figure_data(artifacts, out)
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="leaklab",
        description="Data-leakage forensics for a two-stage feature-extractor + SVR quality pipeline.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--log-level",
        default=settings.log_level,
        help="Logging level (default from LEAKLAB_LOG_LEVEL, else INFO)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="Write a synthetic dataset in the manifest layout")
    p.add_argument("--out", required=True, help="Output directory")
    p.add_argument("--seed", type=int, default=None, help="Generator seed (overrides the config)")
    p.add_argument("--config", default=None, help="Experiment config whose generator section is used")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("split", help="Draw one split plan and save it as JSON")
    p.add_argument("--out", required=True, help="Plan file to write")
    p.add_argument("--config", default=None, help="Experiment config (default: built-in)")
    p.add_argument("--kind", choices=("clean", "leaky"), default="clean")
    p.add_argument("--split-index", type=int, default=0, dest="split_index")
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("audit", help="Print the leakage audit of a saved split plan")
    p.add_argument("--plan", required=True, help="SplitPlan JSON file")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--manifest", default=None, help="Dataset manifest the plan refers to")
    src.add_argument("--config", default=None, help="Experiment config naming the dataset")
    p.set_defaults(func=_cmd_audit)

    p = sub.add_parser("run", help="Run the protocol matrix and persist results")
    p.add_argument("--config", default=None, help="Experiment config (YAML or JSON)")
    p.add_argument("--out", required=True, help="Run directory")
    p.add_argument(
        "--protocol",
        action="append",
        default=None,
        help="Protocol id to run; repeat for several (default: all configured)",
    )
    p.add_argument("--seeds", type=int, default=None, help="Number of derived split seeds")
    p.add_argument("--parallel", type=int, default=None, help="Worker threads")
    p.add_argument("--cache-dir", default=None, dest="cache_dir", help="Feature cache root")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("report", help="Render the table and figure data from a run directory")
    p.add_argument("--in", required=True, dest="in_dir", help="Run directory written by `run`")
    p.add_argument("--out", required=True, help="Report directory")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure(args.log_level)
    try:
        return args.func(args)
    except LeakLabError as e:
        print(f"[leaklab] error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
