"""Command-line pipeline: normalize, fuse, postprocess, evaluate, demo-net.

Cases are processed independently (optionally in parallel); every output
file is written atomically via a temp name in the target directory. Logs
go to standard error, reports and volumes to files. Exit codes: 0 clean,
1 any case-level failure, 2 configuration or usage errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor, as_completed
from pathlib import Path

import numpy as np

from glioseg.config import (
    MODALITIES,
    ConfigError,
    PipelineConfig,
    apply_overrides,
    config_to_dict,
    load_config,
)
from glioseg.metrics import aggregate, evaluate_case
from glioseg.netkit import build_msavnet, build_unet3d, build_vnet, forward, summary
from glioseg.nifti import (
    read_label_volume,
    read_scalar_volume,
    write_label_volume,
    write_scalar_volume,
)
from glioseg.postprocess import postprocess_case
from glioseg.preprocess import preprocess_volume
from glioseg.staple import fuse_labels
from glioseg.volume import Region

logger = logging.getLogger("glioseg")

EXIT_OK = 0
EXIT_CASE_FAILURE = 1
EXIT_USAGE = 2

ARCHITECTURES = {
    "unet3d": build_unet3d,
    "vnet": build_vnet,
    "msavnet": build_msavnet,
}


def _write_atomic(writer, volume, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".tmp-{os.getpid()}-{path.name}")
    try:
        writer(volume, tmp)
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


def _cases_by_suffix(directory: Path, suffix: str) -> dict[str, Path]:
    cases = {}
    for entry in sorted(directory.iterdir()):
        if entry.is_file() and entry.name.endswith(suffix) and len(entry.name) > len(suffix):
            cases[entry.name[: -len(suffix)]] = entry
    return cases


def _run_cases(case_tasks, parallel: int) -> dict[str, Exception]:
    """Run (case, thunk) pairs, isolating failures per case."""
    failures: dict[str, Exception] = {}
    if parallel <= 1 or len(case_tasks) <= 1:
        for case, task in case_tasks:
            try:
                task()
            except Exception as exc:  # noqa: BLE001 - case isolation contract
                failures[case] = exc
    else:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            pending = {pool.submit(task): case for case, task in case_tasks}
            for future in as_completed(pending):
                case = pending[future]
                try:
                    future.result()
                except Exception as exc:  # noqa: BLE001
                    failures[case] = exc
    for case in sorted(failures):
        logger.error("case %s failed: %s", case, failures[case])
    return failures


def _require_directory(path: Path, what: str) -> bool:
    if not path.is_dir():
        logger.error("%s is not a directory: %s", what, path)
        return False
    return True


def cmd_normalize(config: PipelineConfig, input_dir, output_dir) -> int:
    """Z-score and percentile-rescale every modality of every case."""
    input_dir, output_dir = Path(input_dir), Path(output_dir)
    if not _require_directory(input_dir, "input"):
        return EXIT_USAGE
    cases = sorted(p.name for p in input_dir.iterdir() if p.is_dir())
    if not cases:
        logger.warning("no case directories under %s", input_dir)
        return EXIT_OK

    def normalize_case(case: str):
        for modality in MODALITIES:
            name = case + config.modality_suffixes[modality]
            volume = read_scalar_volume(input_dir / case / name)
            result = preprocess_volume(volume, config.normalization, config.rescale)
            _write_atomic(write_scalar_volume, result, output_dir / case / name)
        logger.info("case %s: %d volumes written", case, len(MODALITIES))

    failures = _run_cases([(c, lambda c=c: normalize_case(c)) for c in cases], config.parallel_cases)
    return EXIT_CASE_FAILURE if failures else EXIT_OK


def cmd_fuse(config: PipelineConfig, strict: bool = False) -> int:
    """Fuse per-member label maps for every case shared by all members."""
    if not config.prediction_dirs:
        raise ConfigError("fuse requires at least one prediction dir (config or --members)")
    if not config.output_dir:
        raise ConfigError("fuse requires an output dir (config or --output-dir)")
    member_dirs = [Path(d) for d in config.prediction_dirs]
    for directory in member_dirs:
        if not _require_directory(directory, "member"):
            return EXIT_USAGE
    per_member = [_cases_by_suffix(d, config.label_suffix) for d in member_dirs]
    shared = set(per_member[0])
    for cases in per_member[1:]:
        shared &= set(cases)
    skipped = sorted(set().union(*per_member) - shared)
    for case in skipped:
        logger.warning("case %s missing from at least one member, skipped", case)
    if strict and skipped:
        logger.error("%d incomplete case(s) under --strict", len(skipped))
        return EXIT_CASE_FAILURE
    output_dir = Path(config.output_dir)

    def fuse_case(case: str):
        members = [read_label_volume(cases[case]) for cases in per_member]
        fused = fuse_labels(members, config.staple, config.fusion_method)
        _write_atomic(write_label_volume, fused, output_dir / (case + config.label_suffix))
        logger.info("case %s: fused %d members (%s)", case, len(members), config.fusion_method)

    tasks = [(c, lambda c=c: fuse_case(c)) for c in sorted(shared)]
    failures = _run_cases(tasks, config.parallel_cases)
    return EXIT_CASE_FAILURE if failures else EXIT_OK


def cmd_postprocess(config: PipelineConfig, input_dir, output_dir) -> int:
    """Apply label cleanup to every segmentation file in a directory."""
    input_dir, output_dir = Path(input_dir), Path(output_dir)
    if not _require_directory(input_dir, "input"):
        return EXIT_USAGE
    cases = _cases_by_suffix(input_dir, config.label_suffix)
    if not cases:
        logger.warning("no *%s files under %s", config.label_suffix, input_dir)
        return EXIT_OK

    def postprocess_one(case: str):
        labels = read_label_volume(cases[case])
        cleaned = postprocess_case(labels, config.postprocess)
        _write_atomic(write_label_volume, cleaned, output_dir / cases[case].name)
        logger.info("case %s: postprocessed", case)

    tasks = [(c, lambda c=c: postprocess_one(c)) for c in sorted(cases)]
    failures = _run_cases(tasks, config.parallel_cases)
    return EXIT_CASE_FAILURE if failures else EXIT_OK


def _report_payload(reports, missing, config) -> dict:
    cases = []
    for report in sorted(reports, key=lambda r: r.case):
        regions = {
            score.region.name: {"dice": score.dice, "hd95_mm": score.hd95_mm}
            for score in report.scores
        }
        cases.append({"case": report.case, "regions": regions})
    payload = {"cases": cases, "summary": {}, "missing": missing, "config": config_to_dict(config)}
    if reports:
        cohort = aggregate(list(reports))
        for region in Region:
            payload["summary"][region.name] = {
                "dice": dataclasses.asdict(cohort.dice[region]),
                "hd95_mm": dataclasses.asdict(cohort.hd95_mm[region]),
            }
    return payload


def cmd_evaluate(config: PipelineConfig, pred_dir, truth_dir, report_path) -> int:
    """Score predictions against references and write one JSON report."""
    pred_dir, truth_dir = Path(pred_dir), Path(truth_dir)
    if not _require_directory(pred_dir, "prediction"):
        return EXIT_USAGE
    if not _require_directory(truth_dir, "truth"):
        return EXIT_USAGE
    preds = _cases_by_suffix(pred_dir, config.label_suffix)
    truths = _cases_by_suffix(truth_dir, config.label_suffix)
    missing = sorted(set(truths) - set(preds))
    for case in missing:
        logger.error("case %s has no prediction", case)
    for case in sorted(set(preds) - set(truths)):
        logger.warning("prediction %s has no reference, ignored", case)
    reports = {}

    def evaluate_one(case: str):
        pred = read_label_volume(preds[case])
        truth = read_label_volume(truths[case])
        reports[case] = evaluate_case(pred, truth, config.metrics, case=case)
        logger.info("case %s: evaluated", case)

    shared = sorted(set(truths) & set(preds))
    failures = _run_cases([(c, lambda c=c: evaluate_one(c)) for c in shared], config.parallel_cases)

    payload = _report_payload(list(reports.values()), missing, config)
    report_path = Path(report_path)
    if report_path.parent != Path(""):
        report_path.parent.mkdir(parents=True, exist_ok=True)
    tmp = report_path.with_name(f".tmp-{os.getpid()}-{report_path.name}")
    try:
        tmp.write_text(json.dumps(payload, indent=2) + "\n")
        os.replace(tmp, report_path)
    finally:
        tmp.unlink(missing_ok=True)
    logger.info(
        "report: %d case(s) evaluated, %d missing -> %s", len(reports), len(missing), report_path
    )
    return EXIT_CASE_FAILURE if failures or missing else EXIT_OK


def cmd_demo_net(architecture: str, input_size: int) -> int:
    """Build a network, run a seeded forward pass, print the layer table."""
    build = ARCHITECTURES[architecture]
    net = build()
    if input_size < 1 or input_size % net.spatial_divisor:
        logger.error(
            "input size %d must be a positive multiple of %d for %s",
            input_size, net.spatial_divisor, architecture,
        )
        return EXIT_USAGE
    shape = (1, net.input_channels, input_size, input_size, input_size)
    x = np.random.default_rng(0).uniform(size=shape)
    out = forward(net, x)
    expected = (1, net.num_classes, input_size, input_size, input_size)
    if out.shape != expected:
        raise AssertionError(f"forward produced {out.shape}, expected {expected}")
    print(summary(net, spatial=(input_size,) * 3))
    print(f"forward: input {shape} -> output {out.shape}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glioseg",
        description="Brain tumor segmentation pipeline: preprocessing, "
        "ensemble label fusion, cleanup, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH", help="JSON configuration file")
        p.add_argument("--parallel", type=int, metavar="N", help="concurrent case pipelines")

    p = sub.add_parser("normalize", help="z-score and rescale every case's modalities")
    p.add_argument("input_dir")
    p.add_argument("output_dir")
    common(p)

    p = sub.add_parser("fuse", help="fuse per-member predictions into consensus labels")
    common(p)
    p.add_argument("--members", nargs="+", metavar="DIR", help="one directory per ensemble member")
    p.add_argument("--output-dir", metavar="DIR")
    p.add_argument("--method", choices=["staple", "majority"])
    p.add_argument("--staple-tol", type=float, metavar="TOL")
    p.add_argument("--staple-max-iter", type=int, metavar="N")
    p.add_argument("--strict", action="store_true", help="fail on cases missing from a member")

    p = sub.add_parser("postprocess", help="clean fused segmentations")
    p.add_argument("input_dir")
    p.add_argument("output_dir")
    common(p)
    p.add_argument("--et-min-volume", type=int, metavar="VOXELS")
    p.add_argument("--connectivity", type=int, choices=[6, 18, 26])

    p = sub.add_parser("evaluate", help="score predictions and write a JSON report")
    p.add_argument("pred_dir")
    p.add_argument("truth_dir")
    p.add_argument("report")
    common(p)

    p = sub.add_parser("demo-net", help="build an architecture and print its layer table")
    p.add_argument("architecture", choices=sorted(ARCHITECTURES))
    p.add_argument("--size", type=int, default=32, metavar="N", help="cubic input size")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "demo-net":
            return cmd_demo_net(args.architecture, args.size)
        config = load_config(args.config)
        overrides = {
            key: getattr(args, key)
            for key in (
                "parallel", "method", "staple_tol", "staple_max_iter",
                "et_min_volume", "connectivity", "members", "output_dir",
            )
            if hasattr(args, key)
        }
        if args.command == "fuse":
            config = apply_overrides(config, **overrides)
            return cmd_fuse(config, strict=args.strict)
        overrides.pop("output_dir", None)  # positional for the other commands
        config = apply_overrides(config, **overrides)
        if args.command == "normalize":
            return cmd_normalize(config, args.input_dir, args.output_dir)
        if args.command == "postprocess":
            return cmd_postprocess(config, args.input_dir, args.output_dir)
        return cmd_evaluate(config, args.pred_dir, args.truth_dir, args.report)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
