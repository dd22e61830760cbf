"""
Command-line entry point.

    tagsentry emulate   --config c.json --out dir/
    tagsentry detect    --records r.jsonl --topology t.json [--coarse-only] --out labels.json
    tagsentry misplaced --records r.jsonl --topology t.json --top 10
    tagsentry removed   --records r.jsonl --topology t.json --top 10
    tagsentry evaluate  --labels labels.json --truth truth.json --out report.json
    tagsentry pipeline  --config c.json --out dir/

Exit status: 0 ok, 1 invalid input, 2 numeric failure, 64 usage error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from pathlib import Path

from . import coarse, emulator, ingest, metrics, misplacement, removal, truthdiscovery
from .datamodel import DetectionConfig, featurize
from .errors import NumericError, TagSentryError, ValidationError

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2, 64

RECORDS_FILE = "records.jsonl"
TOPOLOGY_FILE = "topology.json"
TRUTH_FILE = "truth.json"

log = logging.getLogger("tagsentry")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _dump(obj, path=None) -> None:
    text = json.dumps(obj, indent=1, sort_keys=False) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _read_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise ValidationError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from exc


def _detection_config(path) -> DetectionConfig:
    if path is None:
        return DetectionConfig()
    return emulator.load_config(path)[1]


def detect(dataset: ingest.Dataset, config: DetectionConfig, coarse_only=False):
    """Coarse filter, then (unless coarse_only) EM; returns (labels, payload json)."""
    flags = coarse.run_coarse(dataset, config)
    if coarse_only:
        labels = truthdiscovery.coarse_labels(dataset, flags)
        return labels, {"labels": labels.to_json(), **flags.to_json()}
    fm = featurize(list(dataset.records), config)
    model = truthdiscovery.fit(dataset, fm, flags, config)
    labels = truthdiscovery.classify(model, config, flags)
    return labels, {**truthdiscovery.model_summary(model, labels), **flags.to_json()}


def _labels_from_json(obj) -> dict[int, int]:
    try:
        return {int(k): int(v) for k, v in obj["labels"].items()}
    except (KeyError, AttributeError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed labels file: {exc}") from exc


def _ranking_from_json(obj) -> list[int]:
    try:
        return [int(e["lid"]) for e in obj["ranking"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed ranking file: {exc}") from exc


# -- subcommands -----------------------------------------------------------------

def cmd_emulate(args) -> int:
    emu_cfg, det_cfg = emulator.load_config(args.config)
    if args.seed is not None:
        emu_cfg = emu_cfg.replace(seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset, truth = emulator.generate(emu_cfg)
    ingest.save_dataset(dataset, out / RECORDS_FILE, out / TOPOLOGY_FILE)
    truth.save(out / TRUTH_FILE)
    _dump(emulator.export_location_stats(dataset, det_cfg), out / "location_stats.json")
    return EXIT_OK


def cmd_detect(args) -> int:
    dataset = ingest.load_dataset(args.records, args.topology)
    _, payload = detect(dataset, _detection_config(args.config), args.coarse_only)
    _dump(payload, args.out)
    return EXIT_OK


def cmd_misplaced(args) -> int:
    dataset = ingest.load_dataset(args.records, args.topology)
    config = _detection_config(args.config)
    if args.tw is not None:
        config = config.replace(tw=args.tw)
    _dump(misplacement.ranking_json(misplacement.rank_misplaced(dataset, config), args.top), args.out)
    return EXIT_OK


def cmd_removed(args) -> int:
    dataset = ingest.load_dataset(args.records, args.topology)
    config = _detection_config(args.config)
    if args.raw:
        config = config.replace(removal_source="raw")
    _dump(misplacement.ranking_json(removal.rank_removed(dataset, config), args.top), args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    labels = _labels_from_json(_read_json(args.labels))
    truth = ingest.ground_truth_from_json(_read_json(args.truth))
    rep = metrics.report(labels, truth)
    if args.misplaced:
        rep["topk"][f"misplaced@{args.k}"] = metrics.topk_recall(
            _ranking_from_json(_read_json(args.misplaced)), truth.misplaced, args.k)
    if args.removed:
        rep["topk"][f"removed@{args.k}"] = metrics.topk_recall(
            _ranking_from_json(_read_json(args.removed)), truth.removed, args.k)
    _dump(rep, args.out)
    return EXIT_OK


def run_pipeline(config_path, out_dir, top: int = 10) -> dict:
    emu_cfg, det_cfg = emulator.load_config(config_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset, truth = emulator.generate(emu_cfg)
    ingest.save_dataset(dataset, out / RECORDS_FILE, out / TOPOLOGY_FILE)
    truth.save(out / TRUTH_FILE)
    # downstream stages read back what was written, so the artifacts are what gets scored
    dataset = ingest.load_dataset(out / RECORDS_FILE, out / TOPOLOGY_FILE)
    truth = ingest.load_ground_truth(out / TRUTH_FILE, dataset)
    _dump(emulator.export_location_stats(dataset, det_cfg), out / "location_stats.json")

    coarse_lab, coarse_json = detect(dataset, det_cfg, coarse_only=True)
    _dump(coarse_json, out / "coarse.json")
    labels, labels_json = detect(dataset, det_cfg)
    _dump(labels_json, out / "labels.json")
    mis = misplacement.rank_misplaced(dataset, det_cfg)
    rem = removal.rank_removed(dataset, det_cfg)
    _dump(misplacement.ranking_json(mis, top), out / "misplaced.json")
    _dump(misplacement.ranking_json(rem, top), out / "removed.json")

    rep = metrics.report(labels, truth, mis, rem, k=top)
    cm = metrics.confusion(coarse_lab, truth)
    rep["coarse"] = {k: cm[k] for k in ("accuracy", "precision", "recall")}
    rep["beta"] = {str(u): b for u, b in sorted(labels_json["beta"].items(), key=lambda kv: int(kv[0]))}
    _dump(rep, out / "report.json")
    return rep


def cmd_pipeline(args) -> int:
    run_pipeline(args.config, args.out, args.top)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tagsentry", description="Location-fraud detection for indoor crowdsensing.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("emulate", help="generate a synthetic dataset with ground truth")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_emulate)

    def data_args(s):
        s.add_argument("--records", required=True)
        s.add_argument("--topology", required=True)
        s.add_argument("--config", help="JSON file with detection settings")

    s = sub.add_parser("detect", help="label records truthful (1) or falsified (0)")
    data_args(s)
    s.add_argument("--coarse-only", action="store_true")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("misplaced", help="rank tags by abnormal-trajectory count")
    data_args(s)
    s.add_argument("--top", type=int, default=10)
    s.add_argument("--tw", type=float)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_misplaced)

    s = sub.add_parser("removed", help="rank tags by frequency relative to neighbors")
    data_args(s)
    s.add_argument("--top", type=int, default=10)
    s.add_argument("--raw", action="store_true", help="count coarse-flagged records too")
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_removed)

    s = sub.add_parser("evaluate", help="score labels and rankings against ground truth")
    s.add_argument("--labels", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--misplaced")
    s.add_argument("--removed")
    s.add_argument("--k", type=int, default=10)
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("pipeline", help="emulate, detect, rank and evaluate in one go")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--top", type=int, default=10)
    s.set_defaults(func=cmd_pipeline)
    return p


def _thread_limit():
    value = os.environ.get("TAGSENTRY_THREADS")
    if not value:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, int(value)))


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except TagSentryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
