"""Command-line entry point: preprocess, analyze, train, eval, gradcheck.

Exit codes: 0 success, 1 usage/configuration error, 2 data error, 3 internal error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import complexity, data, dsp
from .config import Config, apply_overrides, config_from_dict, load_config_file, toy_config_dict
from .errors import (
    CacheCorruptError,
    ConfigurationError,
    DataError,
    DimensionError,
    UnsupportedFormatError,
    UsageError,
    WavParseError,
)
from .network import NetworkConfig, build_network, normalize_variant

log = logging.getLogger("dssdn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _shape(text: str):
    try:
        dims = tuple(int(v) for v in text.replace("x", ",").split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}; expected e.g. 1,1,431,256") from None
    if len(dims) != 4:
        raise argparse.ArgumentTypeError("input shape needs 4 dims (batch, 1, time, freq)")
    return dims


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (sections: network, train, spectrogram)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, e.g. train.epochs=5 (repeatable)")
    common.add_argument("--seed", type=int, default=None, help="random seed (default: train.seed)")
    common.add_argument("--single-thread", action="store_true", help="limit BLAS to one thread for bit-exact runs")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="dssdn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    pre = sub.add_parser("preprocess", parents=[common], help="WAV manifest -> log-mel cache files")
    pre.add_argument("--manifest", required=True)
    pre.add_argument("--out-dir", required=True)

    an = sub.add_parser("analyze", parents=[common], help="params/MACs report")
    an.add_argument("--variant", default=None, help="large | middle | small | dl-o | dl-b | all")
    an.add_argument("--input-shape", type=_shape, default=complexity.REFERENCE_INPUT_SHAPE)
    an.add_argument("--json", dest="json_out", default=None, help="also write the JSON report here")
    an.add_argument("--check-ordering", action="store_true", help="check the variant ordering and ablation directions")

    tr = sub.add_parser("train", parents=[common], help="train a model")
    src = tr.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest")
    src.add_argument("--synthetic", type=int, metavar="N", help="generate N clips per class of the toy set")
    tr.add_argument("--val-manifest")
    tr.add_argument("--out-dir", required=True)
    tr.add_argument("--resume", action="store_true", help="continue from OUT_DIR/model.dssw")
    tr.add_argument("--max-epochs", type=int, default=None, help="stop after this many epochs of this run")

    ev = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    esrc = ev.add_mutually_exclusive_group(required=True)
    esrc.add_argument("--manifest")
    esrc.add_argument("--synthetic", type=int, metavar="N")
    ev.add_argument("--json", dest="json_out", default=None)

    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    gc.set_defaults(seed=7)
    return p


def resolve_config(args, base: dict = None) -> Config:
    data_ = dict(base or {})
    if args.config:
        file_data = load_config_file(args.config)
        for key, value in file_data.items():
            if isinstance(value, dict) and isinstance(data_.get(key), dict):
                data_[key] = {**data_[key], **value}
            else:
                data_[key] = value
    data_ = apply_overrides(data_, args.overrides)
    if args.seed is not None:
        data_.setdefault("train", {})["seed"] = args.seed
    return config_from_dict(data_)


# -- subcommands ---------------------------------------------------------

def cmd_preprocess(args) -> int:
    cfg = resolve_config(args)
    records = data.read_manifest(args.manifest, cfg.network.n_classes)
    out = Path(args.out_dir)
    (out / "cache").mkdir(parents=True, exist_ok=True)
    fb = dsp.mel_filterbank(cfg.spectrogram)
    kept, written, skipped = [], 0, 0
    for i, rec in enumerate(records):
        target = out / "cache" / data.cache_name(rec.path, i)
        if data.is_up_to_date(str(target), rec.path):
            kept.append(data.record_from(rec, str(target)))
            skipped += 1
            continue
        try:
            spec = dsp.log_mel(dsp.load_wav(rec.path), cfg.spectrogram, fb)
        except (OSError, WavParseError, UnsupportedFormatError, ValueError) as exc:
            log.warning("skipping %s: %s", rec.path, exc)
            continue
        dsp.cache_write(target, spec.astype(np.float32))
        kept.append(data.record_from(rec, str(target)))
        written += 1
    if not kept:
        raise DataError("no clip could be converted")
    data.write_manifest(out / "manifest.csv", kept)
    print(f"cached {len(kept)} clips ({written} written, {skipped} up to date) -> {out / 'manifest.csv'}")
    return EXIT_OK


def _variant_reports(base: NetworkConfig, shape):
    out = {}
    for v in ("large", "middle", "small", "dl-o", "dl-b"):
        cfg = NetworkConfig(**{**base.to_dict(), "variant": v})
        out[v] = complexity.report(build_network(cfg), shape)
    return out


def ordering_checks(reports) -> list:
    p = {k: r.total_params for k, r in reports.items()}
    m = {k: r.total_macs for k, r in reports.items()}
    return [
        ("params(Small) < params(Large)", p["small"] < p["large"]),
        ("MACs(Small) < MACs(Middle) < MACs(Large)", m["small"] < m["middle"] < m["large"]),
        ("params(DL-O) > params(Large)", p["dl-o"] > p["large"]),
        ("MACs(DL-B) > MACs(Large)", m["dl-b"] > m["large"]),
    ]


def cmd_analyze(args) -> int:
    cfg = resolve_config(args)
    variant = args.variant or cfg.network.variant
    shape = args.input_shape
    if variant.lower() == "all" or args.check_ordering:
        reports = _variant_reports(cfg.network, shape)
        print(f"{'variant':<8} {'params':>10} {'MACs':>16}")
        for v, r in reports.items():
            print(f"{v:<8} {complexity.format_count(r.total_params, 'M'):>10} {complexity.format_count(r.total_macs, 'G'):>16}")
        payload = {v: r.to_dict()["totals"] for v, r in reports.items()}
        ok = True
        if args.check_ordering:
            for name, passed in ordering_checks(reports):
                print(f"{'PASS' if passed else 'FAIL'}  {name}")
                ok &= passed
            payload["checks"] = {name: passed for name, passed in ordering_checks(reports)}
        text = json.dumps(payload, indent=2)
    else:
        net = NetworkConfig(**{**cfg.network.to_dict(), "variant": normalize_variant(variant)})
        rep = complexity.report(build_network(net), shape)
        print(rep.format_table())
        text = rep.to_json()
        ok = True
    print(text)
    if args.json_out:
        Path(args.json_out).write_text(text + "\n")
    return EXIT_OK if ok else EXIT_INTERNAL


def _dataset_from(args, cfg: Config, seed_offset: int = 0):
    from .train import ArrayDataset

    if getattr(args, "synthetic", None):
        n_classes = cfg.network.n_classes
        x, y, d, c = data.make_synthetic(args.synthetic, seed=cfg.train.seed + seed_offset, n_classes=n_classes)
        return ArrayDataset(x, y, d, c)
    records = data.read_manifest(args.manifest, cfg.network.n_classes)
    x, y, d, c, _ = data.load_dataset(records, cfg.spectrogram)
    return ArrayDataset(x, y, d, c)


def cmd_train(args) -> int:
    from .train import ArrayDataset, evaluate, train

    base = toy_config_dict() if args.synthetic else {}
    cfg = resolve_config(args, base)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.synthetic:
        train_set = _dataset_from(args, cfg)
        val_set = _dataset_from(args, cfg, seed_offset=1000)
    else:
        records = data.read_manifest(args.manifest, cfg.network.n_classes)
        if args.val_manifest:
            train_records, val_records = records, data.read_manifest(args.val_manifest, cfg.network.n_classes)
        else:
            train_records, val_records = data.split_validation(records, cfg.train.seed)
        x, y, d, c, _ = data.load_dataset(train_records, cfg.spectrogram)
        train_set = ArrayDataset(x, y, d, c)
        val_set = None
        if val_records:
            x, y, d, c, _ = data.load_dataset(val_records, cfg.spectrogram)
            val_set = ArrayDataset(x, y, d, c)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))
    model = build_network(cfg.network, seed=cfg.train.seed, dtype=np.dtype(cfg.train.dtype))
    history = train(model, cfg.train, train_set, val_set, log_path=out / "train_log.jsonl",
                    checkpoint_path=out / "model.dssw", resume=args.resume, max_epochs=args.max_epochs)
    for entry in history:
        print(json.dumps(entry))
    print(f"train accuracy: {evaluate(model, train_set).accuracy:.4f}")
    if val_set is not None:
        print(f"held-out accuracy: {evaluate(model, val_set).accuracy:.4f}")
    print(f"checkpoint: {out / 'model.dssw'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .train import evaluate

    state_path = Path(f"{args.checkpoint}.state.json")
    base = {}
    if state_path.exists():
        state = json.loads(state_path.read_text())
        base = {"network": state["network"], "train": state["train"]}
    elif args.synthetic:
        base = toy_config_dict()
    cfg = resolve_config(args, base)
    model = build_network(cfg.network, dtype=np.dtype(cfg.train.dtype))
    load_checkpoint(args.checkpoint, model)
    ds = _dataset_from(args, cfg, seed_offset=2000)
    metrics = evaluate(model, ds)
    print(metrics.format())
    if args.json_out:
        Path(args.json_out).write_text(json.dumps(metrics.to_dict(), indent=2))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import format_results, run_suite

    results = run_suite(seed=args.seed)
    print(format_results(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_INTERNAL


COMMANDS = {
    "preprocess": cmd_preprocess,
    "analyze": cmd_analyze,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


@contextlib.contextmanager
def _thread_limit(single: bool):
    if not single:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit(args.single_thread):
            return COMMANDS[args.command](args)
    except (ConfigurationError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, WavParseError, UnsupportedFormatError, CacheCorruptError, DimensionError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
