"""The ``osfa`` command: reproducible generation / training / evaluation.

Commands compose through files on disk only. Exit codes: 0 success,
1 validation error (bad flags, bad config, refusals), 2 runtime failure.

Config files are plain ``key=value`` lines (# comments allowed) over the
flat TrainConfig keyspace; ``--set key=value`` overrides them, and explicit
flags override both. Unknown keys are rejected. Every run directory keeps
the fully resolved config that produced it.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import engine
from . import metrics as E
from .data import load_dataset, save_dataset
from .engine import ConfigError, Seeds, TrainConfig, run_matrix
from .manga109 import Manga109FormatError, parse_annotations
from .synth import GenConfig, GenerationError, generate_dataset, zipf_probs


class ValidationError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse usage errors are validation errors
        raise ValidationError(message)


def _read_config_file(path: str) -> dict[str, str]:
    flat: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValidationError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = stripped.split("=", 1)
        flat[key.strip()] = value.strip()
    return flat


def _parse_sets(pairs: list[str]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ValidationError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _resolve_train_config(args) -> TrainConfig:
    flat: dict[str, str] = {}
    if args.config:
        flat.update(_read_config_file(args.config))
    flat.update(_parse_sets(args.set or []))
    flag_map = {
        "variant": "aug_variant",
        "epochs": "epochs",
        "episodes": "episodes_per_epoch",
        "lr": "learning_rate",
        "optimizer": "optimizer",
        "seed_weights": "seed_weights",
        "seed_noise": "seed_noise",
        "seed_episodes": "seed_episodes",
        "dtype": "dtype",
    }
    for attr, key in flag_map.items():
        value = getattr(args, attr)
        if value is not None:
            flat[key] = str(value)
    try:
        return TrainConfig.from_flat(flat)
    except ConfigError as e:
        raise ValidationError(str(e)) from None


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--variant", default=None, help="augmentation variant (default channel)")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--episodes", type=int, default=None, help="episodes per epoch")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--optimizer", default=None, choices=["sgd", "sgd_momentum"])
    p.add_argument("--seed-weights", dest="seed_weights", type=int, default=None)
    p.add_argument("--seed-noise", dest="seed_noise", type=int, default=None)
    p.add_argument("--seed-episodes", dest="seed_episodes", type=int, default=None)
    p.add_argument("--dtype", default=None, choices=["float32", "float64"])
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one config key (repeatable)")


def _parse_thr(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip() != ""]
    except ValueError:
        raise ValidationError(f"bad thr list {text!r}; expected comma-separated integers") from None


# -- commands ------------------------------------------------------------


def cmd_gen_data(args) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ValidationError(f"{out} exists and is not empty; pass --force to overwrite")
    if args.n_seen < 1 or args.n_unseen < 1:
        raise ValidationError("--n-seen and --n-unseen must be >= 1")
    cfg = GenConfig(n_seen=args.n_seen, n_unseen=args.n_unseen,
                    train_pages=args.train_pages, test_pages=args.test_pages,
                    page_size=args.page_size, zipf_s=args.zipf_s, seed=args.seed,
                    face_base=args.face_base)
    dataset = generate_dataset(cfg)
    save_dataset(dataset, out)
    (out / "gen_config.json").write_text(
        json.dumps({k: v for k, v in cfg.__dict__.items()}, sort_keys=True, indent=2) + "\n")

    for split in ("train", "test"):
        counts = dataset.counts[split]
        ranked = sorted(counts.values(), reverse=True)
        print(f"[{split}] {len(dataset.pages[split])} pages, "
              f"{sum(ranked)} instances over {len(counts)} classes")
        print(f"[{split}] rank-frequency: {ranked}")
        if len(ranked) >= 3:
            ranks = np.arange(1, len(ranked) + 1)
            freqs = np.array(ranked, dtype=np.float64)
            slope = np.polyfit(np.log(ranks), np.log(np.maximum(freqs, 1)), 1)[0]
            print(f"[{split}] log-log rank-frequency slope: {slope:.3f}")
    print(f"dataset written to {out}")
    return 0


def cmd_train(args) -> int:
    data_dir = Path(args.data)
    if not data_dir.exists():
        raise ValidationError(f"dataset directory {data_dir} does not exist")
    config = _resolve_train_config(args)
    dataset = load_dataset(data_dir)
    record = engine.train(config, dataset, args.out)
    print(f"run record: {Path(args.out) / 'run.json'}")
    print(f"checkpoint: {Path(args.out) / record.checkpoint}")
    print(f"loss curve: first {record.loss_curve[0]:.4f} -> final {record.loss_curve[-1]:.4f}")
    return 0


def cmd_eval(args) -> int:
    run_dir = Path(args.run)
    ckpt = run_dir / "checkpoint.osfa" if run_dir.is_dir() else run_dir
    if not ckpt.exists():
        raise ValidationError(f"checkpoint {ckpt} does not exist")
    dataset = load_dataset(Path(args.data))
    config = TrainConfig()
    run_json = run_dir / "run.json" if run_dir.is_dir() else None
    if run_json and run_json.exists():
        config = TrainConfig.from_flat(json.loads(run_json.read_text())["config"])
    params, sigma = engine.load_checkpoint_params(ckpt, config.detector)

    blocks = ["seen", "unseen"] if args.block == "both" else [args.block]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for block in blocks:
        default_thr = E.SEEN_THRESHOLDS if block == "seen" else E.UNSEEN_THRESHOLDS
        thr = _parse_thr(args.thr) if args.thr else list(default_thr)
        result = E.evaluate(params, sigma, dataset, block, thr, config.detector,
                            query_seed=args.query_seed, oracle_gt=args.oracle_gt,
                            exclude_query_source=args.exclude_query_source)
        path = out / f"eval_{block}.json"
        path.write_text(result.to_json())
        summary = ", ".join(
            f"thr={t}: " + ("—" if v is None else f"{v:.3f}")
            for t, v in sorted(result.thresholded.items()))
        print(f"[{block}] {summary}")
        print(f"[{block}] written to {path}")
    (out / "eval_config.json").write_text(json.dumps({
        "block": args.block, "thr": args.thr, "query_seed": args.query_seed,
        "oracle_gt": args.oracle_gt, "exclude_query_source": args.exclude_query_source,
        "checkpoint": str(ckpt), "data": str(args.data),
    }, sort_keys=True, indent=2) + "\n")
    return 0


def cmd_run_matrix(args) -> int:
    dataset = load_dataset(Path(args.data))
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not variants or not seeds:
        raise ValidationError("--variants and --seeds must be nonempty")
    base = _resolve_train_config(args)
    out = Path(args.out)
    entries = run_matrix(variants, seeds, dataset, out, base_config=base, jobs=args.jobs)

    thr_seen = _parse_thr(args.thr_seen) if args.thr_seen else list(E.SEEN_THRESHOLDS)
    thr_unseen = _parse_thr(args.thr_unseen) if args.thr_unseen else list(E.UNSEEN_THRESHOLDS)
    results: list[tuple[str, int, E.EvalResult]] = []
    for entry in entries:
        if entry.status != "ok":
            print(f"[matrix] {entry.variant} seed {entry.seed_index}: FAILED ({entry.error})")
            continue
        run_dir = Path(entry.run_dir)
        config = TrainConfig.from_flat(json.loads((run_dir / "run.json").read_text())["config"])
        params, sigma = engine.load_checkpoint_params(run_dir / "checkpoint.osfa", config.detector)
        for block, thr in (("seen", thr_seen), ("unseen", thr_unseen)):
            result = E.evaluate(params, sigma, dataset, block, thr, config.detector,
                                query_seed=args.query_seed)
            (run_dir / f"eval_{block}.json").write_text(result.to_json())
            results.append((entry.variant, entry.seed_index, result))

    if results:
        table = E.report(results)
        (out / "report.txt").write_text(table.render_text())
        (out / "report.csv").write_text(table.render_csv())
        print(table.render_text())
        _directional_summary(results, seeds)
        print(f"reports written to {out / 'report.txt'} and {out / 'report.csv'}")
    n_failed = sum(1 for e in entries if e.status != "ok")
    print(f"matrix: {len(entries) - n_failed}/{len(entries)} runs ok")
    return 0


def _directional_summary(results, seeds) -> None:
    """Report (not gate) how often learnable channel noise beats the default
    on the unseen-block thr=0 mean."""
    per = {}
    for variant, seed, res in results:
        if res.block == "unseen" and 0 in res.thresholded and res.thresholded[0] is not None:
            per[(variant, seed)] = res.thresholded[0]
    wins = sum(
        1 for s in seeds
        if (("channel", s) in per and ("none", s) in per and per[("channel", s)] >= per[("none", s)])
    )
    comparable = sum(1 for s in seeds if ("channel", s) in per and ("none", s) in per)
    if comparable:
        print(f"[directional] channel >= none on unseen thr=0 mean AP50 in "
              f"{wins}/{comparable} seeds (reported, not a gate)")


def cmd_report(args) -> int:
    results: list[tuple[str, int, E.EvalResult]] = []
    for root in args.results:
        root = Path(root)
        run_dirs = [root] if (root / "run.json").exists() else sorted(
            p.parent for p in root.glob("*/run.json"))
        for run_dir in run_dirs:
            record = json.loads((run_dir / "run.json").read_text())
            variant = record["variant"]
            seed = int(record["seeds"]["weights"])
            for eval_file in sorted(run_dir.glob("eval_*.json")):
                results.append((variant, seed, E.EvalResult.from_json(eval_file.read_text())))
    if not results:
        raise ValidationError(f"no eval results found under {args.results}")
    try:
        table = E.report(results)
    except E.EvalError as e:
        raise ValidationError(f"{e} (files under {', '.join(map(str, args.results))})") from None
    rendered = table.render_csv() if args.format == "csv" else table.render_text()
    if args.out:
        Path(args.out).write_text(rendered)
        print(f"report written to {args.out}")
    else:
        print(rendered, end="" if rendered.endswith("\n") else "\n")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    results, ok = run_gradcheck(corrupt=args.corrupt, seed=args.seed)
    for r in results:
        status = "pass" if r.passed else "FAIL"
        print(f"{r.group:<22} max_rel_err={r.max_rel_err:.3e}  "
              f"(n={r.n_checked}, tol={r.tolerance:.0e})  {status}")
    if not ok:
        print("gradcheck FAILED")
        return 2
    print("gradcheck passed")
    return 0


def cmd_dump_sigma(args) -> int:
    ckpt = Path(args.checkpoint)
    if ckpt.is_dir():
        ckpt = ckpt / "checkpoint.osfa"
    if not ckpt.exists():
        raise ValidationError(f"checkpoint {ckpt} does not exist")
    params, sigma = engine.load_checkpoint_params(ckpt)
    lines = ["channel,abs_sigma"]
    for i, v in enumerate(sigma.abs_per_channel()):
        lines.append(f"{i},{float(v)!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"sigma dump written to {args.out}")
    else:
        print(text, end="")
    return 0


def cmd_parse_annotations(args) -> int:
    try:
        book = parse_annotations(args.path)
    except FileNotFoundError:
        raise ValidationError(f"annotation file {args.path} does not exist") from None
    except Manga109FormatError as e:
        raise ValidationError(str(e)) from None
    by_char = book.instances_by_character()
    print(f"book {book.title!r}: {len(book.characters)} characters, "
          f"{len(book.pages)} pages, {book.face_count()} faces")
    for cid, name in book.characters:
        print(f"  character {cid} ({name}): {len(by_char[cid])} faces")
    if args.json:
        payload = {
            "title": book.title,
            "characters": [{"id": cid, "name": name} for cid, name in book.characters],
            "faces": [
                {"page": page.index, "id": f.face_id, "character": f.character,
                 "xmin": f.xmin, "ymin": f.ymin, "xmax": f.xmax, "ymax": f.ymax}
                for page in book.pages for f in page.faces
            ],
        }
        Path(args.json).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
        print(f"summary written to {args.json}")
    return 0


# -- wiring ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="osfa",
                     description="one-shot detection with learnable feature-space noise")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic long-tail dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-seen", type=int, default=20)
    p.add_argument("--n-unseen", type=int, default=10)
    p.add_argument("--train-pages", type=int, default=200)
    p.add_argument("--test-pages", type=int, default=100)
    p.add_argument("--page-size", type=int, default=256)
    p.add_argument("--zipf-s", type=float, default=1.0)
    p.add_argument("--face-base", type=float, default=56.0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one run")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--data", required=True)
    p.add_argument("--run", required=True, help="run directory or checkpoint file")
    p.add_argument("--out", required=True)
    p.add_argument("--block", default="both", choices=["seen", "unseen", "both"])
    p.add_argument("--thr", default=None, help="comma-separated thresholds")
    p.add_argument("--query-seed", type=int, default=0)
    p.add_argument("--oracle-gt", action="store_true",
                   help="debug: emit ground truth as detections")
    p.add_argument("--exclude-query-source", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run-matrix", help="train+evaluate a variant x seed grid")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variants",
                   default="none,fixed,single,channel,position,position_channel,gblur,solarize,rcrop")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--thr-seen", default=None)
    p.add_argument("--thr-unseen", default=None)
    p.add_argument("--query-seed", type=int, default=0)
    _add_train_flags(p)
    p.set_defaults(func=cmd_run_matrix)

    p = sub.add_parser("report", help="aggregate eval results into tables")
    p.add_argument("results", nargs="+", help="run dirs or matrix output dirs")
    p.add_argument("--format", default="text", choices=["text", "csv"])
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", default=None,
                   help="negative control: corrupt one backward rule (e.g. relu)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("dump-sigma", help="per-channel |sigma| of a checkpoint as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_dump_sigma)

    p = sub.add_parser("parse-annotations", help="read a Manga109-format annotation file")
    p.add_argument("path")
    p.add_argument("--json", default=None, help="write a JSON summary here")
    p.set_defaults(func=cmd_parse_annotations)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ConfigError, GenerationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failure
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
