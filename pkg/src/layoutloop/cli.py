"""Command-line entry point: ``layoutloop <command> ...``.

Exit codes: 0 ok, 1 sample failures under ``--strict``, 2 usage errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import re
import sys
import threading
import time
from dataclasses import replace
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import yaml

from . import synthetic
from .client import AuthError, BackendConfig, BackendError, make_backend
from .engine import RunConfig, SampleFailed, cluster_candidates, run_sample
from .layout import CGL_TYPES, PKU_TYPES, Layout, ParseFailure, parse_html, serialize_html
from .metrics import evaluate, frechet_proxy, write_reports
from .prompts import TaskKind, derive_task
from .render import render_layout, save_image
from .retrieval import build_index, iter_split, retrieve
from .scoring import ScoreWeights

log = logging.getLogger("layoutloop")

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2
CONFIG_KEYS = {"weights", "align_ref", "violation_penalty", "pool_size", "retries", "retrieval"}


class UsageError(Exception):
    pass


def _split_dir(dataset: str, split: str) -> Path:
    root = Path(dataset)
    if not root.is_dir():
        raise UsageError(f"dataset directory not found: {dataset}")
    path = root / split
    if not (path / "annotations.jsonl").is_file():
        raise UsageError(f"split {split!r} has no annotations.jsonl under {dataset}")
    return path


def dataset_hash(*split_dirs: Path) -> str:
    """sha256 over annotations and image/saliency bytes, in sorted path order."""
    h = hashlib.sha256()
    for d in split_dirs:
        files = [d / "annotations.jsonl"] + sorted(d.glob("images/*")) + sorted(d.glob("saliency/*"))
        for f in files:
            h.update(str(f.relative_to(d.parent)).encode())
            h.update(f.read_bytes())
    return h.hexdigest()


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    unknown = set(data) - CONFIG_KEYS
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return data


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    m = re.fullmatch(r"(\d+)x(\d+)", args.size.lower())
    if not m or min(int(m.group(1)), int(m.group(2))) < 1:
        raise UsageError(f"--size must look like 103x150, got {args.size!r}")
    size = (int(m.group(1)), int(m.group(2)))
    root = synthetic.write_dataset(args.out, args.train, args.test, args.seed, size)
    print(root)
    return EXIT_OK


def cmd_index(args) -> int:
    index = build_index(_split_dir(args.dataset, args.split), args.tau)
    index.save(args.out)
    print(f"indexed {len(index)} samples -> {args.out}")
    return EXIT_OK


def _backend_config(args) -> BackendConfig:
    kw = {"temperature": args.temperature, "n": args.candidates, "seed": args.seed}
    if args.backend.startswith("mock:"):
        return BackendConfig(kind=args.backend, **kw)
    if args.model:
        kw["model"] = args.model
    if args.rate_limit:
        kw["rate_limit"] = args.rate_limit
    return BackendConfig.from_env(args.backend, **kw)


def _run_config(args, style: str, extra: dict) -> RunConfig:
    kw = dict(candidates=args.candidates, icl_count=args.icl, seed=args.seed,
              temperature=args.temperature, element_types=CGL_TYPES if args.types == "cgl" else PKU_TYPES)
    if args.iterations is not None:
        kw["iterations"] = args.iterations
    if "weights" in extra:
        kw["weights"] = ScoreWeights.from_mapping(extra["weights"])
    for key in ("align_ref", "violation_penalty", "pool_size", "retries", "retrieval"):
        if key in extra:
            kw[key] = extra[key]
    return RunConfig.for_style(style, **kw)


def cmd_generate(args) -> int:
    query_dir = _split_dir(args.dataset, args.split)
    index_dir = _split_dir(args.dataset, args.index_split)
    extra = _load_config(args.config)
    try:
        TaskKind(args.task)
        bcfg = _backend_config(args)
        base_cfg = _run_config(args, bcfg.style, extra)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if not bcfg.is_mock and not bcfg.api_key:
        log.warning("no API key in the environment; requests will likely be rejected")

    out = Path(args.out)
    for sub in ("layouts", "history"):
        (out / sub).mkdir(parents=True, exist_ok=True)

    start = time.monotonic()
    index = build_index(index_dir)
    errors: list = []
    samples = list(iter_split(query_dir, errors=errors))
    beyond = []
    if args.limit:
        samples, beyond = samples[: args.limit], samples[args.limit:]
    backend = make_backend(bcfg)
    abort = threading.Event()

    def work(sample) -> dict:
        row = {"id": sample.id, "status": "ok", "reason": None}
        if abort.is_set():
            return {**row, "status": "failed", "reason": "run aborted after an authentication error"}
        cfg = base_cfg
        if args.task != TaskKind.UNCONSTRAINED.value:
            if sample.layout is None:
                return {**row, "status": "skipped", "reason": f"{args.task} task needs a ground-truth layout"}
            cfg = replace(base_cfg, task=derive_task(sample.layout, args.task, args.seed))
        try:
            layout, history = run_sample(sample.canvas, index, cfg, backend, sample.id)
        except AuthError as exc:
            abort.set()
            return {**row, "status": "failed", "reason": f"authentication: {exc}"}
        except (SampleFailed, BackendError) as exc:
            return {**row, "status": "failed", "reason": str(exc)}
        (out / "layouts" / f"{sample.id}.html").write_text(serialize_html(layout))
        history.write_jsonl(out / "history" / f"{sample.id}.jsonl")
        if args.render:
            rdir = out / "renders" / sample.id
            rdir.mkdir(parents=True, exist_ok=True)
            for rec in history.iterations:
                best = history.candidates[rec.pool[0]]
                save_image(render_layout(sample.canvas, best.layout), rdir / f"iter{rec.iteration:02d}.png")
        best = history.best
        return {**row, "best_score": best.score, "initial_score": history.iterations[0].best_score,
                "violations": list(best.violations), "iterations": len(history.iterations) - 1,
                "candidates": len(history.candidates), "usage": history.usage.to_dict(),
                "report": best.report}

    try:
        with ThreadPoolExecutor(max_workers=max(1, args.parallel)) as pool:
            rows = list(pool.map(work, samples))
    finally:
        backend.close()

    rows += [{"id": sid, "status": "skipped", "reason": f"unloadable sample: {msg}"} for sid, msg in errors]
    rows += [{"id": s.id, "status": "skipped", "reason": "beyond --limit"} for s in beyond]
    rows.sort(key=lambda r: str(r["id"]))
    reports = [(r["id"], r.pop("report")) for r in rows if "report" in r]
    metrics = write_reports(out, reports)["aggregate"] if reports else None
    counts = {s: sum(r["status"] == s for r in rows) for s in ("ok", "skipped", "failed")}
    manifest = {
        "config": {
            "args": {k: v for k, v in vars(args).items() if k != "func"},
            "run": {
                "iterations": base_cfg.iterations, "candidates": base_cfg.candidates,
                "pool_size": base_cfg.pool_size, "icl_count": base_cfg.icl_count,
                "retries": base_cfg.retries, "weights": base_cfg.weights.__dict__,
                "align_ref": base_cfg.align_ref, "violation_penalty": base_cfg.violation_penalty,
                "retrieval": base_cfg.retrieval, "seed": base_cfg.seed,
                "temperature": bcfg.temperature,
            },
        },
        "dataset": {"path": str(Path(args.dataset).resolve()), "split": args.split,
                    "index_split": args.index_split, "hash": dataset_hash(query_dir, index_dir)},
        "backend": {"kind": bcfg.kind, "model": bcfg.model},
        "samples": rows,
        "counts": counts,
        "aggregate_metrics": metrics,
        "usage": backend.usage.to_dict(),
        "wall_time_s": time.monotonic() - start,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str))
    print(f"ok {counts['ok']}  skipped {counts['skipped']}  failed {counts['failed']}  -> {out}")
    if args.strict and counts["failed"]:
        return EXIT_FAILED
    return EXIT_OK


def _read_pred(path: Path, dims) -> Layout:
    return parse_html(path.read_text(), dims)


def cmd_evaluate(args) -> int:
    split_dir = _split_dir(args.dataset, args.split)
    samples = {s.id: s for s in iter_split(split_dir) if s.layout is not None}
    if not samples:
        raise UsageError(f"split {args.split!r} has no annotated samples")
    problems: dict[str, list] = {"missing": [], "unknown": [], "unparsable": []}
    rows, preds = [], []
    pred_dir = Path(args.pred) if args.pred else None
    if pred_dir is not None and not pred_dir.is_dir():
        raise UsageError(f"prediction directory not found: {pred_dir}")
    if pred_dir is not None:
        known = set(samples)
        problems["unknown"] = sorted(p.stem for p in pred_dir.glob("*.html") if p.stem not in known)
    for sid in sorted(samples):
        s = samples[sid]
        layout = s.layout
        if pred_dir is not None:
            path = pred_dir / f"{sid}.html"
            if not path.is_file():
                problems["missing"].append(sid)
                continue
            try:
                layout = _read_pred(path, s.canvas.dims)
            except ParseFailure as exc:
                problems["unparsable"].append({"id": sid, "reason": exc.reason})
                continue
        rows.append((sid, evaluate(s.canvas, layout)))
        preds.append(layout)
    real = [samples[sid].layout for sid in sorted(samples)]
    frechet = frechet_proxy(preds, real) if len(preds) >= 2 and len(real) >= 2 else None
    payload = write_reports(args.out, rows, frechet, extra={"problems": problems})
    for kind, ids in problems.items():
        if ids:
            log.warning("%d %s prediction(s): %s", len(ids), kind, ids)
    agg = payload["aggregate"]
    print(" ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in agg.items()))
    if args.strict and any(problems.values()):
        return EXIT_FAILED
    return EXIT_OK


def _samples_by_id(split_dir: Path) -> dict:
    return {s.id: s for s in iter_split(split_dir)}


def cmd_render(args) -> int:
    samples = _samples_by_id(_split_dir(args.dataset, args.split))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    status = EXIT_OK
    for sid in args.id:
        s = samples.get(sid)
        if s is None:
            print(f"{sid}: no such sample", file=sys.stderr)
            status = EXIT_FAILED
            continue
        layout = s.layout
        if args.layouts:
            path = Path(args.layouts) / f"{sid}.html"
            try:
                layout = _read_pred(path, s.canvas.dims)
            except (OSError, ParseFailure) as exc:
                print(f"{sid}: cannot read {path}: {exc}", file=sys.stderr)
                status = EXIT_FAILED
                continue
        if layout is None:
            print(f"{sid}: no layout to render", file=sys.stderr)
            status = EXIT_FAILED
            continue
        save_image(render_layout(s.canvas, layout), out / f"{sid}.png")
        print(out / f"{sid}.png")
    return status


def cmd_retrieve(args) -> int:
    index = build_index(_split_dir(args.dataset, args.split))
    queries = _samples_by_id(_split_dir(args.dataset, args.query_split or args.split))
    if args.id not in queries:
        raise UsageError(f"no sample {args.id!r} in split {args.query_split or args.split!r}")
    hits = retrieve(index, queries[args.id].canvas, args.m, args.mode, query_id=args.id, seed=args.seed)
    result = [{"id": s.id, "similarity": sim} for s, sim in hits]
    text = json.dumps(result, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return EXIT_OK


def cmd_cluster(args) -> int:
    path = Path(args.history)
    if not path.is_file():
        raise UsageError(f"history file not found: {path}")
    by_sample: dict[str, list[Layout]] = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            row = json.loads(line)
            if row.get("kind") != "candidate":
                continue
            if args.iteration is not None and row["iteration"] > args.iteration:
                continue
            try:
                layout = parse_html(row["html"], _dims_from_html(row["html"]))
            except ParseFailure as exc:
                print(f"{path}:{lineno}: {exc.reason}", file=sys.stderr)
                continue
            by_sample.setdefault(str(row["sample_id"]), []).append(layout)
    if not by_sample:
        print(f"{path}: no candidates", file=sys.stderr)
        return EXIT_FAILED
    result = {}
    for sid, layouts in by_sample.items():
        labels = cluster_candidates(layouts, args.eps)
        result[sid] = {"labels": labels, "clusters": len(set(labels))}
    text = json.dumps(result, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return EXIT_OK


def _dims_from_html(text: str) -> tuple[int, int]:
    """Canvas size from the canvas div written by :func:`serialize_html`."""
    m = re.search(r'class="canvas"[^>]*width:\s*(\d+)px;\s*height:\s*(\d+)px', text)
    if not m:
        raise ParseFailure("no canvas div")
    return int(m.group(1)), int(m.group(2))


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="layoutloop", description="Saliency-aware layout generation with self-correction.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--train", type=int, default=40)
    s.add_argument("--test", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", default="103x150", help="WIDTHxHEIGHT")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("index", help="precompute a retrieval index")
    s.add_argument("--dataset", required=True)
    s.add_argument("--split", default="train")
    s.add_argument("--tau", type=float, default=0.5)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_index)

    s = sub.add_parser("generate", help="run the loop over a split")
    s.add_argument("--dataset", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--index-split", default="train")
    s.add_argument("--task", default="unconstrained", choices=[k.value for k in TaskKind])
    s.add_argument("--backend", default="mock:improver",
                   help="openai-compatible, gemini, mock:echo-icl, mock:improver or mock:malformed(k=N)")
    s.add_argument("--model")
    s.add_argument("--iterations", type=int)
    s.add_argument("--candidates", type=int, default=5)
    s.add_argument("--icl", type=int, default=10)
    s.add_argument("--temperature", type=float)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--types", choices=["pku", "cgl"], default="pku")
    s.add_argument("--rate-limit", type=float, help="requests per minute")
    s.add_argument("--limit", type=int, help="only the first N samples")
    s.add_argument("--out", required=True)
    s.add_argument("--parallel", type=int, default=1)
    s.add_argument("--render", action="store_true")
    s.add_argument("--strict", action="store_true")
    s.add_argument("--config", help="YAML with weights, align_ref, violation_penalty, ...")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("evaluate", help="metric reports for predictions or ground truth")
    s.add_argument("--dataset", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--pred", help="directory of {id}.html (default: evaluate ground truth)")
    s.add_argument("--out", required=True)
    s.add_argument("--strict", action="store_true")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("render", help="draw layouts over their canvases")
    s.add_argument("--dataset", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--id", nargs="+", required=True)
    s.add_argument("--layouts", help="directory of {id}.html (default: ground truth)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("retrieve", help="nearest samples by saliency similarity")
    s.add_argument("--dataset", required=True)
    s.add_argument("--split", default="train")
    s.add_argument("--query-split")
    s.add_argument("--id", required=True)
    s.add_argument("--m", type=int, default=10)
    s.add_argument("--mode", default="iou", choices=["iou", "bbox", "random"])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_retrieve)

    s = sub.add_parser("cluster", help="cluster the candidates in a history file")
    s.add_argument("--history", required=True)
    s.add_argument("--iteration", type=int, help="only candidates up to this iteration")
    s.add_argument("--eps", type=float, default=0.4)
    s.add_argument("--out")
    s.set_defaults(func=cmd_cluster)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"layoutloop: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
