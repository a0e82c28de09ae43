"""Command-line entry point: synth, build-index, retrieve, train, eval, route-stats.

Exit codes: 0 ok, 1 usage or configuration error, 2 data error, 3 remote-service error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_REMOTE = 0, 1, 2, 3

logger = logging.getLogger("gkgrec")

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gkgrec", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="TOML run configuration (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads for numeric kernels (default: logical cores)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate the planted-structure synthetic world")
    s.add_argument("--out", help="output directory (default: data.dir)")

    sub.add_parser("build-index", help="embed the KG and persist the vector indexes")

    r = sub.add_parser("retrieve", help="run one expert (or the router) over queries")
    r.add_argument("--expert", default="auto", choices=["1", "2", "3", "4", "auto"])
    r.add_argument("--query-file", required=True,
                   help="JSON lines with 'query' text or 'items' ids, or plain text lines")
    r.add_argument("--budget-m", type=int)
    r.add_argument("--hops", type=int)
    r.add_argument("--ppr-nodes", type=int)
    r.add_argument("--checkpoint", help="router and alignment parameters")
    r.add_argument("--out", help="output file (default: stdout)")

    t = sub.add_parser("train", help="train router, aligner and recommender")
    t.add_argument("--out-dir", help="override out_dir")

    e = sub.add_parser("eval", help="evaluate a checkpoint on the eval split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--mode", default="standard", choices=["standard", "cold-start"])
    e.add_argument("--out", default="report.csv")

    rs = sub.add_parser("route-stats", help="greedy expert-selection distribution")
    rs.add_argument("--checkpoint", required=True)
    rs.add_argument("--out", default="route_stats.csv")
    return p


def _set_threads(n: int):
    if n < 1:
        raise UsageError("--threads must be >= 1")
    for var in _THREAD_VARS:
        os.environ[var] = str(n)


def _load_config(args):
    from .config import RunConfig, load_config

    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        if args.seed < 0:
            raise UsageError("--seed must be >= 0")
        cfg.seed = args.seed
    return cfg


def _announce(cfg):
    print(f"# seed = {cfg.seed}", file=sys.stderr)
    print("# effective config:", file=sys.stderr)
    print(cfg.dumps(), file=sys.stderr)


# -- commands ------------------------------------------------------------------

def cmd_synth(cfg, args):
    from .synth import HARD_KIND, check_hard_instance, generate
    from .evaluation import build_eval_set

    out = Path(args.out) if args.out else Path(cfg.data.dir)
    world = generate(cfg.synth_config())
    world.save(out)
    inst = build_eval_set(world.eval, seed=cfg.eval.seed, history_len=cfg.eval.history_len)
    hard = [x for x in inst if world.kinds[x.user] == HARD_KIND]
    ok = sum(check_hard_instance(world.kg, x.context, x.candidates, x.target_pos) for x in hard)
    print(f"wrote {out}: {world.kg.n_entities} entities, {world.kg.n_triples} triples, "
          f"{len(world.train.records)} train / {len(world.eval.records)} eval users; "
          f"{ok}/{len(hard)} hard eval instances pass the planted-target check")
    return EXIT_OK


def cmd_build_index(cfg, args):
    from .workflow import build_and_save_index, index_dir, load_world, make_encoder

    world = load_world(cfg, splits=())
    enc = make_encoder(cfg, world.kg)
    idx = build_and_save_index(cfg, world, enc)
    print(f"wrote {index_dir(cfg)}: {idx.entity.rows} entities, {idx.triple.rows} triples, "
          f"{idx.relation.rows} relations ({idx.encoder_id})")
    return EXIT_OK


def _read_queries(path, item_texts):
    from .kg import DataError

    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                obj = line
            if isinstance(obj, str):
                out.append(obj)
            elif isinstance(obj, dict) and isinstance(obj.get("query"), str):
                out.append(obj["query"])
            elif isinstance(obj, dict) and isinstance(obj.get("items"), list):
                try:
                    out.append("; ".join(item_texts[int(i)] for i in obj["items"]))
                except (IndexError, ValueError, TypeError):
                    raise DataError(f"{path}:{lineno}: bad item id in {obj['items']!r}") from None
            else:
                raise DataError(f"{path}:{lineno}: expected 'query' text or 'items' list")
    return out


def cmd_retrieve(cfg, args):
    import dataclasses

    import numpy as np

    from .align import align, temp
    from .experts import run_expert
    from .mmapo import select_expert
    from .workflow import get_indexes, load_model, load_world, make_encoder, make_pipeline

    over = {k: v for k, v in (("m", args.budget_m), ("hops", args.hops),
                              ("ppr_nodes", args.ppr_nodes)) if v is not None}
    if over:
        try:
            cfg.retrieval = dataclasses.replace(cfg.retrieval, **over)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    world = load_world(cfg, splits=())
    enc = make_encoder(cfg, world.kg)
    idx = get_indexes(cfg, world.kg, enc)
    p = make_pipeline(cfg, world, idx, enc, router_mode="learned")
    if args.checkpoint:
        load_model(args.checkpoint, p)
    elif args.expert == "auto":
        logger.warning("routing with an untrained router (no --checkpoint)")
    queries = _read_queries(args.query_file, world.item_texts)
    fh = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for text in queries:
            z_q = enc.encode(text)
            if args.expert == "auto":
                e = select_expert(p.router, p.router.state(z_q), "greedy")[0]
            else:
                e = int(args.expert)
            k, elapsed = run_expert(e, z_q, world.kg, idx, cfg.retrieval)
            draft = temp(k, world.kg)
            vecs = enc.encode_batch(draft.statements) if len(draft) else np.zeros((0, enc.dim))
            a = align(p.aligner, z_q, draft, vecs, greedy=True, generator=p.generator,
                      dom=p.dom, keep_features=False)
            rec = {"query": text, "expert": e, "knowledge": k.to_json(world.kg),
                   "aligned": {"text": a.text, "kept": a.kept, "refined": a.refined},
                   "elapsed_ms": 1000.0 * elapsed}
            fh.write(json.dumps(rec) + "\n")
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def cmd_train(cfg, args):
    from .workflow import (CHECKPOINT_NAME, METRICS_NAME, eval_instances, get_indexes, load_world,
                           make_encoder, make_pipeline, save_model, train_instances)
    from .mmapo import train

    if args.out_dir:
        cfg.out_dir = args.out_dir
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world = load_world(cfg)
    enc = make_encoder(cfg, world.kg)
    p = make_pipeline(cfg, world, get_indexes(cfg, world.kg, enc), enc)
    tr = train_instances(cfg, world)
    p.prefetch(list(tr) + list(eval_instances(cfg, world)))
    res = train(p, list(tr), cfg.train_config())
    save_model(out / CHECKPOINT_NAME, p, cfg)
    (out / METRICS_NAME).write_text(res.metrics_csv(), encoding="utf-8")
    (out / "config.json").write_text(cfg.dumps() + "\n", encoding="utf-8")
    print(f"wrote {out / CHECKPOINT_NAME} and {out / METRICS_NAME} "
          f"({len(res.metrics)} iterations, {res.seconds:.1f}s)")
    return EXIT_OK


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(f"{path.stem}_{suffix}.csv")


def _eval_pipeline(cfg, checkpoint):
    from .workflow import get_indexes, load_model, load_world, make_encoder, make_pipeline

    world = load_world(cfg)
    enc = make_encoder(cfg, world.kg)
    p = make_pipeline(cfg, world, get_indexes(cfg, world.kg, enc), enc)
    stored = load_model(checkpoint, p)
    if stored and stored.get("encoder") != cfg.to_dict()["encoder"]:
        logger.warning("checkpoint was trained with a different encoder configuration")
    return world, p


def cmd_eval(cfg, args):
    from .evaluation import distribution_csv, distribution_plot_data, evaluate
    from .workflow import eval_instances

    world, p = _eval_pipeline(cfg, args.checkpoint)
    mode = args.mode.replace("-", "_")
    ev = eval_instances(cfg, world, mode)
    p.prefetch(ev)
    rep = evaluate(p, ev)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(rep.to_csv(), encoding="utf-8")
    _sibling(out, "experts").write_text(distribution_csv(rep.expert_fractions), encoding="utf-8")
    _sibling(out, "experts_plot").write_text(distribution_plot_data(rep.expert_fractions),
                                            encoding="utf-8")
    print(f"{mode}: accuracy {rep.accuracy:.4f}, recall@3 {rep.recall_at_3:.4f}, "
          f"recall@5 {rep.recall_at_5:.4f} over {rep.count} instances -> {out}")
    return EXIT_OK


def cmd_route_stats(cfg, args):
    from .evaluation import distribution_csv, distribution_plot_data, expert_distribution
    from .workflow import eval_instances

    world, p = _eval_pipeline(cfg, args.checkpoint)
    frac = expert_distribution(p, eval_instances(cfg, world))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(distribution_csv(frac), encoding="utf-8")
    _sibling(out, "plot").write_text(distribution_plot_data(frac), encoding="utf-8")
    print(" ".join(f"E{e}={100 * f:.1f}%" for e, f in enumerate(frac, start=1)))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "build-index": cmd_build_index, "retrieve": cmd_retrieve,
    "train": cmd_train, "eval": cmd_eval, "route-stats": cmd_route_stats,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _set_threads(args.threads)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    # imported late so --threads reaches the BLAS runtime before numpy loads
    from .config import ConfigError
    from .embed import DimensionError, RemoteServiceError
    from .kg import DataError

    try:
        cfg = _load_config(args)
        _announce(cfg)
        return COMMANDS[args.command](cfg, args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RemoteServiceError as exc:
        print(f"remote service error: {exc}", file=sys.stderr)
        return EXIT_REMOTE
    except (DataError, DimensionError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
