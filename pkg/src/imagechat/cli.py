"""Command-line harness: training, evaluation, ablations, IGC transfer,
preference statistics, dataset stats, serving, and a terminal chat loop.

Precedence for settings: config file < IMAGECHAT_SEED env var < explicit
flags. Every run writes a config snapshot (with the seed) next to its
outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import runs
from .data import (StyleCatalog, build_candidate_store, build_vocab,
                   dataset_stats, igc_adapt, load_dataset, load_igc,
                   make_turn_contexts, tokenize)
from .features import FeatureStore
from .generative import GenConfig, GenerativeModel, evaluate_generation
from .metrics import MetricReport, PreferenceTally, bleu4
from .optim import Adam
from .retrieval import (RetrievalConfig, RetrievalModel, evaluate_recall,
                        run_ablation_matrix)
from .service import ModelBundle, ServiceError, handle_chat

log = logging.getLogger("imagechat")


def _load_config_file(path):
    if not path:
        return {}
    with open(path) as f:
        return json.load(f)


def _resolve_seed(args, config):
    seed = config.get("seed", 0)
    env = os.environ.get("IMAGECHAT_SEED")
    if env is not None:
        seed = int(env)
    if getattr(args, "seed", None) is not None:
        seed = args.seed
    return seed


def _setting(args, config, name, default):
    flag = getattr(args, name, None)
    if flag is not None:
        return flag
    return config.get(name, default)


def _load_inputs(args, need_data=True):
    catalog = StyleCatalog.load(args.catalog)
    features = FeatureStore.load(args.features)
    report = None
    if need_data:
        report = load_dataset(args.data, catalog)
        for line_no, msg in report.errors:
            log.warning("%s:%d: %s", args.data, line_no, msg)
        if not report.examples:
            raise SystemExit(f"no valid examples in {args.data}")
    return catalog, features, report


def _mask_from_arg(mask_arg):
    if not mask_arg:
        return frozenset({"image", "style", "dialogue"})
    return frozenset(m.strip() for m in mask_arg.split(",") if m.strip())


def _write_json(path, obj):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)


def _train_contexts(examples):
    return [c for ex in examples for c in make_turn_contexts(ex)]


def _pools(examples):
    return {t: build_candidate_store(examples, t) for t in (1, 2, 3)}


# -- subcommands -----------------------------------------------------------

def cmd_train_ret(args):
    config = _load_config_file(args.config)
    seed = _resolve_seed(args, config)
    catalog, features, report = _load_inputs(args)
    examples = report.examples
    vocab = build_vocab(examples, min_freq=_setting(args, config, "min_freq", 1),
                        style_traits=catalog.names())
    mask = _mask_from_arg(_setting(args, config, "modality_mask", None))
    cfg = RetrievalConfig(
        vocab_size=len(vocab), n_styles=len(catalog),
        dim=_setting(args, config, "dim", 500),
        n_layers=_setting(args, config, "n_layers", 4),
        hidden=_setting(args, config, "hidden", 300),
        n_heads=_setting(args, config, "n_heads", 6),
        image_mlp_hidden=_setting(args, config, "image_mlp_hidden", 1024),
        combiner_kind=_setting(args, config, "combiner", "mm_sum"),
        shared_text_encoders=bool(_setting(args, config, "shared_encoders",
                                           False)),
        modality_mask=mask,
        batch_size=_setting(args, config, "batch_size", 500),
        lr=_setting(args, config, "lr", 1e-4),
        seed=seed)
    model = RetrievalModel(cfg, vocab, catalog, features)
    if args.init_from:
        copied = runs.init_from_pretrained(model, args.init_from)
        log.info("initialized %d parameters from %s", copied, args.init_from)
    contexts = _train_contexts(examples)
    max_steps = _setting(args, config, "max_steps", 500)
    out = _fit_retrieval(model, contexts, examples, max_steps, args.out,
                         seed, patience=_setting(args, config, "patience", 0),
                         valid_path=args.valid_data, catalog=catalog)
    print(json.dumps(out, sort_keys=True))


def _fit_retrieval(model, contexts, examples, max_steps, out_dir, seed,
                   patience=0, valid_path=None, catalog=None):
    cfg = model.cfg
    rng = np.random.default_rng(seed)
    opt = Adam(model.store, lr=cfg.lr)
    os.makedirs(out_dir, exist_ok=True)
    pools = _pools(examples)
    valid_contexts = None
    if valid_path:
        valid = load_dataset(valid_path, catalog).examples
        valid_contexts = _train_contexts(valid)
    best_r1, since_best = -1.0, 0
    loss_log = open(os.path.join(out_dir, "loss_log.jsonl"), "w")
    losses = []
    with loss_log:
        for step in range(1, max_steps + 1):
            idx = rng.choice(len(contexts),
                             size=min(cfg.batch_size, len(contexts)),
                             replace=False)
            batch = [(contexts[i], contexts[i].gold) for i in idx]
            loss = model.train_step(batch, opt)
            losses.append(loss)
            loss_log.write(json.dumps({"step": step, "loss": loss}) + "\n")
            if patience and valid_contexts and step % 50 == 0:
                rep = evaluate_recall(model, valid_contexts, pools,
                                      n_candidates=min(100, len(contexts)),
                                      seed=seed)
                r1 = rep.overall["r1"]
                if r1 > best_r1:
                    best_r1, since_best = r1, 0
                else:
                    since_best += 1
                    if since_best >= patience:
                        log.info("early stop at step %d", step)
                        break
    runs.save_run(out_dir, model, "retrieval", extra={"seed": seed})
    n_cands = min(100, max(2, min(len(p) for p in pools.values() if p)))
    final = evaluate_recall(model, contexts, pools, n_candidates=n_cands,
                            seed=seed)
    _write_json(os.path.join(out_dir, "report.json"), final.to_dict())
    return {"final_loss": losses[-1], "steps": len(losses),
            "r1": final.overall["r1"], "out": out_dir}


def cmd_train_gen(args):
    config = _load_config_file(args.config)
    seed = _resolve_seed(args, config)
    catalog, features, report = _load_inputs(args)
    examples = report.examples
    vocab = build_vocab(examples, min_freq=_setting(args, config, "min_freq", 1),
                        style_traits=catalog.names())
    mask = _mask_from_arg(_setting(args, config, "modality_mask", None))
    cfg = GenConfig(
        vocab_size=len(vocab),
        hidden=_setting(args, config, "hidden", 300),
        n_layers=_setting(args, config, "n_layers", 4),
        n_heads=_setting(args, config, "n_heads", 6),
        beam_size=_setting(args, config, "beam_size", 2),
        max_decode_len=_setting(args, config, "max_decode_len", 32),
        batch_size=_setting(args, config, "batch_size", 32),
        lr=_setting(args, config, "lr", 1e-4),
        modality_mask=mask, seed=seed)
    model = GenerativeModel(cfg, vocab, catalog, features)
    contexts = _train_contexts(examples)
    rng = np.random.default_rng(seed)
    opt = Adam(model.store, lr=cfg.lr)
    os.makedirs(args.out, exist_ok=True)
    max_steps = _setting(args, config, "max_steps", 2000)
    losses = []
    with open(os.path.join(args.out, "loss_log.jsonl"), "w") as loss_log:
        for step in range(1, max_steps + 1):
            idx = rng.choice(len(contexts),
                             size=min(cfg.batch_size, len(contexts)),
                             replace=False)
            batch = [(contexts[i], contexts[i].gold) for i in idx]
            loss = model.train_step_gen(batch, opt)
            losses.append(loss)
            loss_log.write(json.dumps({"step": step, "loss": loss}) + "\n")
    runs.save_run(args.out, model, "generative", extra={"seed": seed})
    final = evaluate_generation(model, contexts, metadata={"seed": seed})
    _write_json(os.path.join(args.out, "report.json"), final.to_dict())
    print(json.dumps({"final_loss": losses[-1], "steps": len(losses),
                      "rouge_l": final.overall["rouge_l"],
                      "out": args.out}, sort_keys=True))


def cmd_pretrain(args):
    """Next-utterance pretraining over (context, next utterance) pairs."""
    config = _load_config_file(args.config)
    seed = _resolve_seed(args, config)
    catalog = StyleCatalog.load(args.catalog)
    features = FeatureStore.load(args.features)
    pairs = []
    with open(args.pairs) as f:
        for line in f:
            if line.strip():
                obj = json.loads(line)
                pairs.append((obj["context"], obj["next"]))
    if len(pairs) < 2:
        raise SystemExit("need at least 2 utterance pairs")

    class _Corpus:
        turns = [{"text": a} for a, _ in pairs] + [{"text": b}
                                                   for _, b in pairs]
    vocab = build_vocab([_Corpus()], style_traits=catalog.names())
    cfg = RetrievalConfig(
        vocab_size=len(vocab), n_styles=len(catalog),
        dim=_setting(args, config, "dim", 500),
        n_layers=_setting(args, config, "n_layers", 4),
        hidden=_setting(args, config, "hidden", 300),
        n_heads=_setting(args, config, "n_heads", 6),
        batch_size=_setting(args, config, "batch_size", 500),
        shared_text_encoders=False,
        lr=_setting(args, config, "lr", 1e-4), seed=seed)
    model = RetrievalModel(cfg, vocab, catalog, features)
    opt = Adam(model.store, lr=cfg.lr)
    rng = np.random.default_rng(seed)
    k = args.k
    max_steps = _setting(args, config, "max_steps", 200)
    os.makedirs(args.out, exist_ok=True)
    losses = []
    with open(os.path.join(args.out, "loss_log.jsonl"), "w") as loss_log:
        for step in range(1, max_steps + 1):
            size = min(cfg.batch_size, len(pairs))
            idx = rng.choice(len(pairs), size=size, replace=False)
            loss = model.pretrain_step([pairs[i] for i in idx], opt,
                                       k=min(k, size - 1), rng=rng)
            losses.append(loss)
            loss_log.write(json.dumps({"step": step, "loss": loss}) + "\n")
    runs.save_run(args.out, model, "retrieval", extra={"seed": seed,
                                                       "pretrain_k": k})
    print(json.dumps({"final_loss": losses[-1], "out": args.out},
                     sort_keys=True))


def cmd_eval(args):
    catalog, features, report = _load_inputs(args)
    model, snapshot = runs.load_run(args.run, features)
    contexts = _train_contexts(report.examples)
    seed = _resolve_seed(args, {})
    if snapshot["kind"] == "retrieval":
        pools = _pools(report.examples)
        n_cands = args.n_candidates or min(
            100, max(2, min(len(p) for p in pools.values() if p)))
        rep = evaluate_recall(model, contexts, pools, n_candidates=n_cands,
                              seed=seed)
    else:
        from .generative import decode_corpus
        decodes = decode_corpus(model, contexts)
        if args.decode_out:
            os.makedirs(os.path.dirname(args.decode_out) or ".",
                        exist_ok=True)
            with open(args.decode_out, "w") as f:
                for row in decodes:
                    f.write(json.dumps(row) + "\n")
        rep = evaluate_generation(model, contexts, metadata={"seed": seed},
                                  decodes=decodes)
    if args.out:
        _write_json(args.out, rep.to_dict())
    print(rep.table())
    print(rep.to_json())


def cmd_ablate(args):
    catalog, features, report = _load_inputs(args)
    model, snapshot = runs.load_run(args.run, features)
    if snapshot["kind"] != "retrieval":
        raise SystemExit("ablate expects a retrieval run")
    contexts = _train_contexts(report.examples)
    pools = _pools(report.examples)
    seed = _resolve_seed(args, {})
    n_cands = args.n_candidates or min(
        100, max(2, min(len(p) for p in pools.values() if p)))
    table = run_ablation_matrix(model, contexts, pools,
                                n_candidates=n_cands, seed=seed)
    if args.out:
        _write_json(args.out, table)
    for name, row in table.items():
        if row is None:
            print(f"{name:<28} (absent)")
        else:
            cols = " ".join(f"{k}={v:.3f}" for k, v in sorted(row.items()))
            print(f"{name:<28} {cols}")


def cmd_igc_eval(args):
    """Transfer evaluation: decode adapted IGC examples, report BLEU-4
    (x100) plus ROUGE-L/F1."""
    catalog = StyleCatalog.load(args.catalog)
    features = FeatureStore.load(args.features)
    model, snapshot = runs.load_run(args.run, features)
    if snapshot["kind"] != "generative":
        raise SystemExit("igc-eval expects a generative run")
    report = load_igc(args.igc)
    for line_no, msg in report.errors:
        log.warning("%s:%d: %s", args.igc, line_no, msg)
    contexts = [igc_adapt(ex, args.style) for ex in report.examples]
    rep = evaluate_generation(model, contexts,
                              metadata={"style": args.style,
                                        "dataset": "igc"})
    if args.out:
        _write_json(args.out, rep.to_dict())
    print(rep.table())
    print(json.dumps({"bleu4": rep.overall["bleu4"]}))


def _read_jsonl(path):
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def cmd_compare(args):
    """Pairwise preference statistics: win rates with exact two-tailed
    binomial p-values, per turn and overall."""
    responses_a = {r["context_id"]: r for r in _read_jsonl(args.responses_a)}
    responses_b = {r["context_id"]: r for r in _read_jsonl(args.responses_b)}
    prefs = _read_jsonl(args.preferences)
    by_turn = {}
    wins_a = wins_b = 0
    for p in prefs:
        cid, winner = p["context_id"], p["winner"]
        if cid not in responses_a or cid not in responses_b:
            raise SystemExit(f"preference for unknown context id {cid!r}")
        if winner not in ("a", "b"):
            raise SystemExit(f"winner must be 'a' or 'b', got {winner!r}")
        turn = p.get("turn", 0)
        ta = by_turn.setdefault(turn, [0, 0])
        if winner == "a":
            wins_a += 1
            ta[0] += 1
        else:
            wins_b += 1
            ta[1] += 1
    overall = PreferenceTally(wins_a, wins_b)
    out = {"overall": {"win_rate_a": overall.win_rate,
                       "n": overall.n, "p_value": overall.p_value()},
           "per_turn": {}}
    for turn, (a, b) in sorted(by_turn.items()):
        if a + b:
            t = PreferenceTally(a, b)
            out["per_turn"][str(turn)] = {
                "win_rate_a": t.win_rate, "n": t.n, "p_value": t.p_value()}
    if args.out:
        _write_json(args.out, out)
    print(json.dumps(out, indent=2, sort_keys=True))


def cmd_stats(args):
    catalog = StyleCatalog.load(args.catalog) if args.catalog else None
    report = load_dataset(args.data, catalog)
    for line_no, msg in report.errors:
        log.warning("%s:%d: %s", args.data, line_no, msg)
    stats = dataset_stats(report.examples)
    stats["rejected_lines"] = len(report.errors)
    print(json.dumps(stats, indent=2, sort_keys=True))


def _build_bundle(args):
    catalog = StyleCatalog.load(args.catalog)
    features = FeatureStore.load(args.features)
    bundle = ModelBundle(catalog=catalog, features=features,
                         seed=_resolve_seed(args, {}))
    if args.retrieval_run:
        model, _ = runs.load_run(args.retrieval_run, features)
        bundle.retrieval_model = model
    if args.generative_run:
        model, _ = runs.load_run(args.generative_run, features)
        bundle.generative_model = model
    if args.data:
        report = load_dataset(args.data, catalog)
        bundle.candidate_stores = _pools(report.examples)
    return bundle


def cmd_serve(args):
    import uvicorn
    from .service import create_app
    bundle = _build_bundle(args)
    uvicorn.run(create_app(bundle), host=args.host, port=args.port)


def cmd_chat(args):
    """Terminal REPL over the in-process chat handler."""
    bundle = _build_bundle(args)
    image_id = args.image_id or bundle.features.image_ids[0]
    style = args.style or bundle.catalog.names()[0]
    model_kind = args.model_kind
    _, start = handle_chat(bundle, {"start_session": {
        "image_id": image_id, "style_model": style,
        "model_kind": model_kind}})
    session_id = start["session_id"]
    print(f"image={image_id} style={style} model={model_kind} "
          f"(:style NAME, :save PATH, :quit)")
    stream = open(args.script) if args.script else sys.stdin
    for line in stream:
        line = line.strip()
        if not line:
            continue
        if line == ":quit":
            break
        if line.startswith(":style "):
            style = line.split(None, 1)[1]
            if style not in bundle.catalog:
                print(f"unknown style: {style}")
                continue
            bundle.sessions[session_id].style_model = style
            log.info("style switched to %s", style)
            print(f"[style -> {style}]")
            continue
        if line.startswith(":save "):
            path = line.split(None, 1)[1]
            _write_json(path, bundle.sessions[session_id].export())
            print(f"[saved {path}]")
            continue
        try:
            _, reply = handle_chat(bundle, {"session_id": session_id,
                                            "text": line})
        except ServiceError as e:
            print(f"[error {e.code}: {e.message}]")
            continue
        print(f"model: {reply['text']}")
    if args.save_transcript:
        _write_json(args.save_transcript,
                    bundle.sessions[session_id].export())


# -- parser -----------------------------------------------------------------

def _add_common(p, data_required=True):
    p.add_argument("--catalog", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--data", required=data_required)
    p.add_argument("--config", help="JSON config file (flags override)")
    p.add_argument("--seed", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="imagechat")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-ret", help="train the retrieval model")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--valid-data")
    p.add_argument("--init-from", help="pretrain run dir for encoder init")
    for flag, typ in (("--dim", int), ("--n-layers", int), ("--hidden", int),
                      ("--n-heads", int), ("--image-mlp-hidden", int),
                      ("--batch-size", int), ("--max-steps", int),
                      ("--min-freq", int), ("--patience", int),
                      ("--lr", float)):
        p.add_argument(flag, type=typ, dest=flag[2:].replace("-", "_"))
    p.add_argument("--combiner", choices=("mm_sum", "mm_att"))
    p.add_argument("--shared-encoders", action="store_const", const=True,
                   dest="shared_encoders")
    p.add_argument("--modality-mask", dest="modality_mask",
                   help="comma list from {image,style,dialogue}")
    p.set_defaults(func=cmd_train_ret)

    p = sub.add_parser("train-gen", help="train the generative model")
    _add_common(p)
    p.add_argument("--out", required=True)
    for flag, typ in (("--n-layers", int), ("--hidden", int),
                      ("--n-heads", int), ("--batch-size", int),
                      ("--max-steps", int), ("--min-freq", int),
                      ("--beam-size", int), ("--max-decode-len", int),
                      ("--lr", float)):
        p.add_argument(flag, type=typ, dest=flag[2:].replace("-", "_"))
    p.add_argument("--modality-mask", dest="modality_mask")
    p.set_defaults(func=cmd_train_gen)

    p = sub.add_parser("pretrain", help="next-utterance pretraining")
    p.add_argument("--catalog", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--pairs", required=True,
                   help="JSONL of {context, next} utterance pairs")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=4,
                   help="negatives sampled per positive")
    for flag, typ in (("--dim", int), ("--n-layers", int), ("--hidden", int),
                      ("--n-heads", int), ("--batch-size", int),
                      ("--max-steps", int), ("--lr", float)):
        p.add_argument(flag, type=typ, dest=flag[2:].replace("-", "_"))
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("eval", help="evaluate a run on a dataset")
    _add_common(p)
    p.add_argument("--run", required=True)
    p.add_argument("--n-candidates", type=int, dest="n_candidates")
    p.add_argument("--out")
    p.add_argument("--decode-out", dest="decode_out",
                   help="write generative decodes as JSONL")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="modality-mask ablation table")
    _add_common(p)
    p.add_argument("--run", required=True)
    p.add_argument("--n-candidates", type=int, dest="n_candidates")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("igc-eval", help="IGC transfer evaluation (BLEU-4)")
    p.add_argument("--catalog", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--igc", required=True)
    p.add_argument("--run", required=True)
    p.add_argument("--style", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_igc_eval)

    p = sub.add_parser("compare", help="pairwise preference statistics")
    p.add_argument("responses_a")
    p.add_argument("responses_b")
    p.add_argument("preferences")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("stats", help="dataset statistics")
    p.add_argument("--data", required=True)
    p.add_argument("--catalog")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--catalog", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--data", help="dataset for the candidate stores")
    p.add_argument("--retrieval-run")
    p.add_argument("--generative-run")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("chat", help="interactive terminal chat")
    p.add_argument("--catalog", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--data", help="dataset for the candidate stores")
    p.add_argument("--retrieval-run")
    p.add_argument("--generative-run")
    p.add_argument("--image-id")
    p.add_argument("--style")
    p.add_argument("--model-kind", default="retrieval",
                   choices=("retrieval", "generative"))
    p.add_argument("--script", help="read utterances from a file")
    p.add_argument("--save-transcript")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_chat)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    args.func(args)


if __name__ == "__main__":
    main()
