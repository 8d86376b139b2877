"""Command-line pipeline: generate, pseudo-label, train, eval, protocols,
retrieval, and analogies.

Exit codes: 0 success, 1 usage/config error, 2 data error. Every run
prints its fully resolved configuration to stderr; JSON reports carry the
engine version and a hash of that configuration so results are
reproducible from the printed config plus the input files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data_io import (read_answer_key, read_frames, read_vocab,
                      write_answer_key, write_frames, write_vocab)
from .errors import CheckpointError, ConfigError, DataError, ShapeError
from .evaluation import (ground_truth_from_key, infer_frame, mean_ap,
                         read_ground_truth, read_predictions,
                         write_ground_truth, write_predictions)
from .model import (EmbeddingModel, ModelConfig, build_tuple_index, embed_roi,
                    embed_text)
from .optim import OptimizerState
from .protocols import predict_frames, run_few_shot, run_zero_shot
from .pseudo_label import PseudoLabelConfig, build_dataset
from .retrieval import analogy_query, object_to_text, text_to_object
from .synthetic import (SyntheticConfig, default_holdout_pairs,
                        generate_synthetic)
from .trainer import TrainConfig, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def _announce(cfg: dict) -> dict:
    print(f"resolved config: {json.dumps(cfg, sort_keys=True, default=str)}",
          file=sys.stderr)
    return cfg


def _emit(report: dict, out_path: str | None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True, default=str)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _report(cfg: dict, **payload) -> dict:
    return {"engine_version": __version__, "config_hash": _config_hash(cfg),
            "config": cfg, **payload}


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--d", type=int, default=16, help="embedding dimension")
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--warmup", type=int, default=500)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--m-negatives", type=int, default=64)
    p.add_argument("--batch-frames", type=int, default=2)
    p.add_argument("--bg-per-fg", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--share-negatives", action="store_true")
    p.add_argument("--threads", type=int, default=1)


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        base_lr=args.lr, warmup_steps=args.warmup, momentum=args.momentum,
        epochs=args.epochs, m_negatives=args.m_negatives,
        batch_frames=args.batch_frames, bg_per_fg=args.bg_per_fg,
        seed=args.seed, max_steps=args.max_steps,
        share_negatives=args.share_negatives, threads=args.threads)


def _model_config(args, frames, vocab) -> ModelConfig:
    try:
        visual_in = next(r.feature.shape[0] for f in frames for r in f.rois
                         if r.feature is not None)
    except StopIteration:
        raise DataError("no roi in the training frames carries a feature")
    if len(vocab) == 0:
        raise DataError("vocab is empty")
    text_in = vocab.tuples[0].base_embedding.shape[0]
    return ModelConfig(d=args.d, visual_in_dim=visual_in, text_in_dim=text_in)


def _load_model(path) -> tuple[EmbeddingModel, Checkpoint]:
    ckpt = load_checkpoint(path)
    model = EmbeddingModel(ckpt.model_config, ckpt.visual_head, ckpt.text_head)
    return model, ckpt


def _cmd_generate(args) -> int:
    cfg = SyntheticConfig(
        n_nouns=args.nouns, n_contexts=args.contexts,
        d_latent=args.d_latent, visual_in_dim=args.visual_in_dim,
        text_in_dim=args.text_in_dim, noise_sigma=args.noise_sigma,
        frames=args.frames, test_frames=args.test_frames,
        rois_per_frame=args.rois_per_frame,
        bg_rois_per_frame=args.bg_rois_per_frame,
        contextual_mix=args.contextual_mix,
        embedding_scale=args.embedding_scale, seed=args.seed)
    if args.holdout:
        cfg = SyntheticConfig(**{**cfg.to_dict(),
                                 "holdout_pairs": default_holdout_pairs(cfg, args.holdout)})
    resolved = _announce({"subcommand": "generate", **cfg.to_dict(),
                          "out": args.out})
    train_frames, test_frames, vocab, key = generate_synthetic(cfg)
    os.makedirs(args.out, exist_ok=True)
    write_frames(os.path.join(args.out, "train.jsonl"), train_frames)
    write_frames(os.path.join(args.out, "test.jsonl"), test_frames)
    write_vocab(os.path.join(args.out, "vocab.jsonl"), vocab)
    write_answer_key(os.path.join(args.out, "answer_key.json"), key)
    write_ground_truth(os.path.join(args.out, "test_gt.jsonl"),
                       ground_truth_from_key(test_frames, key))
    _emit(_report(resolved, train_frames=len(train_frames),
                  test_frames=len(test_frames), tuples=len(vocab),
                  holdout_tuple_ids=key.holdout_tuple_ids), args.report)
    return 0


def _cmd_pseudo_label(args) -> int:
    cfg = PseudoLabelConfig(score_threshold=args.score_threshold,
                            min_class_count=args.min_class_count,
                            plural_stripping=not args.no_plural_stripping)
    resolved = _announce({
        "subcommand": "pseudo-label", "in": args.input, "out": args.out,
        "score_threshold": cfg.score_threshold,
        "min_class_count": cfg.min_class_count,
        "plural_stripping": cfg.plural_stripping,
        "stats_only": args.stats_only})
    from .data_io import iter_frame_dicts
    dataset = build_dataset(iter_frame_dicts(args.input), cfg,
                            require_features=not args.stats_only)
    if not args.stats_only:
        if not args.out:
            raise ConfigError("--out is required unless --stats-only is set")
        write_frames(args.out, dataset.frames)
    _emit(_report(resolved, stats=dataset.stats.to_dict(),
                  class_counts=dict(sorted(dataset.class_counts.items()))),
          args.report)
    return 0


def _cmd_train(args) -> int:
    frames = read_frames(args.frames)
    vocab = read_vocab(args.vocab)
    tcfg = _train_config(args)
    mcfg = _model_config(args, frames, vocab)
    resolved = _announce({"subcommand": "train", "frames": args.frames,
                          "vocab": args.vocab, "out": args.out,
                          "resume": args.resume,
                          **mcfg.to_dict(), **tcfg.to_dict()})
    resume = load_checkpoint(args.resume) if args.resume else None
    model, history, ckpt = train(frames, vocab, mcfg, tcfg, resume=resume)
    save_checkpoint(args.out, ckpt)
    _emit(_report(resolved, global_step=ckpt.global_step,
                  loss_history=[{"l_fg": h.l_fg, "l_bg": h.l_bg,
                                 "total": h.total, "b_count": h.b_count}
                                for h in history]), args.report)
    return 0


def _cmd_eval(args) -> int:
    vocab = read_vocab(args.vocab)
    gts = read_ground_truth(args.gt)
    resolved = _announce({
        "subcommand": "eval", "model": args.model, "pred": args.pred,
        "frames": args.frames, "vocab": args.vocab, "gt": args.gt,
        "score_floor": args.score_floor, "top_k": args.top_k,
        "nms_iou": args.nms_iou, "interpolation": args.interpolation})
    if args.pred:
        preds = read_predictions(args.pred)
    else:
        if not (args.model and args.frames):
            raise ConfigError("eval needs either --pred or both --model and --frames")
        model, _ = _load_model(args.model)
        frames = read_frames(args.frames)
        preds = predict_frames(model, vocab, frames,
                               score_floor=args.score_floor,
                               top_k_per_roi=args.top_k,
                               nms_iou_threshold=args.nms_iou)
        if args.pred_out:
            write_predictions(args.pred_out, preds)
    value, per_class = mean_ap(preds, gts, vocab,
                               interpolation=args.interpolation)
    table = [{"tuple_id": r.tuple_id, "label": vocab.label(r.tuple_id),
              "ap": r.ap, "n_gt": r.n_gt}
             for r in per_class.values()]
    _emit(_report(resolved, map=value, classes_scored=len(per_class),
                  n_predictions=len(preds), n_ground_truth=len(gts),
                  per_tuple=table), args.out)
    return 0


def _cmd_zeroshot(args) -> int:
    frames = read_frames(args.train)
    test_frames = read_frames(args.test)
    vocab = read_vocab(args.vocab)
    key = read_answer_key(args.key)
    tcfg = _train_config(args)
    mcfg = _model_config(args, frames, vocab)
    resolved = _announce({"subcommand": "zeroshot", "train": args.train,
                          "test": args.test, "vocab": args.vocab,
                          "key": args.key, "score_floor": args.score_floor,
                          "top_k": args.top_k,
                          **mcfg.to_dict(), **tcfg.to_dict()})
    if not key.holdout_tuple_ids:
        raise DataError("answer key has no holdout tuples; "
                        "regenerate with --holdout > 0")
    model, report = run_zero_shot(frames, test_frames, vocab, key, mcfg, tcfg,
                                  score_floor=args.score_floor,
                                  top_k_per_roi=args.top_k)
    if args.model_out:
        save_checkpoint(args.model_out, Checkpoint(
            model_config=mcfg, train_config=tcfg,
            visual_head=model.visual_head, text_head=model.text_head,
            visual_opt=OptimizerState.zeros_like(model.visual_head),
            text_opt=OptimizerState.zeros_like(model.text_head),
            global_step=0))
    _emit(_report(resolved, **report.to_dict()), args.out)
    return 0


def _cmd_fewshot(args) -> int:
    frames = read_frames(args.train)
    test_frames = read_frames(args.test)
    vocab = read_vocab(args.vocab)
    key = read_answer_key(args.key)
    tcfg = _train_config(args)
    mcfg = _model_config(args, frames, vocab)
    resolved = _announce({"subcommand": "fewshot", "train": args.train,
                          "test": args.test, "vocab": args.vocab,
                          "key": args.key, "shots": args.shots,
                          "finetune_steps": args.finetune_steps,
                          "score_floor": args.score_floor, "top_k": args.top_k,
                          **mcfg.to_dict(), **tcfg.to_dict()})
    if not key.holdout_tuple_ids:
        raise DataError("answer key has no holdout tuples; "
                        "regenerate with --holdout > 0")
    _, report = run_few_shot(frames, test_frames, vocab, key, mcfg, tcfg,
                             shots_per_tuple=args.shots,
                             finetune_steps=args.finetune_steps,
                             score_floor=args.score_floor,
                             top_k_per_roi=args.top_k)
    _emit(_report(resolved, **report.to_dict()), args.out)
    return 0


def _render_items(items, vocab, fmt: str):
    if fmt == "table":
        lines = []
        for item_id, sim in items:
            label = vocab.label(item_id) if vocab and isinstance(item_id, int) else str(item_id)
            lines.append(f"{str(item_id):>12}  {sim: 12.6f}  {label}")
        return "\n".join(lines)
    payload = [{"item_id": item_id, "similarity": sim} for item_id, sim in items]
    return json.dumps(payload, indent=2)


def _cmd_retrieve(args) -> int:
    model, _ = _load_model(args.model)
    vocab = read_vocab(args.vocab)
    index = build_tuple_index(model, vocab)
    resolved = _announce({"subcommand": "retrieve", "mode": args.mode,
                          "model": args.model, "vocab": args.vocab,
                          "frames": args.frames, "frame_id": args.frame_id,
                          "roi": args.roi, "tuple_id": args.tuple_id,
                          "k": args.k, "metric": args.metric})
    if args.mode == "object-to-text":
        if args.frames is None or args.frame_id is None:
            raise ConfigError("object-to-text needs --frames and --frame-id")
        frames = {f.frame_id: f for f in read_frames(args.frames)}
        if args.frame_id not in frames:
            raise DataError(f"frame {args.frame_id!r} not found")
        frame = frames[args.frame_id]
        if not 0 <= args.roi < len(frame.rois):
            raise DataError(f"frame {args.frame_id!r} has no roi {args.roi}")
        f = embed_roi(model, frame.rois[args.roi].feature)
        result = object_to_text(f, index, k=args.k, metric=args.metric)
        items = [(tid, sim) for tid, sim in result.items]
    else:  # text-to-object
        if args.frames is None or args.tuple_id is None:
            raise ConfigError("text-to-object needs --frames and --tuple-id")
        row = index.vocab.ids.index(args.tuple_id) if args.tuple_id in index.vocab.ids else -1
        if row < 0:
            raise DataError(f"tuple_id {args.tuple_id} not in vocab")
        query = index.z[row]
        objects = []
        for frame in read_frames(args.frames):
            for i, roi in enumerate(frame.rois):
                objects.append((f"{frame.frame_id}:{i}",
                                embed_roi(model, roi.feature)))
        result = text_to_object(query, objects, k=args.k, metric=args.metric)
        items = result.items
    print(_render_items(items, vocab, args.format))
    return 0


def _parse_vec_spec(spec: str, index, key, model):
    kind, _, value = spec.partition(":")
    if kind == "tuple":
        tid = int(value)
        if tid not in index.vocab.ids:
            raise DataError(f"tuple_id {tid} not in vocab")
        return index.z[index.vocab.ids.index(tid)], tid
    if kind == "word":
        if key is None:
            raise ConfigError("word: specs need --key for word embeddings")
        if value not in key.word_embeddings:
            raise DataError(f"word {value!r} not in the answer key")
        return embed_text(model, key.word_embeddings[value]), None
    raise ConfigError(f"bad vector spec {spec!r}; use tuple:<id> or word:<w>")


def _cmd_analogy(args) -> int:
    model, _ = _load_model(args.model)
    vocab = read_vocab(args.vocab)
    index = build_tuple_index(model, vocab)
    key = read_answer_key(args.key) if args.key else None
    resolved = _announce({"subcommand": "analogy", "model": args.model,
                          "vocab": args.vocab, "key": args.key, "a": args.a,
                          "b": args.b, "c": args.c, "k": args.k,
                          "metric": args.metric,
                          "keep_inputs": args.keep_inputs})
    vec_a, id_a = _parse_vec_spec(args.a, index, key, model)
    vec_b, id_b = _parse_vec_spec(args.b, index, key, model)
    vec_c, id_c = _parse_vec_spec(args.c, index, key, model)
    skip = set() if args.keep_inputs else {i for i in (id_a, id_b, id_c)
                                           if i is not None}
    corpus = [(t.tuple_id, index.z[i]) for i, t in enumerate(vocab.tuples)
              if t.tuple_id not in skip]
    result = analogy_query(vec_a, vec_b, vec_c, corpus, k=args.k,
                           exclude_inputs=not args.keep_inputs,
                           metric=args.metric)
    print(_render_items(result.items, vocab, args.format))
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="tupledet",
                     description="Contextual object embedding engine: train, "
                                 "evaluate, and query tuple detections.")
    sub = parser.add_subparsers(dest="subcommand")

    p = sub.add_parser("generate", help="write a planted synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nouns", type=int, default=8)
    p.add_argument("--contexts", type=int, default=4)
    p.add_argument("--holdout", type=int, default=0,
                   help="number of held-out (noun, context) pairs")
    p.add_argument("--frames", type=int, default=500)
    p.add_argument("--test-frames", type=int, default=250)
    p.add_argument("--rois-per-frame", type=int, default=2)
    p.add_argument("--bg-rois-per-frame", type=int, default=1)
    p.add_argument("--noise-sigma", type=float, default=0.1)
    p.add_argument("--d-latent", type=int, default=16)
    p.add_argument("--visual-in-dim", type=int, default=32)
    p.add_argument("--text-in-dim", type=int, default=32)
    p.add_argument("--contextual-mix", type=float, default=0.5)
    p.add_argument("--embedding-scale", type=float, default=3.0)
    p.add_argument("--report", default=None)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("pseudo-label", help="filter detections into pseudo labels")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--score-threshold", type=float, default=0.5)
    p.add_argument("--min-class-count", type=int, default=50)
    p.add_argument("--no-plural-stripping", action="store_true")
    p.add_argument("--stats-only", action="store_true",
                   help="report stats without writing frames (features optional)")
    p.add_argument("--report", default=None)
    p.set_defaults(func=_cmd_pseudo_label)

    p = sub.add_parser("train", help="train the embedding heads")
    p.add_argument("--frames", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--resume", default=None)
    p.add_argument("--report", default=None)
    _add_train_flags(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="mAP@0.5 over tuple classes")
    p.add_argument("--model", default=None)
    p.add_argument("--frames", default=None)
    p.add_argument("--pred", default=None, help="pre-computed predictions JSONL")
    p.add_argument("--pred-out", default=None)
    p.add_argument("--vocab", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--score-floor", type=float, default=0.001)
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--nms-iou", type=float, default=0.5)
    p.add_argument("--interpolation", choices=("all", "101"), default="all")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_eval)

    for name, fn in (("zeroshot", _cmd_zeroshot), ("fewshot", _cmd_fewshot)):
        p = sub.add_parser(name, help=f"{name} protocol on a holdout dataset")
        p.add_argument("--train", required=True)
        p.add_argument("--test", required=True)
        p.add_argument("--vocab", required=True)
        p.add_argument("--key", required=True)
        p.add_argument("--score-floor", type=float, default=0.001)
        p.add_argument("--top-k", type=int, default=5)
        p.add_argument("--out", default=None)
        if name == "zeroshot":
            p.add_argument("--model-out", default=None)
        else:
            p.add_argument("--shots", type=int, default=5)
            p.add_argument("--finetune-steps", type=int, default=200)
        _add_train_flags(p)
        p.set_defaults(func=fn)

    p = sub.add_parser("retrieve", help="object-to-text / text-to-object queries")
    p.add_argument("--mode", choices=("object-to-text", "text-to-object"),
                   required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--frames", default=None)
    p.add_argument("--frame-id", default=None)
    p.add_argument("--roi", type=int, default=0)
    p.add_argument("--tuple-id", type=int, default=None)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--metric", choices=("dot", "cosine"), default="dot")
    p.add_argument("--format", choices=("json", "table"), default="json")
    p.set_defaults(func=_cmd_retrieve)

    p = sub.add_parser("analogy", help="a - b + c queries over the tuple index")
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--key", default=None, help="answer key for word: specs")
    p.add_argument("--a", required=True, help="tuple:<id> or word:<w>")
    p.add_argument("--b", required=True)
    p.add_argument("--c", required=True)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--metric", choices=("dot", "cosine"), default="dot")
    p.add_argument("--keep-inputs", action="store_true",
                   help="do not drop the a/b/c tuples from the candidates")
    p.add_argument("--format", choices=("json", "table"), default="json")
    p.set_defaults(func=_cmd_analogy)
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not getattr(args, "subcommand", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args)
    except (ConfigError, ShapeError) as exc:
        print(f"error: {type(exc).__module__}.{type(exc).__qualname__}: {exc}",
              file=sys.stderr)
        return 1
    except (DataError, CheckpointError, OSError) as exc:
        print(f"error: {type(exc).__module__}.{type(exc).__qualname__}: {exc}",
              file=sys.stderr)
        return 2


def main() -> None:
    raise SystemExit(run_cli())


if __name__ == "__main__":
    main()
