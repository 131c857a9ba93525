"""Command-line interface.

Subcommands: align, train, embed, enroll, verify, identify, eval, serve.
Exit codes: 0 success, 2 data errors, 3 configuration errors, 4 internal
errors. ``--seed`` falls back to the PRIMID_SEED environment variable;
``--config`` points at a TOML file of flag defaults (flags win).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .align import (
    align_crop,
    compute_landmark_template,
    load_image,
    load_template,
    read_landmark_csv,
    save_image,
    save_template,
    solve_similarity,
)
from .errors import (
    ConfigError,
    DegenerateLandmarks,
    FormatError,
    PrimIdError,
    SplitError,
)
from .gallery import Gallery, Individual, load_gallery, save_gallery
from .matcher import identify, verify
from .model import PrimNetConfig, TrainConfig, build_primnet, load_weights, save_weights, train
from .pipeline import (
    embed_manifest,
    group_by_individual,
    read_manifest,
    run_evaluation,
    write_score_csv,
    write_sweep_csv,
)

logger = logging.getLogger("primid")

EXIT_OK = 0
EXIT_DATA = 2
EXIT_CONFIG = 3
EXIT_INTERNAL = 4

SCHEMA_VERSION = 1


def _default_seed() -> int:
    env = os.environ.get("PRIMID_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"PRIMID_SEED must be an integer, got {env!r}") from None


def _load_toml_defaults(argv: list[str]) -> dict:
    """Pre-scan for --config and return its table; flags still win because
    the table only replaces parser defaults."""
    if "--config" not in argv:
        return {}
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        raise ConfigError("--config requires a path")
    path = Path(argv[idx + 1])
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        import tomllib  # py311+
    except ModuleNotFoundError:
        import tomli as tomllib
    try:
        return tomllib.loads(path.read_text(encoding="utf-8"))
    except Exception as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc


def _parse_landmarks_flag(text: str):
    from .pipeline import landmarks_from_dict

    parts = text.split(",")
    if len(parts) != 6:
        raise ConfigError("--landmarks expects lx,ly,rx,ry,mx,my")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise ConfigError("--landmarks values must be numeric") from None
    keys = ("lx", "ly", "rx", "ry", "mx", "my")
    return landmarks_from_dict(dict(zip(keys, vals)))


def _require_file(path: str | Path, kind: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{kind} not found: {path}")
    return path


def _emit(obj: dict, as_json: bool, text: str) -> None:
    if as_json:
        print(json.dumps({"schema_version": SCHEMA_VERSION, **obj}, sort_keys=True))
    else:
        print(text)


# ---------------------------------------------------------------------------
# subcommands


def cmd_align(args) -> int:
    rows = read_landmark_csv(_require_file(args.landmarks_csv, "landmark CSV"))
    image_dir = Path(args.image_dir)
    out_dir = Path(args.out_dir)
    if not rows:
        logger.error("no landmark rows in %s", args.landmarks_csv)
        return EXIT_DATA
    out_dir.mkdir(parents=True, exist_ok=True)

    template_path = Path(args.template) if args.template else out_dir / "template.json"
    if template_path.exists():
        template = load_template(template_path)
        logger.info("loaded landmark template from %s", template_path)
    else:
        usable = []
        for lm in rows:
            try:
                lm.validate()
                usable.append(lm)
            except DegenerateLandmarks as exc:
                logger.error("template: skipping %s: %s", lm.image_ref, exc)
        if not usable:
            logger.error("no valid landmark rows; cannot compute template")
            return EXIT_DATA
        template = compute_landmark_template(usable)
        save_template(template, template_path)
        logger.info("wrote landmark template to %s", template_path)

    failures = 0
    for lm in rows:
        try:
            img = load_image(image_dir / lm.image_ref)
            crop, _ = align_crop(img, lm, template)
            out_name = Path(lm.image_ref).with_suffix(".png").name
            save_image(crop, out_dir / out_name)
        except (PrimIdError, OSError) as exc:
            logger.error("row %s failed: %s", lm.image_ref, exc)
            failures += 1
    logger.info("aligned %d/%d images into %s", len(rows) - failures, len(rows), out_dir)
    return EXIT_DATA if failures else EXIT_OK


def cmd_train(args) -> int:
    entries = read_manifest(_require_file(args.manifest, "training manifest"))
    root = Path(args.manifest).parent
    template = load_template(_require_file(args.template, "landmark template"))
    train_cfg = TrainConfig(lr=args.lr, momentum=args.momentum,
                            weight_decay=args.weight_decay, batch_size=args.batch_size,
                            epochs=args.epochs, seed=args.seed)
    cfg = PrimNetConfig(train=train_cfg)
    model = build_primnet(cfg)

    crops = np.empty((len(entries), template.canvas[1], template.canvas[0], 3),
                     dtype=np.uint8)
    labels = []
    for i, entry in enumerate(entries):
        img = load_image(root / entry.image)
        crops[i], _ = align_crop(img, entry.landmarks, template)
        labels.append(entry.individual_id)
    result = train(model, (crops, labels), train_cfg,
                   log_every=max(1, args.epochs // 10))
    save_weights(model, args.out)
    curve_path = Path(args.out).with_suffix(".loss.json")
    curve_path.write_text(json.dumps({"schema_version": SCHEMA_VERSION,
                                      "loss_curve": result.loss_curve,
                                      "classes": result.label_order}, indent=2))
    _emit({"model": str(args.out), "final_loss": result.loss_curve[-1],
           "epochs": args.epochs, "classes": len(result.label_order)},
          args.json,
          f"trained {len(result.label_order)} classes for {args.epochs} epochs; "
          f"final loss {result.loss_curve[-1]:.4f}; saved to {args.out}")
    return EXIT_OK


def cmd_embed(args) -> int:
    entries = read_manifest(_require_file(args.manifest, "manifest"))
    root = Path(args.manifest).parent
    model = load_weights(_require_file(args.model, "model"))
    template = load_template(_require_file(args.template, "landmark template"))
    refs, embeddings = embed_manifest(model, template, entries, root)
    np.savez(args.out, refs=np.array(refs), embeddings=embeddings.astype(np.float32))
    _emit({"count": len(refs), "out": str(args.out), "dim": int(embeddings.shape[1])},
          args.json, f"embedded {len(refs)} images -> {args.out}")
    return EXIT_OK


def cmd_enroll(args) -> int:
    entries = read_manifest(_require_file(args.manifest, "enrollment manifest"))
    root = Path(args.manifest).parent
    model = load_weights(_require_file(args.model, "model"))
    template = load_template(_require_file(args.template, "landmark template"))
    gallery_path = Path(args.gallery)
    gallery = load_gallery(gallery_path) if gallery_path.exists() else Gallery()
    refs, embeddings = embed_manifest(model, template, entries, root)
    grouped = group_by_individual(entries, refs, embeddings)
    by_id = {e.individual_id: e for e in entries}
    for ind_id, pairs in grouped.items():
        entry = by_id[ind_id]
        gallery.enroll(Individual(id=ind_id, name=entry.name or ind_id,
                                  species=entry.species),
                       [emb for _, emb in pairs], [ref for ref, _ in pairs])
    save_gallery(gallery, gallery_path)
    _emit({"individuals": len(gallery), "entries": gallery.total_entries(),
           "gallery": str(gallery_path)},
          args.json,
          f"gallery {gallery_path}: {len(gallery)} individuals, "
          f"{gallery.total_entries()} enrolled images")
    return EXIT_OK


def _embed_probe(args):
    model = load_weights(_require_file(args.model, "model"))
    template = load_template(_require_file(args.template, "landmark template"))
    lm = _parse_landmarks_flag(args.landmarks)
    img = load_image(_require_file(args.image, "probe image"))
    crop, params = align_crop(img, lm, template)
    return model.embed(crop), params


def cmd_verify(args) -> int:
    gallery = load_gallery(_require_file(args.gallery, "gallery"))
    emb, _ = _embed_probe(args)
    template = gallery.template(args.individual)
    accepted, score = verify(emb, template, args.threshold)
    _emit({"individual_id": args.individual, "score": score, "accepted": accepted,
           "threshold": args.threshold},
          args.json,
          f"{args.individual}: score {score:.3f} -> "
          f"{'ACCEPT' if accepted else 'REJECT'} (threshold {args.threshold:.3f})")
    return EXIT_OK


def cmd_identify(args) -> int:
    gallery = load_gallery(_require_file(args.gallery, "gallery"))
    emb, _ = _embed_probe(args)
    results = identify(emb, gallery, k=args.k, threshold=args.threshold,
                       species=args.species)
    payload = [{"rank": r.rank, "individual_id": r.individual_id,
                "score": r.score, "accepted": r.accepted} for r in results]
    lines = [f"{r.rank:>2}. {r.individual_id:<24} {r.score:.3f}"
             + ("" if r.accepted else "  [below threshold]") for r in results]
    if args.threshold is not None and not any(r.accepted for r in results):
        lines.append("no enrolled individual matches (all scores below threshold)")
    _emit({"results": payload}, args.json, "\n".join(lines))
    return EXIT_OK


def cmd_eval(args) -> int:
    entries = read_manifest(_require_file(args.manifest, "manifest"))
    root = Path(args.manifest).parent
    model = load_weights(_require_file(args.model, "model"))
    template = load_template(_require_file(args.template, "landmark template"))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts = run_evaluation(model, template, entries, root,
                               folds=args.folds, trials=args.trials, seed=args.seed,
                               species=args.species, with_sweep=args.sweep,
                               with_scores=args.scores_csv)
    report = artifacts.report
    report_json = json.dumps(report.to_json_obj(), sort_keys=True, indent=2) + "\n"
    (out_dir / "report.json").write_text(report_json, encoding="utf-8")
    (out_dir / "report.txt").write_text(report.to_text(), encoding="utf-8")
    if args.scores_csv:
        write_score_csv(artifacts.score_rows, out_dir / "scores.csv")
    if args.sweep:
        write_sweep_csv(artifacts.sweep_rows, out_dir / "sweep.csv")
    if args.json:
        print(json.dumps(report.to_json_obj(), sort_keys=True))
    else:
        print(report.to_text(), end="")
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(model_path=_require_file(args.model, "model"),
                     template_path=_require_file(args.template, "landmark template"),
                     gallery_path=Path(args.gallery),
                     webui_dir=Path(args.webui) if args.webui else None)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="primid",
                                     description="Primate face identification toolkit")
    parser.add_argument("--version", action="version", version=f"primid {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--json", action="store_true", help="machine-readable output")
        p.add_argument("--config", help="TOML file with flag defaults")
        if seed:
            p.add_argument("--seed", type=int, default=None,
                           help="PRNG seed (default: PRIMID_SEED or 0)")

    p = sub.add_parser("align", help="warp faces into canonical crops")
    p.add_argument("landmarks_csv")
    p.add_argument("image_dir")
    p.add_argument("out_dir")
    p.add_argument("--template", help="landmark template file (loaded if it exists, "
                                      "otherwise computed and saved here)")
    common(p, seed=False)
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("train", help="train the embedding network")
    p.add_argument("--manifest", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="embed manifest images to an .npz file")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--out", required=True)
    common(p, seed=False)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("enroll", help="enroll manifest images into a gallery")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--gallery", required=True)
    common(p, seed=False)
    p.set_defaults(func=cmd_enroll)

    p = sub.add_parser("verify", help="1:1 probe-vs-individual decision")
    p.add_argument("--gallery", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--individual", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--landmarks", required=True, help="lx,ly,rx,ry,mx,my")
    p.add_argument("--threshold", type=float, default=0.5)
    common(p, seed=False)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("identify", help="1:N ranked search")
    p.add_argument("--gallery", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--landmarks", required=True, help="lx,ly,rx,ry,mx,my")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--threshold", type=float, default=None,
                   help="open-set reject threshold")
    p.add_argument("--species", default=None)
    common(p, seed=False)
    p.set_defaults(func=cmd_identify)

    p = sub.add_parser("eval", help="run the verification/identification protocols")
    p.add_argument("--manifest", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--species", default=None)
    p.add_argument("--sweep", action="store_true",
                   help="also write the template-size sweep CSV")
    p.add_argument("--scores-csv", action="store_true",
                   help="dump every genuine/impostor score")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--model", required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--gallery", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8713)
    p.add_argument("--webui", default=None, help="static web UI directory")
    common(p, seed=False)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        defaults = _load_toml_defaults(argv)
        parser = build_parser()
        if defaults:
            for action in parser._subparsers._group_actions:
                for sp in action.choices.values():
                    known = {a.dest for a in sp._actions}
                    sp.set_defaults(**{k: v for k, v in defaults.items() if k in known})
        args = parser.parse_args(argv)
        if getattr(args, "seed", None) is None and hasattr(args, "seed"):
            args.seed = _default_seed()
        return args.func(args)
    except (ConfigError, SplitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PrimIdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except KeyboardInterrupt:
        return EXIT_INTERNAL
    except Exception as exc:  # pragma: no cover - defensive
        logger.exception("internal error: %s", exc)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
