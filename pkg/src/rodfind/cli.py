"""Batch command-line front end: gen-dataset, voxelize, train, tune, index,
query, eval. Exit codes: 0 success, 1 usage error, 2 data/runtime error."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _data_root(value: str | None) -> Path:
    return Path(value or os.environ.get("RODFIND_DATA_DIR") or ".")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rodfind", description=__doc__)
    parser.add_argument("--config", help="JSON file with default option values")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS threads (1 forces full determinism)")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen-dataset", help="generate the paired corpus")
    p.add_argument("--out", default=None, help="output directory (default: data root)")
    p.add_argument("--bases", type=int, default=15)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--total", type=int, default=None)
    group.add_argument("--per-base", type=int, default=None)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=int, default=16)

    p = sub.add_parser("voxelize", help="STL file to NRRD occupancy grid")
    p.add_argument("--stl", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=16)
    p.add_argument("--mode", choices=("fill", "surface"), default="fill")

    p = sub.add_parser("train", help="train the joint embedding from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", default=None, help="training log CSV path")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--margin", type=float, default=0.5)
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--layers", type=int, default=7,
                   help="shape-encoder convolution layers (3-7)")
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("tune", help="orthogonal-experiment hyperparameter search")
    p.add_argument("--manifest", required=True)
    p.add_argument("--design", required=True, help="design JSON (kind, factors)")
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("index", help="embed a gallery and persist the index")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "val", "all"), default="all")

    p = sub.add_parser("query", help="top-k shapes for a textual requirement")
    p.add_argument("--index", required=True)
    p.add_argument("--checkpoint", required=True)
    text = p.add_mutually_exclusive_group(required=True)
    text.add_argument("--text")
    text.add_argument("--text-file")
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--strict", action="store_true",
                   help="reject texts with unrecognized sentences")
    p.add_argument("--json", action="store_true")
    p.add_argument("--previews", default=None,
                   help="directory for OBJ previews of the matches")

    p = sub.add_parser("eval", help="recall@k of a checkpoint on a manifest split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=("train", "val", "all"), default="val")
    p.add_argument("--k", default="1,8", help="comma-separated k values")
    p.add_argument("--json", action="store_true")
    return parser


def dispatch(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        if "--config" in argv:
            config_path = argv[argv.index("--config") + 1]
            defaults = json.loads(Path(config_path).read_text(encoding="utf-8"))
            parser.set_defaults(**{k.replace("-", "_"): v for k, v in defaults.items()})
        args = parser.parse_args(argv)
        if args.command is None:
            sys.stderr.write(parser.format_usage())
            return 1
        if args.threads is not None:
            for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
                os.environ[var] = str(args.threads)
        handler = globals()[f"_cmd_{args.command.replace('-', '_')}"]
        return handler(args)
    except _UsageError as exc:
        sys.stderr.write(str(exc) + "\n")
        return 1
    except IndexError:
        sys.stderr.write("rodfind: --config needs a file argument\n")
        return 1
    except Exception as exc:  # data/runtime errors
        sys.stderr.write(f"rodfind: error: {exc}\n")
        return 2


def main():
    sys.exit(dispatch())


# ---------------------------------------------------------------------------
# command implementations (heavy imports stay inside the handlers so that
# --threads can pin the BLAS pool before numpy loads it)

def _cmd_gen_dataset(args) -> int:
    from . import dataset as ds

    out = _data_root(args.out)
    grids_dir = out / "grids"
    grids_dir.mkdir(parents=True, exist_ok=True)
    kwargs = {}
    if args.total is not None:
        kwargs["total"] = args.total
    else:
        kwargs["per_base"] = args.per_base if args.per_base is not None else 48
    samples = ds.generate_variants(bases=args.bases, seed=args.seed,
                                   resolution=args.resolution, **kwargs)
    train, val = ds.split_samples(samples, args.val_fraction, seed=args.seed)
    val_ids = {s.id for s in val}

    rows = []
    for sample in samples:
        rel = f"grids/{sample.id}.nrrd"
        (out / rel).write_bytes(ds.write_nrrd(sample.grid))
        rows.append(ds.ManifestRow(sample.id, sample.text, rel,
                                   "val" if sample.id in val_ids else "train"))
    manifest = ds.DatasetManifest(rows, {
        "schema_version": 1,
        "resolution": args.resolution,
        "seed": args.seed,
        "bases": args.bases,
    })
    ds.write_manifest(manifest, out / "manifest.csv")
    print(f"wrote {len(samples)} samples ({len(train)} train / {len(val)} val) "
          f"under {out}")
    return 0


def _cmd_voxelize(args) -> int:
    from . import dataset as ds
    from . import geometry as geo

    data = Path(args.stl).read_bytes()
    mesh = geo.parse_stl(data)
    grid = geo.voxelize_mesh(mesh, args.resolution, mode=args.mode,
                             source_id=Path(args.stl).name)
    Path(args.out).write_bytes(ds.write_nrrd(grid))
    print(f"voxelized {args.stl} ({len(mesh)} triangles) -> {args.out} "
          f"({grid.occupied_count}/{grid.resolution ** 3} occupied)")
    return 0


def _load_split(manifest_path, split):
    from . import dataset as ds

    manifest = ds.read_manifest(manifest_path)
    base = Path(manifest_path).parent
    samples = []
    for row in manifest.rows:
        if split != "all" and row.split != split:
            continue
        grid = ds.read_nrrd((base / row.nrrd_path).read_bytes())
        samples.append(ds.Sample(row.id, None, row.text, grid))
    return manifest, samples


def _cmd_train(args) -> int:
    from . import encoders as enc
    from . import training as tr

    _, train_samples = _load_split(args.manifest, "train")
    _, val_samples = _load_split(args.manifest, "val")
    config = tr.TrainerConfig(batch_size=args.batch_size, learning_rate=args.lr,
                              epochs=args.epochs, margin=args.margin, mu=args.mu,
                              seed=args.seed, optimizer=args.optimizer)
    shape_config = enc.ShapeEncoderConfig(num_conv_layers=args.layers)
    result = tr.fit(train_samples, val_samples, config, shape_config=shape_config)
    enc.save_checkpoint(args.out, result.text_params, result.shape_params,
                        result.vocab.word_to_id,
                        {"seed": args.seed, "epochs": args.epochs,
                         "layers": args.layers, "lr": args.lr,
                         "batch_size": args.batch_size, "margin": args.margin,
                         "mu": args.mu})
    if args.log:
        with open(args.log, "w", encoding="utf-8") as stream:
            stream.write("epoch,train_loss,val_recall1,wall_seconds\n")
            for row in result.log:
                stream.write(f"{row.epoch},{row.train_loss:.6f},"
                             f"{row.val_recall1:.6f},{row.wall_seconds:.3f}\n")
    last = result.log[-1]
    print(f"trained {args.epochs} epochs: loss {last.train_loss:.4f}, "
          f"val recall@1 {last.val_recall1:.3f}; checkpoint at {args.out}")
    return 0


_FACTOR_ALIASES = {
    "batch size": "batch_size", "batch_size": "batch_size",
    "learning rate": "learning_rate", "learning_rate": "learning_rate",
    "epoch": "epochs", "epochs": "epochs",
    "convolution layer number": "layers", "conv layers": "layers",
    "layers": "layers",
}


def _cmd_tune(args) -> int:
    from . import doe
    from . import encoders as enc
    from . import training as tr

    design_data = json.loads(Path(args.design).read_text(encoding="utf-8"))
    factors = [doe.Factor(f["name"], tuple(f["levels"]))
               for f in design_data["factors"]]
    design = doe.make_design(design_data["kind"], factors)

    _, train_samples = _load_split(args.manifest, "train")
    _, val_samples = _load_split(args.manifest, "val")
    if not val_samples:
        raise ValueError(f"{args.manifest}: tuning needs a val split")

    def objective(assignment):
        overrides = {}
        for name, value in assignment.items():
            key = _FACTOR_ALIASES.get(name.lower())
            if key is None:
                raise ValueError(f"design factor {name!r} is not tunable")
            overrides[key] = value
        layers = int(overrides.pop("layers", 7))
        config = tr.TrainerConfig(seed=args.seed, **overrides)
        result = tr.fit(train_samples, val_samples, config,
                        shape_config=enc.ShapeEncoderConfig(num_conv_layers=layers))
        return 100.0 * tr.evaluate_recall(result.text_params, result.shape_params,
                                          val_samples, 1, result.vocab)

    report = doe.run_tuning(design, objective, budget=args.budget,
                            report_path=args.out)
    print(report.to_csv())
    print(f"best combination {report.ranges.best_combination} "
          f"({'ran' if report.recommended_was_run else 'not run'}): "
          f"{report.recommended}")
    return 0


def _cmd_index(args) -> int:
    from . import encoders as enc
    from . import retrieval as rt

    checkpoint = enc.load_checkpoint(args.checkpoint)
    manifest_path = Path(args.manifest)
    manifest, samples = _load_split(manifest_path, args.split)
    paths = {row.id: str((manifest_path.parent / row.nrrd_path).resolve())
             for row in manifest.rows}
    index = rt.build_index(samples, checkpoint, nrrd_paths=paths)
    rt.save_index(index, args.out)
    print(f"indexed {len(index)} shapes -> {args.out}")
    return 0


def _cmd_query(args) -> int:
    from . import dataset as ds
    from . import encoders as enc
    from . import retrieval as rt

    text = args.text if args.text is not None else Path(args.text_file).read_text(
        encoding="utf-8").strip()
    checkpoint = enc.load_checkpoint(args.checkpoint)
    index = rt.load_index(args.index)
    result = rt.query(text, index, checkpoint, k=args.k, lenient=not args.strict)
    if args.json:
        print(json.dumps({"query": result.query_text, "k": result.k,
                          "matches": [{"id": i, "distance": d}
                                      for i, d in result.matches]}, indent=2))
    else:
        print("rank\tid\tdistance")
        for rank, (sample_id, distance) in enumerate(result.matches, start=1):
            print(f"{rank}\t{sample_id}\t{distance:.6f}")
    if args.previews:
        preview_dir = Path(args.previews)
        preview_dir.mkdir(parents=True, exist_ok=True)
        by_id = dict(zip(index.ids, index.nrrd_paths))
        for sample_id, _ in result.matches:
            grid = ds.read_nrrd(Path(by_id[sample_id]).read_bytes())
            (preview_dir / f"{sample_id}.obj").write_bytes(
                rt.export_preview(grid, "obj"))
        print(f"previews under {preview_dir}")
    return 0


def _cmd_eval(args) -> int:
    from . import dataset as ds
    from . import encoders as enc
    from . import training as tr

    checkpoint = enc.load_checkpoint(args.checkpoint)
    _, samples = _load_split(args.manifest, args.split)
    vocab = ds.Vocabulary(dict(checkpoint.vocab_words))
    ks = [int(k) for k in str(args.k).split(",")]
    values = {}
    for k in ks:
        values[k] = tr.evaluate_recall(checkpoint.text, checkpoint.shape,
                                       samples, k, vocab)
    if args.json:
        print(json.dumps({"split": args.split, "count": len(samples),
                          "recall": {str(k): v for k, v in values.items()}}, indent=2))
    else:
        for k in ks:
            print(f"recall@{k}\t{values[k]:.4f}")
    return 0


if __name__ == "__main__":
    main()
