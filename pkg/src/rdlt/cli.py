"""Command line interface.

Subcommands cover the whole pipeline: ``dataset build`` -> ``train`` /
``klt`` / ``sot`` -> ``eval`` -> ``bd`` / ``mts`` -> ``plot`` / ``basis``.

Conventions shared by every command:

* exit codes: 0 success, 1 runtime failure (bad file, failed invariant),
  2 usage error (argparse or invalid flag combinations);
* ``--config FILE`` supplies defaults from a JSON object whose keys are the
  long flag names with dashes as underscores; explicit flags win over the
  config file, which wins over built-in defaults (for ``--seed`` the
  RDLT_SEED environment variable replaces the built-in default);
* every artifact embeds the resolved configuration and the content hashes
  of its inputs, and is written atomically (temp file + rename);
* report-style outputs (eval, mts, bd) also render a PNG figure next to
  the delimited output; ``plot`` renders the standalone SVG form.

Heavy imports happen inside the command bodies so that ``--threads`` can
pin the BLAS pool before numpy first loads; with ``--threads 1`` results
are the single-threaded reference, with more threads layout-dependent
float reductions may differ in the last bits but all coding paths remain
exact.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

_ALLOWED_N = (8, 16, 32)

_COMMON_DEFAULTS = {"seed": 0, "threads": None, "config": None}

_DEFAULTS = {
    "dataset_build": {"n": 8, "split": 0.85, "allow_any_n": False, **_COMMON_DEFAULTS},
    "train": {
        "phase1_steps": 20000,
        "phase2_steps": 80000,
        "batch_size": 1024,
        "learning_rate": 1e-4,
        "qnet_learning_rate": 1e-2,
        "lambda_lo": 0.01,
        "lambda_hi": 0.5,
        "orthonormalize_every": 1000,
        "orth_penalty_weight": 0.0,
        "qnet_hidden": 16,
        "log_every": 100,
        "log_csv": None,
        **_COMMON_DEFAULTS,
    },
    "klt": {**_COMMON_DEFAULTS},
    "sot": {"iterations": 50, "sparsity_lambda": 560.0, **_COMMON_DEFAULTS},
    "eval": {"steps": "20,30,40,50,60", "split": "eval", "label": None, "figure": None, **_COMMON_DEFAULTS},
    "bd": {"figure": None, **_COMMON_DEFAULTS},
    "mts": {"steps": "20,30,40,50,60", "alpha": 0.12, "split": "eval", "figure": None, **_COMMON_DEFAULTS},
    "plot": {"title": "", **_COMMON_DEFAULTS},
    "basis": {**_COMMON_DEFAULTS},
}


def _add_common(sp: argparse.ArgumentParser):
    sp.add_argument("--config", help="JSON file with default values for this command's flags")
    sp.add_argument("--seed", type=int, help="RNG seed (default: RDLT_SEED env var, else 0)")
    sp.add_argument("--threads", type=int, help="cap numeric worker threads; 1 = reference path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rdlt",
        description="Learned orthonormal block transforms vs DCT/KLT/SOT, with real coding.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_dataset = sub.add_parser("dataset", help="residual corpus tools")
    dsub = p_dataset.add_subparsers(dest="dataset_command", required=True)
    p_build = dsub.add_parser("build", help="extract residual blocks from a folder of images")
    p_build.add_argument("--images", required=True, help="directory of 8-bit images")
    p_build.add_argument("--out", required=True, help="output dataset directory")
    p_build.add_argument("--n", type=int, help="block size (8, 16 or 32)")
    p_build.add_argument("--split", type=float, help="training fraction (default 0.85)")
    p_build.add_argument("--allow-any-n", action="store_const", const=True,
                         help="permit block sizes outside {8, 16, 32}")
    _add_common(p_build)

    p_train = sub.add_parser("train", help="train the transform/entropy/step model")
    p_train.add_argument("--dataset", required=True, help="dataset directory")
    p_train.add_argument("--out", required=True, help="output model file (.rdlm)")
    for flag in ("--phase1-steps", "--phase2-steps", "--batch-size",
                 "--orthonormalize-every", "--qnet-hidden", "--log-every"):
        p_train.add_argument(flag, type=int)
    for flag in ("--learning-rate", "--qnet-learning-rate", "--lambda-lo",
                 "--lambda-hi", "--orth-penalty-weight"):
        p_train.add_argument(flag, type=float)
    p_train.add_argument("--log-csv", help="write step,loss,D,R,Q,defect progress rows here")
    _add_common(p_train)

    p_klt = sub.add_parser("klt", help="covariance eigenbasis from the training split")
    p_klt.add_argument("--dataset", required=True)
    p_klt.add_argument("--out", required=True, help="output transform file (.rdlt)")
    _add_common(p_klt)

    p_sot = sub.add_parser("sot", help="sparse orthonormal transform from the training split")
    p_sot.add_argument("--dataset", required=True)
    p_sot.add_argument("--out", required=True, help="output transform file (.rdlt)")
    p_sot.add_argument("--iterations", type=int)
    p_sot.add_argument("--sparsity-lambda", type=float)
    _add_common(p_sot)

    p_eval = sub.add_parser("eval", help="rate-distortion curve with real coding")
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--transform", required=True, help="transform (.rdlt) or model (.rdlm) file")
    p_eval.add_argument("--out", required=True, help="output curve CSV")
    p_eval.add_argument("--steps", help="comma-separated quantization steps")
    p_eval.add_argument("--split", choices=("train", "eval"))
    p_eval.add_argument("--label", help="curve label (default: transform label)")
    p_eval.add_argument("--figure", help="PNG figure path (default: CSV path with .png)")
    _add_common(p_eval)

    p_bd = sub.add_parser("bd", help="Bjontegaard deltas between two curve CSVs")
    p_bd.add_argument("--test", required=True, help="curve CSV under test")
    p_bd.add_argument("--anchor", required=True, help="anchor curve CSV")
    p_bd.add_argument("--out", required=True, help="output JSON")
    p_bd.add_argument("--figure", help="PNG figure path (default: JSON path with .png)")
    _add_common(p_bd)

    p_mts = sub.add_parser("mts", help="per-block selection among primary + sinusoidal combos")
    p_mts.add_argument("--dataset", required=True)
    p_mts.add_argument("--primary", required=True, help="primary transform (.rdlt) or model (.rdlm)")
    p_mts.add_argument("--out", required=True, help="output CSV")
    p_mts.add_argument("--steps", help="comma-separated quantization steps")
    p_mts.add_argument("--alpha", type=float, help="lambda_rdo = alpha * Q^2")
    p_mts.add_argument("--split", choices=("train", "eval"))
    p_mts.add_argument("--figure", help="PNG figure path (default: CSV path with .png)")
    _add_common(p_mts)

    p_plot = sub.add_parser("plot", help="render curve CSVs to a standalone SVG")
    p_plot.add_argument("curves", nargs="+", help="curve CSV files")
    p_plot.add_argument("--out", required=True, help="output SVG")
    p_plot.add_argument("--title")
    _add_common(p_plot)

    p_basis = sub.add_parser("basis", help="basis-function mosaic as a PGM image")
    p_basis.add_argument("--transform", required=True, help="transform (.rdlt) or model (.rdlm)")
    p_basis.add_argument("--out", required=True, help="output PGM")
    _add_common(p_basis)

    return parser


def _command_key(args) -> str:
    if args.command == "dataset":
        return f"dataset_{args.dataset_command}"
    return args.command


def _resolve_config(args, parser) -> dict:
    """Merge flags > config file > (env for seed) > defaults into one dict."""
    key = _command_key(args)
    defaults = dict(_DEFAULTS[key])
    file_values = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, "r", encoding="utf-8") as fh:
                file_values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"--config: {exc}")
        if not isinstance(file_values, dict):
            parser.error("--config: top-level JSON value must be an object")
        unknown = sorted(set(file_values) - set(defaults))
        if unknown:
            parser.error(f"--config: unknown keys for {key}: {', '.join(unknown)}")
    if "seed" in defaults:
        env_seed = os.environ.get("RDLT_SEED")
        if env_seed is not None:
            try:
                defaults["seed"] = int(env_seed)
            except ValueError:
                parser.error(f"RDLT_SEED must be an integer, got {env_seed!r}")
    resolved = {}
    for name, default in defaults.items():
        cli_value = getattr(args, name, None)
        if cli_value is not None:
            resolved[name] = cli_value
        elif name in file_values:
            resolved[name] = file_values[name]
        else:
            resolved[name] = default
    return resolved


def _parse_steps(text, parser):
    try:
        steps = tuple(float(v) for v in str(text).split(","))
    except ValueError:
        parser.error(f"--steps: expected comma-separated numbers, got {text!r}")
    if not steps or any(s <= 0 for s in steps):
        parser.error("--steps: all quantization steps must be positive")
    return steps


def _apply_threads(threads):
    if threads is None:
        return
    if threads < 1:
        raise ValueError("--threads must be at least 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ[var] = str(threads)


def _atomic_replace(path, write_fn):
    tmp = path + ".tmp"
    write_fn(tmp)
    os.replace(tmp, path)


def _atomic_text(path, text):
    _atomic_replace(path, lambda p: open(p, "w", encoding="utf-8").write(text))


def _load_any_transform(path):
    from . import trainer, transforms

    kind, sep, size = path.partition(":")
    if sep and not os.path.exists(path):
        makers = {
            "dct2": transforms.dct2_transform,
            "dst7": lambda n: transforms.separable_transform(
                transforms.dst7_matrix(n), transforms.dst7_matrix(n), label=f"dst7-{n}"),
            "dct8": lambda n: transforms.separable_transform(
                transforms.dct8_matrix(n), transforms.dct8_matrix(n), label=f"dct8-{n}"),
        }
        if kind in makers:
            try:
                n = int(size)
            except ValueError:
                raise ValueError(f"builtin transform needs an integer size, got {path!r}")
            return makers[kind](n)
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == trainer.MODEL_MAGIC:
        return trainer.load_model(path).transform
    return transforms.load_transform(path)


def _default_figure(out_path: str) -> str:
    root, _ = os.path.splitext(out_path)
    return root + ".png"


def _provenance(command: str, resolved: dict, inputs: dict) -> dict:
    return {"command": command, "config": resolved, "inputs": inputs}


def _split_blocks(ds, which: str):
    return ds.train if which == "train" else ds.eval


def cmd_dataset_build(resolved, args, parser) -> int:
    n = int(resolved["n"])
    if n not in _ALLOWED_N and not resolved["allow_any_n"]:
        parser.error(f"--n {n} is outside {{8, 16, 32}}; pass --allow-any-n to override")
    if n < 2:
        parser.error("--n must be at least 2")
    from . import dataset

    image_dir = args.images
    if not os.path.isdir(image_dir):
        raise OSError(f"{image_dir}: not a directory")
    names = sorted(
        f for f in os.listdir(image_dir)
        if f.lower().endswith((".pgm", ".png", ".bmp", ".jpg", ".jpeg"))
    )
    if not names:
        raise ValueError(f"{image_dir}: no image files found")
    paths = [os.path.join(image_dir, f) for f in names]
    ds = dataset.build_dataset(paths, n, split=float(resolved["split"]), seed=int(resolved["seed"]))
    content_hash = dataset.save_dataset(
        ds, args.out, extra_manifest={"resolved_config": resolved}
    )
    print(f"dataset: {ds.train.shape[0]} train / {ds.eval.shape[0]} eval blocks "
          f"(n={n}) from {len(paths)} images -> {args.out}")
    print(f"content hash: {content_hash}")
    return 0


def cmd_train(resolved, args, parser) -> int:
    from . import dataset, trainer

    ds, manifest = dataset.load_dataset(args.dataset)
    config = trainer.TrainConfig(
        n=ds.n,
        lambda_lo=float(resolved["lambda_lo"]),
        lambda_hi=float(resolved["lambda_hi"]),
        phase1_steps=int(resolved["phase1_steps"]),
        phase2_steps=int(resolved["phase2_steps"]),
        batch_size=int(resolved["batch_size"]),
        learning_rate=float(resolved["learning_rate"]),
        qnet_learning_rate=float(resolved["qnet_learning_rate"]),
        orthonormalize_every=int(resolved["orthonormalize_every"]),
        orth_penalty_weight=float(resolved["orth_penalty_weight"]),
        qnet_hidden=int(resolved["qnet_hidden"]),
        seed=int(resolved["seed"]),
        log_every=int(resolved["log_every"]),
    )
    model = trainer.train(ds.train, config, dataset_hash=manifest["content_hash"])
    model.metadata["resolved_cli"] = resolved
    _atomic_replace(args.out, lambda p: trainer.save_model(model, p))
    if resolved["log_csv"]:
        rows = ["step,loss,D,R,Q,defect"]
        for row in model.metadata["log"]:
            rows.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
        _atomic_text(resolved["log_csv"], "\n".join(rows) + "\n")
    print(f"trained {config.phase1_steps}+{config.phase2_steps} steps on "
          f"{ds.train.shape[0]} blocks; final defect {model.metadata['final_defect']:.3e}")
    print(f"model -> {args.out}")
    return 0


def _export_transform(t, resolved, args, command, extra_inputs):
    from . import transforms

    _atomic_replace(args.out, lambda p: transforms.save_transform(t, p))
    prov = _provenance(command, resolved, extra_inputs)
    _atomic_replace(
        args.out + ".json",
        lambda p: transforms.save_transform_json(t, p, extra={"provenance": prov}),
    )
    print(f"{t.label}: defect {transforms.transform_defect(t):.3e} -> {args.out}")


def cmd_klt(resolved, args, parser) -> int:
    from . import baselines, dataset

    ds, manifest = dataset.load_dataset(args.dataset)
    t = baselines.klt_from_blocks(ds.train, label=f"klt-{ds.n}")
    _export_transform(t, resolved, args, "klt", {"dataset": manifest["content_hash"]})
    return 0


def cmd_sot(resolved, args, parser) -> int:
    from . import baselines, dataset

    ds, manifest = dataset.load_dataset(args.dataset)
    config = baselines.SotConfig(
        iterations=int(resolved["iterations"]),
        sparsity_lambda=float(resolved["sparsity_lambda"]),
    )
    result = baselines.sot_train(ds.train, config, label=f"sot-{ds.n}")
    _export_transform(
        result.transform, resolved, args, "sot",
        {"dataset": manifest["content_hash"], "final_objective": result.objective[-1],
         "nonzero_fraction": result.nonzero_fraction},
    )
    return 0


def cmd_eval(resolved, args, parser) -> int:
    from . import codec_eval, dataset, plots

    steps = _parse_steps(resolved["steps"], parser)
    ds, manifest = dataset.load_dataset(args.dataset)
    transform = _load_any_transform(args.transform)
    if transform.n != ds.n:
        raise ValueError(
            f"transform is for n={transform.n}, dataset holds n={ds.n} blocks"
        )
    blocks = _split_blocks(ds, resolved["split"])
    label = resolved["label"] or transform.label or "transform"
    curve = codec_eval.evaluate(transform, blocks, steps=steps, label=label)
    prov = _provenance("eval", resolved, {
        "dataset": manifest["content_hash"],
        "transform_file": dataset.file_sha256(args.transform),
    })
    _atomic_replace(args.out, lambda p: plots.save_curves_csv([curve], p, provenance=prov))
    figure = resolved["figure"] or _default_figure(args.out)
    _atomic_replace(figure, lambda p: plots.render_curves_png([curve], p, provenance=prov))
    for point in curve.points:
        print(f"Q={point.step:g} rate={point.rate_bpp:.6f} bpp psnr={point.psnr_db:.4f} dB")
    print(f"curve -> {args.out}; figure -> {figure}")
    return 0


def cmd_bd(resolved, args, parser) -> int:
    from . import codec_eval, dataset, plots

    test_curves, _ = plots.load_curves_csv(args.test)
    anchor_curves, _ = plots.load_curves_csv(args.anchor)
    if len(test_curves) != 1 or len(anchor_curves) != 1:
        raise ValueError("bd expects exactly one curve per CSV file")
    result = codec_eval.bd_metrics(test_curves[0], anchor_curves[0])
    payload = {
        "test": test_curves[0].label,
        "anchor": anchor_curves[0].label,
        "bd_psnr_db": result.bd_psnr_db,
        "bd_rate_percent": result.bd_rate_percent,
        "provenance": _provenance("bd", resolved, {
            "test_file": dataset.file_sha256(args.test),
            "anchor_file": dataset.file_sha256(args.anchor),
        }),
    }
    _atomic_text(args.out, json.dumps(payload, sort_keys=True, indent=2) + "\n")
    figure = resolved["figure"] or _default_figure(args.out)
    _atomic_replace(
        figure,
        lambda p: plots.render_curves_png(
            [test_curves[0], anchor_curves[0]], p, provenance=payload["provenance"]
        ),
    )
    print(f"BD-PSNR {result.bd_psnr_db:+.4f} dB, BD-rate {result.bd_rate_percent:+.4f}% "
          f"({payload['test']} vs {payload['anchor']})")
    print(f"report -> {args.out}; figure -> {figure}")
    return 0


def mts_candidates(primary):
    """Primary plus the four DST-VII/DCT-VIII separable combinations."""
    from . import transforms

    n = primary.n
    s7 = transforms.dst7_matrix(n)
    c8 = transforms.dct8_matrix(n)
    combos = [
        ("dst7xdst7", s7, s7),
        ("dst7xdct8", s7, c8),
        ("dct8xdst7", c8, s7),
        ("dct8xdct8", c8, c8),
    ]
    out = [primary]
    for name, vert, horiz in combos:
        out.append(transforms.separable_transform(horiz, vert, label=name))
    return out


def cmd_mts(resolved, args, parser) -> int:
    from . import codec_eval, dataset, plots

    steps = _parse_steps(resolved["steps"], parser)
    ds, manifest = dataset.load_dataset(args.dataset)
    primary = _load_any_transform(args.primary)
    if primary.n != ds.n:
        raise ValueError(f"primary is for n={primary.n}, dataset holds n={ds.n} blocks")
    candidates = mts_candidates(primary)
    blocks = _split_blocks(ds, resolved["split"])
    result = codec_eval.mts_evaluate(
        candidates, blocks, steps=steps, alpha=float(resolved["alpha"]),
        label=f"mts-{primary.label or 'primary'}",
    )
    prov = _provenance("mts", resolved, {
        "dataset": manifest["content_hash"],
        "primary_file": dataset.file_sha256(args.primary),
        "candidates": result.candidate_labels,
    })
    header = "label,Q,rate_bpp,rate_bpp_coeff_only,psnr_db," + ",".join(
        f"sel{i}" for i in range(len(candidates))
    )
    lines = ["# provenance: " + json.dumps(prov, sort_keys=True), header]
    for p in result.points:
        sel = ",".join(str(c) for c in p.selection_counts)
        lines.append(
            f"{result.label},{repr(p.step)},{repr(p.rate_bpp)},"
            f"{repr(p.rate_bpp_coeff_only)},{repr(p.psnr_db)},{sel}"
        )
    _atomic_text(args.out, "\n".join(lines) + "\n")
    figure = resolved["figure"] or _default_figure(args.out)
    _atomic_replace(
        figure, lambda p: plots.render_curves_png([result.curve()], p, provenance=prov)
    )
    for p in result.points:
        print(f"Q={p.step:g} rate={p.rate_bpp:.6f} bpp (coeff-only "
              f"{p.rate_bpp_coeff_only:.6f}) psnr={p.psnr_db:.4f} dB sel={p.selection_counts}")
    print(f"report -> {args.out}; figure -> {figure}")
    return 0


def cmd_plot(resolved, args, parser) -> int:
    from . import dataset, plots

    curves = []
    prov_inputs = {}
    for path in args.curves:
        loaded, _ = plots.load_curves_csv(path)
        curves.extend(loaded)
        prov_inputs[os.path.basename(path)] = dataset.file_sha256(path)
    prov = _provenance("plot", resolved, prov_inputs)
    _atomic_replace(
        args.out,
        lambda p: plots.render_curves_svg(
            curves, p, title=resolved["title"], provenance=prov
        ),
    )
    print(f"{len(curves)} curves -> {args.out}")
    return 0


def cmd_basis(resolved, args, parser) -> int:
    from . import dataset, plots

    transform = _load_any_transform(args.transform)
    mosaic = plots.basis_mosaic(transform)
    prov = _provenance("basis", resolved, {
        "transform_file": dataset.file_sha256(args.transform)
    })
    comment = "provenance: " + json.dumps(prov, sort_keys=True)
    _atomic_replace(args.out, lambda p: dataset.write_pgm(mosaic, p, comment=comment))
    print(f"basis mosaic {mosaic.shape[1]}x{mosaic.shape[0]} -> {args.out}")
    return 0


_HANDLERS = {
    "dataset_build": cmd_dataset_build,
    "train": cmd_train,
    "klt": cmd_klt,
    "sot": cmd_sot,
    "eval": cmd_eval,
    "bd": cmd_bd,
    "mts": cmd_mts,
    "plot": cmd_plot,
    "basis": cmd_basis,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    resolved = _resolve_config(args, parser)
    try:
        _apply_threads(resolved.get("threads"))
        handler = _HANDLERS[_command_key(args)]
        return handler(resolved, args, parser)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - anything else is still exit 1, with type
        import numpy as np

        from . import rangecoder

        if isinstance(exc, (np.linalg.LinAlgError, rangecoder.DecodeError, AssertionError)):
            print(f"error: {exc}", file=sys.stderr)
            return 1
        raise


if __name__ == "__main__":
    sys.exit(main())
