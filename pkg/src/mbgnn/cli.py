"""Command line entry point: ``mbgnn <subcommand> --config <path> ...``.

Every run writes into its output directory only: the resolved config
(``config.txt``), JSON results, CSV histories and MBGT tensors.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .attack import attack_model, summarize
from .config import ConfigError, ExperimentConfig, load_config, parse_overrides
from .data import Dataset, DatasetSource, gaussian_ring, load_dataset
from .errors import DataError, MbgnnError, ParameterError, ShapeError
from .gan import GanConfig, GanSpec, McMbgnnSpec, MinibatchSpec, generate, ring_sampler, train_gan
from .model import (
    CombineMode,
    EncoderSpec,
    LayerSpec,
    Model,
    ModelSpec,
    baseline_spec,
    init_model,
    save_checkpoint,
)
from .ndb import ndb_score
from .rng import SeededRng
from .robustness import AttenuationVariant, model_encoder, robustness_curve, verify_attenuation
from .tensor_core import read_mbgt, write_mbgt
from .training import accuracy_inductive, accuracy_transductive, make_optimizer, train

SUBCOMMANDS = ("train", "ablate-k", "ablate-batch", "robust", "attack", "prop-check", "gan", "ndb")


# ------------------------------------------------------------------- plumbing


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_rows(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def worker_count() -> int:
    text = os.environ.get("MBGNN_THREADS", "1")
    try:
        return max(1, int(text))
    except ValueError:
        raise ConfigError(f"MBGNN_THREADS must be an integer, got {text!r}") from None


def fan_out(fn, jobs: list[tuple]) -> list:
    """Run ``fn(*job)`` for each job; results come back in job order."""
    workers = min(worker_count(), len(jobs))
    if workers <= 1:
        return [fn(*job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*jobs)))


def dataset_from_config(cfg: ExperimentConfig, rng: SeededRng) -> tuple[Dataset, Dataset]:
    d = cfg.section("data")
    source = DatasetSource(
        kind=d["kind"],
        n=d["n"],
        classes=d["classes"],
        dim=d["dim"],
        spread=d["spread"],
        center_scale=d["center_scale"],
        noise=d["noise"],
        modes=d["modes"],
        radius=d["radius"],
        std=d["std"],
        path=d["path"],
        labels_path=d["labels_path"],
        image_shape=tuple(d["image_shape"]) or None,
    )
    if source.kind in ("csv", "mbgt") and not source.path:
        raise ConfigError(f"data.kind = {source.kind} needs data.path")
    ds = load_dataset(source, rng)
    if not 0 < d["train"] < len(ds):
        raise DataError(f"data.train = {d['train']} must leave rows for both splits of {len(ds)}")
    return ds.split(d["train"])


def model_spec_from_config(cfg: ExperimentConfig, ds: Dataset, k: int | None = None) -> ModelSpec:
    m = cfg.section("model")
    kind = m["combine"]
    if kind == "concat":
        mode = CombineMode.concat()
    elif kind in ("weighted_add", "sum"):
        mode = CombineMode.weighted_add(m["combine_value"])
    elif kind == "dropfeat":
        mode = CombineMode.dropfeat(m["combine_value"])
    else:
        raise ConfigError(f"unknown model.combine {kind!r}")
    channels = tuple(cfg["encoder.channels"])
    if len(channels) != 2:
        raise ConfigError("encoder.channels needs two values")
    encoder = EncoderSpec(
        kind=cfg["encoder.kind"],
        input_dim=ds.features.shape[1],
        widths=tuple(cfg["encoder.widths"]),
        image_shape=ds.image_shape,
        channels=channels,
    )
    spec = ModelSpec(
        encoder=encoder,
        layers=tuple(LayerSpec(m["width"], mode) for _ in range(m["layers"])),
        k=m["k"] if k is None else k,
        classes=ds.classes,
        heads=m["heads"],
        attention_dim=m["attention_dim"],
    )
    return baseline_spec(spec) if m["baseline"] else spec


def fit(spec: ModelSpec, cfg: ExperimentConfig, train_ds: Dataset, test_ds: Dataset, rng: SeededRng, batch_size: int):
    t = cfg.section("train")
    model = init_model(spec, rng.stream("init"))
    opt = make_optimizer(t["optimizer"], t["lr"], t["momentum"])
    return train(
        model,
        train_ds.features,
        train_ds.labels,
        opt,
        t["epochs"],
        batch_size,
        rng.stream("train"),
        x_test=test_ds.features,
        y_test=test_ds.labels,
        transductive_eval=t["transductive_eval"],
        evaluate_every=t["evaluate_every"],
    )


def final_accuracies(model: Model, train_ds: Dataset, test_ds: Dataset, batch_size: int, rng: SeededRng) -> dict:
    return {
        "test_acc_inductive": accuracy_inductive(model, test_ds.features, test_ds.labels, batch_size),
        "test_acc_transductive": accuracy_transductive(
            model, test_ds.features, test_ds.labels, train_ds.features, batch_size, rng.stream("transductive")
        ),
    }


def fit_pair(cfg: ExperimentConfig, train_ds: Dataset, test_ds: Dataset, rng: SeededRng) -> dict[str, Model]:
    """The configured graph model and its plain encoder+linear baseline."""
    spec = model_spec_from_config(cfg, train_ds)
    b = cfg["train.batch_size"]
    return {
        "mbgnn": fit(spec, cfg, train_ds, test_ds, rng.stream("mbgnn"), b).model,
        "baseline": fit(baseline_spec(spec), cfg, train_ds, test_ds, rng.stream("baseline"), b).model,
    }


# ---------------------------------------------------------------- subcommands


def cmd_train(cfg: ExperimentConfig, out: Path, rng: SeededRng) -> dict:
    train_ds, test_ds = dataset_from_config(cfg, rng.stream("data"))
    spec = model_spec_from_config(cfg, train_ds)
    b = cfg["train.batch_size"]
    result = fit(spec, cfg, train_ds, test_ds, rng.stream("model"), b)
    (out / "history.csv").write_text(result.history_csv(), encoding="utf-8")
    save_checkpoint(result.model, out / "checkpoint")
    summary = {"spec": spec.to_dict(), **final_accuracies(result.model, train_ds, test_ds, b, rng)}
    write_json(out / "results.json", summary)
    return summary


def _sweep_point(cfg_values: dict, seed: int, k: int, batch_size: int) -> dict:
    cfg = ExperimentConfig(cfg_values)
    rng = SeededRng(seed)
    train_ds, test_ds = dataset_from_config(cfg, rng.stream("data"))
    spec = model_spec_from_config(cfg, train_ds, k=k)
    model = fit(spec, cfg, train_ds, test_ds, rng.stream("model"), batch_size).model
    return {"k": k, "batch_size": batch_size, **final_accuracies(model, train_ds, test_ds, batch_size, rng)}


def cmd_ablate_k(cfg: ExperimentConfig, out: Path, rng: SeededRng) -> dict:
    b = cfg["train.batch_size"]
    ks = sorted(set(cfg["ablate.k_values"]))
    if not ks or ks[0] < 1 or ks[-1] > b - 1:
        raise ConfigError(f"ablate.k_values must lie in [1, {b - 1}]")
    rows = fan_out(_sweep_point, [(cfg.values, cfg["seed"], k, b) for k in ks])
    return _write_sweep(out, rows, "k", cfg)


def cmd_ablate_batch(cfg: ExperimentConfig, out: Path, rng: SeededRng) -> dict:
    k = cfg["model.k"]
    sizes = sorted(set(cfg["ablate.batch_sizes"]))
    if not sizes or sizes[0] < k + 1:
        raise ConfigError(f"ablate.batch_sizes must all exceed model.k = {k}")
    rows = fan_out(_sweep_point, [(cfg.values, cfg["seed"], k, b) for b in sizes])
    return _write_sweep(out, rows, "batch_size", cfg)


def _write_sweep(out: Path, rows: list[dict], key: str, cfg: ExperimentConfig) -> dict:
    classes = cfg["data.classes"]
    for row in rows:
        # heuristic optimum: neighbors ~ batch size / classes
        row["heuristic_k"] = row["batch_size"] / classes
    header = ["k", "batch_size", "heuristic_k", "test_acc_inductive", "test_acc_transductive"]
    write_rows(out / "sweep.csv", header, [[r[h] for h in header] for r in rows])
    best = max(rows, key=lambda r: r["test_acc_inductive"])
    last = rows[-1]
    summary = {
        "sweep": key,
        "rows": rows,
        "best": {key: best[key], "test_acc_inductive": best["test_acc_inductive"]},
        "largest": {key: last[key], "test_acc_inductive": last["test_acc_inductive"]},
        "largest_strictly_below_best": last["test_acc_inductive"] < best["test_acc_inductive"],
    }
    write_json(out / "results.json", summary)
    return summary


def cmd_robust(cfg: ExperimentConfig, out: Path, rng: SeededRng) -> dict:
    train_ds, test_ds = dataset_from_config(cfg, rng.stream("data"))
    models = fit_pair(cfg, train_ds, test_ds, rng.stream("models"))
    kind = cfg["robust.kind"]
    rows, curves = [], {}
    for name in sorted(models):
        curve = robustness_curve(
            models[name], test_ds.features, test_ds.labels, train_ds.features, kind,
            cfg["robust.severities"], rng.stream("corrupt"), cfg["train.batch_size"], train_ds.image_shape,
        )
        curves[name] = [{"severity": s, "accuracy": a} for s, a in curve]
        rows += [[name, s, a] for s, a in curve]
    write_rows(out / "robust.csv", ["model", "severity", "accuracy"], rows)
    summary = {"kind": kind, "curves": curves}
    write_json(out / "results.json", summary)
    return summary


def cmd_attack(cfg: ExperimentConfig, out: Path, rng: SeededRng) -> dict:
    train_ds, test_ds = dataset_from_config(cfg, rng.stream("data"))
    models = fit_pair(cfg, train_ds, test_ds, rng.stream("models"))
    a = cfg.section("attack")
    rows, summaries = [], {}
    for name in sorted(models):
        records = attack_model(
            models[name], test_ds.features, test_ds.labels, train_ds.features, cfg["train.batch_size"],
            a["epsilon"], a["budget"], rng.stream("attack"), max_attempts=a["targets"],
        )
        summaries[name] = summarize(records, a["budget"]).to_dict()
        rows += [[name, i, int(r.skipped), int(r.success), r.queries, r.perturbation_norm] for i, r in enumerate(records)]
    write_rows(out / "attack.csv", ["model", "target", "skipped", "success", "queries", "perturbation_norm"], rows)
    summary = {"epsilon": a["epsilon"], "budget": a["budget"], "summaries": summaries}
    write_json(out / "results.json", summary)
    return summary


def cmd_prop_check(cfg: ExperimentConfig, out: Path, rng: SeededRng) -> dict:
    p = cfg.section("prop")
    k = p["k"]
    if not 1 <= k < p["batch"]:
        raise ConfigError(f"prop.k must lie in [1, {p['batch'] - 1}]")
    variant = AttenuationVariant(p["variant"], p["value"])
    spec = ModelSpec(
        encoder=EncoderSpec("mlp", p["dim"], (p["width"],)),
        layers=(LayerSpec(p["width"], CombineMode.weighted_add(1.0)),),
        k=k,
        classes=p["classes"],
    )
    enc_model = init_model(spec, rng.stream("encoder"))
    data_rng = rng.stream("batch")
    batch = data_rng.normal((p["batch"], p["dim"]))
    delta = data_rng.normal(p["dim"], p["delta"])
    w = rng.stream("weights").normal((p["width"], p["classes"]))
    report = verify_attenuation(model_encoder(enc_model), w, batch, k, delta, variant)
    summary = {
        "variant": report.variant,
        "k": report.k,
        "node": report.node,
        "expected": report.expected,
        "ratio": report.ratio,
        "relative_error": report.relative_error,
        "delta_sup_norm": report.delta_sup_norm,
        "delta_mbgnn_norm": report.delta_mbgnn_norm,
        "unfrozen_ratio": report.unfrozen_ratio,
        "neighbors_changed": report.neighbors_changed,
    }
    write_json(out / "results.json", summary)
    return summary


def gan_spec_from_config(cfg: ExperimentConfig, head: str | None = None) -> GanSpec:
    g = cfg.section("gan")
    return GanSpec(
        noise_dim=g["noise_dim"],
        data_dim=2,
        gen_hidden=g["gen_hidden"],
        disc_hidden=g["disc_hidden"],
        head=head or g["head"],
        mc=McMbgnnSpec(
            heads=g["mc.heads"], dim=g["mc.dim"], psi=g["mc.psi"], phi=g["mc.phi"],
            phi_hidden=g["mc.phi_hidden"], reduce=g["mc.reduce"],
        ),
        minibatch=MinibatchSpec(g["mbd.kernels"], g["mbd.kernel_dim"]),
    )


def gan_config_from_config(cfg: ExperimentConfig) -> GanConfig:
    g = cfg.section("gan")
    return GanConfig(
        iterations=g["iterations"],
        batch_size=g["batch_size"],
        lr_d=g["lr_d"],
        lr_g=g["lr_g"],
        beta1=g["beta1"],
        lr_decay=g["lr_decay"],
        eval_every=g["eval_every"],
        eval_samples=g["eval_samples"],
        ndb_bins=cfg["ndb.bins"],
        significance=cfg["ndb.significance"],
    )


def cmd_gan(cfg: ExperimentConfig, out: Path, rng: SeededRng) -> dict:
    d = cfg.section("data")
    sampler = ring_sampler(d["modes"], d["radius"], d["std"])
    train_samples = sampler(rng.stream("ring"), cfg["gan.train_samples"])
    spec = gan_spec_from_config(cfg)
    run = train_gan(spec, gan_config_from_config(cfg), sampler, train_samples, rng.stream("gan"))
    write_rows(out / "ndb.csv", ["iteration", "ndb"], [[it, v] for it, v in run.trajectory])
    # per-bin z statistics for every evaluation step, keyed like ndb.csv
    write_json(out / "ndb_z.json", [{"iteration": it, "z": rep.z} for (it, _), rep in zip(run.trajectory, run.reports)])
    write_rows(out / "losses.csv", ["iteration", "d_loss", "g_loss"], [list(r) for r in run.losses])
    samples = generate(run.gen, rng.stream("samples").normal((cfg["gan.eval_samples"], spec.noise_dim)))
    write_mbgt(out / "samples.mbgt", samples)
    summary = {
        "head": spec.head,
        "final_ndb": run.final_ndb,
        "trajectory": [{"iteration": it, "ndb": v} for it, v in run.trajectory],
        "final_report": run.reports[-1].to_dict(),
    }
    write_json(out / "results.json", summary)
    return summary


def read_samples(path: str) -> np.ndarray:
    """MBGT tensors or CSV files with ``f0..`` columns; a trailing ``label`` column is dropped."""
    if path.endswith(".mbgt"):
        x = read_mbgt(path).astype(np.float64)
        return x.reshape(len(x), -1)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None) or []
        width = len(header) - (header[-1:] == ["label"])
        if width < 1 or header[:width] != [f"f{i}" for i in range(width)]:
            raise DataError(f"{path}: header must be f0,...,f{{D-1}} with an optional label column")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) for v in row[:width]])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return np.array(rows, dtype=np.float64).reshape(len(rows), width)


def cmd_ndb(cfg: ExperimentConfig, out: Path, rng: SeededRng) -> dict:
    n = cfg.section("ndb")
    if bool(n["train_path"]) != bool(n["generated_path"]):
        raise ConfigError("set both ndb.train_path and ndb.generated_path, or neither")
    if n["train_path"]:
        train_x, gen_x = read_samples(n["train_path"]), read_samples(n["generated_path"])
    else:
        # self-check: two independent draws from the configured ring
        d = cfg.section("data")
        train_x = gaussian_ring(d["modes"], cfg["gan.train_samples"], rng.stream("train"), d["radius"], d["std"]).features
        gen_x = gaussian_ring(d["modes"], cfg["gan.eval_samples"], rng.stream("generated"), d["radius"], d["std"]).features
    if train_x.shape[1] != gen_x.shape[1]:
        raise ShapeError(f"sample dimensions differ: {train_x.shape[1]} vs {gen_x.shape[1]}")
    report = ndb_score(train_x, gen_x, n["bins"], n["significance"], rng.stream("bins"))
    summary = report.to_dict()
    write_json(out / "results.json", summary)
    return summary


COMMANDS = {
    "train": cmd_train,
    "ablate-k": cmd_ablate_k,
    "ablate-batch": cmd_ablate_batch,
    "robust": cmd_robust,
    "attack": cmd_attack,
    "prop-check": cmd_prop_check,
    "gan": cmd_gan,
    "ndb": cmd_ndb,
}


# ----------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mbgnn",
        description="Mini-batch graph neural network experiments.",
        epilog="MBGNN_THREADS caps the number of worker processes used by sweeps (default 1).",
    )
    parser.add_argument("subcommand", choices=SUBCOMMANDS, help="experiment to run")
    parser.add_argument("--config", required=True, help="flat 'key = value' config file")
    parser.add_argument("--out", default=None, help="output directory (default: mbgnn-out/<subcommand>)")
    parser.add_argument("--seed", type=int, default=None, help="overrides the 'seed' config key (u64)")
    parser.add_argument(
        "--override", nargs="*", default=[], metavar="KEY=VALUE", help="override config keys after loading"
    )
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config).with_overrides(parse_overrides(args.override))
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = cfg.with_overrides({"seed": str(args.seed)})
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        worker_count()
    except (ConfigError, ParameterError) as exc:
        print(f"mbgnn: error: {exc}", file=sys.stderr)
        return 2
    out = Path(args.out) if args.out else Path("mbgnn-out") / args.subcommand
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    try:
        COMMANDS[args.subcommand](cfg, out, SeededRng(cfg["seed"]))
    except (ConfigError, ParameterError) as exc:
        print(f"mbgnn: error: {exc}", file=sys.stderr)
        return 2
    except (MbgnnError, ValueError, OSError, FloatingPointError) as exc:
        print(f"mbgnn: {args.subcommand} failed: {exc}", file=sys.stderr)
        return 1
    print(f"mbgnn: {args.subcommand} results written to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
