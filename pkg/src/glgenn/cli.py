"""Command-line entry point: ``glgenn gen | train | audit | lift | bench-params``.

Exit codes: 0 success, 1 validation error, 2 numerical failure, 3 audit violation.

Training config (INI). Unknown sections or keys are rejected::

    [run]    seed, out_dir, checkpoint_every
    [task]   task (regression|hull), n_train, n_test, hull_k, hull_dim,
             oracle (exact|mc), n_mc, train_csv, test_csv
    [model]  model (glgenn|mlp), family (qt|grade), hidden, depth,
             gate_hidden, mlp_hidden, scalar_channel
    [train]  epochs, batch_size, lr, max_steps, schedule (cosine|constant),
             standardize, augment

Runs are written to ``<out_dir>/<config hash>-seed<seed>/``. The hash covers
every setting except the seed and the training length (epochs, max_steps,
checkpoint_every), so a longer run of the same config resumes in place.
"""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .algebra import Signature, format_multivector
from .groups import (
    NotOrthogonalError,
    OrthogonalMatrix,
    orthogonal_to_versor,
    property_report,
    versor_to_orthogonal,
)
from .layers import param_count
from .storage import (
    CheckpointError,
    append_metrics,
    load_checkpoint,
    read_dataset,
    save_checkpoint,
    sha256_file,
    write_dataset,
    write_manifest,
)
from .tasks import (
    MLP,
    NonFiniteLoss,
    TrainConfig,
    TrainResult,
    build_model,
    equivariance_audit,
    gen_hull,
    gen_regression,
    insert_broken_layer,
    train,
)

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_AUDIT = 0, 1, 2, 3


class ValidationError(Exception):
    pass


class NumericalError(Exception):
    pass


class AuditViolation(Exception):
    pass


# --- config ------------------------------------------------------------------------

_TRAIN_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
SECTIONS = {
    "run": {"seed", "out_dir", "checkpoint_every"},
    "task": {"task", "n_train", "n_test", "hull_k", "hull_dim", "oracle", "n_mc", "train_csv", "test_csv"},
    "model": {"model", "family", "hidden", "depth", "gate_hidden", "mlp_hidden", "scalar_channel"},
    "train": {"epochs", "batch_size", "lr", "max_steps", "schedule", "standardize", "augment"},
}
_LENGTH_KEYS = {"epochs", "max_steps", "checkpoint_every"}


@dataclasses.dataclass
class RunConfig:
    train: TrainConfig
    out_dir: Path = Path("runs")
    checkpoint_every: int = 50
    train_csv: Path | None = None
    test_csv: Path | None = None

    def hash(self) -> str:
        cfg = {k: v for k, v in dataclasses.asdict(self.train).items() if k not in _LENGTH_KEYS | {"seed"}}
        for name in ("train_csv", "test_csv"):
            path = getattr(self, name)
            cfg[name] = sha256_file(path) if path else None
        blob = json.dumps(cfg, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def run_dir(self) -> Path:
        return self.out_dir / f"{self.hash()}-seed{self.train.seed}"


def _convert(name: str, raw: str):
    default = _TRAIN_FIELDS[name].default
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValidationError(f"{name}: expected a boolean, got {raw!r}")
    try:
        return type(default)(raw.strip())
    except ValueError:
        raise ValidationError(f"{name}: expected {type(default).__name__}, got {raw!r}") from None


def load_config(path) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from None
    base = Path(path).parent
    kwargs: dict = {}
    run = RunConfig(TrainConfig())
    for section in parser.sections():
        if section not in SECTIONS:
            raise ValidationError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in SECTIONS[section]:
                raise ValidationError(f"unknown key {key!r} in [{section}]")
            if key == "out_dir":
                run.out_dir = base / raw.strip()
            elif key in ("train_csv", "test_csv"):
                setattr(run, key, base / raw.strip())
            elif key == "checkpoint_every":
                try:
                    run.checkpoint_every = int(raw)
                except ValueError:
                    raise ValidationError(f"checkpoint_every: expected int, got {raw!r}") from None
            else:
                kwargs[key] = _convert(key, raw)
    if "seed" not in kwargs:
        raise ValidationError("[run] seed is required")
    if run.checkpoint_every < 1:
        raise ValidationError("checkpoint_every must be positive")
    if (run.train_csv is None) != (run.test_csv is None):
        raise ValidationError("train_csv and test_csv must be given together")
    try:
        run.train = TrainConfig(**kwargs)
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    return run


# --- helpers -----------------------------------------------------------------------

def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _parse_signature(text: str) -> Signature:
    try:
        parts = [int(t) for t in text.split(",")]
        return Signature(*parts)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"bad signature {text!r}: {exc}") from None


def _layer_table(model) -> list[dict]:
    if isinstance(model, MLP):
        return [{"index": i, "kind": "dense", "params": c} for i, c in enumerate(model.param_counts())]
    rows = []
    for i, layer in enumerate(model.layers):
        desc = layer.descriptor()
        rows.append({"index": i, "kind": desc["type"], "params": layer.param_count(),
                     "formula": param_count(desc)})
    return rows


def _checkpoint_meta(cfg: TrainConfig, result: TrainResult, model) -> dict:
    return {
        "config": dataclasses.asdict(cfg),
        "steps": result.steps,
        "metrics": result.metrics,
        "target_shift": result.target_shift,
        "target_scale": result.target_scale,
        "layers": _layer_table(model),
        "generator": f"glgenn {__version__}",
    }


# --- commands ----------------------------------------------------------------------

@click.group()
@click.version_option(__version__)
def main():
    """Equivariant geometric-algebra networks: datasets, training, audits and versor lifts."""


@main.command()
@click.option("--task", type=click.Choice(["regression", "hull"]), required=True)
@click.option("--n-train", type=click.IntRange(min=1), default=300, show_default=True)
@click.option("--n-test", type=click.IntRange(min=1), default=1000, show_default=True)
@click.option("--seed", type=int, required=True)
@click.option("--k", "hull_k", type=click.IntRange(min=2), default=16, show_default=True, help="points per hull")
@click.option("--dim", "hull_dim", type=click.IntRange(min=2), default=5, show_default=True, help="hull dimension")
@click.option("--oracle", type=click.Choice(["exact", "mc"]), default="exact", show_default=True,
              help="hull labels: exact hull volume or Monte Carlo estimate")
@click.option("--n-mc", type=click.IntRange(min=1), default=200_000, show_default=True)
@click.option("--membership", type=click.Choice(["delaunay", "lp"]), default="delaunay", show_default=True,
              help="Monte Carlo membership test")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None,
              help="output directory (default datasets/<task>-seed<seed>)")
def gen(task, n_train, n_test, seed, hull_k, hull_dim, oracle, n_mc, membership, out_dir):
    """Generate train/test CSV datasets and a manifest."""
    out = Path(out_dir) if out_dir else Path("datasets") / f"{task}-seed{seed}"
    out.mkdir(parents=True, exist_ok=True)
    if task == "regression":
        splits = {"train": gen_regression(n_train, seed), "test": gen_regression(n_test, seed, offset=n_train)}
    else:
        if hull_k < hull_dim + 1:
            raise ValidationError("need --k >= --dim + 1")
        kw = dict(k=hull_k, dim=hull_dim, seed=seed, oracle=oracle, n_mc=n_mc, membership=membership)
        splits = {"train": gen_hull(n_train, **kw), "test": gen_hull(n_test, offset=n_train, **kw)}
    manifest = {
        "generator": f"glgenn {__version__}",
        "task": task,
        "seed": seed,
        "n_train": n_train,
        "n_test": n_test,
    }
    if task == "regression":
        manifest["oracle"] = "closed-form"
    else:
        stds = np.concatenate([splits["train"]["y_std"], splits["test"]["y_std"]])
        rel = stds / np.maximum(np.concatenate([splits["train"]["y"], splits["test"]["y"]]), 1e-300)
        manifest.update({
            "k": hull_k,
            "dim": hull_dim,
            "oracle": ("exact-incremental-3d" if hull_dim == 3 else "exact-qhull") if oracle == "exact"
            else f"monte-carlo-{membership}",
            "n_mc": n_mc if oracle == "mc" else "none",
            "label_std_mean": repr(float(stds.mean())),
            "label_std_max": repr(float(stds.max())),
            "label_rel_std_mean": repr(float(rel.mean())),
            "mean_volume_train": repr(float(splits["train"]["y"].mean())),
        })
    for name, split in splits.items():
        path = out / f"{name}.csv"
        write_dataset(path, task, split)
        manifest[f"{name}_sha256"] = sha256_file(path)
    write_manifest(out / "manifest.txt", manifest)
    click.echo(f"wrote {out / 'train.csv'}, {out / 'test.csv'}, {out / 'manifest.txt'}")


@main.command(name="train")
@click.argument("config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--resume/--no-resume", default=True, show_default=True,
              help="continue from the run directory's checkpoint if present")
def train_cmd(config_path, resume):
    """Train a model described by an INI config.

    \b
    [run]    seed (required), out_dir, checkpoint_every
    [task]   task = regression|hull, n_train, n_test, hull_k, hull_dim,
             oracle = exact|mc, n_mc, train_csv, test_csv (paths from gen)
    [model]  model = glgenn|mlp, family = qt|grade, hidden, depth,
             gate_hidden, mlp_hidden, scalar_channel
    [train]  epochs, batch_size, lr, max_steps, schedule = cosine|constant,
             standardize, augment

    Outputs go to <out_dir>/<config hash>-seed<seed>/: metrics.jsonl,
    checkpoint.npz, summary.json and manifest.txt.
    """
    run = load_config(config_path)
    cfg = run.train
    run_dir = run.run_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = run_dir / "checkpoint.npz"
    metrics_path = run_dir / "metrics.jsonl"
    data = None
    if run.train_csv is not None:
        try:
            data = {"train": read_dataset(run.train_csv, cfg.task), "test": read_dataset(run.test_csv, cfg.task)}
        except (OSError, ValueError) as exc:
            raise ValidationError(str(exc)) from None
    model = build_model(cfg)
    previous = None
    if resume and ckpt_path.exists():
        params, meta, adam = load_checkpoint(ckpt_path)
        if not _same_architecture(model, params):
            raise ValidationError(f"{ckpt_path} does not match the configured architecture")
        previous = TrainResult(params, list(meta["metrics"]), model.param_counts(), steps=meta["steps"],
                               target_shift=meta["target_shift"], target_scale=meta["target_scale"], adam=adam)
        click.echo(f"resuming from epoch {len(previous.metrics) - 1}, step {previous.steps}")
    # rewrite the metrics file so it always mirrors the checkpointed history
    metrics_path.write_text("")
    if previous is not None:
        append_metrics(metrics_path, previous.metrics)

    def on_epoch(rec, result):
        append_metrics(metrics_path, [rec])
        if rec["epoch"] % run.checkpoint_every == 0:
            save_checkpoint(ckpt_path, result.params, _checkpoint_meta(cfg, result, model), result.adam)

    try:
        result = train(cfg, data, resume=previous, on_epoch=on_epoch)
    except NonFiniteLoss as exc:
        raise NumericalError(str(exc)) from None
    save_checkpoint(ckpt_path, result.params, _checkpoint_meta(cfg, result, model), result.adam)
    layers = _layer_table(model)
    final = result.metrics[-1]
    summary = {
        "config": dataclasses.asdict(cfg),
        "config_hash": run.hash(),
        "run_dir": str(run_dir),
        "layers": layers,
        "total_params": sum(r["params"] for r in layers),
        "steps": result.steps,
        "final": final,
        "wall_time_s": result.wall_time,
        "generator": f"glgenn {__version__}",
    }
    _write_json(run_dir / "summary.json", summary)
    write_manifest(run_dir / "manifest.txt", {
        "generator": f"glgenn {__version__}",
        "config_hash": run.hash(),
        "seed": cfg.seed,
        "config": json.dumps(dataclasses.asdict(cfg), sort_keys=True),
        "train_csv": run.train_csv or "generated",
        "test_csv": run.test_csv or "generated",
    })
    click.echo(f"{run_dir}: epoch {final['epoch']} step {final['step']} "
               f"train_mse {final['train_mse']:.6g} test_mse {final['test_mse']:.6g} "
               f"params {summary['total_params']}")


def _same_architecture(model, params: dict) -> bool:
    expected = model.init(0)
    return set(expected) == set(params) and all(expected[k].shape == params[k].shape for k in expected)


@main.command()
@click.argument("checkpoint", type=click.Path(exists=True, dir_okay=False))
@click.option("--n-trials", type=click.IntRange(min=1), default=100, show_default=True)
@click.option("--tol", type=float, default=1e-8, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--break-layer", type=int, default=None,
              help="debug: insert a non-equivariant layer at this index (negative control)")
@click.option("--out", type=click.Path(dir_okay=False), default=None,
              help="report path (default audit.json next to the checkpoint)")
def audit(checkpoint, n_trials, tol, seed, break_layer, out):
    """Equivariance audit of a checkpoint plus group-property spot checks."""
    params, meta, _ = load_checkpoint(checkpoint)
    try:
        cfg = TrainConfig(**meta["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"checkpoint config unreadable: {exc}") from None
    model = build_model(cfg)
    if isinstance(model, MLP):
        raise ValidationError("the MLP baseline has no equivariance to audit")
    if not _same_architecture(model, params):
        raise ValidationError("checkpoint parameters do not match the recorded architecture")
    if break_layer is not None:
        try:
            model, params = insert_broken_layer(model, params, break_layer, seed)
        except ValueError as exc:
            raise ValidationError(str(exc)) from None
    report = equivariance_audit(model, params, n_trials=n_trials, seed=seed)
    report["group_properties"] = property_report(model.sig, seed, n_versors=5, n_samples=5)
    report["tol"] = tol
    worst = max(report["max_violation"], report["group_properties"]["max_violation"])
    report["pass"] = bool(worst <= tol)
    out_path = Path(out) if out else Path(checkpoint).with_name("audit.json")
    _write_json(out_path, report)
    for row in report["layers"]:
        flag = "" if row["max_violation"] <= tol else "  <-- violation"
        click.echo(f"layer {row['index']:2d} {row['kind']:12s} {row['max_violation']:.3e}{flag}")
    click.echo(f"end-to-end {report['end_to_end']:.3e}; group properties "
               f"{report['group_properties']['max_violation']:.3e}; report {out_path}")
    if not report["pass"]:
        raise AuditViolation(f"max violation {worst:.3e} exceeds tol {tol:.1e}")


@main.command()
@click.argument("matrix_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--signature", "sig_text", required=True, help="p,q,r")
@click.option("--tol", type=float, default=1e-9, show_default=True, help="orthogonality tolerance")
@click.option("--out-dir", type=click.Path(file_okay=False), default=None,
              help="directory for versor.txt and lift_report.json (default: next to the matrix)")
def lift(matrix_csv, sig_text, tol, out_dir):
    """Factor a restricted orthogonal matrix (row-major CSV) into a versor."""
    sig = _parse_signature(sig_text)
    try:
        mat = np.loadtxt(matrix_csv, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise ValidationError(f"cannot parse {matrix_csv}: {exc}") from None
    if mat.shape != (sig.n, sig.n):
        raise ValidationError(f"need a {sig.n}x{sig.n} matrix for {sig}, got {mat.shape}")
    try:
        phi = OrthogonalMatrix(sig, mat, tol=tol)
    except NotOrthogonalError as exc:
        raise ValidationError(str(exc)) from None
    versor = orthogonal_to_versor(phi)
    back = versor_to_orthogonal(versor, tol=max(tol, 1e-8)).entries
    residual = float(np.abs(back - phi.entries).max())
    out = Path(out_dir) if out_dir else Path(matrix_csv).parent
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"# versor for {sig}, {len(versor)} factors, product in this order"]
    lines += [format_multivector(f) for f in versor.factors]
    (out / "versor.txt").write_text("\n".join(lines) + "\n")
    shears = sum(1 for f in versor.factors if f.coeffs[0] != 0.0)
    report = {
        "signature": [sig.p, sig.q, sig.r],
        "n_factors": len(versor),
        "n_reflections": len(versor) - shears,
        "n_radical_shears": shears,
        "residual_max_abs": residual,
    }
    _write_json(out / "lift_report.json", report)
    click.echo(f"{len(versor)} factors ({report['n_reflections']} reflections, {shears} radical shears), "
               f"round-trip residual {residual:.3e}")
    if not residual <= 1e-8:
        raise NumericalError(f"round-trip residual {residual:.3e} above 1e-8")


@main.command(name="bench-params")
@click.option("--n", "n_dim", type=click.IntRange(1, 8), default=5, show_default=True, help="algebra dimension")
@click.option("--channels", type=click.IntRange(min=1), default=8, show_default=True)
@click.option("--in-channels", type=click.IntRange(min=1), default=2, show_default=True)
@click.option("--depth", type=click.IntRange(min=1), default=2, show_default=True)
@click.option("--gate-hidden", type=click.IntRange(min=0), default=0, show_default=True)
@click.option("--json", "as_json", is_flag=True, help="print JSON instead of a table")
def bench_params(n_dim, channels, in_channels, depth, gate_hidden, as_json):
    """Compare parameter counts of quaternion-type and grade-wise stacks."""
    from .layers import build_stack

    sig = Signature(n_dim)
    result = {}
    for family in ("qt", "grade"):
        stack = build_stack(sig, in_channels, channels, depth, 1, family, gate_hidden)
        result[family] = {"layers": _layer_table(stack), "total": stack.param_count()}
    result["ratio"] = result["grade"]["total"] / result["qt"]["total"]
    if as_json:
        click.echo(json.dumps(result, indent=2, sort_keys=True))
        return
    click.echo(f"n={n_dim} channels={channels} in_channels={in_channels} depth={depth}")
    click.echo(f"{'layer':>5}  {'glgenn':>18} {'params':>8}  {'grade-wise':>18} {'params':>8}")
    for a, b in zip(result["qt"]["layers"], result["grade"]["layers"]):
        click.echo(f"{a['index']:>5}  {a['kind']:>18} {a['params']:>8}  {b['kind']:>18} {b['params']:>8}")
    click.echo(f"{'total':>5}  {'':>18} {result['qt']['total']:>8}  {'':>18} {result['grade']['total']:>8}")
    click.echo(f"grade-wise / glgenn = {result['ratio']:.3f}")


def run(argv=None) -> int:
    """Run the CLI and return its exit code instead of raising ``SystemExit``."""
    try:
        main.main(args=argv, prog_name="glgenn", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        click.echo("aborted", err=True)
        return EXIT_INVALID
    except (click.UsageError, click.BadParameter) as exc:
        exc.show()
        return EXIT_INVALID
    except (ValidationError, CheckpointError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_INVALID
    except NumericalError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return EXIT_NUMERIC
    except AuditViolation as exc:
        click.echo(f"audit failed: {exc}", err=True)
        return EXIT_AUDIT
    return EXIT_OK


def entry() -> None:
    sys.exit(run())
