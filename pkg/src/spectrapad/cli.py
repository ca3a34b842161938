"""Command-line entry point.

    spectrapad synth   --config cfg [--seed N] [--out DIR]
    spectrapad train   --config cfg [--seed N] [--out DIR]
    spectrapad eval    --checkpoint ckpt --config cfg [--manifest CSV]
                       [--bands LIST] [--threshold-mode {fixed,dev}]
                       [--force] [--out DIR]
    spectrapad ablate  --config cfg [--seed N] [--out DIR]
    spectrapad analyze --run DIR [--out DIR]

Exit codes: 0 success, 2 configuration/usage error, 3 data or protocol
error, 4 numeric failure. All commands are deterministic given (flags,
config, seed, dataset). SPECTRAPAD_THREADS caps per-band training workers.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import ensemble as ens
from .checkpoint import load_checkpoint
from .config import GlobalConfig, config_hash, load_config, with_overrides
from .errors import ConfigError, NumericError, ProtocolError
from .protocol import (
    AccessAudit,
    Model,
    RunRecord,
    _score_and_report,
    build_model,
    eval_split,
    prepare_dataset,
    run_ablation,
    run_cross_artefact,
    write_run_outputs,
)
from .separability import correlate_metrics
from .spectral_data import BANDS, BandStats, synth_generate, write_dataset


def _load_cfg(args) -> GlobalConfig:
    cfg = load_config(args.config) if args.config else GlobalConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        overrides["output_dir"] = str(args.out)
    if overrides:
        cfg = with_overrides(cfg, **overrides)
    return cfg


def cmd_synth(args) -> int:
    cfg = _load_cfg(args)
    samples, manifest = synth_generate(cfg.data.synth, cfg.seed, fractions=cfg.data.partition)
    out = Path(cfg.output_dir)
    write_dataset(samples, manifest, out)
    counts: dict[int, int] = {}
    for s in samples:
        counts[s.artefact_id] = counts.get(s.artefact_id, 0) + 1
    print(f"wrote {len(manifest.records)} manifest rows to {out / 'manifest.csv'}")
    print(f"bona fide samples: {counts.get(0, 0)}")
    for a in range(1, 9):
        if counts.get(a):
            print(f"artefact {a} samples: {counts[a]}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    out = Path(cfg.output_dir)
    record = run_cross_artefact(cfg, out_dir=out)
    print(f"run complete in {record.wall_time_s:.1f}s -> {out}")
    _print_rows(record)
    return 0


def _print_rows(record: RunRecord) -> None:
    for row in record.rows:
        tag = "intra" if row["test_artefact"] == row["train_artefact"] else "cross"
        print(
            f"  {tag} artefact {row['test_artefact']}: "
            f"apcer={row['apcer']:.4f} bpcer={row['bpcer']:.4f} "
            f"hter={row['hter']:.4f} d_eer={row['d_eer']:.4f}"
        )
    agg = record.aggregate
    print(
        "  cross aggregate: "
        + " ".join(f"{k}={agg[k]['mean']:.4f}+-{agg[k]['sd']:.4f}" for k in agg)
    )


def _rebuild_model(cfg: GlobalConfig, tensors: dict[str, np.ndarray]) -> Model:
    model = build_model(cfg)
    for name, t in model.params.items():
        if name not in tensors:
            raise ProtocolError(f"checkpoint is missing encoder tensor {name}")
        if tensors[name].shape != t.data.shape:
            raise ProtocolError(f"checkpoint shape mismatch for {name}")
        t.data = tensors[name].copy()
    for band, head in model.heads.items():
        for name, t in head.params.items():
            if name not in tensors:
                raise ProtocolError(f"checkpoint is missing head tensor {name}")
            t.data = tensors[name].copy()
        head.p_k = float(tensors[f"head.band{band}.p_k"])
        head.feat_mu = tensors[f"head.band{band}.feat_mu"].copy()
        head.feat_sigma = tensors[f"head.band{band}.feat_sigma"].copy()
        model.band_stats[band] = BandStats(
            mean=float(tensors[f"stats.band{band}.mu"]),
            std=float(tensors[f"stats.band{band}.sigma"]),
        )
    model.weights = ens.EnsembleWeights(
        acc={b: float(tensors[f"ensemble.acc.{b}"]) for b in BANDS},
        w={b: float(tensors[f"ensemble.w.{b}"]) for b in BANDS},
    )
    model.threshold_dev = float(tensors["ensemble.threshold_dev"])
    return model


def cmd_eval(args) -> int:
    import time

    t0 = time.perf_counter()
    file_cfg = load_config(args.config) if args.config else GlobalConfig()
    tensors, ckpt_cfg_hash, ckpt_data_hash = load_checkpoint(args.checkpoint)
    # the compatibility check hashes the config as loaded; command-line flags
    # (bands, threshold mode, manifest, output dir) never enter the hash
    if config_hash(file_cfg) != ckpt_cfg_hash and not args.force:
        raise ProtocolError(
            "checkpoint was trained under a different configuration "
            f"(hash {ckpt_cfg_hash[:12]} != {config_hash(file_cfg)[:12]}); "
            "pass --force to evaluate anyway"
        )

    cfg = file_cfg
    if getattr(args, "out", None) is not None:
        cfg = with_overrides(cfg, output_dir=str(args.out))
    if args.bands:
        bands = tuple(int(b) for b in args.bands.split(","))
        cfg = with_overrides(cfg, eval=dataclasses.replace(cfg.eval, bands=bands))
    if args.threshold_mode:
        cfg = with_overrides(
            cfg, eval=dataclasses.replace(cfg.eval, threshold_mode=args.threshold_mode)
        )
    if args.manifest:
        cfg = with_overrides(
            cfg,
            data=dataclasses.replace(
                cfg.data, source="manifest", manifest_path=str(args.manifest)
            ),
        )

    model = _rebuild_model(cfg, tensors)

    audit = AccessAudit()
    data = prepare_dataset(cfg, audit, splits=("test",))
    if data.dataset_hash != ckpt_data_hash and not args.force:
        raise ProtocolError(
            "dataset hash does not match the checkpoint "
            f"({data.dataset_hash[:12]} != {ckpt_data_hash[:12]}); pass --force"
        )

    art = cfg.train.artefact
    test_pool = data.pool("test", artefacts=(0, art, *cfg.resolved_test_artefacts()))
    test_eval = eval_split(model, test_pool, "eval", audit, data.splits)
    load_events = [e for e in audit.events if e[0] == "load" and e[1] != "test"]
    if load_events:
        raise ProtocolError(f"eval opened non-test files: {load_events[:3]}")
    record = _score_and_report(cfg, model, test_eval, {}, model.weights, data, audit, t0)
    out = Path(args.out) if args.out else Path(cfg.output_dir)
    write_run_outputs(out, cfg, model, record, test_eval)
    print(f"evaluated {len(test_pool)} test samples -> {out}")
    _print_rows(record)
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_cfg(args)
    out = Path(cfg.output_dir)
    runs = run_ablation(cfg, out_dir=out)
    from .protocol import ablation_directional_check

    check = ablation_directional_check(runs)
    print(f"ablation sweep complete -> {out / 'ablation.csv'}")
    for name, rec in runs:
        intra = rec.intra_row()
        print(
            f"  {name:16s} dev_loss={rec.dev_loss_at_selection():+.4f} "
            f"intra_eer={intra['d_eer']:.4f} "
            f"cross_eer={rec.aggregate['d_eer']['mean']:.4f}"
            f"+-{rec.aggregate['d_eer']['sd']:.4f}"
        )
    print(
        f"directional check (logged, not asserted): full config has the lowest "
        f"selected dev loss: {check['full_is_best']}"
    )
    return 0


def cmd_analyze(args) -> int:
    run_dir = Path(args.run)
    results_path = run_dir / "results.json"
    if not results_path.exists():
        raise ProtocolError(f"{run_dir} does not contain results.json")
    payload = json.loads(results_path.read_text(encoding="utf-8"))
    inputs = payload.get("correlation_inputs", [])
    rows = correlate_metrics(inputs)
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    lines = ["metric_pair,rho,ci_lo,ci_hi,p"]
    for r in rows:
        lines.append(f"{r['metric_pair']},{r['rho']!r},{r['ci_lo']!r},{r['ci_hi']!r},{r['p']!r}")
    (out / "analysis.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote 4 correlation rows over K={len(inputs)} artefacts -> {out/'analysis.csv'}")
    for r in rows:
        print(
            f"  {r['metric_pair']}: rho={r['rho']:+.3f} "
            f"[{r['ci_lo']:+.3f}, {r['ci_hi']:+.3f}] p={r['p']:.4f}"
        )
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spectrapad",
        description="Multispectral iris presentation-attack detection pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="configuration file (key = value lines)")
        p.add_argument("--seed", type=int, help="override the experiment seed")
        p.add_argument("--out", type=Path, help="override the output directory")

    common(sub.add_parser("synth", help="generate the synthetic dataset on disk"))
    common(sub.add_parser("train", help="run the cross-artefact training protocol"))

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    common(p_eval)
    p_eval.add_argument("--checkpoint", type=Path, required=True)
    p_eval.add_argument("--manifest", type=Path, help="dataset manifest CSV")
    p_eval.add_argument("--bands", help="comma-separated band subset, e.g. 800,850")
    p_eval.add_argument("--threshold-mode", choices=("fixed", "dev"))
    p_eval.add_argument("--force", action="store_true",
                        help="skip config/dataset hash compatibility checks")

    common(sub.add_parser("ablate", help="run the 7-row component ablation sweep"))

    p_an = sub.add_parser("analyze", help="rank-correlate separability vs PAD error")
    p_an.add_argument("--run", type=Path, required=True, help="finished run directory")
    p_an.add_argument("--out", type=Path)
    return parser


_HANDLERS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "analyze": cmd_analyze,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _HANDLERS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except ProtocolError as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
