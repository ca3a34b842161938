"""Cross-artefact experiment runner.

Trains the five band heads on {bona fide + one attack instrument}, picks each
band's checkpoint at its minimum development loss, freezes feature statistics
with a dedicated post-training pass over the training split, derives ensemble
weights from development accuracies, and evaluates fused scores on the held-
out test split against every remaining artefact (plus an intra-artefact row
on the training artefact's own test identities). An ablation harness re-runs
the protocol with one component removed at a time.

Every run carries two audits: identity-disjointness across splits, and an
access log proving the eval phase never consumed train/dev samples.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import ensemble as ens
from . import metrics as met
from . import separability as sep
from . import spectral_head as sh
from . import vit_encoder as vit
from .autodiff import Tensor
from .config import GlobalConfig, canonical_text, config_hash
from .errors import NumericError, ProtocolError
from .losses import ClassWeights, class_weights, balanced_ce, contrastive
from .seeding import substream
from .spectral_data import (
    BANDS,
    BandStats,
    DatasetManifest,
    SpectralSample,
    assert_identity_disjoint,
    compute_band_stats,
    draw_augment_params,
    apply_affine,
    load_samples_from_manifest,
    quality_filter,
    split_by_sample_key,
    synth_generate,
    to_model_input,
)

EVAL_CHUNK = 128


# ---------------------------------------------------------------------------
# audits
# ---------------------------------------------------------------------------


@dataclass
class AccessAudit:
    """Phase-tagged record of every sample/file consumption in a run."""

    events: list[tuple[str, str, str]] = field(default_factory=list)

    def record(self, phase: str, split: str, key: str) -> None:
        self.events.append((phase, split, key))

    def violations(self) -> list[str]:
        bad = []
        for phase, split, key in self.events:
            if phase == "eval" and split in ("train", "dev"):
                bad.append(f"eval phase consumed {split} item {key}")
            if phase in ("train", "stats") and split != "train":
                bad.append(f"{phase} phase consumed {split} item {key}")
            if phase == "dev" and split != "dev":
                bad.append(f"dev phase consumed {split} item {key}")
        return bad


# ---------------------------------------------------------------------------
# in-memory dataset with QC applied
# ---------------------------------------------------------------------------


@dataclass
class PreparedDataset:
    samples: list[SpectralSample]
    splits: dict[str, str]  # sample_key -> split
    manifest: DatasetManifest
    dataset_hash: str
    qc_dropped: int  # band images failing QC

    def pool(self, split: str, artefacts: tuple[int, ...] | None = None):
        out = []
        for s in self.samples:
            if self.splits[s.sample_key] != split:
                continue
            if artefacts is not None and s.artefact_id not in artefacts:
                continue
            out.append(s)
        return out


def prepare_dataset(
    gcfg: GlobalConfig,
    audit: AccessAudit | None = None,
    splits: tuple[str, ...] = ("train", "dev", "test"),
    manifest_root: Path | None = None,
) -> PreparedDataset:
    """Materialize samples (synthetic or from a manifest) and run QC."""
    if gcfg.data.source == "synth":
        samples, manifest = synth_generate(
            gcfg.data.synth, gcfg.seed, fractions=gcfg.data.partition
        )
        split_map = split_by_sample_key(manifest)
        samples = [s for s in samples if split_map[s.sample_key] in splits]
    else:
        try:
            manifest = DatasetManifest.load(gcfg.data.manifest_path)
        except FileNotFoundError:
            raise ProtocolError(f"manifest not found: {gcfg.data.manifest_path}")
        root = manifest_root or Path(gcfg.data.manifest_path).parent
        split_map = split_by_sample_key(manifest)

        def on_open(path, split):
            if audit is not None:
                audit.record("load", split, path)

        samples = load_samples_from_manifest(manifest, root, splits=splits, on_open=on_open)

    assert_identity_disjoint(manifest)

    dropped = 0
    for s in samples:
        mask = set()
        for band, img in s.images.items():
            report = quality_filter(img, gcfg.data.qc_threshold, gcfg.data.qc_sat_limit)
            if report.passed:
                mask.add(band)
            else:
                dropped += 1
        s.band_mask = mask
    return PreparedDataset(
        samples=samples,
        splits=split_map,
        manifest=manifest,
        dataset_hash=manifest.content_hash(),
        qc_dropped=dropped,
    )


# ---------------------------------------------------------------------------
# model container
# ---------------------------------------------------------------------------


@dataclass
class Model:
    vit_cfg: vit.ViTConfig
    params: dict[str, Tensor]
    heads: dict[int, sh.HeadState]
    band_stats: dict[int, BandStats]
    weights: ens.EnsembleWeights | None = None
    threshold_dev: float = 0.5


def build_model(gcfg: GlobalConfig) -> Model:
    ablation = set(gcfg.train.ablation)
    rng = substream(gcfg.seed, "init")
    params = vit.init_vit_params(gcfg.model, rng, bands=BANDS)
    heads = {}
    for band in BANDS:
        head = sh.init_head(
            band,
            gcfg.model.embed_dim,
            substream(gcfg.seed, f"init.head.{band}"),
            token_fusion="token_fusion" not in ablation,
            use_spe="spe" not in ablation,
        )
        heads[band] = head
    return Model(vit_cfg=gcfg.model, params=params, heads=heads, band_stats={})


# ---------------------------------------------------------------------------
# band training
# ---------------------------------------------------------------------------


@dataclass
class BandTrainRecord:
    band: int
    n_eff: int
    n0: int
    n1: int
    p_k: float
    dev_losses: list[float]
    selected_epoch: int
    trace: list[tuple[float, float, float]]  # (ce, contrastive, total) per step


def _inputs_for(images, stats: BandStats, side: int) -> np.ndarray:
    return np.stack([to_model_input(img, stats, side) for img in images]).astype(np.float32)


def _forward_band(model: Model, band: int, x: np.ndarray, mode: str, rng=None):
    tokens = vit.encoder_forward(Tensor(x), model.params, model.vit_cfg, band)
    return sh.head_forward(tokens, model.heads[band], mode=mode, rng=rng)


def _eval_loss(model, band, inputs, labels, weights, lam, eps) -> float:
    """Development loss: CE over the whole split plus the contrastive term
    computed on the full split as one batch."""
    probs_parts, feat_parts = [], []
    for start in range(0, len(inputs), EVAL_CHUNK):
        chunk = inputs[start : start + EVAL_CHUNK]
        f_norm, _, probs = _forward_band(model, band, chunk, "eval")
        probs_parts.append(probs.data)
        feat_parts.append(f_norm.data)
    probs = np.concatenate(probs_parts)
    feats = np.concatenate(feat_parts)
    ce = balanced_ce(Tensor(probs), labels, weights).item()
    if lam == 0.0:
        return ce
    return ce + lam * contrastive(Tensor(feats), labels, eps).item()


def train_band(
    model: Model,
    band: int,
    train_images: list[np.ndarray],
    train_labels: np.ndarray,
    dev_inputs: np.ndarray,
    dev_labels: np.ndarray,
    gcfg: GlobalConfig,
) -> BandTrainRecord:
    """Adam over the combined band loss with best-epoch selection on dev loss."""
    ablation = set(gcfg.train.ablation)
    tcfg = gcfg.train
    n0 = int((train_labels == 0).sum())
    n1 = int((train_labels == 1).sum())
    if n0 == 0 or n1 == 0:
        raise ProtocolError(f"band {band}: training split lost a class after QC")
    head = model.heads[band]
    head.p_k = (
        0.0 if "band_dropout" in ablation else sh.band_dropout_rate(len(train_images))
    )
    weights = (
        ClassWeights(1.0, 1.0)
        if "balanced_ce" in ablation
        else class_weights(n0, n1, raw_inverse_freq=gcfg.loss_raw_inverse_freq)
    )
    lam = 0.0 if "contrastive" in ablation else gcfg.loss.lam

    trainable = {n: model.params[n] for n in vit.band_block_names(model.vit_cfg, band)}
    trainable.update(head.trainable())
    opt = ad.Adam(
        trainable,
        lr=tcfg.lr,
        beta1=tcfg.beta1,
        beta2=tcfg.beta2,
        weight_decay=tcfg.weight_decay,
    )

    rng_data = substream(gcfg.seed, f"data.{band}")
    rng_aug = substream(gcfg.seed, f"augment.{band}")
    rng_drop = substream(gcfg.seed, f"dropout.{band}")
    side = model.vit_cfg.image_side
    stats = model.band_stats[band]

    def snapshot():
        return {n: t.data.copy() for n, t in trainable.items()}

    dev_losses = [
        _eval_loss(model, band, dev_inputs, dev_labels, weights, lam, gcfg.loss.eps)
    ]
    best = (dev_losses[0], 0, snapshot())
    trace: list[tuple[float, float, float]] = []

    for epoch in range(1, tcfg.epochs + 1):
        order = rng_data.permutation(len(train_images))
        for start in range(0, len(order), tcfg.batch_size):
            idx = order[start : start + tcfg.batch_size]
            if idx.size < 2:
                continue  # contrastive term needs pairs
            batch = np.stack(
                [
                    to_model_input(
                        apply_affine(
                            train_images[i], draw_augment_params(rng_aug, side)
                        ),
                        stats,
                        side,
                    )
                    for i in idx
                ]
            ).astype(np.float32)
            labels = train_labels[idx]
            f_norm, _, probs = _forward_band(model, band, batch, "train", rng_drop)
            ce = balanced_ce(probs, labels, weights)
            if lam != 0.0:
                cont = contrastive(f_norm, labels, gcfg.loss.eps)
                total = ce + lam * cont
                cont_val = cont.item()
            else:
                total = ce
                cont_val = 0.0
            if not np.isfinite(total.data):
                raise NumericError(f"band {band}: non-finite loss at epoch {epoch}")
            opt.zero_grad()
            total.backward()
            opt.step()
            trace.append((ce.item(), cont_val, total.item()))
        dev_loss = _eval_loss(model, band, dev_inputs, dev_labels, weights, lam, gcfg.loss.eps)
        dev_losses.append(dev_loss)
        if dev_loss < best[0]:
            best = (dev_loss, epoch, snapshot())

    for name, data in best[2].items():
        trainable[name].data = data
    return BandTrainRecord(
        band=band,
        n_eff=len(train_images),
        n0=n0,
        n1=n1,
        p_k=head.p_k,
        dev_losses=dev_losses,
        selected_epoch=best[1],
        trace=trace,
    )


# ---------------------------------------------------------------------------
# split evaluation
# ---------------------------------------------------------------------------


@dataclass
class SplitEval:
    samples: list[SpectralSample]
    probs: np.ndarray  # (n, 5, 2), NaN where band invalid
    feats: np.ndarray  # (n, 5, d)
    mask: np.ndarray  # (n, 5) bool
    labels: np.ndarray
    artefacts: np.ndarray


def eval_split(
    model: Model,
    samples: list[SpectralSample],
    phase: str,
    audit: AccessAudit,
    splits: dict[str, str],
) -> SplitEval:
    n = len(samples)
    d = model.vit_cfg.embed_dim
    probs = np.full((n, len(BANDS), 2), np.nan)
    feats = np.full((n, len(BANDS), d), np.nan)
    mask = np.zeros((n, len(BANDS)), dtype=bool)
    for s in samples:
        audit.record(phase, splits[s.sample_key], s.sample_key)
    for bi, band in enumerate(BANDS):
        idx = [i for i, s in enumerate(samples) if band in s.band_mask]
        if not idx:
            continue
        inputs = _inputs_for(
            [samples[i].images[band] for i in idx], model.band_stats[band],
            model.vit_cfg.image_side,
        )
        for start in range(0, len(idx), EVAL_CHUNK):
            sel = idx[start : start + EVAL_CHUNK]
            f_norm, _, p = _forward_band(model, band, inputs[start : start + EVAL_CHUNK], "eval")
            probs[sel, bi] = p.data
            feats[sel, bi] = f_norm.data
            mask[sel, bi] = True
    return SplitEval(
        samples=samples,
        probs=probs,
        feats=feats,
        mask=mask,
        labels=np.array([s.label for s in samples]),
        artefacts=np.array([s.artefact_id for s in samples]),
    )


def fuse_scores(
    ev: SplitEval, weights: ens.EnsembleWeights, allowed_bands: tuple[int, ...]
) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample fused p_attack; second array flags samples with no valid band."""
    n = len(ev.samples)
    p_attack = np.full(n, np.nan)
    usable = np.zeros(n, dtype=bool)
    allowed = set(allowed_bands)
    for i in range(n):
        band_probs = {
            band: ev.probs[i, bi]
            for bi, band in enumerate(BANDS)
            if ev.mask[i, bi] and band in allowed
        }
        if not band_probs:
            continue
        fused = ens.fuse(band_probs, weights, set(band_probs))
        p_attack[i] = fused.p_ens[1]
        usable[i] = True
    return p_attack, usable


def fused_features(
    ev: SplitEval, weights: ens.EnsembleWeights, allowed_bands: tuple[int, ...]
) -> np.ndarray:
    """Ensemble-weighted mean of per-band normalized features (analysis only)."""
    n, _, d = ev.feats.shape
    out = np.full((n, d), np.nan)
    allowed = set(allowed_bands)
    for i in range(n):
        bands = [
            (bi, band)
            for bi, band in enumerate(BANDS)
            if ev.mask[i, bi] and band in allowed
        ]
        if not bands:
            continue
        raw = np.array([weights.w.get(band, 0.0) for _, band in bands])
        norm = raw / raw.sum() if raw.sum() > 0 else np.full(len(bands), 1.0 / len(bands))
        out[i] = sum(nw * ev.feats[i, bi] for nw, (bi, _) in zip(norm, bands))
    return out


# ---------------------------------------------------------------------------
# run record and the cross-artefact protocol
# ---------------------------------------------------------------------------


@dataclass
class RunRecord:
    config_text: str
    config_hash: str
    dataset_hash: str
    seed: int
    mode: str
    threshold_used: float
    threshold_dev: float
    bands: dict[int, BandTrainRecord]
    ensemble: ens.EnsembleWeights
    rows: list[dict]
    aggregate: dict[str, dict[str, float]]
    separability: list[dict]
    correlation_inputs: list[dict]
    qc_dropped: int
    audit_event_count: int
    audit_violations: list[str]
    wall_time_s: float

    def intra_row(self) -> dict | None:
        for row in self.rows:
            if row["test_artefact"] == row["train_artefact"]:
                return row
        return None

    def dev_loss_at_selection(self) -> float:
        return sum(r.dev_losses[r.selected_epoch] for r in self.bands.values())


def _threads() -> int:
    raw = os.environ.get("SPECTRAPAD_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def run_cross_artefact(gcfg: GlobalConfig, out_dir: Path | str | None = None) -> RunRecord:
    t0 = time.perf_counter()
    audit = AccessAudit()
    data = prepare_dataset(gcfg, audit)
    art = gcfg.train.artefact
    test_artefacts = gcfg.resolved_test_artefacts()

    train_pool = data.pool("train", artefacts=(0, art))
    dev_pool = data.pool("dev", artefacts=(0, art))
    test_pool = data.pool("test", artefacts=(0, art, *test_artefacts))
    if not train_pool or not dev_pool or not test_pool:
        raise ProtocolError("dataset is missing a split for the requested protocol")

    model = build_model(gcfg)

    # band-wise training data after QC; stats come from the raw training images
    per_band_train: dict[int, tuple[list[np.ndarray], np.ndarray]] = {}
    for band in BANDS:
        imgs, labels = [], []
        for s in train_pool:
            if band in s.band_mask:
                imgs.append(s.images[band])
                labels.append(s.label)
                audit.record("train", data.splits[s.sample_key], s.sample_key)
        if not imgs:
            raise ProtocolError(f"band {band}: no training images passed QC")
        model.band_stats[band] = compute_band_stats(imgs, band)
        per_band_train[band] = (imgs, np.array(labels))

    per_band_dev: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for band in BANDS:
        imgs, labels = [], []
        for s in dev_pool:
            if band in s.band_mask:
                imgs.append(s.images[band])
                labels.append(s.label)
        if not imgs:
            raise ProtocolError(f"band {band}: no development images passed QC")
        per_band_dev[band] = (
            _inputs_for(imgs, model.band_stats[band], gcfg.model.image_side),
            np.array(labels),
        )

    def _train_one(band: int) -> BandTrainRecord:
        imgs, labels = per_band_train[band]
        dev_inputs, dev_labels = per_band_dev[band]
        return train_band(model, band, imgs, labels, dev_inputs, dev_labels, gcfg)

    workers = min(_threads(), len(BANDS))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_train_one, BANDS))
        band_records = {r.band: r for r in results}
    else:
        band_records = {band: _train_one(band) for band in BANDS}

    # dedicated post-training pass: freeze feature statistics on the train split
    if "feat_norm" not in set(gcfg.train.ablation):
        for band in BANDS:
            imgs, _ = per_band_train[band]
            for s in train_pool:
                if band in s.band_mask:
                    audit.record("stats", data.splits[s.sample_key], s.sample_key)
            inputs = _inputs_for(imgs, model.band_stats[band], gcfg.model.image_side)
            collected = []
            head = model.heads[band]
            head.feat_mu = np.zeros(gcfg.model.embed_dim, dtype=np.float32)
            head.feat_sigma = np.ones(gcfg.model.embed_dim, dtype=np.float32)
            for start in range(0, len(inputs), EVAL_CHUNK):
                f_norm, _, _ = _forward_band(model, band, inputs[start : start + EVAL_CHUNK],
                                             "eval")
                collected.append(f_norm.data)
            sh.set_feature_stats(head, np.concatenate(collected))

    # development accuracies, ensemble weights, dev-calibrated threshold
    dev_eval = eval_split(model, dev_pool, "dev", audit, data.splits)
    accs = {}
    for bi, band in enumerate(BANDS):
        valid = dev_eval.mask[:, bi]
        if valid.any():
            preds = sh.predictions(dev_eval.probs[valid, bi])
            accs[band] = ens.band_accuracy(preds, dev_eval.labels[valid])
    weights = ens.band_weights(accs)
    model.weights = weights

    dev_scores, dev_usable = fuse_scores(dev_eval, weights, gcfg.eval.bands)
    dev_bona = dev_scores[dev_usable & (dev_eval.labels == 0)]
    dev_attack = dev_scores[dev_usable & (dev_eval.labels == 1)]
    _, thr_dev = met.d_eer(met.ScoreSet(dev_bona, dev_attack))
    # stored as float32 in the checkpoint; round now so a reloaded model
    # reproduces dev-calibrated numbers bit-exactly
    model.threshold_dev = float(np.float32(min(max(thr_dev, 1e-6), 1 - 1e-6)))

    # held-out evaluation
    test_eval = eval_split(model, test_pool, "eval", audit, data.splits)
    record = _score_and_report(
        gcfg, model, test_eval, band_records, weights, data, audit, t0
    )
    if out_dir is not None:
        write_run_outputs(Path(out_dir), gcfg, model, record, test_eval)
    return record


def _score_and_report(gcfg, model, test_eval, band_records, weights, data, audit, t0):
    art = gcfg.train.artefact
    test_artefacts = gcfg.resolved_test_artefacts()
    mode = "fixed_0.5" if gcfg.eval.threshold_mode == "fixed" else "dev_calibrated"
    threshold = 0.5 if mode == "fixed_0.5" else model.threshold_dev

    p_attack, usable = fuse_scores(test_eval, weights, gcfg.eval.bands)
    bona_mask = usable & (test_eval.labels == 0)
    if not bona_mask.any():
        raise ProtocolError("no usable bona fide test samples")
    bona_scores = p_attack[bona_mask]

    fused_feats = fused_features(test_eval, weights, gcfg.eval.bands)
    bona_feats = fused_feats[bona_mask]

    rows = []
    separability_rows = []
    correlation_inputs = []
    for artefact in (art, *test_artefacts):
        amask = usable & (test_eval.artefacts == artefact)
        if not amask.any():
            raise ProtocolError(f"no usable test samples for artefact {artefact}")
        scores = met.ScoreSet(bona_scores, p_attack[amask])
        apcer, bpcer = met.apcer_bpcer(scores, threshold)
        eer, thr_eer = met.d_eer(scores)
        row = {
            "train_artefact": art,
            "test_artefact": int(artefact),
            "mode": mode,
            "threshold": threshold,
            "apcer": apcer,
            "bpcer": bpcer,
            "hter": met.hter(apcer, bpcer),
            "d_eer": eer,
            "eer_threshold": thr_eer,
        }
        rows.append(row)

        attack_feats = fused_feats[amask]
        entry = {"test_artefact": int(artefact), "feature_set": "fused"}
        if len(bona_feats) >= 2 and len(attack_feats) >= 2:
            pooled = np.vstack([bona_feats, attack_feats])
            bw = sep.median_heuristic(pooled)
            entry.update(
                d_fb=sep.fb_distance(bona_feats, attack_feats, reduce="sum"),
                d_fb_mean=sep.fb_distance(bona_feats, attack_feats, reduce="mean"),
                mmd2=sep.mmd2_unbiased(bona_feats, attack_feats, bw),
                bandwidth=bw,
            )
            if artefact != art:
                correlation_inputs.append(
                    {
                        "test_artefact": int(artefact),
                        "d_fb": entry["d_fb"],
                        "mmd2": entry["mmd2"],
                        "eer": eer,
                        "hter": row["hter"],
                    }
                )
        separability_rows.append(entry)
        for bi, band in enumerate(BANDS):
            bmask_a = amask & test_eval.mask[:, bi]
            bmask_b = bona_mask & test_eval.mask[:, bi]
            if bmask_a.sum() >= 2 and bmask_b.sum() >= 2:
                fa = test_eval.feats[bmask_a, bi]
                fb = test_eval.feats[bmask_b, bi]
                bw = sep.median_heuristic(np.vstack([fb, fa]))
                separability_rows.append(
                    {
                        "test_artefact": int(artefact),
                        "feature_set": f"band{band}",
                        "d_fb": sep.fb_distance(fb, fa, reduce="sum"),
                        "d_fb_mean": sep.fb_distance(fb, fa, reduce="mean"),
                        "mmd2": sep.mmd2_unbiased(fb, fa, bw),
                        "bandwidth": bw,
                    }
                )

    cross = [r for r in rows if r["test_artefact"] != art]
    aggregate = {}
    for key in ("apcer", "bpcer", "hter", "d_eer"):
        mean, sd = met.aggregate([r[key] for r in cross]) if cross else (float("nan"),) * 2
        aggregate[key] = {"mean": mean, "sd": sd}

    violations = audit.violations()
    if violations:
        raise ProtocolError("leakage audit failed: " + "; ".join(violations[:3]))

    return RunRecord(
        config_text=canonical_text(gcfg),
        config_hash=config_hash(gcfg),
        dataset_hash=data.dataset_hash,
        seed=gcfg.seed,
        mode=mode,
        threshold_used=threshold,
        threshold_dev=model.threshold_dev,
        bands=band_records,
        ensemble=weights,
        rows=rows,
        aggregate=aggregate,
        separability=separability_rows,
        correlation_inputs=correlation_inputs,
        qc_dropped=data.qc_dropped,
        audit_event_count=len(audit.events),
        audit_violations=violations,
        wall_time_s=time.perf_counter() - t0,
    )


# ---------------------------------------------------------------------------
# ablation harness
# ---------------------------------------------------------------------------

ABLATION_ORDER = (
    "spe",
    "token_fusion",
    "balanced_ce",
    "contrastive",
    "band_dropout",
    "feat_norm",
)


def run_ablation(
    gcfg: GlobalConfig, out_dir: Path | str | None = None
) -> list[tuple[str, RunRecord]]:
    """One run per single-component removal plus the full configuration (7 rows)."""
    from .config import with_overrides
    import dataclasses

    runs: list[tuple[str, RunRecord]] = []
    variants = [(f"no_{t}", (t,)) for t in ABLATION_ORDER] + [("full", ())]
    for name, toggles in variants:
        cfg_i = with_overrides(
            gcfg, train=dataclasses.replace(gcfg.train, ablation=toggles)
        )
        sub_dir = Path(out_dir) / name if out_dir is not None else None
        runs.append((name, run_cross_artefact(cfg_i, sub_dir)))
    if out_dir is not None:
        write_ablation_table(Path(out_dir), runs)
    return runs


def ablation_directional_check(runs: list[tuple[str, RunRecord]]) -> dict:
    """Compare the full configuration's selected dev loss against every
    single-removal run on the same seed. Logged, never asserted: desk-scale
    noise may dominate the direction."""
    by_name = dict(runs)
    full = by_name["full"].dev_loss_at_selection()
    worse = {
        name: rec.dev_loss_at_selection()
        for name, rec in runs
        if name != "full"
    }
    holds = all(full <= v + 1e-12 for v in worse.values())
    return {"full_dev_loss": full, "removed_dev_loss": worse, "full_is_best": holds}


# ---------------------------------------------------------------------------
# run directory emission
# ---------------------------------------------------------------------------

RESULT_COLUMNS = ("train_artefact", "test_artefact", "mode", "threshold",
                  "apcer", "bpcer", "hter", "d_eer")


def results_csv_text(record: RunRecord) -> str:
    lines = [",".join(RESULT_COLUMNS)]
    for row in record.rows:
        lines.append(",".join(_csv_cell(row[c]) for c in RESULT_COLUMNS))
    for stat in ("mean", "sd"):
        cells = [str(record.rows[0]["train_artefact"]), stat, record.mode,
                 _csv_cell(record.threshold_used)]
        cells += [_csv_cell(record.aggregate[k][stat]) for k in
                  ("apcer", "bpcer", "hter", "d_eer")]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _csv_cell(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def record_to_json(record: RunRecord) -> dict:
    return {
        "config_hash": record.config_hash,
        "dataset_hash": record.dataset_hash,
        "seed": record.seed,
        "mode": record.mode,
        "threshold_used": record.threshold_used,
        "threshold_dev": record.threshold_dev,
        "rows": record.rows,
        "aggregate": record.aggregate,
        "ensemble": {
            "acc": {str(b): v for b, v in record.ensemble.acc.items()},
            "w": {str(b): v for b, v in record.ensemble.w.items()},
        },
        "bands": {
            str(b): {
                "n_eff": r.n_eff,
                "n0": r.n0,
                "n1": r.n1,
                "p_k": r.p_k,
                "dev_losses": r.dev_losses,
                "selected_epoch": r.selected_epoch,
                "steps": len(r.trace),
            }
            for b, r in record.bands.items()
        },
        "separability": record.separability,
        "correlation_inputs": record.correlation_inputs,
        "qc_dropped_band_images": record.qc_dropped,
        "audit": {
            "events": record.audit_event_count,
            "violations": record.audit_violations,
        },
        "wall_time_s": record.wall_time_s,
    }


def model_tensors(model: Model) -> dict[str, np.ndarray]:
    tensors = {name: t.data for name, t in model.params.items()}
    for band, head in model.heads.items():
        for name, t in head.params.items():
            tensors[name] = t.data
        tensors[f"head.band{band}.p_k"] = np.float32(head.p_k)
        tensors[f"head.band{band}.feat_mu"] = head.feat_mu
        tensors[f"head.band{band}.feat_sigma"] = head.feat_sigma
    for band, st in model.band_stats.items():
        tensors[f"stats.band{band}.mu"] = np.float32(st.mean)
        tensors[f"stats.band{band}.sigma"] = np.float32(st.std)
    if model.weights is not None:
        for band in BANDS:
            tensors[f"ensemble.acc.{band}"] = np.float32(model.weights.acc.get(band, 0.0))
            tensors[f"ensemble.w.{band}"] = np.float32(model.weights.w.get(band, 0.0))
    tensors["ensemble.threshold_dev"] = np.float32(model.threshold_dev)
    return tensors


def write_run_outputs(
    out_dir: Path, gcfg: GlobalConfig, model: Model, record: RunRecord,
    test_eval: SplitEval,
) -> None:
    from .checkpoint import save_checkpoint

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.snapshot").write_text(record.config_text, encoding="utf-8")
    save_checkpoint(
        out_dir / "checkpoint.bin",
        model_tensors(model),
        record.config_hash,
        record.dataset_hash,
    )
    (out_dir / "results.csv").write_text(results_csv_text(record), encoding="utf-8")
    (out_dir / "results.json").write_text(
        json.dumps(record_to_json(record), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )

    scores_dir = out_dir / "scores"
    det_dir = out_dir / "det"
    scores_dir.mkdir(exist_ok=True)
    det_dir.mkdir(exist_ok=True)
    p_attack, usable = fuse_scores(test_eval, model.weights, gcfg.eval.bands)
    bona = p_attack[usable & (test_eval.labels == 0)]
    seen = {row["test_artefact"] for row in record.rows}
    for artefact in sorted(seen):
        amask = usable & (test_eval.artefacts == artefact)
        lines = ["sample,identity,label,p_attack"]
        for i in np.flatnonzero(amask | (usable & (test_eval.labels == 0))):
            s = test_eval.samples[i]
            lines.append(f"{s.sample_key},{s.identity_id},{s.label},{p_attack[i]!r}")
        (scores_dir / f"artefact{artefact}.csv").write_text(
            "\n".join(lines) + "\n", encoding="utf-8"
        )
        sweep = met.threshold_sweep(met.ScoreSet(bona, p_attack[amask]))
        det_lines = ["threshold,apcer,bpcer"] + [
            f"{t!r},{a!r},{b!r}" for t, a, b in sweep
        ]
        (det_dir / f"artefact{artefact}.csv").write_text(
            "\n".join(det_lines) + "\n", encoding="utf-8"
        )

    sep_lines = ["test_artefact,feature_set,d_fb,d_fb_mean,mmd2,bandwidth"]
    for entry in record.separability:
        if "d_fb" in entry:
            sep_lines.append(
                f"{entry['test_artefact']},{entry['feature_set']},"
                f"{entry['d_fb']!r},{entry['d_fb_mean']!r},"
                f"{entry['mmd2']!r},{entry['bandwidth']!r}"
            )
    (out_dir / "separability.csv").write_text("\n".join(sep_lines) + "\n", encoding="utf-8")

    if gcfg.eval.dump_features:
        feat_dir = out_dir / "features"
        feat_dir.mkdir(exist_ok=True)
        for bi, band in enumerate(BANDS):
            valid = test_eval.mask[:, bi]
            save_checkpoint(
                feat_dir / f"band{band}.bin",
                {
                    f"features.band{band}": test_eval.feats[valid, bi],
                    "features.labels": test_eval.labels[valid].astype(np.float32),
                    "features.artefacts": test_eval.artefacts[valid].astype(np.float32),
                },
                record.config_hash,
                record.dataset_hash,
            )


def write_ablation_table(out_dir: Path, runs: list[tuple[str, RunRecord]]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [
        "config,removed,dev_loss_selected,intra_d_eer,intra_hter,"
        "cross_d_eer_mean,cross_d_eer_sd,cross_hter_mean,cross_hter_sd"
    ]
    for name, rec in runs:
        intra = rec.intra_row()
        lines.append(
            ",".join(
                [
                    name,
                    name[3:] if name.startswith("no_") else "-",
                    repr(rec.dev_loss_at_selection()),
                    repr(intra["d_eer"]),
                    repr(intra["hter"]),
                    repr(rec.aggregate["d_eer"]["mean"]),
                    repr(rec.aggregate["d_eer"]["sd"]),
                    repr(rec.aggregate["hter"]["mean"]),
                    repr(rec.aggregate["hter"]["sd"]),
                ]
            )
        )
    check = ablation_directional_check(runs)
    lines.append(
        f"# full_dev_loss={check['full_dev_loss']!r} full_is_best={check['full_is_best']}"
    )
    (out_dir / "ablation.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
