"""Two-phase object-based change detection.

Phase 1 separates changed (CC) from unchanged (UC) superpixels; phase 2
re-segments the CC area of the masked images, denoises it by low-rank /
sparse decomposition in the log domain and splits it into real (RCC) and
speckle-induced false (FCC) change. Only RCC pixels end up changed.
"""
from __future__ import annotations

import configparser
import dataclasses
import logging
import time
import warnings
from dataclasses import dataclass, field, fields

import numpy as np

from . import clustering, lrsd, pcanet
from .clustering import HIGH, LOW, MID, DegenerateClustering
from .imaging import (CHANGED, UNCHANGED, check_image, check_same_shape, log_transform,
                      mask_unchanged)
from .superpixel import PatchIndex, SuperpixelMap, copy_pattern, reshape_all, slic_segment

log = logging.getLogger(__name__)

# pixels per superpixel of the best 400 x 400 settings: 3200 x 7^2 and 17800 x 3^2
REF_PIXELS = 400 * 400
REF_SP1, REF_K1 = 3200, 7
REF_SP2, REF_K2 = 17800, 3


@dataclass
class PipelineConfig:
    sp1: int | None = None  # None: scaled from REF_SP1 to the image size
    k1: int = REF_K1
    filter1: int = 5
    sp2: int | None = None
    k2: int = REF_K2
    filter2: int = 3
    compactness: float = 500.0  # amplitude units; 10 lets speckle drive the segments
    slic_iterations: int = 10
    fcm_m: float = 1.2  # m = 2 collapses to the grand mean on 49-d vectors
    fcm_tol: float = 1e-6
    fcm_max_iter: int = 300
    l1: int = 8
    l2: int = 8
    block_rows: int = 0  # 0 -> k
    block_cols: int = 0
    block_overlap: int = 0
    svm_c: float = 1.0
    svm_tol: float = 1e-4
    svm_max_iter: int = 1000
    log_epsilon: float = 1.0
    lrsd_eps: float | None = None  # None: lrsd_eps_scale / sqrt(active columns)
    lrsd_eps_scale: float = 8.0
    lrsd_lam: float = 0.9
    lrsd_mu0: float | None = None  # None: 1.25 / sigma_1(Phi)
    lrsd_rho: float = 1.1
    lrsd_tol: float = 1e-7
    lrsd_max_iter: int = 500
    vote_high: float = 0.8
    vote_low: float = 0.5
    imbalance_ratio: float = 20.0
    seed: int = 0

    def resolve(self, shape) -> "PipelineConfig":
        """Fill size-dependent defaults and check the parameter invariants."""
        M, N = shape
        cfg = dataclasses.replace(self)
        if cfg.sp1 is None:
            cfg.sp1 = round(M * N / cfg.k1 ** 2 * (REF_SP1 * REF_K1 ** 2 / REF_PIXELS))
        if cfg.sp2 is None:
            cfg.sp2 = round(M * N / cfg.k2 ** 2 * (REF_SP2 * REF_K2 ** 2 / REF_PIXELS))
        cfg.sp1 = int(min(max(cfg.sp1, 1), M * N))
        cfg.sp2 = int(min(max(cfg.sp2, 1), M * N))
        if cfg.k2 > cfg.k1 or cfg.sp2 < cfg.sp1:
            raise ValueError("phase-2 superpixels must be smaller: need k2 <= k1 and sp2 >= sp1")
        if cfg.filter1 > cfg.k1 or cfg.filter2 > cfg.k2:
            raise ValueError("filter side must not exceed patch side")
        for sp, k in ((cfg.sp1, cfg.k1), (cfg.sp2, cfg.k2)):
            ratio = sp * k * k / (M * N)
            if not 0.5 <= ratio <= 2.0:
                warnings.warn(f"superpixel count {sp} with patch side {k} covers "
                              f"{ratio:.2f} x the image; expected about 1", stacklevel=2)
        return cfg


# (section, key) -> field; also the config-file schema
CONFIG_KEYS = {
    ("phase1", "sp"): "sp1", ("phase1", "k"): "k1", ("phase1", "filter_size"): "filter1",
    ("phase2", "sp"): "sp2", ("phase2", "k"): "k2", ("phase2", "filter_size"): "filter2",
    ("slic", "compactness"): "compactness", ("slic", "iterations"): "slic_iterations",
    ("fcm", "m"): "fcm_m", ("fcm", "tol"): "fcm_tol", ("fcm", "max_iter"): "fcm_max_iter",
    ("pcanet", "l1"): "l1", ("pcanet", "l2"): "l2", ("pcanet", "block_rows"): "block_rows",
    ("pcanet", "block_cols"): "block_cols", ("pcanet", "block_overlap"): "block_overlap",
    ("svm", "c"): "svm_c", ("svm", "tol"): "svm_tol", ("svm", "max_iter"): "svm_max_iter",
    ("lrsd", "log_epsilon"): "log_epsilon", ("lrsd", "eps"): "lrsd_eps",
    ("lrsd", "eps_scale"): "lrsd_eps_scale", ("lrsd", "lam"): "lrsd_lam",
    ("lrsd", "mu0"): "lrsd_mu0", ("lrsd", "rho"): "lrsd_rho", ("lrsd", "tol"): "lrsd_tol",
    ("lrsd", "max_iter"): "lrsd_max_iter",
    ("vote", "high"): "vote_high", ("vote", "low"): "vote_low",
    ("run", "seed"): "seed", ("run", "imbalance_ratio"): "imbalance_ratio",
}
_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


class ConfigError(ValueError):
    pass


def _convert(name, raw):
    kind = _FIELD_TYPES[name]
    raw = raw.strip()
    if "None" in kind and raw.lower() in ("", "none", "auto"):
        return None
    try:
        return int(raw) if kind.startswith("int") else float(raw)
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_config(text: str) -> tuple[PipelineConfig, list[str]]:
    """Parse a sectioned key = value config. Returns (config, fallback keys).

    Unknown sections or keys raise ConfigError; keys left out fall back to
    their defaults and are listed as "section.key".
    """
    cp = configparser.ConfigParser()
    cp.read_string(text)
    values = {}
    for sec in cp.sections():
        for key, raw in cp[sec].items():
            name = CONFIG_KEYS.get((sec, key))
            if name is None:
                raise ConfigError(f"unknown config key [{sec}] {key}")
            values[name] = _convert(name, raw)
    fallbacks = [f"{s}.{k}" for (s, k), name in CONFIG_KEYS.items() if name not in values]
    return PipelineConfig(**values), fallbacks


def config_to_text(cfg: PipelineConfig) -> str:
    by_section = {}
    for (sec, key), name in CONFIG_KEYS.items():
        by_section.setdefault(sec, []).append((key, getattr(cfg, name)))
    out = []
    for sec, items in by_section.items():
        out.append(f"[{sec}]")
        out += [f"{k} = {'auto' if v is None else v}" for k, v in items]
        out.append("")
    return "\n".join(out)


@dataclass
class PhaseResult:
    smap: SuperpixelMap | None
    segment_class: np.ndarray  # per segment; -1 for segments outside the phase
    labels: np.ndarray  # per pixel, CHANGED / UNCHANGED
    model: pcanet.PcaNetModel | None = None
    fcm: clustering.FcmResult | None = None
    report: dict = field(default_factory=dict)
    lrsd: lrsd.LrsdSolution | None = None


def _balance(idx, y, ratio, rng):
    """Down-sample the majority class to at most `ratio` times the minority."""
    pos, neg = idx[y == 1], idx[y == 0]
    small, big = (pos, neg) if len(pos) <= len(neg) else (neg, pos)
    if len(small) and len(big) > ratio * len(small):
        keep = np.sort(rng.choice(big, size=int(ratio * len(small)), replace=False))
        big = keep
    out = np.sort(np.concatenate([small, big]))
    return out


def _classify_segments(cfg, tag, V1, V2, k, kf, index: PatchIndex, vec_class, n_segments, rep):
    """Vote per segment, train PCANet on confident vectors, resolve intermediates.

    Returns (segment class in {LOW, HIGH, -1}, model or None).
    """
    seg_vote = clustering.vote_segments(index.segment_id, vec_class, n_segments,
                                        cfg.vote_high, cfg.vote_low)
    vec_vote = seg_vote[index.segment_id]
    rep[f"{tag}.segments_high"] = int((seg_vote == HIGH).sum())
    rep[f"{tag}.segments_mid"] = int((seg_vote == MID).sum())
    rep[f"{tag}.segments_low"] = int((seg_vote == LOW).sum())
    inter = np.flatnonzero(vec_vote == MID)
    model = None
    seg_class = np.where(seg_vote == MID, -2, seg_vote)
    if inter.size:
        conf = np.flatnonzero((vec_vote == HIGH) | (vec_vote == LOW))
        y = (vec_vote[conf] == HIGH).astype(np.int64)
        if y.sum() == 0 or y.sum() == len(y):
            raise DegenerateClustering(
                f"{tag}: no confident {'high' if y.sum() == 0 else 'low'} superpixels "
                "to train the classifier")
        rng = np.random.default_rng([cfg.seed, 101 if tag == "phase1" else 202])
        train = _balance(conf, y, cfg.imbalance_ratio, rng)
        y_train = (vec_vote[train] == HIGH).astype(np.int64)
        patches = pcanet.make_patches(V1, V2, k)
        model = pcanet.train_pcanet(
            patches[train], y_train, kf, cfg.l1, cfg.l2, cfg.svm_c,
            (cfg.block_rows, cfg.block_cols, cfg.block_overlap), cfg.seed,
            cfg.svm_tol, cfg.svm_max_iter)
        pred = pcanet.classify(model, patches[inter])
        seg = index.segment_id[inter]
        n_pos = np.bincount(seg, weights=pred, minlength=n_segments)
        n_all = np.bincount(seg, minlength=n_segments)
        mid_segs = np.flatnonzero(seg_vote == MID)
        # majority over sub-vectors, ties -> high
        seg_class[mid_segs] = np.where(2 * n_pos[mid_segs] >= n_all[mid_segs], HIGH, LOW)
        rep[f"{tag}.n_train"] = int(len(train))
        rep[f"{tag}.n_train_high"] = int(y_train.sum())
        rep[f"{tag}.n_intermediate_vectors"] = int(inter.size)
        rep[f"{tag}.intermediate_to_high"] = int((seg_class[mid_segs] == HIGH).sum())
    return seg_class, model


def run_phase1(I1, I2, cfg: PipelineConfig) -> PhaseResult:
    I1, I2 = check_image(I1), check_image(I2)
    check_same_shape(I1, I2)
    cfg = cfg.resolve(I1.shape)
    rep = {"phase1.sp": cfg.sp1, "phase1.k": cfg.k1}
    t0 = time.perf_counter()
    smap = slic_segment(I1, cfg.sp1, cfg.compactness, cfg.slic_iterations, cfg.seed)
    copy_pattern(smap, I2)
    index = reshape_all(smap, cfg.k1, cfg.seed)
    V1, V2 = index.values(I1), index.values(I2)
    F = clustering.spdi(V1, V2)
    rep["phase1.n_segments"] = smap.n_segments
    rep["phase1.n_vectors"] = len(index)
    res = clustering.fcm(F, 3, cfg.fcm_m, cfg.fcm_tol, cfg.fcm_max_iter, cfg.seed)
    rep["phase1.fcm_iterations"] = res.n_iter
    rep["phase1.fcm_center_means"] = [round(float(c), 6) for c in res.centers.mean(axis=1)]
    model = None
    if res.degenerate:
        log.warning("phase 1: identical difference vectors, everything unchanged")
        rep["phase1.degenerate"] = True
        seg_class = np.full(smap.n_segments, LOW)
    else:
        seg_class, model = _classify_segments(cfg, "phase1", V1, V2, cfg.k1, cfg.filter1,
                                              index, res.hard_labels, smap.n_segments, rep)
    seg_label = np.where(seg_class == HIGH, CHANGED, UNCHANGED)
    labels = seg_label[smap.labels]
    rep["phase1.cc_segments"] = int((seg_label == CHANGED).sum())
    rep["phase1.cc_pixels"] = int(labels.sum())
    rep["phase1.seconds"] = round(time.perf_counter() - t0, 3)
    return PhaseResult(smap, seg_label, labels, model, res, rep)


def _lrsd_eps(cfg, phi):
    if cfg.lrsd_eps is not None:
        return cfg.lrsd_eps
    active = max(int(np.count_nonzero(np.abs(phi).sum(axis=0))), 1)
    return cfg.lrsd_eps_scale / np.sqrt(active)


def run_phase2(I1, I2, phase1: PhaseResult, cfg: PipelineConfig) -> PhaseResult:
    I1, I2 = check_image(I1), check_image(I2)
    check_same_shape(I1, I2, phase1.labels)
    cfg = cfg.resolve(I1.shape)
    rep = {"phase2.sp": cfg.sp2, "phase2.k": cfg.k2}
    t0 = time.perf_counter()
    cc = phase1.labels == CHANGED
    if not cc.any():
        log.warning("phase 2: no changed pixels from phase 1")
        rep["phase2.skipped"] = True
        rep["phase2.changed_pixels"] = 0
        return PhaseResult(None, np.zeros(0, dtype=np.int64),
                           np.zeros(I1.shape, dtype=np.int64), report=rep)

    M1 = mask_unchanged(I1, phase1.labels)
    M2 = mask_unchanged(I2, phase1.labels)
    smap = slic_segment(M1, cfg.sp2, cfg.compactness, cfg.slic_iterations, cfg.seed)
    copy_pattern(smap, M2)
    active = np.flatnonzero(np.bincount(smap.labels.ravel(), weights=cc.ravel(),
                                        minlength=smap.n_segments) > 0)
    index = reshape_all(smap, cfg.k2, cfg.seed, segment_ids=active)
    L1 = log_transform(index.values(M1), cfg.log_epsilon)
    L2 = log_transform(index.values(M2), cfg.log_epsilon)
    phi = lrsd.assemble_arrays(L1, L2, index.segment_id, index.sub_index)
    eps = _lrsd_eps(cfg, phi.data)
    sol = lrsd.solve_lrsd(phi, eps, cfg.lrsd_lam, cfg.lrsd_mu0, cfg.lrsd_rho, cfg.lrsd_tol,
                          cfg.lrsd_max_iter)
    u1, u2, _ = lrsd.restore_vectors(sol, phi)
    rep.update({"phase2.n_segments": smap.n_segments, "phase2.active_segments": len(active),
                "phase2.n_vectors": len(index), "phase2.lrsd_eps": round(float(eps), 8),
                "phase2.lrsd_iterations": sol.iterations,
                "phase2.lrsd_residual": float(sol.final_residual),
                "phase2.lrsd_converged": sol.converged,
                "phase2.lrsd_rank": sol.history[-1][1] if sol.history else 0})
    F = clustering.spdi(u1, u2)
    if len(F) < 3:
        raise DegenerateClustering(f"phase 2: only {len(F)} difference vectors")
    res = clustering.fcm(F, 3, cfg.fcm_m, cfg.fcm_tol, cfg.fcm_max_iter, cfg.seed)
    rep["phase2.fcm_iterations"] = res.n_iter
    rep["phase2.fcm_center_means"] = [round(float(c), 6) for c in res.centers.mean(axis=1)]
    if res.degenerate:
        raise DegenerateClustering("phase 2: identical difference vectors")
    seg_class, model = _classify_segments(cfg, "phase2", u1, u2, cfg.k2, cfg.filter2,
                                          index, res.hard_labels, smap.n_segments, rep)
    rcc = seg_class == HIGH
    labels = (rcc[smap.labels] & cc).astype(np.int64)
    rep["phase2.rcc_segments"] = int(rcc.sum())
    rep["phase2.fcc_segments"] = int((seg_class == LOW).sum())
    rep["phase2.changed_pixels"] = int(labels.sum())
    rep["phase2.seconds"] = round(time.perf_counter() - t0, 3)
    return PhaseResult(smap, seg_class, labels, model, res, rep, sol)


@dataclass
class RunResult:
    change_map: np.ndarray
    phase1: PhaseResult
    phase2: PhaseResult | None
    report: dict


def run_full(I1, I2, cfg: PipelineConfig | None = None, phase1_only: bool = False) -> RunResult:
    cfg = cfg or PipelineConfig()
    I1, I2 = check_image(I1), check_image(I2)
    check_same_shape(I1, I2)
    resolved = cfg.resolve(I1.shape)
    t0 = time.perf_counter()
    p1 = run_phase1(I1, I2, cfg)
    report = {"run.rows": I1.shape[0], "run.cols": I1.shape[1], "run.seed": cfg.seed,
              "run.sp1": resolved.sp1, "run.sp2": resolved.sp2}
    report.update(p1.report)
    if phase1_only:
        report["run.seconds"] = round(time.perf_counter() - t0, 3)
        return RunResult(p1.labels.copy(), p1, None, report)
    p2 = run_phase2(I1, I2, p1, cfg)
    report.update(p2.report)
    report["run.changed_pixels"] = int(p2.labels.sum())
    report["run.seconds"] = round(time.perf_counter() - t0, 3)
    return RunResult(p2.labels.copy(), p1, p2, report)


def format_report(report: dict) -> str:
    """Group "section.key" entries under [section] headers."""
    sections = {}
    for key, value in report.items():
        sec, _, name = key.partition(".")
        sections.setdefault(sec, []).append((name, value))
    out = []
    for sec, items in sections.items():
        out.append(f"[{sec}]")
        out += [f"{name} = {value}" for name, value in items]
        out.append("")
    return "\n".join(out)
