"""Two-stage PCANet features (PCA filter banks, binary hashing, block
histograms) and a linear SVM on top.

A training patch stacks the k x k reshape of the image-1 vector over that of
the image-2 vector, giving a 2k x k matrix.
"""
from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

log = logging.getLogger(__name__)

_CHUNK = 256


class UntrainedModel(RuntimeError):
    pass


def make_patches(v1, v2, k: int) -> np.ndarray:
    """(n, k*k) vector pairs -> (n, 2k, k) stacked patches."""
    v1 = np.asarray(v1, dtype=np.float64).reshape(-1, k, k)
    v2 = np.asarray(v2, dtype=np.float64).reshape(-1, k, k)
    if v1.shape != v2.shape:
        raise ValueError("unpaired vectors")
    return np.concatenate([v1, v2], axis=1)


def _blocks(maps: np.ndarray, kf: int) -> np.ndarray:
    """All overlapping kf x kf blocks of every map, mean-removed, as rows."""
    maps = np.asarray(maps, dtype=np.float64)
    if maps.shape[-2] < kf or maps.shape[-1] < kf:
        raise ValueError(f"filter side {kf} exceeds map size {maps.shape[-2:]}")
    win = sliding_window_view(maps, (kf, kf), axis=(-2, -1))
    B = win.reshape(-1, kf * kf)
    return B - B.mean(axis=1, keepdims=True)


def _pca_filters(maps, kf: int, n_filters: int):
    B = _blocks(maps, kf)
    cov = B.T @ B
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals, kind="stable")[::-1]
    evals, evecs = evals[order], evecs[:, order]
    rank = int(np.sum(evals > max(evals[0], 0.0) * 1e-12)) if evals[0] > 0 else 0
    if n_filters > rank:
        log.warning("requested %d filters but covariance rank is %d", n_filters, rank)
        n_filters = max(rank, 1)
    V = evecs[:, :n_filters].copy()
    # sign convention: largest-magnitude entry positive
    pivot = np.argmax(np.abs(V), axis=0)
    V *= np.sign(V[pivot, np.arange(V.shape[1])])
    return V.T.reshape(n_filters, kf, kf), evals[:n_filters]


def learn_stage1_filters(patches, kf: int, n_filters: int) -> np.ndarray:
    """Leading eigenvectors of Y Y^T, Y the mean-removed kf x kf blocks of all patches."""
    if n_filters > kf * kf:
        raise ValueError("more filters than block dimensions")
    return _pca_filters(patches, kf, n_filters)[0]


def learn_stage2_filters(stage1_outputs, kf: int, n_filters: int) -> np.ndarray:
    """Same construction over every first-stage output map, shape (n, L1, H, W)."""
    if n_filters > kf * kf:
        raise ValueError("more filters than block dimensions")
    return _pca_filters(stage1_outputs, kf, n_filters)[0]


def convolve(maps, filters) -> np.ndarray:
    """Zero-padded 'same' filtering of (..., H, W) maps with (L, kf, kf) filters.

    Output shape (..., L, H, W); out[l, i, j] = sum W_l * window centred at (i, j).
    """
    maps = np.asarray(maps, dtype=np.float64)
    kf = filters.shape[-1]
    a = kf // 2
    pad = [(0, 0)] * (maps.ndim - 2) + [(a, kf - 1 - a), (a, kf - 1 - a)]
    win = sliding_window_view(np.pad(maps, pad), (kf, kf), axis=(-2, -1))
    return np.einsum("...ijab,lab->...lij", win, filters, optimize=True)


def hash_maps(responses) -> np.ndarray:
    """Binary hashing over the second-stage axis (axis -3): sum_p 2^p H(R_p).

    H(x) = 1 for x > 0, else 0; the first filter is the least significant bit.
    """
    R = np.asarray(responses)
    L2 = R.shape[-3]
    weights = (1 << np.arange(L2, dtype=np.int64)).reshape((L2, 1, 1))
    return ((R > 0).astype(np.int64) * weights).sum(axis=-3)


@dataclass
class PcaNetModel:
    k: int
    filter_size: int
    filters1: np.ndarray  # (L1, kf, kf)
    filters2: np.ndarray  # (L2, kf, kf)
    block: tuple = (0, 0, 0)  # (rows, cols, overlap); 0 means k x k, no overlap
    svm_w: np.ndarray | None = None
    svm_b: float = 0.0

    @property
    def L1(self) -> int:
        return len(self.filters1)

    @property
    def L2(self) -> int:
        return len(self.filters2)

    @property
    def block_shape(self):
        rows, cols, _ = self.block
        return (rows or self.k, cols or self.k)

    @property
    def n_blocks(self) -> int:
        br, bc = self.block_shape
        return len(_block_starts(2 * self.k, br, self.block[2])) * \
            len(_block_starts(self.k, bc, self.block[2]))

    @property
    def feature_dim(self) -> int:
        return self.L1 * self.n_blocks * (1 << self.L2)

    @property
    def trained(self) -> bool:
        return self.svm_w is not None


def _block_starts(size, block, overlap):
    stride = block - overlap
    if block > size or stride < 1:
        raise ValueError(f"bad block geometry: block {block}, overlap {overlap}, size {size}")
    return list(range(0, size - block + 1, stride))


def _block_histograms(T, model: PcaNetModel) -> np.ndarray:
    """T: (n, L1, 2k, k) hash codes -> (n, L1 * n_blocks * 2^L2) counts."""
    n, L1 = T.shape[:2]
    nbins = 1 << model.L2
    br, bc = model.block_shape
    ov = model.block[2]
    hists = []
    for r in _block_starts(T.shape[2], br, ov):
        for c in _block_starts(T.shape[3], bc, ov):
            blk = T[:, :, r:r + br, c:c + bc].reshape(n * L1, -1)
            offs = np.arange(n * L1)[:, None] * nbins
            h = np.bincount((blk + offs).ravel(), minlength=n * L1 * nbins)
            hists.append(h.reshape(n, L1, nbins))
    # order: filter l, then block, then bin
    return np.stack(hists, axis=2).reshape(n, -1).astype(np.float64)


def extract_features(model: PcaNetModel, patches) -> np.ndarray:
    """Features for (n, 2k, k) patches (or a single 2k x k patch)."""
    P = np.asarray(patches, dtype=np.float64)
    single = P.ndim == 2
    if single:
        P = P[None]
    if P.shape[1:] != (2 * model.k, model.k):
        raise ValueError(f"patch shape {P.shape[1:]} does not match k={model.k}")
    out = np.empty((len(P), model.feature_dim))
    for s in range(0, len(P), _CHUNK):
        O1 = convolve(P[s:s + _CHUNK], model.filters1)   # (n, L1, H, W)
        O2 = convolve(O1, model.filters2)                # (n, L1, L2, H, W)
        out[s:s + _CHUNK] = _block_histograms(hash_maps(O2), model)
    return out[0] if single else out


def learn_filters(patches, kf: int, L1: int, L2: int):
    W1 = learn_stage1_filters(patches, kf, L1)
    outs = np.concatenate([convolve(patches[s:s + _CHUNK], W1)
                           for s in range(0, len(patches), _CHUNK)])
    W2 = learn_stage2_filters(outs, kf, L2)
    return W1, W2


def train_classifier(features, labels, C: float = 1.0, tol: float = 1e-4,
                     max_iter: int = 1000, rng_seed: int = 0):
    """Linear soft-margin SVM (hinge loss, L2 penalty) by dual coordinate descent.

    Returns (w, b); the decision is w.x + b >= 0 -> class 1.
    """
    from sklearn.exceptions import ConvergenceWarning
    from sklearn.svm import LinearSVC
    import warnings

    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    if len(np.unique(y)) < 2:
        raise ValueError("classifier training needs both classes")
    clf = LinearSVC(loss="hinge", dual=True, C=C, tol=tol, max_iter=max_iter,
                    random_state=rng_seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        clf.fit(X, y)
    w = clf.coef_.ravel().copy()
    b = float(clf.intercept_[0])
    if clf.classes_[1] != 1:  # classes are {0, 1}; keep positive side = class 1
        w, b = -w, -b
    return w, b


def decision_function(model: PcaNetModel, features) -> np.ndarray:
    if not model.trained:
        raise UntrainedModel("PCANet model has no classifier")
    return np.asarray(features) @ model.svm_w + model.svm_b


def classify(model: PcaNetModel, patches) -> np.ndarray:
    """Binary class per patch; a zero decision value goes to class 1."""
    if not model.trained:
        raise UntrainedModel("PCANet model has no classifier")
    return (decision_function(model, extract_features(model, patches)) >= 0).astype(np.int64)


def train_pcanet(patches, labels, filter_size: int, L1: int = 8, L2: int = 8,
                 C: float = 1.0, block=(0, 0, 0), rng_seed: int = 0,
                 svm_tol: float = 1e-4, svm_max_iter: int = 1000) -> PcaNetModel:
    patches = np.asarray(patches, dtype=np.float64)
    k = patches.shape[2]
    if filter_size > k:
        raise ValueError(f"filter side {filter_size} exceeds patch side {k}")
    W1, W2 = learn_filters(patches, filter_size, L1, L2)
    model = PcaNetModel(k, filter_size, W1, W2, tuple(block))
    feats = extract_features(model, patches)
    model.svm_w, model.svm_b = train_classifier(feats, labels, C, svm_tol, svm_max_iter, rng_seed)
    return model


# ---------------------------------------------------------------- serialisation
# Layout (little-endian):
#   8s   magic b"PCANET\x00\x01"
#   u32  version (1)
#   7 x u32  k, filter_size, L1, L2, block_rows, block_cols, block_overlap
#   u32  feature_dim (0 when untrained)
#   f64  filters1, L1*kf*kf values, row-major
#   f64  filters2, L2*kf*kf values
#   f64  svm weights, feature_dim values
#   f64  svm bias (present only when feature_dim > 0)

_MAGIC = b"PCANET\x00\x01"
_VERSION = 1


def save_model(model: PcaNetModel, path) -> None:
    dim = len(model.svm_w) if model.trained else 0
    head = _MAGIC + struct.pack("<9I", _VERSION, model.k, model.filter_size, model.L1,
                                model.L2, *model.block, dim)
    body = [model.filters1.astype("<f8").tobytes(), model.filters2.astype("<f8").tobytes()]
    if dim:
        body += [model.svm_w.astype("<f8").tobytes(), struct.pack("<d", model.svm_b)]
    Path(path).write_bytes(head + b"".join(body))


def load_model(path) -> PcaNetModel:
    buf = Path(path).read_bytes()
    if buf[:8] != _MAGIC:
        raise ValueError(f"{path}: not a PCANet model file")
    version, k, kf, L1, L2, br, bc, ov, dim = struct.unpack_from("<9I", buf, 8)
    if version != _VERSION:
        raise ValueError(f"unsupported model version {version}")
    pos = 8 + 36

    def take(count):
        nonlocal pos
        arr = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).astype(np.float64)
        pos += 8 * count
        return arr

    W1 = take(L1 * kf * kf).reshape(L1, kf, kf)
    W2 = take(L2 * kf * kf).reshape(L2, kf, kf)
    model = PcaNetModel(k, kf, W1, W2, (br, bc, ov))
    if dim:
        model.svm_w = take(dim)
        model.svm_b = float(take(1)[0])
    return model
