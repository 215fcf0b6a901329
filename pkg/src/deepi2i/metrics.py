"""FID, KID, their per-class means, and the RC/FC classifier-accuracy protocol.

The default feature extractor is a frozen, seeded random convolutional
embedder so the whole pipeline runs hermetically. Numbers produced with it are
only comparable with each other; an ImageNet Inception embedder can be
registered under ``"inception"`` for literature-comparable values.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import DatasetError, DatasetHandle

log = logging.getLogger(__name__)

FID_EPS = 1e-6


class MetricError(ValueError):
    pass


# -- feature extraction ---------------------------------------------------------------

@dataclass
class FeatureSet:
    features: np.ndarray
    extractor: str = ""
    tag: dict = field(default_factory=dict)

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


class RandomConvEmbedder(nn.Module):
    """Frozen randomly initialised conv net; output is a ``dim``-vector per image."""

    def __init__(self, dim: int = 64, width: int = 32, seed: int = 0):
        super().__init__()
        self.dim, self.seed = dim, seed
        self.name = f"randconv-d{dim}-w{width}-s{seed}"
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.conv1 = nn.Conv2d(3, width, 3, padding=1)
            self.conv2 = nn.Conv2d(width, 2 * width, 3, padding=1)
            self.conv3 = nn.Conv2d(2 * width, dim, 3, padding=1)
            for conv in (self.conv1, self.conv2, self.conv3):
                # variance-preserving init keeps features O(1), well above the FID epsilon
                nn.init.kaiming_normal_(conv.weight, nonlinearity="relu")
                nn.init.zeros_(conv.bias)
        self.requires_grad_(False)
        self.eval()

    @torch.no_grad()
    def forward(self, x):
        h = F.avg_pool2d(F.relu(self.conv1(x)), 2)
        h = F.avg_pool2d(F.relu(self.conv2(h)), 2)
        return F.relu(self.conv3(h)).mean(dim=(2, 3))


class InceptionEmbedder(nn.Module):
    """Pool features of torchvision's ImageNet Inception-v3 (needs downloadable weights)."""

    def __init__(self):
        super().__init__()
        from torchvision.models import Inception_V3_Weights, inception_v3
        net = inception_v3(weights=Inception_V3_Weights.IMAGENET1K_V1, aux_logits=True)
        net.fc = nn.Identity()
        self.net = net.eval().requires_grad_(False)
        self.dim, self.name = 2048, "inception-v3-pool3"

    @torch.no_grad()
    def forward(self, x):
        x = F.interpolate((x + 1) / 2, size=(299, 299), mode="bilinear", align_corners=False)
        mean = torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1)
        std = torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1)
        return self.net((x - mean) / std)


EXTRACTORS: dict[str, Callable[..., nn.Module]] = {
    "randconv": RandomConvEmbedder,
    "inception": InceptionEmbedder,
}


def register_extractor(name: str, factory: Callable[..., nn.Module]) -> None:
    EXTRACTORS[name] = factory


def make_extractor(name: str = "randconv", **kw) -> nn.Module:
    if name not in EXTRACTORS:
        raise MetricError(f"unknown feature extractor {name!r}; registered: {sorted(EXTRACTORS)}")
    return EXTRACTORS[name](**kw)


def extract_features(images, extractor: nn.Module, batch_size: int = 200, tag: dict | None = None) -> FeatureSet:
    images = torch.as_tensor(images)
    if images.shape[0] == 0:
        raise MetricError("cannot extract features from an empty image set")
    chunks = [extractor(images[i:i + batch_size].float()) for i in range(0, images.shape[0], batch_size)]
    feats = torch.cat(chunks).double().numpy()
    return FeatureSet(feats, getattr(extractor, "name", type(extractor).__name__), dict(tag or {}))


# -- distances ------------------------------------------------------------------------

def _as_matrix(x) -> np.ndarray:
    x = x.features if isinstance(x, FeatureSet) else x
    x = np.asarray(x, dtype=np.float64)
    return x[:, None] if x.ndim == 1 else x


def _sqrt_psd(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((mat + mat.T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def trace_sqrt_product(sigma_a: np.ndarray, sigma_b: np.ndarray) -> float:
    """tr((A B)^(1/2)) for PSD A, B, via the similar symmetric matrix A^(1/2) B A^(1/2)."""
    sa = _sqrt_psd(sigma_a)
    m = sa @ sigma_b @ sa
    w = np.linalg.eigvalsh((m + m.T) / 2)
    return float(np.sqrt(np.clip(w, 0, None)).sum())


def gaussian_stats(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return x.mean(axis=0), np.atleast_2d(np.cov(x, rowvar=False))


def frechet_distance(mu_a, sigma_a, mu_b, sigma_b, eps: float = FID_EPS) -> float:
    min_eig = min(np.linalg.eigvalsh(sigma_a)[0], np.linalg.eigvalsh(sigma_b)[0])
    if min_eig < eps:
        reg = eps * np.eye(sigma_a.shape[0])
        sigma_a, sigma_b = sigma_a + reg, sigma_b + reg
    diff = mu_a - mu_b
    value = diff @ diff + np.trace(sigma_a) + np.trace(sigma_b) - 2 * trace_sqrt_product(sigma_a, sigma_b)
    return max(float(value), 0.0)


def fid(a, b, eps: float = FID_EPS) -> float:
    a, b = _as_matrix(a), _as_matrix(b)
    if a.shape[1] != b.shape[1]:
        raise MetricError(f"feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    if len(a) < 2 or len(b) < 2:
        raise MetricError("FID needs at least two samples per set")
    return frechet_distance(*gaussian_stats(a), *gaussian_stats(b), eps=eps)


def polynomial_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return (x @ y.T / x.shape[1] + 1.0) ** 3


def _mmd2_unbiased(a: np.ndarray, b: np.ndarray) -> float:
    m, n = len(a), len(b)
    kaa, kbb, kab = polynomial_kernel(a, a), polynomial_kernel(b, b), polynomial_kernel(a, b)
    saa = (kaa.sum() - np.trace(kaa)) / (m * (m - 1))
    sbb = (kbb.sum() - np.trace(kbb)) / (n * (n - 1))
    return float(saa + sbb - 2.0 * kab.sum() / (m * n))


def kid(a, b, num_subsets: int = 0, subset_size: int = 1000, seed: int = 0) -> float:
    """Unbiased squared MMD with the cubic polynomial kernel (raw, not x100).

    ``num_subsets > 0`` averages the estimate over random subsets (block mode).
    """
    a, b = _as_matrix(a), _as_matrix(b)
    if a.shape[1] != b.shape[1]:
        raise MetricError(f"feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    if len(a) < 2 or len(b) < 2:
        raise MetricError("KID needs at least two samples per set")
    # The estimator is symmetric; fixing the argument order makes it bitwise symmetric too.
    if (len(a), a.tobytes()) > (len(b), b.tobytes()):
        a, b = b, a
    if num_subsets <= 0:
        return _mmd2_unbiased(a, b)
    rng = np.random.default_rng(seed)
    k = min(subset_size, len(a), len(b))
    vals = [_mmd2_unbiased(a[rng.choice(len(a), k, replace=False)], b[rng.choice(len(b), k, replace=False)])
            for _ in range(num_subsets)]
    return float(np.mean(vals))


# -- reports --------------------------------------------------------------------------

@dataclass
class MetricReport:
    extractor: str
    per_class_fid: dict = field(default_factory=dict)
    per_class_kid: dict = field(default_factory=dict)
    real_counts: dict = field(default_factory=dict)
    generated_counts: dict = field(default_factory=dict)
    mfid: float = float("nan")
    mkid: float = float("nan")
    rc: float | None = None
    fc: float | None = None
    excluded: list = field(default_factory=list)
    class_names: dict = field(default_factory=dict)
    notes: dict = field(default_factory=dict)

    @property
    def mkid_x100(self) -> float:
        return 100.0 * self.mkid

    def summary(self) -> dict:
        """Aggregate row with the column names of the comparison tables."""
        return {"RC": self.rc, "FC": self.fc, "mKIDx100": self.mkid_x100, "mFID": self.mfid}

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("per_class_fid", "per_class_kid", "real_counts", "generated_counts", "class_names"):
            d[key] = {str(k): v for k, v in d[key].items()}
        d["summary"] = self.summary()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "name", "fid", "kid_x100", "n_real", "n_generated"])
        for c in sorted(self.per_class_fid):
            w.writerow([c, self.class_names.get(c, ""), repr(self.per_class_fid[c]),
                        repr(100 * self.per_class_kid[c]), self.real_counts.get(c), self.generated_counts.get(c)])
        w.writerow(["mean", "", repr(self.mfid), repr(self.mkid_x100), "", ""])
        w.writerow(["RC", "", "" if self.rc is None else repr(self.rc), "", "", ""])
        w.writerow(["FC", "", "" if self.fc is None else repr(self.fc), "", "", ""])
        return buf.getvalue()


# -- per-class translation metrics ----------------------------------------------------

GenerateFn = Callable[[int, int], torch.Tensor]


def class_noise(seed: int, c: int, n: int, z_dim: int) -> torch.Tensor:
    gen = torch.Generator().manual_seed(int(np.random.SeedSequence([seed, c]).generate_state(1)[0]))
    return torch.randn(n, z_dim, generator=gen)


def translator(nets, dataset: DatasetHandle, seed: int = 0, batch_size: int = 100) -> GenerateFn:
    """gen(c, n): translate test-split images (cycled in order) into class ``c`` with fresh noise."""
    sources = torch.from_numpy(dataset.split("test")[0])
    if len(sources) == 0:
        raise MetricError("test split is empty")

    @torch.no_grad()
    def gen(c: int, n: int) -> torch.Tensor:
        for _, m in nets:
            m.eval()
        idx = torch.arange(n) % len(sources)
        z = class_noise(seed, c, n, nets.cfg.z_dim)
        out = []
        for i in range(0, n, batch_size):
            x = sources[idx[i:i + batch_size]]
            labels = torch.full((len(x),), c, dtype=torch.long)
            out.append(nets.translate(x, z[i:i + batch_size], labels))
        return torch.cat(out)

    return gen


def identity_generator(dataset: DatasetHandle, split: str = "test") -> GenerateFn:
    """Control 'generator' that returns real class-c images (cycled) instead of translations."""

    def gen(c: int, n: int) -> torch.Tensor:
        real = dataset.class_images(split, c)
        return torch.from_numpy(real[np.arange(n) % len(real)])

    return gen


def per_class_metrics(generate: GenerateFn, dataset: DatasetHandle, n_gen_per_class: int,
                      extractor: nn.Module, keep_images: dict | None = None) -> MetricReport:
    if n_gen_per_class < 2:
        raise MetricError("n_gen_per_class must be at least 2")
    name = getattr(extractor, "name", type(extractor).__name__)
    report = MetricReport(extractor=name, notes={
        "sources": "test split cycled in order, fresh noise per generated image",
        "real_reference": "test split of the target class"})
    for c in range(dataset.num_classes):
        real = dataset.class_images("test", c)
        cname = dataset.vocab.name(c)
        if len(real) < 2:
            log.warning("class %s has %d test images; excluded from mFID/mKID", cname, len(real))
            report.excluded.append(c)
            continue
        fake = generate(c, n_gen_per_class)
        if keep_images is not None:
            keep_images[c] = fake
        fr = extract_features(torch.from_numpy(real), extractor).features
        ff = extract_features(fake, extractor).features
        report.per_class_fid[c] = fid(fr, ff)
        report.per_class_kid[c] = kid(fr, ff)
        report.real_counts[c] = len(real)
        report.generated_counts[c] = len(fake)
        report.class_names[c] = cname
    if not report.per_class_fid:
        raise MetricError("no class has enough test images for FID")
    report.mfid = float(np.mean(list(report.per_class_fid.values())))
    report.mkid = float(np.mean(list(report.per_class_kid.values())))
    return report


# -- RC / FC --------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassifierConfig:
    width: int = 16
    iterations: int = 300
    batch_size: int = 64
    lr: float = 2e-3
    seed: int = 0


class _ResBlock(nn.Module):
    def __init__(self, cin, cout, stride):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, 1, 1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        self.short = (nn.Sequential(nn.Conv2d(cin, cout, 1, stride, bias=False), nn.BatchNorm2d(cout))
                      if stride != 1 or cin != cout else nn.Identity())

    def forward(self, x):
        h = F.relu(self.bn1(self.conv1(x)))
        return F.relu(self.bn2(self.conv2(h)) + self.short(x))


class ResNetClassifier(nn.Module):
    """Small residual backbone followed by one fully connected layer."""

    def __init__(self, num_classes: int, width: int = 16):
        super().__init__()
        self.stem = nn.Sequential(nn.Conv2d(3, width, 3, 1, 1, bias=False), nn.BatchNorm2d(width), nn.ReLU())
        self.layers = nn.Sequential(_ResBlock(width, width, 1), _ResBlock(width, 2 * width, 2),
                                    _ResBlock(2 * width, 4 * width, 2))
        self.fc = nn.Linear(4 * width, num_classes)

    def forward(self, x):
        return self.fc(self.layers(self.stem(x)).mean(dim=(2, 3)))


def train_classifier(images, labels, num_classes: int, cfg: ClassifierConfig = ClassifierConfig()) -> ResNetClassifier:
    images, labels = torch.as_tensor(images).float(), torch.as_tensor(labels).long()
    missing = sorted(set(range(num_classes)) - set(labels.tolist()))
    if missing:
        raise MetricError(f"classes {missing} are absent from the classifier training set")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        clf = ResNetClassifier(num_classes, cfg.width)
    opt = torch.optim.Adam(clf.parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed)
    clf.train()
    bs = min(cfg.batch_size, len(images))
    for _ in range(cfg.iterations):
        idx = torch.randint(len(images), (bs,), generator=gen)
        loss = F.cross_entropy(clf(images[idx]), labels[idx])
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
    return clf.eval()


@torch.no_grad()
def accuracy(clf: nn.Module, images, labels, batch_size: int = 200) -> float:
    """Percentage of correctly classified images."""
    images, labels = torch.as_tensor(images).float(), torch.as_tensor(labels).long()
    clf.eval()
    preds = torch.cat([clf(images[i:i + batch_size]).argmax(1) for i in range(0, len(images), batch_size)])
    return 100.0 * float((preds == labels).double().mean())


def rc_fc(real_train, real_test, generated, num_classes: int,
          cfg: ClassifierConfig = ClassifierConfig(), real_classifier: nn.Module | None = None) -> dict:
    """RC: real-trained classifier scored on generated images; FC: the reverse protocol.

    Each of ``real_train``, ``real_test``, ``generated`` is an (images, labels) pair;
    generated labels are the intended target classes.
    """
    clf_real = real_classifier or train_classifier(*real_train, num_classes, cfg)
    clf_fake = train_classifier(*generated, num_classes, cfg)
    return {"RC": accuracy(clf_real, *generated), "FC": accuracy(clf_fake, *real_test),
            "real_test_accuracy": accuracy(clf_real, *real_test)}


def evaluate_translation(generate: GenerateFn, dataset: DatasetHandle, n_gen_per_class: int,
                         extractor: nn.Module, classifier: ClassifierConfig | None = None,
                         real_classifier: nn.Module | None = None) -> MetricReport:
    """mFID/mKID, plus RC/FC when a classifier config is given."""
    kept = {} if classifier is not None else None
    report = per_class_metrics(generate, dataset, n_gen_per_class, extractor, keep_images=kept)
    if classifier is not None:
        classes = sorted(kept)
        gen_images = torch.cat([kept[c] for c in classes])
        gen_labels = torch.cat([torch.full((len(kept[c]),), c, dtype=torch.long) for c in classes])
        try:
            out = rc_fc(dataset.split("train"), dataset.split("test"), (gen_images, gen_labels),
                        dataset.num_classes, classifier, real_classifier)
        except (MetricError, DatasetError) as exc:
            log.warning("RC/FC skipped: %s", exc)
            report.notes["rc_fc"] = str(exc)
        else:
            report.rc, report.fc = out["RC"], out["FC"]
            report.notes["real_test_accuracy"] = out["real_test_accuracy"]
    return report


def mfid_evaluator(dataset: DatasetHandle, n_gen_per_class: int, extractor: nn.Module, seed: int = 0):
    """Callable for training-time snapshots: networks -> {'mFID', 'mKIDx100'}."""

    def evaluate(nets) -> dict:
        modes = {r: m.training for r, m in nets}
        rep = per_class_metrics(translator(nets, dataset, seed), dataset, n_gen_per_class, extractor)
        for r, m in nets:
            m.train(modes[r])
        return {"mFID": rep.mfid, "mKIDx100": rep.mkid_x100}

    return evaluate
