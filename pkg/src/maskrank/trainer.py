"""Toy end-to-end training on synthetic embedding scenes.

The model is a single cross-attention layer standing in for a mask-proposal
decoder: learned queries attend over the pixel features, and two linear
heads project the pooled vectors into class embeddings (compared with the
text embeddings by cosine) and mask embeddings (dotted with every pixel
feature, then passed through a sigmoid).  Gradients are written out by hand
and checked against finite differences in the test suite.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import assignment as asg
from . import losses
from .config import TrainConfig
from .errors import ParameterError, TrainingDivergedError
from .inference import class_probabilities
from .losses import ImageLabelSets, LossReport
from .metrics import IoUReport, evaluate
from .pseudolabel import pseudo_labels
from .tensor import sigmoid_map, softmax_temp

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("step", "total", "class", "mask", "rank")


@dataclass
class SceneInstance:
    features: np.ndarray  # d x H x W, unit-norm per pixel
    gt_masks: np.ndarray  # G x HW binary, seen regions only
    gt_labels: np.ndarray  # G seen class ids
    label_map: np.ndarray  # H x W, every pixel's true class
    classes: tuple[int, ...]  # all classes present, seen and unseen
    pseudo_unseen: frozenset[int] = frozenset()

    @property
    def pixels(self) -> np.ndarray:
        """HW x d feature matrix."""
        d = self.features.shape[0]
        return self.features.reshape(d, -1).T


@dataclass
class Scenario:
    text: np.ndarray  # C x d, unit rows
    seen_mask: np.ndarray
    train: list[SceneInstance]
    test: list[SceneInstance]


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def synth_text_embeddings(config: TrainConfig, rng: np.random.Generator,
                          jitter: float = 0.1, max_tries: int = 1000) -> np.ndarray:
    """Unit class embeddings, near-orthogonal except for one correlated seen/unseen pair.

    Rejection-sampled until the pair has cosine >= 0.8 and every other pair
    has cosine <= 0.3.
    """
    C, d = config.num_classes, config.dim
    if C > d:
        raise ParameterError(f"cannot place {C} near-orthogonal classes in {d} dimensions")
    c = config.correlated_cos
    for _ in range(max_tries):
        basis, _ = np.linalg.qr(rng.standard_normal((d, d)))
        T = _unit_rows(basis[:C] + jitter * rng.standard_normal((C, d)) / math.sqrt(d))
        if config.correlated_pair is not None:
            s, u = config.correlated_pair
            T[u] = c * T[s] + math.sqrt(1.0 - c * c) * T[u]
            T[u] /= np.linalg.norm(T[u])
        cos = T @ T.T
        np.fill_diagonal(cos, -1.0)
        if config.correlated_pair is not None:
            s, u = config.correlated_pair
            if cos[s, u] < 0.8:
                continue
            cos[s, u] = cos[u, s] = -1.0
        if cos.max() <= 0.3:
            return T
    raise ParameterError("could not sample text embeddings meeting the cosine constraints")


def _partition(H: int, W: int, G: int, rng: np.random.Generator) -> np.ndarray:
    """Guillotine-cut the H x W grid into G axis-aligned rectangles; returns region ids."""
    rects = [(0, H, 0, W)]
    while len(rects) < G:
        areas = [(r1 - r0) * (c1 - c0) for r0, r1, c0, c1 in rects]
        i = int(np.argmax(areas))
        r0, r1, c0, c1 = rects.pop(i)
        horizontal = (r1 - r0) > 1 and ((c1 - c0) == 1 or rng.random() < 0.5)
        if horizontal:
            cut = int(rng.integers(r0 + 1, r1))
            rects += [(r0, cut, c0, c1), (cut, r1, c0, c1)]
        else:
            cut = int(rng.integers(c0 + 1, c1))
            rects += [(r0, r1, c0, cut), (r0, r1, cut, c1)]
    ids = np.empty((H, W), dtype=np.int64)
    for k, (r0, r1, c0, c1) in enumerate(rects):
        ids[r0:r1, c0:c1] = k
    return ids


def synth_scene(config: TrainConfig, T: np.ndarray, rng: np.random.Generator) -> SceneInstance:
    C, S = config.num_classes, config.num_seen
    H, W, G = config.height, config.width, config.regions_per_scene
    G = min(G, C)
    while True:
        classes = rng.choice(C, size=G, replace=False)
        if np.any(classes < S):
            break
    regions = _partition(H, W, G, rng)
    label_map = np.asarray(classes)[regions]
    noise = config.feature_noise * rng.standard_normal((H, W, T.shape[1]))
    feats = _unit_rows(T[label_map] + noise)
    seen = [k for k in range(G) if classes[k] < S]
    gt_masks = np.stack([(regions == k).ravel().astype(np.float64) for k in seen])
    return SceneInstance(
        features=np.ascontiguousarray(feats.transpose(2, 0, 1)),
        gt_masks=gt_masks,
        gt_labels=np.asarray([classes[k] for k in seen], dtype=np.int64),
        label_map=label_map,
        classes=tuple(sorted(int(c) for c in classes)),
    )


def attach_pseudo_labels(scene: SceneInstance, T: np.ndarray, config: TrainConfig) -> None:
    """Pseudo unseen labels from each region's mean feature as its proposal embedding."""
    S = config.num_seen
    if config.num_unseen == 0:
        return
    X = scene.pixels
    flat = scene.label_map.ravel()
    emb = _unit_rows(np.stack([X[flat == c].mean(axis=0) for c in scene.classes]))
    res = pseudo_labels(emb, T[S:], config.pseudo_threshold, config.logit_scale,
                        unseen_ids=np.arange(S, config.num_classes))
    scene.pseudo_unseen = res.labels


def synth_scenario(config: TrainConfig, seed: int | None = None) -> Scenario:
    rng = np.random.default_rng(config.seed if seed is None else seed)
    T = synth_text_embeddings(config, rng)
    train = [synth_scene(config, T, rng) for _ in range(config.num_train_scenes)]
    test = [synth_scene(config, T, rng) for _ in range(config.num_eval_scenes)]
    for s in train:
        attach_pseudo_labels(s, T, config)
    seen = np.arange(config.num_classes) < config.num_seen
    return Scenario(T, seen, train, test)


@dataclass
class ToyModel:
    Q: np.ndarray  # N x d queries
    W_c: np.ndarray  # d x d class head
    W_m: np.ndarray  # d x d mask head
    t_bg: np.ndarray | None = None  # learned background text embedding (baseline only)

    @classmethod
    def init(cls, config: TrainConfig, rng: np.random.Generator) -> "ToyModel":
        N, d = config.num_queries, config.dim
        Q = config.query_scale * math.sqrt(d) * _unit_rows(rng.standard_normal((N, d)))
        noise_c = rng.standard_normal((d, d)) / math.sqrt(d)
        noise_m = rng.standard_normal((d, d)) / math.sqrt(d)
        if config.head_init == "identity":
            W_c = np.eye(d) + config.head_noise * noise_c
            W_m = config.mask_scale * (np.eye(d) + config.head_noise * noise_m)
        else:
            W_c = noise_c
            W_m = config.mask_scale * noise_m
        t_bg = None
        if config.mode == "baseline-bg-embedding":
            t_bg = _unit_rows(rng.standard_normal(d))
        return cls(Q, W_c, W_m, t_bg)

    def params(self) -> dict[str, np.ndarray]:
        p = {"Q": self.Q, "W_c": self.W_c, "W_m": self.W_m}
        if self.t_bg is not None:
            p["t_bg"] = self.t_bg
        return p

    def copy(self) -> "ToyModel":
        return ToyModel(**{k: v.copy() for k, v in self.params().items()})


@dataclass
class ForwardCache:
    X: np.ndarray
    A: np.ndarray
    Z: np.ndarray
    Ec: np.ndarray
    Em: np.ndarray
    text: np.ndarray  # rows compared against, incl. background when present
    R: np.ndarray  # rows x N
    logits: np.ndarray  # N x HW
    M: np.ndarray


def forward(model: ToyModel, scene: SceneInstance, T: np.ndarray) -> ForwardCache:
    """R (C x N, or (C+1) x N with the background row) and proposals M (N x HW)."""
    X = scene.pixels
    d = X.shape[1]
    A = softmax_temp(model.Q @ X.T / math.sqrt(d), 1.0, axis=1)
    Z = A @ X
    Ec = Z @ model.W_c
    Em = Z @ model.W_m
    text = T if model.t_bg is None else np.vstack([T, model.t_bg])
    en = np.linalg.norm(Ec, axis=1)
    tn = np.linalg.norm(text, axis=1)
    R = (text / tn[:, None]) @ (Ec / en[:, None]).T
    logits = Em @ X.T
    return ForwardCache(X, A, Z, Ec, Em, text, R, logits, sigmoid_map(logits))


def backward(model: ToyModel, cache: ForwardCache, dR: np.ndarray,
             dlogits: np.ndarray) -> dict[str, np.ndarray]:
    X, A, Z, Ec = cache.X, cache.A, cache.Z, cache.Ec
    d = X.shape[1]
    en = np.linalg.norm(Ec, axis=1, keepdims=True)
    e_hat = Ec / en
    tn = np.linalg.norm(cache.text, axis=1, keepdims=True)
    t_hat = cache.text / tn
    g_hat = dR.T @ t_hat  # N x d
    dEc = (g_hat - np.sum(g_hat * e_hat, axis=1, keepdims=True) * e_hat) / en
    dEm = dlogits @ X
    grads = {
        "W_c": Z.T @ dEc,
        "W_m": Z.T @ dEm,
    }
    dZ = dEc @ model.W_c.T + dEm @ model.W_m.T
    dA = dZ @ X.T
    dS = A * (dA - np.sum(dA * A, axis=1, keepdims=True))
    grads["Q"] = dS @ X / math.sqrt(d)
    if model.t_bg is not None:
        gt_bg = dR[-1] @ e_hat
        th = t_hat[-1]
        grads["t_bg"] = (gt_bg - (gt_bg @ th) * th) / tn[-1, 0]
    return grads


def image_labels(scene: SceneInstance, config: TrainConfig) -> ImageLabelSets:
    S = config.num_seen
    seen_present = {c for c in scene.classes if c < S}
    source = config.effective_unseen_labels
    if source == "gt":
        unseen = {c for c in scene.classes if c >= S}
    elif source == "pseudo":
        unseen = set(scene.pseudo_unseen)
    else:
        unseen = set()
    return ImageLabelSets.from_positives(seen_present | unseen, config.num_classes)


@dataclass
class SceneLoss:
    total: LossReport
    class_value: float
    mask_value: float
    rank_value: float
    cache: ForwardCache


def scene_loss(model: ToyModel, scene: SceneInstance, T: np.ndarray,
               config: TrainConfig) -> SceneLoss:
    """Weighted loss of one scene under a fresh matching, with gradients on R and logits."""
    w = config.weights
    mk = config.mask
    cache = forward(model, scene, T)
    C = T.shape[0]
    R = cache.R[:C]
    mask_kw = dict(focal_gamma=mk.focal_gamma, focal_alpha=mk.focal_alpha,
                   focal_weight=mk.focal_weight, dice_weight=mk.dice_weight,
                   dice_eps=mk.dice_eps)
    labels = image_labels(scene, config)
    mask_cost = asg.mask_match_cost(cache.M, scene.gt_masks, **mask_kw)
    if config.matching == "combined":
        class_labels = scene.gt_labels
        class_match = mask_match = asg.hungarian(
            asg.class_match_cost(R, class_labels) + mask_cost)
    else:
        # class embeddings are matched to the image-level label set, masks to the
        # class-agnostic seen masks; the two matchings are independent
        class_labels = np.array(sorted(labels.positives), dtype=np.int64)
        class_match = asg.hungarian(asg.class_match_cost(R, class_labels))
        mask_match = asg.hungarian(mask_cost)

    if config.mode == "baseline-bg-embedding":
        cls_rep = losses.bg_embedding_class_loss(
            cache.R, class_match, w.temperature, class_labels, config.bg_embedding_weight)
    else:
        cls_rep = losses.bg_aware_class_loss(R, class_match, w, class_labels)
    mask_rep = losses.mask_loss(cache.logits, scene.gt_masks, mask_match, logits=True, **mask_kw)
    rank_rep = None
    if "rank" in config.mode:
        rank_rep = losses.ranking_loss_image(R, labels)
        if rank_rep.gradients["R"].shape != cache.R.shape:
            g = np.zeros_like(cache.R)
            g[:C] = rank_rep.gradients["R"]
            rank_rep.gradients["R"] = g
    total = losses.total_loss(cls_rep, mask_rep, rank_rep, w)
    return SceneLoss(total, cls_rep.value, mask_rep.value,
                     0.0 if rank_rep is None else rank_rep.value, cache)


def batch_loss_and_grads(model: ToyModel, scenes, T, config: TrainConfig):
    B = len(scenes)
    grads = {k: np.zeros_like(v) for k, v in model.params().items()}
    parts = np.zeros(4)
    for scene in scenes:  # fixed order keeps the reduction bit-deterministic
        sl = scene_loss(model, scene, T, config)
        g = backward(model, sl.cache, sl.total.gradients["R"], sl.total.gradients["logits"])
        for k in grads:
            grads[k] += g[k] / B
        parts += np.array([sl.total.value, sl.class_value, sl.mask_value, sl.rank_value]) / B
    return parts, grads


def predict(model: ToyModel, scene: SceneInstance, T: np.ndarray, temperature: float) -> np.ndarray:
    """Label map from the weighted sum of proposals; the background row, if any, is dropped."""
    cache = forward(model, scene, T)
    p = class_probabilities(cache.R, temperature)[: T.shape[0]]
    H, W = scene.label_map.shape
    return np.argmax(p @ cache.M, axis=0).reshape(H, W)


def unseen_to_seen_fraction(preds, scenes, num_seen: int) -> float:
    """Share of unseen-class pixels predicted as some seen class."""
    hit = tot = 0
    for pred, scene in zip(preds, scenes):
        un = scene.label_map >= num_seen
        tot += int(un.sum())
        hit += int((pred[un] < num_seen).sum())
    return hit / tot if tot else 0.0


@dataclass
class TrainingHistory:
    config: TrainConfig
    rows: list[tuple[int, float, float, float, float]] = field(default_factory=list)
    report: IoUReport | None = None
    unseen_to_seen: float | None = None
    model: ToyModel | None = None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_COLUMNS)
            for step, *vals in self.rows:
                w.writerow([step] + [repr(float(v)) for v in vals])

    def csv_text(self) -> str:
        lines = [",".join(HISTORY_COLUMNS)]
        lines += [",".join([str(s)] + [repr(float(v)) for v in vals]) for s, *vals in self.rows]
        return "\n".join(lines) + "\n"


class _AdamW:
    def __init__(self, lr, weight_decay, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.wd, self.b1, self.b2, self.eps = lr, weight_decay, b1, b2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        for k, p in params.items():
            g = grads[k]
            m = self.m[k] = self.b1 * self.m.get(k, np.zeros_like(p)) + (1 - self.b1) * g
            v = self.v[k] = self.b2 * self.v.get(k, np.zeros_like(p)) + (1 - self.b2) * g * g
            mh = m / (1 - self.b1**self.t)
            vh = v / (1 - self.b2**self.t)
            p -= self.lr * (mh / (np.sqrt(vh) + self.eps) + self.wd * p)


def evaluate_model(model: ToyModel, scenario: Scenario, config: TrainConfig):
    preds = [predict(model, s, scenario.text, config.eval_temperature) for s in scenario.test]
    report = evaluate(((p, s.label_map) for p, s in zip(preds, scenario.test)),
                      config.num_classes, scenario.seen_mask)
    return report, unseen_to_seen_fraction(preds, scenario.test, config.num_seen)


def train_toy(config: TrainConfig, scenario: Scenario | None = None) -> TrainingHistory:
    """Plain gradient descent (or AdamW) on Q, W_c, W_m; returns per-step losses and held-out IoU."""
    scenario = scenario or synth_scenario(config)
    T = scenario.text
    rng = np.random.default_rng([config.seed, 1])
    model = ToyModel.init(config, rng)
    if model.t_bg is not None:
        model.t_bg = np.asarray(model.t_bg, dtype=np.float64)
    opt = _AdamW(config.learning_rate, config.weight_decay) if config.optimizer == "adamw" else None
    hist = TrainingHistory(config)
    n_train = len(scenario.train)
    for step in range(config.steps):
        idx = rng.choice(n_train, size=min(config.batch_size, n_train), replace=False)
        parts, grads = batch_loss_and_grads(model, [scenario.train[i] for i in idx], T, config)
        if not np.all(np.isfinite(parts)) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            total, cls, mask, rank = map(float, parts)
            raise TrainingDivergedError(
                f"non-finite loss at step {step}: total={total!r} class={cls!r} "
                f"mask={mask!r} rank={rank!r}"
            )
        hist.rows.append((step, *map(float, parts)))
        params = model.params()
        if opt is not None:
            opt.step(params, grads)
        elif config.learning_rate:
            for k, p in params.items():
                p -= config.learning_rate * grads[k]
        if step % 50 == 0:
            log.debug("step %d total %.5f", step, parts[0])
    hist.report, hist.unseen_to_seen = evaluate_model(model, scenario, config)
    hist.model = model
    return hist


def with_mode(config: TrainConfig, mode: str, **overrides) -> TrainConfig:
    return replace(config, mode=mode, **overrides)
