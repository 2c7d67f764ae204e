"""The channel-grouped three-layer convolutional classifier.

Layer 1 runs a separate width-3 convolution per sub-cluster of channels
(8 filters each), layer 2 one per manipulator cluster (16 filters from the
cluster's concatenated 40 sub-cluster outputs), and layer 3 a single
convolution over all 64 channels (32 filters). ReLU follows every
convolution; global average pooling feeds a 3-class softmax head. Zero
padding keeps the frame count unchanged end to end, so the final feature
maps stay frame-aligned with the input for activation-map feedback.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .errors import ConfigError, ShapeError

N_CLASSES = 3
N_INPUT_CHANNELS = 76
LAYER1_FILTERS = 8
LAYER2_FILTERS = 16
LAYER3_FILTERS = 32
SUBCLUSTER_SIZES = (3, 3, 3, 9, 1)
CLUSTER_NAMES = ("ML", "MR", "SL", "SR")
SUBCLUSTER_ROLES = (
    "cartesian",
    "linear_velocity",
    "rotational_velocity",
    "rotation_matrix",
    "gripper",
)

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class SubCluster:
    name: str
    channels: tuple[int, ...]


@dataclass(frozen=True)
class Cluster:
    name: str
    subclusters: tuple[SubCluster, ...]

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(c for sc in self.subclusters for c in sc.channels)


@dataclass(frozen=True)
class ChannelGrouping:
    """Maps the 76 input channels onto 4 clusters x 5 sub-clusters.

    Cluster order is fixed (ML, MR, SL, SR) and sub-cluster sizes within
    each cluster must be (3, 3, 3, 9, 1); the union of all channel indices
    must be a permutation of 0..75.
    """

    clusters: tuple[Cluster, ...]

    def __post_init__(self):
        if len(self.clusters) != len(CLUSTER_NAMES):
            raise ConfigError(
                f"expected {len(CLUSTER_NAMES)} clusters, got {len(self.clusters)}"
            )
        for cluster in self.clusters:
            sizes = tuple(len(sc.channels) for sc in cluster.subclusters)
            if sizes != SUBCLUSTER_SIZES:
                raise ConfigError(
                    f"cluster {cluster.name!r} sub-cluster sizes {sizes} != "
                    f"{SUBCLUSTER_SIZES}"
                )
        flat = [c for cl in self.clusters for c in cl.channels]
        if sorted(flat) != list(range(N_INPUT_CHANNELS)):
            seen = set()
            dupes = sorted({c for c in flat if c in seen or seen.add(c)})
            if dupes:
                raise ConfigError(f"channel indices used more than once: {dupes}")
            missing = sorted(set(range(N_INPUT_CHANNELS)) - set(flat))
            raise ConfigError(
                f"channel indices must cover 0..{N_INPUT_CHANNELS - 1} exactly once"
                + (f"; missing {missing}" if missing else f"; got {sorted(flat)}")
            )

    def subcluster_list(self) -> list[tuple[str, SubCluster]]:
        """All 20 sub-clusters as (cluster name, sub-cluster), in layer order."""
        return [(cl.name, sc) for cl in self.clusters for sc in cl.subclusters]

    def to_dict(self) -> dict:
        return {
            cl.name: {sc.name: list(sc.channels) for sc in cl.subclusters}
            for cl in self.clusters
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ChannelGrouping":
        clusters = []
        for name in CLUSTER_NAMES:
            if name not in data:
                raise ConfigError(f"grouping is missing cluster {name!r}")
            subs = []
            for role in SUBCLUSTER_ROLES:
                if role not in data[name]:
                    raise ConfigError(f"cluster {name!r} is missing role {role!r}")
                subs.append(SubCluster(role, tuple(int(i) for i in data[name][role])))
            clusters.append(Cluster(name, tuple(subs)))
        return cls(tuple(clusters))


@dataclass
class SkillNet:
    """All learnable parameters plus the grouping that wires them up.

    ``norm_stats`` optionally carries the per-channel (mean, std) computed on
    the training fold so that inference preprocesses inputs identically; it
    is not a learnable parameter.
    """

    grouping: ChannelGrouping
    layer1: list[nn.ConvParams]
    layer2: list[nn.ConvParams]
    layer3: nn.ConvParams
    head: nn.DenseParams
    seed: int | None = None
    norm_stats: tuple[np.ndarray, np.ndarray] | None = None

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        """Flat, ordered view of every learnable tensor (name, array)."""
        out = []
        for idx, conv in enumerate(self.layer1):
            out.append((f"layer1.{idx}.kernels", conv.kernels))
            out.append((f"layer1.{idx}.biases", conv.biases))
        for idx, conv in enumerate(self.layer2):
            out.append((f"layer2.{idx}.kernels", conv.kernels))
            out.append((f"layer2.{idx}.biases", conv.biases))
        out.append(("layer3.kernels", self.layer3.kernels))
        out.append(("layer3.biases", self.layer3.biases))
        out.append(("head.weights", self.head.weights))
        out.append(("head.biases", self.head.biases))
        return out

    def weight_tensor_names(self) -> set[str]:
        """Names of tensors subject to l2 decay (weights, not biases)."""
        return {
            name for name, _ in self.named_tensors() if not name.endswith("biases")
        }

    def parameter_count(self) -> int:
        return sum(int(t.size) for _, t in self.named_tensors())

    def copy(self) -> "SkillNet":
        stats = None
        if self.norm_stats is not None:
            stats = (self.norm_stats[0].copy(), self.norm_stats[1].copy())
        return SkillNet(
            grouping=self.grouping,
            layer1=[nn.ConvParams(c.kernels.copy(), c.biases.copy()) for c in self.layer1],
            layer2=[nn.ConvParams(c.kernels.copy(), c.biases.copy()) for c in self.layer2],
            layer3=nn.ConvParams(self.layer3.kernels.copy(), self.layer3.biases.copy()),
            head=nn.DenseParams(self.head.weights.copy(), self.head.biases.copy()),
            seed=self.seed,
            norm_stats=stats,
        )


def build_model(grouping: ChannelGrouping, seed, dtype=np.float32) -> SkillNet:
    """Glorot-initialise a fresh network; biases start at zero.

    Deterministic per seed (an int or a numpy SeedSequence).
    ``dtype=np.float64`` builds the identical architecture in double
    precision for gradient checking.
    """
    rng = np.random.default_rng(seed)
    layer1 = [
        nn.init_conv(LAYER1_FILTERS, len(sc.channels), rng, dtype)
        for _, sc in grouping.subcluster_list()
    ]
    n_sub = len(SUBCLUSTER_SIZES) * LAYER1_FILTERS  # 40 channels per cluster
    layer2 = [
        nn.init_conv(LAYER2_FILTERS, n_sub, rng, dtype) for _ in grouping.clusters
    ]
    layer3 = nn.init_conv(
        LAYER3_FILTERS, LAYER2_FILTERS * len(grouping.clusters), rng, dtype
    )
    head = nn.init_dense(N_CLASSES, LAYER3_FILTERS, rng, dtype)
    return SkillNet(grouping, layer1, layer2, layer3, head, seed=seed)


@dataclass
class ForwardCache:
    """Every intermediate needed for backprop and for isolation tests."""

    x: np.ndarray
    sub_inputs: list[np.ndarray] = field(default_factory=list)
    sub_stacks: list[np.ndarray] = field(default_factory=list)
    pre1: list[np.ndarray] = field(default_factory=list)
    act1: list[np.ndarray] = field(default_factory=list)  # per cluster, 40 x l
    act1_stacks: list[np.ndarray] = field(default_factory=list)
    pre2: list[np.ndarray] = field(default_factory=list)
    act2: list[np.ndarray] = field(default_factory=list)  # per cluster, 16 x l
    a2: np.ndarray | None = None  # 64 x l
    a2_stack: np.ndarray | None = None
    pre3: np.ndarray | None = None
    a3: np.ndarray | None = None  # 32 x l
    features: np.ndarray | None = None
    logits: np.ndarray | None = None
    probs: np.ndarray | None = None


def forward_cached(model: SkillNet, x: np.ndarray) -> ForwardCache:
    """Full forward pass keeping intermediates; raises ShapeError on bad input."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] != N_INPUT_CHANNELS:
        raise ShapeError(
            f"input must have {N_INPUT_CHANNELS} channels, got shape {x.shape}"
        )
    cache = ForwardCache(x=x)
    conv_idx = 0
    for ci, cluster in enumerate(model.grouping.clusters):
        sub_acts = []
        for sc in cluster.subclusters:
            sub_in = x[list(sc.channels), :]
            stack = nn.shifted_stack(sub_in)
            pre = nn.conv1d_same(sub_in, model.layer1[conv_idx], _stack=stack)
            act = nn.relu(pre)
            cache.sub_inputs.append(sub_in)
            cache.sub_stacks.append(stack)
            cache.pre1.append(pre)
            sub_acts.append(act)
            conv_idx += 1
        a1 = np.concatenate(sub_acts, axis=0)  # 40 x l
        stack1 = nn.shifted_stack(a1)
        cache.act1.append(a1)
        cache.act1_stacks.append(stack1)
        pre2 = nn.conv1d_same(a1, model.layer2[ci], _stack=stack1)
        cache.pre2.append(pre2)
        cache.act2.append(nn.relu(pre2))
    cache.a2 = np.concatenate(cache.act2, axis=0)  # 64 x l
    cache.a2_stack = nn.shifted_stack(cache.a2)
    cache.pre3 = nn.conv1d_same(cache.a2, model.layer3, _stack=cache.a2_stack)
    cache.a3 = nn.relu(cache.pre3)
    cache.features = nn.gap(cache.a3)
    cache.logits = nn.dense_logits(cache.features, model.head)
    cache.probs = nn.softmax(cache.logits)
    return cache


def forward(
    model: SkillNet, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Classify one series; returns (logits, probs, final feature maps 32 x l)."""
    cache = forward_cached(model, x)
    return cache.logits, cache.probs, cache.a3


def predict(model: SkillNet, x: np.ndarray) -> int:
    """Argmax class index; ties resolve to the lowest index."""
    _, probs, _ = forward(model, x)
    return int(np.argmax(probs))


def backward(
    model: SkillNet, cache: ForwardCache, dlogits: np.ndarray
) -> dict[str, np.ndarray]:
    """Backpropagate a logit gradient through the cached forward pass.

    Returns a gradient per learnable tensor, keyed like ``named_tensors``.
    """
    grads: dict[str, np.ndarray] = {}
    dw, db, dfeat = nn.dense_backward(cache.features, model.head, dlogits)
    grads["head.weights"] = dw
    grads["head.biases"] = db

    da3 = nn.gap_backward(cache.a3, dfeat)
    dpre3 = nn.relu_backward(cache.pre3, da3)
    dk3, db3, da2 = nn.conv1d_backward(
        cache.a2, model.layer3, dpre3, _stack=cache.a2_stack
    )
    grads["layer3.kernels"] = dk3
    grads["layer3.biases"] = db3

    n_clusters = len(model.grouping.clusters)
    sub_per_cluster = len(SUBCLUSTER_SIZES)
    for ci in range(n_clusters):
        d_act2 = da2[ci * LAYER2_FILTERS : (ci + 1) * LAYER2_FILTERS, :]
        dpre2 = nn.relu_backward(cache.pre2[ci], d_act2)
        dk2, db2, da1 = nn.conv1d_backward(
            cache.act1[ci], model.layer2[ci], dpre2, _stack=cache.act1_stacks[ci]
        )
        grads[f"layer2.{ci}.kernels"] = dk2
        grads[f"layer2.{ci}.biases"] = db2
        for si in range(sub_per_cluster):
            conv_idx = ci * sub_per_cluster + si
            d_act1 = da1[si * LAYER1_FILTERS : (si + 1) * LAYER1_FILTERS, :]
            dpre1 = nn.relu_backward(cache.pre1[conv_idx], d_act1)
            dk1, db1, _ = nn.conv1d_backward(
                cache.sub_inputs[conv_idx],
                model.layer1[conv_idx],
                dpre1,
                _stack=cache.sub_stacks[conv_idx],
            )
            grads[f"layer1.{conv_idx}.kernels"] = dk1
            grads[f"layer1.{conv_idx}.biases"] = db1
    return grads


def preprocess(model: SkillNet, x: np.ndarray) -> np.ndarray:
    """Apply the model's stored per-channel normalisation, if any."""
    if model.norm_stats is None:
        return np.asarray(x, dtype=np.float32)
    mean, std = model.norm_stats
    return ((np.asarray(x) - mean[:, None]) / std[:, None]).astype(np.float32)


def save_checkpoint(model: SkillNet, path) -> None:
    """Write the model as a single JSON document.

    Tensors are nested arrays in row-major [out][in][tap] order; floats are
    serialised at full precision so a load reproduces predictions
    bit-identically.
    """
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "seed": model.seed,
        "grouping": model.grouping.to_dict(),
        "shapes": {name: list(t.shape) for name, t in model.named_tensors()},
        "normalization": None
        if model.norm_stats is None
        else {
            "mean": [float(v) for v in model.norm_stats[0]],
            "std": [float(v) for v in model.norm_stats[1]],
        },
        "params": {name: t.tolist() for name, t in model.named_tensors()},
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_checkpoint(path) -> SkillNet:
    """Inverse of ``save_checkpoint``; validates version, shapes and grouping."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"checkpoint {path} is not valid JSON: {exc}") from exc
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ConfigError(
            f"unsupported checkpoint version {doc.get('format_version')!r}"
        )
    grouping = ChannelGrouping.from_dict(doc["grouping"])
    params = doc["params"]

    def tensor(name):
        arr = np.array(params[name], dtype=np.float32)
        expected = tuple(doc["shapes"][name])
        if arr.shape != expected:
            raise ConfigError(
                f"checkpoint tensor {name} has shape {arr.shape}, header says "
                f"{expected}"
            )
        return arr

    n_sub = len(grouping.subcluster_list())
    layer1 = [
        nn.ConvParams(tensor(f"layer1.{i}.kernels"), tensor(f"layer1.{i}.biases"))
        for i in range(n_sub)
    ]
    layer2 = [
        nn.ConvParams(tensor(f"layer2.{i}.kernels"), tensor(f"layer2.{i}.biases"))
        for i in range(len(grouping.clusters))
    ]
    layer3 = nn.ConvParams(tensor("layer3.kernels"), tensor("layer3.biases"))
    head = nn.DenseParams(tensor("head.weights"), tensor("head.biases"))
    stats = None
    if doc.get("normalization"):
        stats = (
            np.array(doc["normalization"]["mean"], dtype=np.float32),
            np.array(doc["normalization"]["std"], dtype=np.float32),
        )
    return SkillNet(
        grouping, layer1, layer2, layer3, head, seed=doc.get("seed"), norm_stats=stats
    )
