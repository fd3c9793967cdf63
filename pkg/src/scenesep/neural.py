"""Forward-only, seeded toy networks for the separation pipeline.

Everything here is deterministic given a 64-bit seed: parameters are
Glorot-uniform draws from a fixed-order PCG64 stream, and every forward
pass is a pure numpy computation.  The shapes track the full-scale design
(4-head graph attention into 512, 1024-to-512 edge convolution, 512-d GRU
run for one step more than the source count, a 7-down / 7-up mask decoder
with a 2x2x512 bottleneck) while the classifier trunks are slimmed to
4-stage conv stacks.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import tensorio
from .scenegraph import SceneGraph

FEATURE_DIM = 512
HEADS = 4
HEAD_DIM = FEATURE_DIM // HEADS
EMBED_DIM = 2 * FEATURE_DIM
HIDDEN_DIM = 512
LEAKY_SLOPE = 0.2
SPEC_SIZE = 256

ENC_CHANNELS = (16, 32, 64, 128, 256, 512, 512)
DEC_CHANNELS = (512, 256, 128, 64, 32, 16, 1)
CLS_CHANNELS = (8, 16, 32, 64)


def _leaky(x):
    return np.where(x >= 0, x, LEAKY_SLOPE * x)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _softmax(x):
    shifted = np.exp(x - x.max(axis=-1, keepdims=True))
    return shifted / shifted.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class NetParams:
    """Named weight arrays plus the metadata needed to rebuild them."""

    seed: int
    num_audio_classes: int
    weights: dict = field(repr=False)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.weights[name]


def _glorot(rng, fan_in, fan_out, shape):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_params(seed: int, num_audio_classes: int = 15) -> NetParams:
    """Create all network parameters from one seed (byte-identical per seed)."""
    rng = np.random.default_rng(seed)
    w = {}

    for h in range(HEADS):
        w[f"gat.head{h}.weight"] = _glorot(
            rng, FEATURE_DIM, HEAD_DIM, (FEATURE_DIM, HEAD_DIM)
        )
        w[f"gat.head{h}.att_src"] = _glorot(rng, HEAD_DIM, 1, (HEAD_DIM,))
        w[f"gat.head{h}.att_dst"] = _glorot(rng, HEAD_DIM, 1, (HEAD_DIM,))

    w["edgeconv.weight"] = _glorot(
        rng, 2 * FEATURE_DIM, FEATURE_DIM, (2 * FEATURE_DIM, FEATURE_DIM)
    )
    w["edgeconv.bias"] = np.zeros(FEATURE_DIM)

    w["gru.input.weight"] = _glorot(rng, EMBED_DIM, HIDDEN_DIM, (EMBED_DIM, HIDDEN_DIM))
    w["gru.input.bias"] = np.zeros(HIDDEN_DIM)
    for gate in ("z", "r", "h"):
        w[f"gru.{gate}.w"] = _glorot(rng, HIDDEN_DIM, HIDDEN_DIM, (HIDDEN_DIM, HIDDEN_DIM))
        w[f"gru.{gate}.u"] = _glorot(rng, HIDDEN_DIM, HIDDEN_DIM, (HIDDEN_DIM, HIDDEN_DIM))
        w[f"gru.{gate}.b"] = np.zeros(HIDDEN_DIM)

    cin = 1
    for i, cout in enumerate(ENC_CHANNELS, start=1):
        w[f"mask.enc{i}.weight"] = _glorot(rng, 16 * cin, 16 * cout, (4, 4, cin, cout))
        w[f"mask.enc{i}.bias"] = np.zeros(cout)
        cin = cout
    cin = ENC_CHANNELS[-1] + FEATURE_DIM
    for i, cout in enumerate(DEC_CHANNELS, start=1):
        w[f"mask.dec{i}.weight"] = _glorot(rng, 16 * cin, 16 * cout, (4, 4, cin, cout))
        w[f"mask.dec{i}.bias"] = np.zeros(cout)
        # next decoder input: this output concatenated with the skip at its resolution
        skip = ENC_CHANNELS[len(ENC_CHANNELS) - 1 - i] if i < len(DEC_CHANNELS) else 0
        cin = cout + skip

    for prefix in ("aud", "dir"):
        cin = 1
        for i, cout in enumerate(CLS_CHANNELS, start=1):
            w[f"{prefix}.conv{i}.weight"] = _glorot(
                rng, 16 * cin, 16 * cout, (4, 4, cin, cout)
            )
            w[f"{prefix}.conv{i}.bias"] = np.zeros(cout)
            cin = cout
    w["aud.out.weight"] = _glorot(
        rng, CLS_CHANNELS[-1], num_audio_classes, (CLS_CHANNELS[-1], num_audio_classes)
    )
    w["aud.out.bias"] = np.zeros(num_audio_classes)
    fc_in = CLS_CHANNELS[-1] + FEATURE_DIM
    w["dir.fc.weight"] = _glorot(rng, fc_in, 128, (fc_in, 128))
    w["dir.fc.bias"] = np.zeros(128)
    for classes in (10, 28):
        w[f"dir.out{classes}.weight"] = _glorot(rng, 128, classes, (128, classes))
        w[f"dir.out{classes}.bias"] = np.zeros(classes)

    return NetParams(seed=seed, num_audio_classes=num_audio_classes, weights=w)


def _conv2d(x, weight, bias):
    """4x4 / stride 2 / pad 1 convolution of an (H, W, Cin) map."""
    h, wdt, cin = x.shape
    cout = weight.shape[3]
    ho, wo = (h - 2) // 2 + 1, (wdt - 2) // 2 + 1
    padded = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    out = np.broadcast_to(bias, (ho, wo, cout)).copy()
    for ki in range(4):
        for kj in range(4):
            patch = padded[ki::2, kj::2][:ho, :wo]
            out += (patch.reshape(-1, cin) @ weight[ki, kj]).reshape(ho, wo, cout)
    return out


def _conv_transpose2d(x, weight, bias):
    """4x4 / stride 2 / pad 1 transposed convolution; doubles spatial dims."""
    h, wdt, cin = x.shape
    cout = weight.shape[3]
    scratch = np.zeros((2 * h + 2, 2 * wdt + 2, cout))
    flat = x.reshape(-1, cin)
    for ki in range(4):
        for kj in range(4):
            scratch[ki : ki + 2 * h : 2, kj : kj + 2 * wdt : 2] += (
                flat @ weight[ki, kj]
            ).reshape(h, wdt, cout)
    return scratch[1 : 1 + 2 * h, 1 : 1 + 2 * wdt] + bias


def _graph_arrays(graph):
    if isinstance(graph, SceneGraph):
        return graph.features(), graph.adjacency
    features, adjacency = graph
    return np.asarray(features, dtype=float), np.asarray(adjacency, dtype=float)


def gat_forward(graph, params: NetParams) -> np.ndarray:
    """Multi-head graph attention over the node features.

    Attention logits are the usual source/destination scores, additively
    biased by log(edge weight) so spatially close nodes attend more;
    zero-weight edges get -inf bias and drop out of the softmax.  The
    four 128-d heads are concatenated back to 512 per node.
    """
    x, adjacency = _graph_arrays(graph)
    if x.shape[1] != FEATURE_DIM:
        raise ValueError(f"node features must be {FEATURE_DIM}-dim, got {x.shape[1]}")
    with np.errstate(divide="ignore"):
        bias = np.log(adjacency)
    heads = []
    for h in range(HEADS):
        q = x @ params[f"gat.head{h}.weight"]
        logits = _leaky(
            (q @ params[f"gat.head{h}.att_src"])[:, None]
            + (q @ params[f"gat.head{h}.att_dst"])[None, :]
        )
        logits = logits + bias
        att = np.exp(logits - logits.max(axis=1, keepdims=True))
        att /= att.sum(axis=1, keepdims=True)
        heads.append(att @ q)
    return _leaky(np.concatenate(heads, axis=1))


def edgeconv_forward(features, adjacency, params: NetParams) -> np.ndarray:
    """Edge convolution: max over neighbors of a dense map of (x_i, x_j - x_i).

    The 1024-to-512 edge transform is evaluated as two 512-d projections
    (coefficients of x_i and x_j), which is exactly the concatenated form.
    Nodes with no positive-weight neighbor fall back to a self edge.
    """
    x = np.asarray(features, dtype=float)
    adjacency = np.asarray(adjacency, dtype=float)
    if x.shape[1] != FEATURE_DIM:
        raise ValueError(f"node features must be {FEATURE_DIM}-dim, got {x.shape[1]}")
    n = x.shape[0]
    w_self = params["edgeconv.weight"][:FEATURE_DIM]
    w_diff = params["edgeconv.weight"][FEATURE_DIM:]
    part_i = x @ (w_self - w_diff)
    part_j = x @ w_diff
    edges = _leaky(part_i[:, None, :] + part_j[None, :, :] + params["edgeconv.bias"])

    neighbors = (adjacency > 0) & ~np.eye(n, dtype=bool)
    lonely = ~neighbors.any(axis=1)
    neighbors[lonely, lonely] = True
    masked = np.where(neighbors[:, :, None], edges, -np.inf)
    return masked.max(axis=1)


def pool(features) -> np.ndarray:
    """Whole-graph embedding: global max pool and mean pool, concatenated."""
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("pool needs a nonempty (n, d) feature matrix")
    return np.concatenate([x.max(axis=0), x.mean(axis=0)])


def gru_rollout(embedding, n_sources: int, params: NetParams) -> np.ndarray:
    """Run the GRU for n_sources + 1 steps on the projected graph embedding.

    The extra step accounts for a dedicated background source.  Every
    hidden state is unit-normalized before being emitted.
    """
    if n_sources < 1:
        raise ValueError(f"need at least one source, got {n_sources}")
    u = np.asarray(embedding, dtype=float) @ params["gru.input.weight"]
    u = u + params["gru.input.bias"]
    h = np.zeros(HIDDEN_DIM)
    outputs = []
    for _ in range(n_sources + 1):
        z = _sigmoid(u @ params["gru.z.w"] + h @ params["gru.z.u"] + params["gru.z.b"])
        r = _sigmoid(u @ params["gru.r.w"] + h @ params["gru.r.u"] + params["gru.r.b"])
        cand = np.tanh(
            u @ params["gru.h.w"] + (r * h) @ params["gru.h.u"] + params["gru.h.b"]
        )
        h = (1.0 - z) * h + z * cand
        norm = np.linalg.norm(h)
        if norm == 0:
            raise ValueError("GRU hidden state collapsed to zero")
        outputs.append(h / norm)
    return np.stack(outputs)


def mask_decoder_forward(magnitude, embedding, params: NetParams) -> np.ndarray:
    """U-shaped mask decoder conditioned on one source embedding.

    Seven stride-2 encoder convs take the 256x256 magnitude down to
    2x2x512; the bottleneck concatenates the 512-d embedding tiled 2x2;
    seven transposed convs (with resolution-matched skip connections)
    bring it back to 256x256, through a sigmoid.
    """
    x = np.asarray(magnitude, dtype=float)
    if x.shape != (SPEC_SIZE, SPEC_SIZE):
        raise ValueError(f"mask decoder expects {SPEC_SIZE}x{SPEC_SIZE}, got {x.shape}")
    y = np.asarray(embedding, dtype=float).reshape(FEATURE_DIM)

    act = x[:, :, None]
    skips = []
    for i in range(1, 8):
        act = _leaky(_conv2d(act, params[f"mask.enc{i}.weight"], params[f"mask.enc{i}.bias"]))
        skips.append(act)

    tiled = np.broadcast_to(y, (2, 2, FEATURE_DIM))
    act = np.concatenate([skips[-1], tiled], axis=2)
    for i in range(1, 8):
        act = _conv_transpose2d(act, params[f"mask.dec{i}.weight"], params[f"mask.dec{i}.bias"])
        if i < 7:
            act = np.concatenate([_leaky(act), skips[6 - i]], axis=2)
    return _sigmoid(act[:, :, 0])


def _conv_embed(x, params: NetParams, prefix: str) -> np.ndarray:
    act = np.asarray(x, dtype=float)[:, :, None]
    for i in range(1, len(CLS_CHANNELS) + 1):
        act = _leaky(
            _conv2d(act, params[f"{prefix}.conv{i}.weight"], params[f"{prefix}.conv{i}.bias"])
        )
    return act.mean(axis=(0, 1))


def audio_classifier_forward(estimate, params: NetParams) -> np.ndarray:
    """Sound-class distribution for one separated magnitude spectrogram."""
    estimate = np.asarray(estimate, dtype=float)
    if estimate.shape != (SPEC_SIZE, SPEC_SIZE):
        raise ValueError(
            f"audio classifier expects {SPEC_SIZE}x{SPEC_SIZE}, got {estimate.shape}"
        )
    pooled = _conv_embed(estimate, params, "aud")
    return _softmax(pooled @ params["aud.out.weight"] + params["aud.out.bias"])


def direction_classifier_forward(
    estimate_slice, embedding, params: NetParams, direction_classes: int
) -> np.ndarray:
    """Direction-class distribution for one window slice of a separated source."""
    if direction_classes not in (10, 28):
        raise ValueError(f"direction class count must be 10 or 28, got {direction_classes}")
    estimate_slice = np.asarray(estimate_slice, dtype=float)
    if estimate_slice.ndim != 2 or estimate_slice.shape[0] != SPEC_SIZE:
        raise ValueError(
            f"slice must be ({SPEC_SIZE}, T_w), got {estimate_slice.shape}"
        )
    if estimate_slice.shape[1] < 16:
        raise ValueError(f"window slice too narrow: {estimate_slice.shape[1]} frames")
    pooled = _conv_embed(estimate_slice, params, "dir")
    joined = np.concatenate([pooled, np.asarray(embedding, dtype=float).reshape(-1)])
    hidden = _leaky(joined @ params["dir.fc.weight"] + params["dir.fc.bias"])
    return _softmax(
        hidden @ params[f"dir.out{direction_classes}.weight"]
        + params[f"dir.out{direction_classes}.bias"]
    )


def window_slices(total_frames: int, num_windows: int):
    """Contiguous frame ranges assigning frame f to window floor(f / (T / W)).

    Remainder frames join the last slice; the ranges cover every frame
    exactly once and have equal width whenever W divides T.
    """
    if num_windows < 1 or total_frames < num_windows:
        raise ValueError(
            f"cannot cut {total_frames} frames into {num_windows} windows"
        )
    width = total_frames / num_windows
    owner = np.minimum((np.arange(total_frames) / width).astype(int), num_windows - 1)
    bounds = [0] + [int(np.searchsorted(owner, w + 1)) for w in range(num_windows)]
    return [(bounds[w], bounds[w + 1]) for w in range(num_windows)]


def pipeline_forward(
    graph: SceneGraph,
    pooled_magnitude,
    params: NetParams,
    num_windows: int,
    direction_classes: int = 10,
):
    """Full forward pass: graph encoding, GRU rollout, masks, and classifiers.

    Returns a dict with the unit embeddings ("embeddings", one row per
    source including the background), per-source masks and masked
    estimates, the audio-class table ("audio_probs"), and the per-window
    direction tables ("dir_probs", shape (n+1, W, D)).
    """
    pooled_magnitude = np.asarray(pooled_magnitude, dtype=float)
    node_feats = gat_forward(graph, params)
    node_feats = edgeconv_forward(node_feats, graph.adjacency, params)
    zeta = pool(node_feats)
    embeddings = gru_rollout(zeta, len(graph.auditory_index), params)

    masks = [mask_decoder_forward(pooled_magnitude, y, params) for y in embeddings]
    estimates = [m * pooled_magnitude for m in masks]
    audio_probs = np.stack([audio_classifier_forward(e, params) for e in estimates])

    slices = window_slices(pooled_magnitude.shape[1], num_windows)
    dir_probs = np.stack(
        [
            np.stack(
                [
                    direction_classifier_forward(
                        est[:, start:stop], y, params, direction_classes
                    )
                    for start, stop in slices
                ]
            )
            for est, y in zip(estimates, embeddings)
        ]
    )
    return {
        "embeddings": embeddings,
        "masks": masks,
        "estimates": estimates,
        "audio_probs": audio_probs,
        "dir_probs": dir_probs,
    }


def save_params(params: NetParams, directory):
    """Persist parameters as one array file per weight plus a params.json index."""
    os.makedirs(directory, exist_ok=True)
    index = {
        "seed": params.seed,
        "num_audio_classes": params.num_audio_classes,
        "weights": {},
    }
    for name, array in params.weights.items():
        fname = name.replace(".", "_") + ".a3mp"
        tensorio.write_array(array, os.path.join(directory, fname))
        index["weights"][name] = fname
    tensorio.write_json(index, os.path.join(directory, "params.json"))


def load_params(directory) -> NetParams:
    """Load parameters saved by save_params (float32 round-trip)."""
    import json

    with open(os.path.join(directory, "params.json")) as handle:
        index = json.load(handle)
    weights = {
        name: tensorio.read_array(os.path.join(directory, fname)).astype(float)
        for name, fname in index["weights"].items()
    }
    return NetParams(
        seed=int(index["seed"]),
        num_audio_classes=int(index["num_audio_classes"]),
        weights=weights,
    )
