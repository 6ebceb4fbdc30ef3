"""Layer stacks with explicit reverse-mode gradients."""
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ConfigurationError, ReceptiveFieldError, StructuralError
from . import layers as L
from .layers import LayerSpec

EXTRACTOR_LAYERS = ("F1", "F2", "F3", "F4", "F5", "pool", "fc1")


@dataclass
class FrameSequence:
    """Feature matrix of one utterance with its labels."""

    frames: np.ndarray
    utterance_id: str = ""
    speaker_id: int = -1
    domain_id: int = -1

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise StructuralError("frames must be a non-empty (T, D) matrix")

    @property
    def n_frames(self):
        return self.frames.shape[0]


@dataclass
class LayerActivations:
    """Outputs of one forward pass, keyed by layer name.

    ``caches`` holds what the backward pass needs (pre-activations, spliced
    contexts, pooling statistics) and is not part of the public surface.
    """

    inputs: np.ndarray
    outputs: dict = field(default_factory=dict)
    caches: dict = field(default_factory=dict)
    start: int = 0

    def __getitem__(self, name):
        return self.outputs[name]

    def __contains__(self, name):
        return name in self.outputs

    @property
    def names(self):
        return list(self.outputs)


class Network:
    """Ordered stack of time-delay, pooling, dense and reversal layers.

    Parameters live in ``params[name]["W"]`` / ``params[name]["b"]``;
    initialisation is Glorot-uniform weights and zero biases from ``seed``.
    """

    def __init__(self, specs, in_dim, seed=0, frame_level_input=True):
        self.specs = [s if isinstance(s, LayerSpec) else LayerSpec(**s) for s in specs]
        self.in_dim = int(in_dim)
        self.frame_level_input = frame_level_input
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            raise StructuralError("layer names must be unique")
        self.dims = self._resolve_dims()
        rng = np.random.default_rng(seed)
        self.params = {}
        for spec, (d_in, d_out) in zip(self.specs, self.dims):
            if spec.kind == "time_delay":
                fan_in = spec.context * d_in
            elif spec.kind == "dense":
                fan_in = d_in
            else:
                continue
            self.params[spec.name] = {
                "W": glorot(rng, fan_in, d_out),
                "b": np.zeros(d_out),
            }

    def _resolve_dims(self):
        dims = []
        d = self.in_dim
        frame_level = self.frame_level_input
        n_pool = 0
        for spec in self.specs:
            if spec.kind == "time_delay":
                if not frame_level:
                    raise StructuralError(f"{spec.name}: time-delay layer after pooling")
                out = spec.out_dim
            elif spec.kind == "stats_pool":
                if not frame_level:
                    raise StructuralError(f"{spec.name}: second pooling layer")
                out = 2 * d
                frame_level = False
                n_pool += 1
            elif spec.kind == "dense":
                if frame_level:
                    raise StructuralError(f"{spec.name}: dense layer before pooling")
                out = spec.out_dim
            else:
                out = d
            dims.append((d, out))
            d = out
        if self.frame_level_input and n_pool != 1:
            raise StructuralError("a frame-level network needs exactly one stats_pool layer")
        return dims

    # -- introspection -------------------------------------------------------

    @property
    def out_dim(self):
        return self.dims[-1][1]

    @property
    def layer_names(self):
        return [s.name for s in self.specs]

    def index(self, name):
        try:
            return self.layer_names.index(name)
        except ValueError:
            raise ConfigurationError(f"unknown layer {name!r}") from None

    def spec(self, name):
        return self.specs[self.index(name)]

    @property
    def receptive_field(self):
        """Minimum number of input frames for one pooled output."""
        return 1 + sum(s.frame_span for s in self.specs)

    def frame_span_before(self, index):
        return sum(s.frame_span for s in self.specs[:index])

    @property
    def trainable_layers(self):
        return [s.name for s in self.specs if s.has_params and s.trainable]

    def set_trainable(self, names):
        """Unfreeze exactly the parameterised layers in ``names``."""
        names = set(names)
        unknown = names - {s.name for s in self.specs if s.has_params}
        if unknown:
            raise ConfigurationError(f"unknown trainable layers: {sorted(unknown)}")
        for s in self.specs:
            if s.has_params:
                s.trainable = s.name in names

    def first_trainable_index(self):
        for i, s in enumerate(self.specs):
            if s.has_params and s.trainable:
                return i
        return len(self.specs)

    def copy(self):
        clone = object.__new__(type(self))
        clone.__dict__.update(self.__dict__)
        clone.specs = [LayerSpec(**vars(s)) for s in self.specs]
        clone.params = {k: {p: v.copy() for p, v in d.items()} for k, d in self.params.items()}
        return clone

    def n_parameters(self):
        return sum(v.size for d in self.params.values() for v in d.values())

    # -- forward ---------------------------------------------------------------

    def forward(self, x, start=0, stop=None):
        """Run layers ``start:stop`` on ``x`` and record every output.

        ``x`` may be a :class:`FrameSequence`, a single ``(T, D)`` matrix, or
        a batch. When ``start > 0`` the input is the output of layer
        ``start - 1`` (used to skip a cached frozen prefix).
        """
        if isinstance(x, FrameSequence):
            x = x.frames
        x = np.asarray(x, dtype=float)
        frame_level = self.frame_level_input and all(
            s.kind != "stats_pool" for s in self.specs[:start])
        if frame_level and x.ndim == 2:
            x = x[None]
        elif not frame_level and x.ndim == 1:
            x = x[None]
        expected = self.dims[start][0]
        if x.shape[-1] != expected:
            raise StructuralError(f"input dim {x.shape[-1]} != expected {expected}")
        stop = len(self.specs) if stop is None else stop
        if frame_level:
            span = sum(s.frame_span for s in self.specs[start:stop])
            if x.shape[1] < span + 1:
                raise ReceptiveFieldError(x.shape[1], self.frame_span_before(start) + span + 1)
        acts = LayerActivations(inputs=x, start=start)
        h = x
        for spec in self.specs[start:stop]:
            cache = {}
            if spec.kind == "time_delay":
                p = self.params[spec.name]
                z, cache["ctx"] = L.time_delay_forward(h, p["W"], p["b"], spec.context, spec.dilation)
                cache["t_in"] = h.shape[1]
            elif spec.kind == "dense":
                p = self.params[spec.name]
                cache["x"] = h
                z = L.dense_forward(h, p["W"], p["b"])
            elif spec.kind == "stats_pool":
                z, cache["pool"] = L.stats_pool_forward(h)
            else:
                z = L.grad_reversal_forward(h)
            if spec.has_params and spec.activation == "relu":
                cache["z"] = z
                h = L.relu(z)
            else:
                h = z
            acts.outputs[spec.name] = h
            acts.caches[spec.name] = cache
        return acts

    # -- backward --------------------------------------------------------------

    def zero_grads(self):
        return {k: {p: np.zeros_like(v) for p, v in d.items()} for k, d in self.params.items()}

    def backward(self, acts, upstream, grl_lambda=1.0, input_grad=False):
        """Reverse-mode gradients of a scalar loss.

        ``upstream`` maps layer names to dLoss/d(output of that layer); several
        taps may be given (e.g. F5 and fc1). Frozen layers get zero gradients
        and the sweep stops once no trainable layer remains below, unless
        ``input_grad`` asks for dLoss/d(input). Returns ``(grads, dinput)``.
        """
        names = [s.name for s in self.specs]
        for name, g in upstream.items():
            if name not in acts.outputs:
                raise StructuralError(f"no activation recorded for layer {name!r}")
            if np.shape(g) != acts.outputs[name].shape:
                raise StructuralError(
                    f"upstream gradient for {name} has shape {np.shape(g)}, "
                    f"expected {acts.outputs[name].shape}")
        grads = self.zero_grads()
        stop = len(names)
        while stop > acts.start and names[stop - 1] not in acts.outputs:
            stop -= 1
        lowest_needed = acts.start if input_grad else max(
            acts.start, min(self.first_trainable_index(), stop))
        tapped = [names.index(n) for n in upstream]
        if not tapped:
            return grads, (np.zeros_like(acts.inputs) if input_grad else None)
        top = max(tapped)
        g = None
        for i in range(top, lowest_needed - 1, -1):
            spec = self.specs[i]
            if spec.name in upstream:
                u = np.asarray(upstream[spec.name], dtype=float)
                g = u.copy() if g is None else g + u
            if g is None:
                continue
            cache = acts.caches[spec.name]
            need_in = i > lowest_needed or input_grad
            train = spec.has_params and spec.trainable
            if spec.has_params and spec.activation == "relu":
                g = L.relu_backward(g, cache["z"])
            if spec.kind == "time_delay":
                dW, db, g_in = L.time_delay_backward(
                    g, cache["ctx"], self.params[spec.name]["W"], spec.context,
                    spec.dilation, cache["t_in"], need_input_grad=need_in, need_param_grad=train)
            elif spec.kind == "dense":
                dW, db, g_in = L.dense_backward(
                    g, cache["x"], self.params[spec.name]["W"], need_input_grad=need_in,
                    need_param_grad=train)
            elif spec.kind == "stats_pool":
                g_in = L.stats_pool_backward(g, cache["pool"]) if need_in else None
            else:
                g_in = L.grad_reversal_backward(g, grl_lambda) if need_in else None
            if train:
                grads[spec.name]["W"] = dW
                grads[spec.name]["b"] = db
            g = g_in
        dinput = None
        if input_grad:
            dinput = g if g is not None else np.zeros_like(acts.inputs)
        return grads, dinput


def glorot(rng, fan_in, fan_out):
    return L.glorot_uniform(rng, fan_in, fan_out)


class EmbeddingNetwork(Network):
    """Universal extractor: time-delay frame layers, pooling, embedding layer."""

    def __init__(self, specs, in_dim, seed=0, embedding_layer="fc1"):
        super().__init__(specs, in_dim, seed=seed, frame_level_input=True)
        idx = self.index(embedding_layer)
        pool_idx = [s.kind for s in self.specs].index("stats_pool")
        if self.specs[idx].kind != "dense" or idx < pool_idx:
            raise StructuralError("embedding layer must be a dense layer after pooling")
        self.embedding_layer = embedding_layer

    @property
    def frame_layer(self):
        """Last frame-level layer before pooling (F5 in the default topology)."""
        pool_idx = [s.kind for s in self.specs].index("stats_pool")
        return self.specs[pool_idx - 1].name

    @property
    def embedding_dim(self):
        return self.dims[self.index(self.embedding_layer)][1]

    def embed(self, x, pre_activation=True):
        """Embedding rows; by default the affine output before the ReLU."""
        acts = self.forward(x, stop=self.index(self.embedding_layer) + 1)
        cache = acts.caches[self.embedding_layer]
        if pre_activation and "z" in cache:
            return cache["z"]
        return acts[self.embedding_layer]


class ClassifierHead(Network):
    """Dense stack on top of embeddings ending in a logits layer."""

    def __init__(self, specs, in_dim, seed=0, head_kind="speaker"):
        super().__init__(specs, in_dim, seed=seed, frame_level_input=False)
        if head_kind not in ("speaker", "domain", "domain_specific"):
            raise ConfigurationError(f"unknown head kind {head_kind!r}")
        if self.specs[-1].kind != "dense" or self.specs[-1].activation != "none":
            raise StructuralError("a classifier head must end in a linear logits layer")
        self.head_kind = head_kind

    @property
    def n_classes(self):
        return self.out_dim

    @property
    def logits_layer(self):
        return self.specs[-1].name


def default_extractor_specs(frame_dim=64, embed_dim=64, contexts=(5, 3, 3, 1, 1),
                            dilations=(1, 2, 3, 1, 1)):
    specs = [
        LayerSpec(f"F{i + 1}", "time_delay", frame_dim, context=k, dilation=d)
        for i, (k, d) in enumerate(zip(contexts, dilations))
    ]
    specs.append(LayerSpec("pool", "stats_pool"))
    specs.append(LayerSpec("fc1", "dense", embed_dim))
    return specs


def build_extractor(feature_dim, frame_dim=64, embed_dim=64, seed=0, **kw):
    return EmbeddingNetwork(default_extractor_specs(frame_dim, embed_dim, **kw), feature_dim, seed=seed)


def build_speaker_head(embed_dim, n_speakers, hidden=64, seed=0, name="fc2", head_kind="speaker"):
    specs = [
        LayerSpec(name, "dense", hidden),
        LayerSpec("logits", "dense", n_speakers, activation="none"),
    ]
    return ClassifierHead(specs, embed_dim, seed=seed, head_kind=head_kind)


def build_domain_head(embed_dim, n_domains, hidden=32, seed=0):
    specs = [
        LayerSpec("grl", "grl"),
        LayerSpec("dom1", "dense", hidden),
        LayerSpec("logits", "dense", n_domains, activation="none"),
    ]
    return ClassifierHead(specs, embed_dim, seed=seed, head_kind="domain")


def forward(net, seq):
    """Functional alias of :meth:`Network.forward`."""
    return net.forward(seq)


def backward(net, activations, upstream_loss_grads, grl_lambda=1.0):
    """Functional alias returning only the parameter gradients."""
    return net.backward(activations, upstream_loss_grads, grl_lambda=grl_lambda)[0]
