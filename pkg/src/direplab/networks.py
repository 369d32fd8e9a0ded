"""Network definitions for the adaptation models.

Every model in this package is assembled from the same five roles: a
generator G mapping inputs to the domain-independent representation, a
classifier C and a domain discriminator D reading that representation, a
variational encoder E producing the domain-dependent representation, and a
decoder F reconstructing the input from both representations concatenated.
All of them are plain fully connected stacks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

ROLES = ("G", "E", "F", "C", "D")

_MAGIC = b"DLCKPT1\n"


@dataclass(frozen=True)
class LayerSpec:
    in_width: int
    out_width: int
    activation: str  # relu | sigmoid | softmax | identity

    def __post_init__(self):
        if self.in_width <= 0 or self.out_width <= 0:
            raise ValueError(f"layer widths must be positive, got {self}")
        if self.activation not in ("relu", "sigmoid", "softmax", "identity"):
            raise ValueError(f"unknown activation {self.activation!r}")


def glorot_uniform(rng, fan_in, fan_out, dtype):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out)).astype(dtype)


class Network:
    """A fully connected stack with a fixed role tag.

    The role ties a network to its place in the update equations; it is set
    at construction and never changes.  `name` is free-form and only used
    for checkpoints and diagnostics (e.g. the two private encoders of the
    separation baseline are both role "E").
    """

    def __init__(self, role, layers, rng, name=None, dtype=np.float32):
        if role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {role!r}")
        layers = list(layers)
        if not layers:
            raise ValueError("a network needs at least one layer")
        for prev, cur in zip(layers, layers[1:]):
            if prev.out_width != cur.in_width:
                raise ValueError(f"layer widths do not chain: {prev} -> {cur}")
        self.role = role
        self.name = name or role
        self.layers = layers
        self.weights = []
        self.biases = []
        for spec in layers:
            w = glorot_uniform(rng, spec.in_width, spec.out_width, dtype)
            b = np.zeros((1, spec.out_width), dtype=dtype)
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(b, requires_grad=True))

    @property
    def in_width(self):
        return self.layers[0].in_width

    @property
    def out_width(self):
        return self.layers[-1].out_width

    def forward(self, x):
        """Run the stack on a (batch, in_width) tensor, recording the tape."""
        h = x if isinstance(x, Tensor) else Tensor(x)
        for spec, w, b in zip(self.layers, self.weights, self.biases):
            h = ad.add(ad.matmul(h, w), b)
            if spec.activation == "relu":
                h = ad.relu(h)
            elif spec.activation == "sigmoid":
                h = ad.sigmoid(h)
            elif spec.activation == "softmax":
                h = ad.softmax(h)
        return h

    def forward_array(self, x):
        """Tape-free forward for evaluation; mirrors `forward` op for op."""
        h = np.asarray(x, dtype=self.weights[0].dtype)
        for spec, w, b in zip(self.layers, self.weights, self.biases):
            h = h @ w.data + b.data
            if spec.activation == "relu":
                h = np.maximum(h, 0)
            elif spec.activation == "sigmoid":
                pos = h >= 0
                out = np.empty_like(h)
                out[pos] = 1.0 / (1.0 + np.exp(-h[pos]))
                ez = np.exp(h[~pos])
                out[~pos] = ez / (1.0 + ez)
                h = out
            elif spec.activation == "softmax":
                z = h - np.max(h, axis=-1, keepdims=True)
                ez = np.exp(z)
                h = ez / np.sum(ez, axis=-1, keepdims=True)
        return h

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def named_params(self):
        out = []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"W{i}", w))
            out.append((f"b{i}", b))
        return out

    def parameter_count(self):
        return sum(p.data.size for p in self.params())


@dataclass
class EncoderOutput:
    ddrep: Tensor
    z_mean: Tensor
    z_log_var: Tensor


class VariationalEncoder:
    """Encoder E: shared trunk feeding separate mean and log-variance heads.

    Sampling uses the usual reparameterization, ddrep = mean + exp(lv/2) * eps,
    with eps supplied by the caller so the training loop owns all randomness.
    """

    role = "E"

    def __init__(self, in_width, hidden, latent_dim, rng, name="E", dtype=np.float32):
        if latent_dim <= 0:
            raise ValueError("latent_dim must be positive")
        layers = []
        w = in_width
        for h in hidden:
            layers.append(LayerSpec(w, h, "relu"))
            w = h
        self.trunk = Network("E", layers, rng, name=f"{name}.trunk", dtype=dtype)
        self.mean_head = Network("E", [LayerSpec(w, latent_dim, "identity")], rng,
                                 name=f"{name}.mean", dtype=dtype)
        self.log_var_head = Network("E", [LayerSpec(w, latent_dim, "identity")], rng,
                                    name=f"{name}.log_var", dtype=dtype)
        self.name = name
        self.latent_dim = latent_dim

    def forward(self, x, eps):
        h = self.trunk.forward(x)
        z_mean = self.mean_head.forward(h)
        z_log_var = self.log_var_head.forward(h)
        eps = np.asarray(eps, dtype=z_mean.dtype)
        if eps.shape != z_mean.shape:
            raise ad.ShapeError(f"eps shape {eps.shape} != mean shape {z_mean.shape}")
        sd = ad.exp(ad.multiply(z_log_var, 0.5))
        ddrep = ad.add(z_mean, ad.multiply(sd, Tensor(eps)))
        return EncoderOutput(ddrep=ddrep, z_mean=z_mean, z_log_var=z_log_var)

    def stats_array(self, x):
        """Tape-free (z_mean, z_log_var) for a numpy batch."""
        h = self.trunk.forward_array(x)
        return self.mean_head.forward_array(h), self.log_var_head.forward_array(h)

    def params(self):
        return self.trunk.params() + self.mean_head.params() + self.log_var_head.params()

    def named_params(self):
        out = [(f"trunk.{n}", p) for n, p in self.trunk.named_params()]
        out += [(f"mean.{n}", p) for n, p in self.mean_head.named_params()]
        out += [(f"log_var.{n}", p) for n, p in self.log_var_head.named_params()]
        return out

    def parameter_count(self):
        return sum(p.data.size for p in self.params())


def generator_forward(g, x):
    """DIRep = G(x); x is a (batch, input_width) array or tensor."""
    return g.forward(x)


def encoder_forward(e, x, eps):
    """DDRep sample plus the mean/log-variance that parameterize it."""
    return e.forward(x, eps)


def decoder_forward(decoder, direp, ddrep):
    """Reconstruct from the two representations; order is DIRep then DDRep."""
    return decoder.forward(ad.concat_last(direp, ddrep))


def predict_label(c, direp):
    """Class probability rows from the classifier head."""
    return c.forward(direp)


def predict_domain(d, direp):
    """Domain probability rows (columns: source, target)."""
    return d.forward(direp)


@dataclass(frozen=True)
class NetworkArch:
    """Widths for one benchmark family; defaults match the image benchmarks."""

    input_width: int
    n_classes: int = 10
    direp_width: int = 100
    latent_dim: int = 1
    g_hidden: tuple = (100, 100, 100, 100)
    c_hidden: tuple = (400, 400)
    d_hidden: tuple = (400, 400, 400, 400)
    f_hidden: tuple = (400, 400, 400, 400)
    e_hidden: tuple = (400, 400)

    def scaled(self, **overrides):
        from dataclasses import replace
        return replace(self, **overrides)


def fm_arch(input_width=794, n_classes=10):
    """The fully connected stack used for the image benchmarks."""
    return NetworkArch(input_width=input_width, n_classes=n_classes)


def blob_arch(input_width=2, n_classes=2):
    """A small stack for the synthetic two-dimensional fixtures."""
    return NetworkArch(
        input_width=input_width,
        n_classes=n_classes,
        direp_width=8,
        latent_dim=1,
        g_hidden=(16, 16),
        c_hidden=(16,),
        d_hidden=(16, 16),
        f_hidden=(16, 16),
        e_hidden=(16,),
    )


@dataclass
class ModelSet:
    """The networks taking part in one training run; absent roles are None."""

    G: Network
    C: Network
    D: Network = None
    E: VariationalEncoder = None
    F: Network = None
    private_source: Network = None
    private_target: Network = None
    arch: NetworkArch = None
    seed: int = None

    def present(self):
        for name in ("G", "C", "D", "E", "F", "private_source", "private_target"):
            net = getattr(self, name)
            if net is not None:
                yield name, net


def _mlp_layers(in_width, hidden, out_width, out_activation):
    layers = []
    w = in_width
    for h in hidden:
        layers.append(LayerSpec(w, h, "relu"))
        w = h
    layers.append(LayerSpec(w, out_width, out_activation))
    return layers


def build_models(arch, seed, algorithm="vaegan", explicit_variant="bit", dtype=np.float32):
    """Construct the networks an algorithm needs, seeded per role.

    Child seeds are spawned in a fixed order regardless of which roles an
    algorithm uses, so e.g. G starts from identical weights whether or not
    an encoder is built alongside it.
    """
    if isinstance(seed, np.random.SeedSequence):
        seq = seed
        seed_value = seq.entropy if isinstance(seq.entropy, int) else None
    else:
        seq = np.random.SeedSequence(seed)
        seed_value = int(seed)
    children = seq.spawn(7)
    rngs = {name: np.random.default_rng(child)
            for name, child in zip(("G", "C", "D", "E", "F", "Ps", "Pt"), children)}

    g = Network("G", _mlp_layers(arch.input_width, list(arch.g_hidden), arch.direp_width, "identity"),
                rngs["G"], name="G", dtype=dtype)
    c = Network("C", _mlp_layers(arch.direp_width, list(arch.c_hidden), arch.n_classes, "softmax"),
                rngs["C"], name="C", dtype=dtype)
    ms = ModelSet(G=g, C=c, arch=arch, seed=seed_value)

    if algorithm in ("source_only", "target_only"):
        return ms

    ms.D = Network("D", _mlp_layers(arch.direp_width, list(arch.d_hidden), 2, "softmax"),
                   rngs["D"], name="D", dtype=dtype)

    if algorithm in ("gan_based", "dann"):
        return ms

    if algorithm == "dsn":
        ms.private_source = Network(
            "E", _mlp_layers(arch.input_width, list(arch.g_hidden), arch.direp_width, "identity"),
            rngs["Ps"], name="private_source", dtype=dtype)
        ms.private_target = Network(
            "E", _mlp_layers(arch.input_width, list(arch.g_hidden), arch.direp_width, "identity"),
            rngs["Pt"], name="private_target", dtype=dtype)
        ms.F = Network("F", _mlp_layers(2 * arch.direp_width, list(arch.f_hidden),
                                        arch.input_width, "sigmoid"),
                       rngs["F"], name="F", dtype=dtype)
        return ms

    if algorithm == "explicit_ddrep":
        # DDRep is the domain bit itself (optionally appended to a sampled code)
        ddrep_width = 1
        if explicit_variant == "append":
            ms.E = VariationalEncoder(arch.input_width, list(arch.e_hidden),
                                      arch.latent_dim, rngs["E"], dtype=dtype)
            ddrep_width = arch.latent_dim + 1
        ms.F = Network("F", _mlp_layers(arch.direp_width + ddrep_width, list(arch.f_hidden),
                                        arch.input_width, "sigmoid"),
                       rngs["F"], name="F", dtype=dtype)
        return ms

    if algorithm == "vaegan":
        ms.E = VariationalEncoder(arch.input_width, list(arch.e_hidden),
                                  arch.latent_dim, rngs["E"], dtype=dtype)
        ms.F = Network("F", _mlp_layers(arch.direp_width + arch.latent_dim, list(arch.f_hidden),
                                        arch.input_width, "sigmoid"),
                       rngs["F"], name="F", dtype=dtype)
        return ms

    raise ValueError(f"unknown algorithm {algorithm!r}")


def build_default_fm_networks(seed, input_width=794, dtype=np.float32):
    """All five networks at the image-benchmark widths (see fm_arch)."""
    return build_models(fm_arch(input_width), seed, algorithm="vaegan", dtype=dtype)


def save_checkpoint(path, models, seed=None):
    """Write all present networks to one flat binary file.

    Layout: magic, 8-byte little-endian header length, JSON header listing
    tensor names/shapes/dtypes plus the seed, then the raw tensor bytes in
    header order.
    """
    entries = []
    blobs = []
    for net_name, net in models.present():
        for p_name, p in net.named_params():
            arr = np.ascontiguousarray(p.data)
            entries.append({"name": f"{net_name}/{p_name}",
                            "shape": list(arr.shape),
                            "dtype": str(arr.dtype)})
            blobs.append(arr.tobytes())
    header = json.dumps({"seed": seed if seed is not None else models.seed,
                         "tensors": entries}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(len(header).to_bytes(8, "little"))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path, models):
    """Restore parameters saved by `save_checkpoint` into `models` in place.

    Names and shapes must match exactly; returns the stored seed.
    """
    with open(path, "rb") as f:
        magic = f.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        header_len = int.from_bytes(f.read(8), "little")
        header = json.loads(f.read(header_len).decode("utf-8"))
        by_name = {}
        for net_name, net in models.present():
            for p_name, p in net.named_params():
                by_name[f"{net_name}/{p_name}"] = p
        seen = set()
        for entry in header["tensors"]:
            name = entry["name"]
            if name not in by_name:
                raise ValueError(f"checkpoint tensor {name!r} has no home in these models")
            p = by_name[name]
            shape = tuple(entry["shape"])
            if shape != p.data.shape:
                raise ValueError(f"{name}: checkpoint shape {shape} != model shape {p.data.shape}")
            dtype = np.dtype(entry["dtype"])
            count = int(np.prod(shape, dtype=np.int64))
            raw = f.read(dtype.itemsize * count)
            if len(raw) != dtype.itemsize * count:
                raise ValueError(f"{name}: checkpoint truncated")
            p.data = np.frombuffer(raw, dtype=dtype).reshape(shape).copy()
            seen.add(name)
        missing = set(by_name) - seen
        if missing:
            raise ValueError(f"checkpoint is missing tensors: {sorted(missing)[:5]}")
    return header.get("seed")
