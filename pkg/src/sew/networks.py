"""Model blocks and assembly: MLP encoders/decoders, the stacked GRU-cell
regressor, the combined transfer model, and (de)serialization.

Conventions: features live in columns (a block maps in_dim x batch to
out_dim x batch); weights are out_dim x in_dim; biases are column vectors.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Matrix, Node, as_matrix, make_rng, uniform_init
from .data import Standardizer
from .errors import ConfigError, DimensionError, ExportError

FORMAT_VERSION = 1

ABLATIONS = ("full", "no_sd2", "no_cca", "no_sd1", "no_cca_sd1", "unimodal")

# fixed init streams so e.g. the weak encoder starts identically across
# ablation variants built from the same seed
_BLOCK_STREAMS = {
    "w_encoder": 1,
    "s_decoder1": 2,
    "s_encoder": 3,
    "s_decoder2": 4,
    "regressor": 5,
}


def blocks_for_ablation(ablation: str) -> frozenset[str]:
    """Which blocks a variant builds. Loss-term selection lives in training."""
    table = {
        "full": {"w_encoder", "s_decoder1", "s_encoder", "s_decoder2", "regressor"},
        "no_sd2": {"w_encoder", "s_decoder1", "s_encoder", "regressor"},
        "no_cca": {"w_encoder", "s_decoder1", "s_encoder", "s_decoder2", "regressor"},
        "no_sd1": {"w_encoder", "s_encoder", "s_decoder2", "regressor"},
        "no_cca_sd1": {"w_encoder", "s_encoder", "s_decoder2", "regressor"},
        "unimodal": {"w_encoder", "regressor"},
    }
    if ablation not in table:
        raise ConfigError(f"unknown ablation {ablation!r}; expected one of {ABLATIONS}")
    return frozenset(table[ablation])


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths of one encoder or decoder; tanh between layers only."""

    layer_sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if not sizes:
            raise ConfigError("MlpSpec needs at least one layer")
        if any(s < 1 for s in sizes):
            raise ConfigError(f"layer widths must be >= 1, got {sizes}")

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]


@dataclass(frozen=True)
class GruRegressorSpec:
    num_layers: int = 4
    hidden: int = 120
    output: int = 1

    def __post_init__(self):
        if self.num_layers < 1:
            raise ConfigError(f"num_layers must be >= 1, got {self.num_layers}")
        if self.hidden < 1 or self.output < 1:
            raise ConfigError(f"hidden and output widths must be >= 1, got {self.hidden}, {self.output}")


def _param(rows: int, cols: int, fan_in: int, rng) -> Node:
    if rng is None:
        return Node(np.zeros((rows, cols)))
    return Node(uniform_init(rows, cols, fan_in, rng))


class Linear:
    """y = W x + b. Weight uniform in +-1/sqrt(in_dim), bias zero."""

    def __init__(self, in_dim: int, out_dim: int, rng):
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.weight = _param(out_dim, in_dim, in_dim, rng)
        self.bias = Node(np.zeros((out_dim, 1)))

    def forward(self, x: Node) -> Node:
        return ad.add_bias(ad.matmul(self.weight, x), self.bias)

    def named_parameters(self, prefix: str):
        return [(f"{prefix}.weight", self.weight), (f"{prefix}.bias", self.bias)]


class Mlp:
    def __init__(self, spec: MlpSpec, input_dim: int, rng):
        if input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {input_dim}")
        self.spec = spec
        self.input_dim = int(input_dim)
        dims = (self.input_dim,) + spec.layer_sizes
        self.layers = [Linear(dims[i], dims[i + 1], rng) for i in range(len(spec.layer_sizes))]

    @property
    def output_dim(self) -> int:
        return self.spec.output_dim

    def forward(self, x: Node) -> Node:
        for layer in self.layers[:-1]:
            x = ad.tanh(layer.forward(x))
        return self.layers[-1].forward(x)

    def named_parameters(self, prefix: str):
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(layer.named_parameters(f"{prefix}.layers.{i}"))
        return out


def build_mlp(spec: MlpSpec, input_dim: int, seed: int) -> Mlp:
    return Mlp(spec, input_dim, make_rng(seed))


class GruCell:
    """Single-step GRU cell.

    z = sigmoid(W_z x + U_z h + b_z)
    r = sigmoid(W_r x + U_r h + b_r)
    cand = tanh(W_h x + U_h (r * h) + b_h)
    h_new = (1 - z) * h + z * cand
    """

    def __init__(self, in_dim: int, hidden: int, rng):
        self.in_dim = int(in_dim)
        self.hidden = int(hidden)
        # draw order is part of the determinism contract: z, r, h gates,
        # input weight before recurrent weight
        self.w_z = _param(hidden, in_dim, in_dim, rng)
        self.u_z = _param(hidden, hidden, hidden, rng)
        self.b_z = Node(np.zeros((hidden, 1)))
        self.w_r = _param(hidden, in_dim, in_dim, rng)
        self.u_r = _param(hidden, hidden, hidden, rng)
        self.b_r = Node(np.zeros((hidden, 1)))
        self.w_h = _param(hidden, in_dim, in_dim, rng)
        self.u_h = _param(hidden, hidden, hidden, rng)
        self.b_h = Node(np.zeros((hidden, 1)))

    def forward(self, x: Node, h_prev: Node) -> Node:
        if x.shape[0] != self.in_dim:
            raise DimensionError(f"cell expects {self.in_dim}-d input, got {x.shape}")
        if h_prev.shape != (self.hidden, x.shape[1]):
            raise DimensionError(f"hidden state must be {(self.hidden, x.shape[1])}, got {h_prev.shape}")
        z = ad.sigmoid(ad.add_bias(ad.elementwise_add(ad.matmul(self.w_z, x), ad.matmul(self.u_z, h_prev)), self.b_z))
        r = ad.sigmoid(ad.add_bias(ad.elementwise_add(ad.matmul(self.w_r, x), ad.matmul(self.u_r, h_prev)), self.b_r))
        cand = ad.tanh(
            ad.add_bias(
                ad.elementwise_add(ad.matmul(self.w_h, x), ad.matmul(self.u_h, ad.elementwise_mul(r, h_prev))),
                self.b_h,
            )
        )
        ones = Node(np.ones(z.shape))
        return ad.elementwise_add(ad.elementwise_mul(ad.elementwise_sub(ones, z), h_prev), ad.elementwise_mul(z, cand))

    def named_parameters(self, prefix: str):
        return [
            (f"{prefix}.w_z", self.w_z), (f"{prefix}.u_z", self.u_z), (f"{prefix}.b_z", self.b_z),
            (f"{prefix}.w_r", self.w_r), (f"{prefix}.u_r", self.u_r), (f"{prefix}.b_r", self.b_r),
            (f"{prefix}.w_h", self.w_h), (f"{prefix}.u_h", self.u_h), (f"{prefix}.b_h", self.b_h),
        ]


class GruRegressor:
    """Stacked single-step GRU cells (zero initial hidden state per sample)
    feeding one linear output layer."""

    def __init__(self, spec: GruRegressorSpec, input_dim: int, rng):
        self.spec = spec
        self.input_dim = int(input_dim)
        self.cells = []
        in_dim = self.input_dim
        for _ in range(spec.num_layers):
            self.cells.append(GruCell(in_dim, spec.hidden, rng))
            in_dim = spec.hidden
        self.out = Linear(spec.hidden, spec.output, rng)

    def forward(self, x: Node) -> Node:
        for cell in self.cells:
            h0 = Node(np.zeros((cell.hidden, x.shape[1])))
            x = cell.forward(x, h0)
        return self.out.forward(x)

    def named_parameters(self, prefix: str):
        out = []
        for i, cell in enumerate(self.cells):
            out.extend(cell.named_parameters(f"{prefix}.cells.{i}"))
        out.extend(self.out.named_parameters(f"{prefix}.out"))
        return out


class SewModel:
    """The assembled transfer model.

    Blocks an ablation variant does not use are None. Feature scalers are
    attached by the trainer; the weak-side scaler travels with deployment
    exports so predict() reproduces training-time evaluation exactly.
    """

    def __init__(
        self,
        latent_dim: int,
        d1: int,
        d2: int,
        ablation: str,
        w_encoder: Mlp,
        regressor: GruRegressor,
        s_decoder1: Mlp | None = None,
        s_encoder: Mlp | None = None,
        s_decoder2: Mlp | None = None,
    ):
        self.latent_dim = int(latent_dim)
        self.d1 = int(d1)
        self.d2 = int(d2)
        self.ablation = ablation
        self.w_encoder = w_encoder
        self.regressor = regressor
        self.s_decoder1 = s_decoder1
        self.s_encoder = s_encoder
        self.s_decoder2 = s_decoder2
        self.scaler_strong: Standardizer | None = None
        self.scaler_weak: Standardizer | None = None

    def blocks(self):
        pairs = [
            ("w_encoder", self.w_encoder),
            ("s_decoder1", self.s_decoder1),
            ("s_encoder", self.s_encoder),
            ("s_decoder2", self.s_decoder2),
            ("regressor", self.regressor),
        ]
        return [(name, block) for name, block in pairs if block is not None]

    def named_parameters(self):
        out = []
        for name, block in self.blocks():
            out.extend(block.named_parameters(name))
        return out

    def deployment_forward(self, m_w: Node) -> Node:
        """W_E then R; the only path that exists after export."""
        return self.regressor.forward(self.w_encoder.forward(m_w))

    def predict(self, m_w) -> Matrix:
        """Predict labels from raw (unstandardized) weaker-modality features."""
        m_w = as_matrix(m_w, "m_w")
        if m_w.shape[0] != self.d2:
            raise DimensionError(f"expected {self.d2}-d weaker features, got {m_w.shape[0]} rows")
        if self.scaler_weak is not None:
            m_w = self.scaler_weak.apply(m_w)
        return self.deployment_forward(Node(m_w)).value.copy()


def assemble_sew(config, d1: int, d2: int, seed: int) -> SewModel:
    """Build the variant's blocks with one init stream per block.

    config supplies latent_dim, ablation, and the block specs (w_encoder,
    s_decoder1, s_encoder, s_decoder2: MlpSpec; regressor: GruRegressorSpec).
    Per-block streams keep shared blocks bit-identical across variants.
    """
    wanted = blocks_for_ablation(config.ablation)
    latent = int(config.latent_dim)

    def rng_for(block):
        return make_rng(seed, _BLOCK_STREAMS[block])

    if config.w_encoder.output_dim != latent:
        raise ConfigError(
            f"weak encoder ends at width {config.w_encoder.output_dim} but latent_dim is {latent}")
    w_encoder = Mlp(config.w_encoder, d2, rng_for("w_encoder"))
    regressor = GruRegressor(config.regressor, latent, rng_for("regressor"))

    s_encoder = s_decoder1 = s_decoder2 = None
    if "s_encoder" in wanted:
        if config.s_encoder.output_dim != latent:
            raise ConfigError(
                f"strong encoder ends at width {config.s_encoder.output_dim} but latent_dim is {latent}")
        s_encoder = Mlp(config.s_encoder, d1, rng_for("s_encoder"))
    if "s_decoder1" in wanted:
        if config.s_decoder1.output_dim != d1:
            raise ConfigError(
                f"translation decoder ends at width {config.s_decoder1.output_dim} but d1 is {d1}")
        s_decoder1 = Mlp(config.s_decoder1, latent, rng_for("s_decoder1"))
    if "s_decoder2" in wanted:
        if config.s_decoder2.output_dim != d1:
            raise ConfigError(
                f"autoencoder decoder ends at width {config.s_decoder2.output_dim} but d1 is {d1}")
        s_decoder2 = Mlp(config.s_decoder2, latent, rng_for("s_decoder2"))

    return SewModel(latent, d1, d2, config.ablation, w_encoder, regressor,
                    s_decoder1=s_decoder1, s_encoder=s_encoder, s_decoder2=s_decoder2)


# --- serialization ---------------------------------------------------------
# A model file is a stored (uncompressed) zip of .npy members plus meta.json.
# Zip entry timestamps are pinned so identical models give identical bytes.

_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)


def _write_member(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    zf.writestr(info, payload)


def _npy_bytes(arr: Matrix) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(arr), allow_pickle=False)
    return buf.getvalue()


def _block_meta(model: SewModel, name: str, block) -> dict:
    if isinstance(block, Mlp):
        return {"type": "mlp", "layer_sizes": list(block.spec.layer_sizes), "input_dim": block.input_dim}
    return {
        "type": "gru_regressor",
        "num_layers": block.spec.num_layers,
        "hidden": block.spec.hidden,
        "output": block.spec.output,
        "input_dim": block.input_dim,
    }


def save_model(model: SewModel, path, deployment: bool = False) -> None:
    """Write the model to `path`; deployment=True keeps only W_E and R."""
    if deployment and (model.w_encoder is None or model.regressor is None):
        raise ExportError("deployment export needs both the weak encoder and the regressor")
    kept = [("w_encoder", model.w_encoder), ("regressor", model.regressor)] if deployment else model.blocks()
    meta = {
        "format_version": FORMAT_VERSION,
        "kind": "deployment" if deployment else "training",
        "latent_dim": model.latent_dim,
        "d1": model.d1,
        "d2": model.d2,
        "ablation": model.ablation,
        "blocks": {name: _block_meta(model, name, block) for name, block in kept},
        "scalers": [],
    }
    scalers = [("scaler_weak", model.scaler_weak)]
    if not deployment:
        scalers.append(("scaler_strong", model.scaler_strong))
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        arrays = []
        for name, block in kept:
            arrays.extend(block.named_parameters(name))
        for sname, scaler in scalers:
            if scaler is None:
                continue
            meta["scalers"].append(sname)
            arrays.append((f"{sname}.mean", scaler.mean))
            arrays.append((f"{sname}.scale", scaler.scale))
        _write_member(zf, "meta.json", json.dumps(meta, sort_keys=True, indent=1).encode())
        for pname, param in arrays:
            value = param.value if isinstance(param, Node) else param
            _write_member(zf, pname + ".npy", _npy_bytes(value))


def _read_npy(zf: zipfile.ZipFile, name: str) -> Matrix:
    with zf.open(name) as fh:
        return np.lib.format.read_array(io.BytesIO(fh.read()), allow_pickle=False)


def load_model(path) -> SewModel:
    with zipfile.ZipFile(path, "r") as zf:
        try:
            meta = json.loads(zf.read("meta.json"))
        except KeyError:
            raise ExportError(f"{path}: not a model file (missing meta.json)") from None
        if meta.get("format_version") != FORMAT_VERSION:
            raise ExportError(f"{path}: unsupported model format {meta.get('format_version')!r}")

        def rebuild(name):
            info = meta["blocks"].get(name)
            if info is None:
                return None
            if info["type"] == "mlp":
                return Mlp(MlpSpec(tuple(info["layer_sizes"])), info["input_dim"], None)
            spec = GruRegressorSpec(info["num_layers"], info["hidden"], info["output"])
            return GruRegressor(spec, info["input_dim"], None)

        model = SewModel(
            meta["latent_dim"], meta["d1"], meta["d2"], meta["ablation"],
            rebuild("w_encoder"), rebuild("regressor"),
            s_decoder1=rebuild("s_decoder1"), s_encoder=rebuild("s_encoder"),
            s_decoder2=rebuild("s_decoder2"),
        )
        for pname, param in model.named_parameters():
            stored = _read_npy(zf, pname + ".npy")
            if stored.shape != param.value.shape:
                raise ExportError(f"{path}: parameter {pname} has shape {stored.shape}, expected {param.value.shape}")
            param.value = stored
            param.grad = np.zeros_like(stored)
        for sname in meta["scalers"]:
            scaler = Standardizer(_read_npy(zf, sname + ".mean.npy"), _read_npy(zf, sname + ".scale.npy"))
            setattr(model, sname, scaler)
    return model
