"""The training loop: loss composition over the four terms, minibatch SGD
with dev-set model selection, the ablation suite, and deployment export."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import metrics
from .autodiff import Node, Sgd, make_rng
from .data import Dataset, ModalityBatch, batcher, standardize_dataset
from .dcca import cca_correlation
from .errors import ConditioningError, ConfigError, ExportError, NumericError
from .networks import (
    ABLATIONS,
    GruRegressorSpec,
    MlpSpec,
    SewModel,
    assemble_sew,
    blocks_for_ablation,
    save_model,
)

log = logging.getLogger("sew.training")

_STREAM_BATCHES = 21
_STREAM_CCA_POOL = 22

# loss terms each variant trains with; l4 (prediction) is always present
_VARIANT_TERMS = {
    "full": ("l1", "l2", "l3", "l4"),
    "no_sd2": ("l1", "l3", "l4"),
    "no_cca": ("l1", "l2", "l4"),
    "no_sd1": ("l2", "l3", "l4"),
    "no_cca_sd1": ("l2", "l4"),
    "unimodal": ("l4",),
}

# CLI/report labels, one per variant, in canonical table order
ABLATION_LABELS = {
    "full": "full",
    "no_sd2": "-S_D2",
    "no_cca": "-CCA",
    "no_sd1": "-S_D1",
    "no_cca_sd1": "-(CCA&S_D1)",
    "unimodal": "unimodal",
}

_CONFIG_KEYS = None  # filled after SewConfig is defined


@dataclass(frozen=True)
class SewConfig:
    """Everything one training run depends on besides the data itself."""

    latent_dim: int
    d1: int
    d2: int
    w_encoder: MlpSpec
    s_decoder1: MlpSpec | None = None
    s_encoder: MlpSpec | None = None
    s_decoder2: MlpSpec | None = None
    regressor: GruRegressorSpec = GruRegressorSpec()
    ablation: str = "full"
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    k: int = 10
    r1: float = 1e-4
    r2: float = 1e-4
    lr: float = 0.001
    momentum: float = 0.7
    weight_decay: float = 1e-4
    batch_size: int = 32
    cca_batch_size: int | None = None
    epochs: int = 50
    patience: int = 10
    seed: int = 0
    sample_variance_ccc: bool = False
    frame_step_seconds: float = 0.04
    shift_seconds: float = 2.4

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ConfigError("loss weights alpha, beta, gamma must be >= 0")
        if not 1 <= self.k <= self.latent_dim:
            raise ConfigError(f"k must be in [1, latent_dim={self.latent_dim}], got {self.k}")
        if self.r1 < 0 or self.r2 < 0:
            raise ConfigError(f"r1, r2 must be >= 0, got {self.r1}, {self.r2}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.cca_batch_size is not None and self.cca_batch_size < 2:
            raise ConfigError(f"cca_batch_size must be >= 2, got {self.cca_batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.frame_step_seconds <= 0:
            raise ConfigError(f"frame_step_seconds must be > 0, got {self.frame_step_seconds}")
        if self.shift_seconds < 0:
            raise ConfigError(f"shift_seconds must be >= 0, got {self.shift_seconds}")
        wanted = blocks_for_ablation(self.ablation)
        specs = {
            "s_decoder1": self.s_decoder1,
            "s_encoder": self.s_encoder,
            "s_decoder2": self.s_decoder2,
        }
        for name, spec in specs.items():
            if name in wanted and spec is None:
                raise ConfigError(f"ablation {self.ablation!r} needs a spec for {name}")
        if self.w_encoder.output_dim != self.latent_dim:
            raise ConfigError(
                f"w_encoder ends at {self.w_encoder.output_dim}, latent_dim is {self.latent_dim}")
        if "s_encoder" in wanted and self.s_encoder.output_dim != self.latent_dim:
            raise ConfigError(
                f"s_encoder ends at {self.s_encoder.output_dim}, latent_dim is {self.latent_dim}")
        for name in ("s_decoder1", "s_decoder2"):
            spec = specs[name]
            if name in wanted and spec.output_dim != self.d1:
                raise ConfigError(f"{name} ends at {spec.output_dim}, d1 is {self.d1}")

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, MlpSpec):
                v = list(v.layer_sizes)
            elif isinstance(v, GruRegressorSpec):
                v = {"num_layers": v.num_layers, "hidden": v.hidden, "output": v.output}
            out[f.name] = v
        return out

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def config_from_dict(raw: dict, overrides: dict | None = None) -> SewConfig:
    """Build a config from parsed JSON; unknown or malformed keys are
    reported by name."""
    global _CONFIG_KEYS
    if _CONFIG_KEYS is None:
        _CONFIG_KEYS = {f.name for f in dataclasses.fields(SewConfig)}
    merged = dict(raw)
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(merged) - _CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    kwargs = {}
    for key, value in merged.items():
        try:
            if key in ("w_encoder", "s_decoder1", "s_encoder", "s_decoder2") and value is not None:
                value = MlpSpec(tuple(value))
            elif key == "regressor" and value is not None:
                value = GruRegressorSpec(**value)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"config key {key!r} is malformed: {err}") from None
        kwargs[key] = value
    try:
        return SewConfig(**kwargs)
    except TypeError as err:
        raise ConfigError(f"config is incomplete: {err}") from None


def load_config(path, overrides: dict | None = None) -> SewConfig:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: not valid JSON ({err})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return config_from_dict(raw, overrides)


def active_terms(config: SewConfig) -> frozenset[str]:
    """Terms trained by this run: the variant's set minus zero-weight terms.

    Skipping (rather than multiplying by zero) keeps the parameter
    trajectory of the surviving blocks bit-identical to the variant that
    never had the term.
    """
    terms = set(_VARIANT_TERMS[config.ablation])
    if config.alpha == 0:
        terms.discard("l1")
    if config.beta == 0:
        terms.discard("l2")
    if config.gamma == 0:
        terms.discard("l3")
    return frozenset(terms)


@dataclass
class EpochReport:
    epoch: int
    e1: float | None
    e2: float | None
    e3: float | None
    e4: float
    dev_ccc: float
    dev_acc: float


class LossBreakdown(dict):
    """Per-batch component values keyed e1..e4; missing terms absent."""


def sew_loss(model: SewModel, batch, config: SewConfig, cca_batch=None):
    """Total weighted loss for one batch plus its component breakdown.

    total = alpha * mse(M_S, S_D1(W_E(M_W)))        translation
          + beta  * mse(M_S, S_D2(S_E(M_S)))        autoencoding
          + gamma * (-corr(S_E(M_S), W_E(M_W)))     alignment
          +         mse(T_l, R(W_E(M_W)))           prediction

    The alignment correlation is estimated on `cca_batch` when given (a
    larger dedicated pool), otherwise on the training batch itself.
    """
    terms = active_terms(config)
    needed = {"l1": "s_decoder1", "l2": "s_decoder2", "l3": "s_encoder"}
    for term, block in needed.items():
        if term in terms and getattr(model, block) is None:
            raise ConfigError(f"loss term {term} is active but the model has no {block}")
    if ("l2" in terms or "l3" in terms) and model.s_encoder is None:
        raise ConfigError("autoencoding/alignment terms need the strong encoder")

    m_w = Node(batch.m_w)
    m_sw = model.w_encoder.forward(m_w)
    p_l = model.regressor.forward(m_sw)
    l4 = ad.mse_loss(p_l, batch.labels)
    components = LossBreakdown(e4=float(l4.value[0, 0]))
    total = l4

    m_ss = None
    if "l2" in terms or ("l3" in terms and cca_batch is None):
        m_ss = model.s_encoder.forward(Node(batch.m_s))
    if "l1" in terms:
        l1 = ad.mse_loss(model.s_decoder1.forward(m_sw), batch.m_s)
        components["e1"] = float(l1.value[0, 0])
        total = ad.elementwise_add(total, ad.scalar_mul(l1, config.alpha))
    if "l2" in terms:
        l2 = ad.mse_loss(model.s_decoder2.forward(m_ss), batch.m_s)
        components["e2"] = float(l2.value[0, 0])
        total = ad.elementwise_add(total, ad.scalar_mul(l2, config.beta))
    if "l3" in terms:
        if cca_batch is None:
            ss_view, sw_view = m_ss, m_sw
        else:
            ss_view = model.s_encoder.forward(Node(cca_batch.m_s))
            sw_view = model.w_encoder.forward(Node(cca_batch.m_w))
        rho = cca_correlation(ss_view, sw_view, config.k, config.r1, config.r2)
        components["e3"] = -float(rho.value[0, 0])
        total = ad.elementwise_add(total, ad.scalar_mul(rho, -config.gamma))
    return total, components


def _snapshot(model: SewModel) -> dict:
    return {name: p.value.copy() for name, p in model.named_parameters()}


def _restore(model: SewModel, snap: dict) -> None:
    for name, p in model.named_parameters():
        p.value = snap[name].copy()
        p.zero_grad()


def _dev_eval(model: SewModel, dev_std: Dataset, config: SewConfig) -> metrics.EvalResult:
    # deployment path only: the stronger modality must never leak into
    # model selection
    preds = model.deployment_forward(Node(dev_std.m_w)).value
    return metrics.evaluate(dev_std.labels, preds, config.sample_variance_ccc)


def train(config: SewConfig, train_set: Dataset, dev_set: Dataset):
    """Minibatch SGD over the composed loss; returns the best-dev-CCC model
    and the per-epoch history."""
    if (train_set.d1, train_set.d2) != (config.d1, config.d2):
        raise ConfigError(
            f"config declares d1={config.d1}, d2={config.d2} but data has "
            f"d1={train_set.d1}, d2={train_set.d2}")
    train_std, dev_std, scaler_s, scaler_w = standardize_dataset(train_set, dev_set)
    model = assemble_sew(config, config.d1, config.d2, config.seed)
    model.scaler_strong = scaler_s
    model.scaler_weak = scaler_w

    opt = Sgd((p for _, p in model.named_parameters()), lr=config.lr,
              momentum=config.momentum, weight_decay=config.weight_decay)
    batch_rng = make_rng(config.seed, _STREAM_BATCHES)
    # a separate stream keeps the main batch schedule identical whether or
    # not a dedicated correlation pool is in use
    pool_rng = make_rng(config.seed, _STREAM_CCA_POOL)
    pool_size = None
    if config.cca_batch_size is not None and "l3" in active_terms(config):
        pool_size = min(config.cca_batch_size, train_std.n)
    history: list[EpochReport] = []
    best_ccc = -np.inf
    best_epoch = -1
    best_params = _snapshot(model)

    for epoch in range(config.epochs):
        sums = {"e1": 0.0, "e2": 0.0, "e3": 0.0, "e4": 0.0}
        counts = {"e1": 0, "e2": 0, "e3": 0, "e4": 0}
        for i, batch in enumerate(batcher(train_std, config.batch_size, batch_rng, shuffle=True)):
            opt.zero_grad()
            cca_batch = None
            if pool_size is not None:
                idx = pool_rng.choice(train_std.n, size=pool_size, replace=False)
                cca_batch = ModalityBatch(
                    train_std.m_s[:, idx], train_std.m_w[:, idx], train_std.labels[:, idx])
            try:
                total, comps = sew_loss(model, batch, config, cca_batch)
            except ConditioningError as err:
                # skip the alignment term for this batch; everything else
                # still trains
                log.warning("epoch %d batch %d: alignment term skipped (%s)", epoch, i, err)
                relaxed = dataclasses.replace(config, gamma=0.0)
                total, comps = sew_loss(model, batch, relaxed)
            except NumericError as err:
                raise NumericError(f"epoch {epoch} batch {i}: {err}") from err
            try:
                ad.backward(total)
                opt.step()
            except NumericError as err:
                raise NumericError(
                    f"epoch {epoch} batch {i}: {err}; components {dict(comps)}") from err
            for key, value in comps.items():
                sums[key] += value
                counts[key] += 1
        result = _dev_eval(model, dev_std, config)
        report = EpochReport(
            epoch,
            *(sums[k] / counts[k] if counts[k] else None for k in ("e1", "e2", "e3")),
            sums["e4"] / counts["e4"] if counts["e4"] else float("nan"),
            result.ccc,
            result.binary_accuracy,
        )
        history.append(report)
        if result.ccc > best_ccc:
            best_ccc = result.ccc
            best_epoch = epoch
            best_params = _snapshot(model)
        elif epoch - best_epoch >= config.patience:
            log.info("early stop at epoch %d (best dev ccc %.4f at epoch %d)",
                     epoch, best_ccc, best_epoch)
            break
    _restore(model, best_params)
    return model, history


HISTORY_COLUMNS = ("epoch", "e1", "e2", "e3", "e4", "dev_ccc", "dev_acc")


def write_history(path, history, manifest_hash: str | None = None) -> None:
    """Epoch metrics as CSV; floats via repr so reruns are byte-identical."""
    def cell(v):
        if v is None:
            return ""
        # builtin float only: repr(np.float64) would change the text
        return repr(float(v)) if isinstance(v, float) else str(v)

    with open(path, "w") as fh:
        if manifest_hash:
            fh.write(f"# manifest: {manifest_hash}\n")
        fh.write(",".join(HISTORY_COLUMNS) + "\n")
        for r in history:
            fh.write(",".join(cell(getattr(r, c)) for c in HISTORY_COLUMNS) + "\n")


@dataclass
class AblationRow:
    ablation: str
    label: str
    dev_ccc: float
    dev_acc: float
    best_epoch: int
    history: list[EpochReport] = field(repr=False, default_factory=list)


def run_ablation_suite(config: SewConfig, train_set: Dataset, dev_set: Dataset,
                       variants=ABLATIONS) -> list[AblationRow]:
    """Train every variant under the same seed and data; one table row each."""
    rows = []
    for variant in variants:
        vconf = dataclasses.replace(config, ablation=variant)
        model, history = train(vconf, train_set, dev_set)
        best = max(history, key=lambda r: r.dev_ccc) if history else None
        rows.append(AblationRow(
            variant,
            ABLATION_LABELS[variant],
            best.dev_ccc if best else float("nan"),
            best.dev_acc if best else float("nan"),
            best.epoch if best else -1,
            history,
        ))
        log.info("variant %-12s dev ccc %.4f acc %.2f", variant,
                 rows[-1].dev_ccc, rows[-1].dev_acc)
    return rows


def write_ablation_csv(path, rows: list[AblationRow], manifest_hash: str | None = None) -> None:
    with open(path, "w") as fh:
        if manifest_hash:
            fh.write(f"# manifest: {manifest_hash}\n")
        fh.write("ablation,label,dev_ccc,dev_acc\n")
        for r in rows:
            fh.write(f"{r.ablation},{r.label},{repr(float(r.dev_ccc))},{repr(float(r.dev_acc))}\n")


def format_ablation_table(rows: list[AblationRow]) -> str:
    """Aligned text rendering of the ablation table."""
    width = max(len(r.label) for r in rows)
    lines = [f"{'model':<{width}}  {'CCC':>8}  {'Acc':>7}"]
    for r in rows:
        lines.append(f"{r.label:<{width}}  {r.dev_ccc:>8.4f}  {r.dev_acc:>6.2f}%")
    return "\n".join(lines)


def export_deployment(model: SewModel, path) -> None:
    """Write the weak-encoder + regressor artifact used at test time."""
    if model.w_encoder is None or model.regressor is None:
        raise ExportError("model is missing the weak encoder or the regressor")
    save_model(model, path, deployment=True)
