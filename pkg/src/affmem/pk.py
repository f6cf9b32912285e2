"""Prior-knowledge conditional adversarial autoencoder (desk scale, dense layers).

Networks:

* ``E``       observation -> latent code ``z`` (tanh output, matches the uniform prior box)
* ``G``       ``[z, y]`` -> observation
* ``D_em``    ``z`` -> (arousal, valence), tanh output
* ``D_prior`` ``z`` -> P(z drawn from the uniform prior)
* ``D_real``  observation, conditioned on ``y`` at every layer -> P(real)

The encoder/generator minimise
``l1*rec + l2*em + l3*iden + l4*prior_g + l5*img_g`` with the adversarial terms
in the non-saturating ``-log D`` form. ``prior_g`` only reaches E and ``img_g``
only reaches G; the other terms train both. Each discriminator is trained on
its own objective in a separate phase that precedes the encoder/generator phase.
"""
from __future__ import annotations

import hashlib
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .numerics import (
    AdamState,
    ContractError,
    Network,
    NonFiniteError,
    adam_step,
    backward,
    build_network,
    check_gradients,
    forward,
    network_from_dict,
    network_to_dict,
)

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-7
LAMBDAS = (1.0, 0.02, 0.3, 0.01, 0.01)
LOSS_COLUMNS = ("l_rec", "l_em", "l_iden", "l_prior_d", "l_prior_g", "l_img_d", "l_img_g", "total")


class SaturationWarning(RuntimeWarning):
    """A discriminator probability had to be clamped away from 0 or 1."""


class MissingLabelError(ContractError):
    pass


@dataclass(frozen=True)
class AffectLabel:
    arousal: float
    valence: float

    def __post_init__(self):
        for name in ("arousal", "valence"):
            v = float(getattr(self, name))
            object.__setattr__(self, name, v)
            if not np.isfinite(v) or not -1.0 <= v <= 1.0:
                raise ContractError(f"{name}={v} outside [-1, 1]")

    @classmethod
    def clamped(cls, arousal: float, valence: float) -> "AffectLabel":
        return cls(float(np.clip(arousal, -1, 1)), float(np.clip(valence, -1, 1)))

    def as_array(self) -> np.ndarray:
        return np.array([self.arousal, self.valence])


@dataclass
class ExpressionSample:
    x: np.ndarray
    y: AffectLabel | None = None
    person_id: str = ""
    frame_index: int = 0

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        if not np.all(np.isfinite(self.x)):
            raise ContractError("observation contains non-finite values")
        if self.frame_index < 0:
            raise ContractError("frame_index must be nonnegative")


@dataclass
class PkConfig:
    input_dim: int = 24
    latent_dim: int = 50
    enc_hidden: tuple[int, ...] = (64, 64)
    gen_hidden: tuple[int, ...] = (64, 64)
    em_hidden: int = 64
    prior_hidden: tuple[int, ...] = (64, 64, 64)
    real_hidden: tuple[int, ...] = (64, 64)
    surrogate_layers: int = 3
    surrogate_width: int = 32
    lambdas: tuple[float, float, float, float, float] = LAMBDAS
    prior_range: tuple[float, float] = (-1.0, 1.0)
    use_prior: bool = True
    use_real: bool = True
    use_em: bool = True
    batch_size: int = 48
    alpha: float = 0.0002
    beta1: float = 0.5
    beta2: float = 0.999
    # "paired": realism branch scores G(E(x), y_x); "shuffled": G(E(x), y') with y'
    # another sample's label from the same batch (edit targets)
    edit_target: str = "shuffled"

    def __post_init__(self):
        if self.edit_target not in ("paired", "shuffled"):
            raise ContractError(f"unknown edit_target {self.edit_target!r}")
        for name in ("enc_hidden", "gen_hidden", "prior_hidden", "real_hidden", "lambdas", "prior_range"):
            setattr(self, name, tuple(getattr(self, name)))
        if len(self.lambdas) != 5:
            raise ContractError("lambdas needs exactly five coefficients")
        lo, hi = self.prior_range
        if not lo < hi:
            raise ContractError("prior_range must be an increasing interval")

    @property
    def effective_lambdas(self) -> tuple[float, ...]:
        l1, l2, l3, l4, l5 = self.lambdas
        return (
            l1,
            l2 if self.use_em else 0.0,
            l3,
            l4 if self.use_prior else 0.0,
            l5 if self.use_real else 0.0,
        )


VARIANTS: dict[str, tuple[bool, bool, bool]] = {
    # name: (use_prior, use_real, use_em)
    "PK_base": (False, False, False),
    "PK_base+D_prior": (True, False, False),
    "PK_base+D_real": (False, True, False),
    "PK_base+D_em": (False, False, True),
    "PK_base+D_prior+D_real": (True, True, False),
    "PK_base+D_prior+D_em": (True, False, True),
    "PK_base+D_real+D_em": (False, True, True),
    "PK_all": (True, True, True),
}


def ablation_config(
    config: PkConfig | None = None,
    use_prior: bool = True,
    use_real: bool = True,
    use_em: bool = True,
) -> PkConfig:
    """Config for one ablation variant; disabled terms get a zero coefficient."""
    config = config or PkConfig()
    l1, l2, l3, l4, l5 = config.lambdas
    return replace(
        config,
        use_prior=use_prior,
        use_real=use_real,
        use_em=use_em,
        lambdas=(l1, l2 if use_em else 0.0, l3, l4 if use_prior else 0.0, l5 if use_real else 0.0),
    )


def variant_name(use_prior: bool, use_real: bool, use_em: bool) -> str:
    for name, flags in VARIANTS.items():
        if flags == (use_prior, use_real, use_em):
            return name
    raise KeyError((use_prior, use_real, use_em))


@dataclass
class PkModel:
    config: PkConfig
    E: Network
    G: Network
    D_em: Network
    D_prior: Network
    D_real: Network
    surrogate: Network
    trained_steps: int = 0
    saturation_events: int = field(default=0, compare=False)

    NETS = ("E", "G", "D_em", "D_prior", "D_real")

    def __post_init__(self):
        c = self.config
        if self.G.input_dim != c.latent_dim + 2:
            raise ContractError("generator must take latent_dim + 2 inputs")
        if self.D_em.output_dim != 2 or self.D_em.layers[-1].activation != "tanh":
            raise ContractError("D_em must end in a 2-unit tanh layer")
        for name in ("D_prior", "D_real"):
            net = getattr(self, name)
            if net.output_dim != 1 or net.layers[-1].activation != "sigmoid":
                raise ContractError(f"{name} must end in one sigmoid unit")

    def networks(self) -> dict[str, Network]:
        return {n: getattr(self, n) for n in self.NETS}

    def surrogate_hash(self) -> str:
        h = hashlib.sha256()
        for p in self.surrogate.params():
            h.update(p.tobytes())
        return h.hexdigest()


def init_model(config: PkConfig | None = None, seed: int = 0) -> PkModel:
    """Fresh model. The draw order does not depend on the ablation flags, so
    every variant built from one seed shares bit-identical sub-networks."""
    c = config or PkConfig()
    rng = np.random.default_rng(seed)
    d, z = c.input_dim, c.latent_dim
    E = build_network(rng, (d, *c.enc_hidden, z), ["relu"] * len(c.enc_hidden) + ["tanh"])
    G = build_network(rng, (z + 2, *c.gen_hidden, d), ["relu"] * len(c.gen_hidden) + ["linear"])
    D_em = build_network(rng, (z, c.em_hidden, 2), ["relu", "tanh"])
    D_prior = build_network(
        rng, (z, *c.prior_hidden, 1), ["relu"] * len(c.prior_hidden) + ["sigmoid"]
    )
    D_real = build_network(
        rng, (d, *c.real_hidden, 1), ["relu"] * len(c.real_hidden) + ["sigmoid"], cond_dim=2
    )
    # frozen identity-feature surrogate; scaled so its features are not vanishingly small
    srng = np.random.default_rng([seed, 7])
    sizes = [d] + [c.surrogate_width] * c.surrogate_layers
    surrogate = Network(
        [
            build_network(srng, (a, b), ["tanh"], std=1.0 / np.sqrt(a)).layers[0]
            for a, b in zip(sizes[:-1], sizes[1:])
        ],
        d,
    )
    return PkModel(c, E, G, D_em, D_prior, D_real, surrogate)


# -- inference ----------------------------------------------------------------

def _label_array(y) -> np.ndarray:
    if isinstance(y, AffectLabel):
        return y.as_array()
    return np.asarray(y, dtype=np.float64)


def encode(model: PkModel, x: np.ndarray) -> np.ndarray:
    return forward(model.E, x)[0]


def generate(model: PkModel, z: np.ndarray, y) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    y = _label_array(y)
    if z.shape[-1] != model.config.latent_dim:
        raise ContractError(f"latent has {z.shape[-1]} dims, expected {model.config.latent_dim}")
    if y.ndim < z.ndim:
        y = np.broadcast_to(y, z.shape[:-1] + (2,))
    return forward(model.G, np.concatenate((z, y), axis=-1))[0]


def predict_affect(model: PkModel, x: np.ndarray) -> np.ndarray:
    """PK-only affect estimate: ``D_em(E(x))``."""
    return forward(model.D_em, encode(model, x))[0]


def surrogate_features(model: PkModel, x: np.ndarray) -> list[np.ndarray]:
    return forward(model.surrogate, x)[1].post


# -- loss primitives (value, gradient w.r.t. the second argument) ----------------

def l1_loss(target: np.ndarray, pred: np.ndarray) -> tuple[float, np.ndarray]:
    diff = pred - target
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def em_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Arousal MSE + valence MSE over a ``(batch, 2)`` prediction."""
    pred = np.atleast_2d(pred)
    diff = pred - np.atleast_2d(target)
    n = diff.shape[0]
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


def _clamp_prob(model: PkModel | None, p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    inside = (p >= PROB_FLOOR) & (p <= 1 - PROB_FLOOR)
    if not np.all(inside):
        if model is not None:
            model.saturation_events += 1
        warnings.warn("discriminator output clamped to [1e-7, 1-1e-7]", SaturationWarning, stacklevel=3)
    return np.clip(p, PROB_FLOOR, 1 - PROB_FLOOR), inside.astype(np.float64)


def neg_log(p: np.ndarray, model: PkModel | None = None) -> tuple[float, np.ndarray]:
    """``mean(-log p)`` and its gradient in ``p``."""
    pc, inside = _clamp_prob(model, p)
    return float(np.mean(-np.log(pc))), -inside / (pc * p.size)


def neg_log1m(p: np.ndarray, model: PkModel | None = None) -> tuple[float, np.ndarray]:
    """``mean(-log(1 - p))`` and its gradient in ``p``."""
    pc, inside = _clamp_prob(model, p)
    return float(np.mean(-np.log1p(-pc))), inside / ((1 - pc) * p.size)


def adversarial_objective(p_real: np.ndarray, p_fake: np.ndarray) -> float:
    """Raw two-sample GAN objective ``E[log D(real)] + E[log(1 - D(fake))]`` (<= 0)."""
    a, _ = neg_log(np.asarray(p_real, dtype=np.float64))
    b, _ = neg_log1m(np.asarray(p_fake, dtype=np.float64))
    return -(a + b)


# -- individual losses ---------------------------------------------------------------

def loss_rec(model: PkModel, x: np.ndarray, y) -> float:
    """Mean absolute error between ``x`` and ``G(E(x), y)``."""
    x = np.atleast_2d(x)
    y = np.broadcast_to(_label_array(y), (x.shape[0], 2))
    return l1_loss(x, generate(model, encode(model, x), y))[0]


def loss_iden(model: PkModel, x: np.ndarray, x_gen: np.ndarray) -> float:
    fa = surrogate_features(model, np.atleast_2d(x))
    fb = surrogate_features(model, np.atleast_2d(x_gen))
    return sum(l1_loss(a, b)[0] for a, b in zip(fa, fb))


def loss_em(model: PkModel, x: np.ndarray, y_true) -> float:
    if y_true is None:
        raise MissingLabelError("affect loss needs a label")
    x = np.atleast_2d(x)
    y = np.broadcast_to(_label_array(y_true), (x.shape[0], 2))
    return em_loss(forward(model.D_em, encode(model, x))[0], y)[0]


def loss_prior(model: PkModel, x: np.ndarray, z_prior: np.ndarray) -> tuple[float, float]:
    """``(d_loss, e_loss)``: the negated prior objective and ``-log D(E(x))``."""
    p_prior = forward(model.D_prior, np.atleast_2d(z_prior))[0]
    p_enc = forward(model.D_prior, encode(model, np.atleast_2d(x)))[0]
    d_loss = neg_log(p_prior, model)[0] + neg_log1m(p_enc, model)[0]
    return d_loss, neg_log(p_enc, model)[0]


def loss_img(model: PkModel, x: np.ndarray, y, x_gen: np.ndarray) -> tuple[float, float]:
    """``(d_loss, g_loss)`` for the label-conditioned realism discriminator."""
    x = np.atleast_2d(x)
    y = np.broadcast_to(_label_array(y), (x.shape[0], 2))
    p_real = forward(model.D_real, x, y)[0]
    p_fake = forward(model.D_real, np.atleast_2d(x_gen), y)[0]
    d_loss = neg_log(p_real, model)[0] + neg_log1m(p_fake, model)[0]
    return d_loss, neg_log(p_fake, model)[0]


# -- gradient passes ---------------------------------------------------------------

EG_TERMS = ("l_rec", "l_em", "l_iden", "l_prior_g", "l_img_g")


def eg_pass(
    model: PkModel,
    X: np.ndarray,
    Y: np.ndarray,
    coefs: dict[str, float],
    Y_edit: np.ndarray | None = None,
) -> tuple[dict[str, float], list[np.ndarray], list[np.ndarray]]:
    """Values of every encoder/generator term and the gradient of
    ``sum(coefs[t] * term_t)`` w.r.t. E and G parameters.

    Terms with a zero coefficient are still evaluated (for logging) when their
    discriminator is enabled; disabled discriminators report 0. ``Y_edit``
    (default ``Y``) is the condition for the realism branch, whose gradient
    only updates G.
    """
    c = model.config
    z, tape_e = forward(model.E, X)
    gin = np.hstack((z, Y))
    xr, tape_g = forward(model.G, gin)
    g_xr = np.zeros_like(xr)
    g_z = np.zeros_like(z)
    values = dict.fromkeys(EG_TERMS, 0.0)

    values["l_rec"], g = l1_loss(X, xr)
    g_xr += coefs.get("l_rec", 0.0) * g

    feats_x = forward(model.surrogate, X)[1].post
    fr, tape_s = forward(model.surrogate, xr)
    layer_grads = []
    iden = 0.0
    w = coefs.get("l_iden", 0.0)
    for fa, fb in zip(feats_x, tape_s.post):
        v, g = l1_loss(fa, fb)
        iden += v
        layer_grads.append(w * g)
    values["l_iden"] = iden
    if w:
        g_xr += backward(model.surrogate, tape_s, np.zeros_like(fr), layer_grads)[0]

    if c.use_em:
        pred, tape_m = forward(model.D_em, z)
        values["l_em"], g = em_loss(pred, Y)
        if coefs.get("l_em", 0.0):
            g_z += backward(model.D_em, tape_m, coefs["l_em"] * g)[0]
    if c.use_prior:
        p, tape_p = forward(model.D_prior, z)
        values["l_prior_g"], g = neg_log(p, model)
        if coefs.get("l_prior_g", 0.0):
            g_z += backward(model.D_prior, tape_p, coefs["l_prior_g"] * g)[0]
    grads_img = None
    if c.use_real:
        if Y_edit is None:
            xe, tape_ge, ye = xr, tape_g, Y
        else:
            xe, tape_ge = forward(model.G, np.hstack((z, Y_edit)))
            ye = Y_edit
        p, tape_r = forward(model.D_real, xe, ye)
        values["l_img_g"], g = neg_log(p, model)
        if coefs.get("l_img_g", 0.0):
            # the realism game is played by G alone: no gradient reaches E
            g_x = backward(model.D_real, tape_r, coefs["l_img_g"] * g)[0]
            _, grads_img = backward(model.G, tape_ge, g_x)
    if not any(coefs.values()):
        return values, [], []

    g_gin, grads_g = backward(model.G, tape_g, g_xr)
    if grads_img is not None:
        grads_g = [a + b for a, b in zip(grads_g, grads_img)]
    g_z += g_gin[:, : c.latent_dim]
    _, grads_e = backward(model.E, tape_e, g_z)
    return values, grads_e, grads_g


def d_em_pass(model: PkModel, Z: np.ndarray, Y: np.ndarray) -> tuple[float, list[np.ndarray]]:
    pred, tape = forward(model.D_em, Z)
    v, g = em_loss(pred, Y)
    return v, backward(model.D_em, tape, g)[1]


def d_prior_pass(model: PkModel, Z: np.ndarray, Zp: np.ndarray) -> tuple[float, list[np.ndarray]]:
    p_r, tape_r = forward(model.D_prior, Zp)
    p_f, tape_f = forward(model.D_prior, Z)
    a, ga = neg_log(p_r, model)
    b, gb = neg_log1m(p_f, model)
    _, gr = backward(model.D_prior, tape_r, ga)
    _, gf = backward(model.D_prior, tape_f, gb)
    return a + b, [u + v for u, v in zip(gr, gf)]


def d_real_pass(
    model: PkModel, X: np.ndarray, Xg: np.ndarray, Y: np.ndarray, Y_fake: np.ndarray | None = None
) -> tuple[float, list[np.ndarray]]:
    p_r, tape_r = forward(model.D_real, X, Y)
    p_f, tape_f = forward(model.D_real, Xg, Y if Y_fake is None else Y_fake)
    a, ga = neg_log(p_r, model)
    b, gb = neg_log1m(p_f, model)
    _, gr = backward(model.D_real, tape_r, ga)
    _, gf = backward(model.D_real, tape_f, gb)
    return a + b, [u + v for u, v in zip(gr, gf)]


# -- training -----------------------------------------------------------------------

@dataclass
class LossBreakdown:
    l_rec: float
    l_em: float
    l_iden: float
    l_prior_d: float
    l_prior_g: float
    l_img_d: float
    l_img_g: float
    total: float

    def row(self) -> list[float]:
        return [getattr(self, k) for k in LOSS_COLUMNS]


def make_optimizers(model: PkModel) -> dict[str, AdamState]:
    c = model.config
    # one flat moment vector per network keeps the update to a handful of array ops
    return {
        name: AdamState.for_params([net.flat_params()], alpha=c.alpha, beta1=c.beta1, beta2=c.beta2)
        for name, net in model.networks().items()
    }


def _apply(net: Network, state: AdamState, grads: list[np.ndarray], name: str) -> None:
    g = np.concatenate([x.ravel() for x in grads])
    if not np.all(np.isfinite(g)):
        bad = next(i for i, x in enumerate(grads) if not np.all(np.isfinite(x)))
        raise NonFiniteError(f"{name}.{net.param_names()[bad]}")
    net.load_flat(adam_step(state, [net.flat_params()], [g], [name])[0])


def _check_finite(values: dict[str, float]) -> None:
    for k, v in values.items():
        if not np.isfinite(v):
            raise NonFiniteError(k)


def train_step(
    model: PkModel,
    X: np.ndarray,
    Y: np.ndarray,
    opts: dict[str, AdamState],
    rng: np.random.Generator,
) -> LossBreakdown:
    """One discriminator phase followed by one encoder/generator phase."""
    c = model.config
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if Y.shape != (X.shape[0], 2):
        raise MissingLabelError("every training sample needs an (arousal, valence) label")
    lam = c.effective_lambdas
    Y_edit = Y[rng.permutation(len(Y))] if c.use_real and c.edit_target == "shuffled" else None

    # discriminator phase
    Z = forward(model.E, X)[0]
    d_vals = {"l_prior_d": 0.0, "l_img_d": 0.0}
    pending = []
    if c.use_em:
        v, g = d_em_pass(model, Z, Y)
        d_vals["l_em_d"] = v
        pending.append(("D_em", g))
    if c.use_prior:
        lo, hi = c.prior_range
        Zp = rng.uniform(lo, hi, size=Z.shape)
        d_vals["l_prior_d"], g = d_prior_pass(model, Z, Zp)
        pending.append(("D_prior", g))
    if c.use_real:
        Yc = Y if Y_edit is None else Y_edit
        Xg = forward(model.G, np.hstack((Z, Yc)))[0]
        d_vals["l_img_d"], g = d_real_pass(model, X, Xg, Y, Yc)
        pending.append(("D_real", g))
    _check_finite(d_vals)
    for name, g in pending:
        _apply(getattr(model, name), opts[name], g, name)

    # encoder/generator phase
    coefs = dict(zip(EG_TERMS, lam))
    values, grads_e, grads_g = eg_pass(model, X, Y, coefs, Y_edit)
    _check_finite(values)
    _apply(model.E, opts["E"], grads_e, "E")
    _apply(model.G, opts["G"], grads_g, "G")
    model.trained_steps += 1

    total = sum(coefs[t] * values[t] for t in EG_TERMS)
    return LossBreakdown(
        l_rec=values["l_rec"],
        l_em=values["l_em"],
        l_iden=values["l_iden"],
        l_prior_d=d_vals["l_prior_d"],
        l_prior_g=values["l_prior_g"],
        l_img_d=d_vals["l_img_d"],
        l_img_g=values["l_img_g"],
        total=total,
    )


def fit(
    model: PkModel,
    X: np.ndarray,
    Y: np.ndarray,
    steps: int,
    seed: int = 0,
    log_every: int = 0,
) -> list[tuple[int, LossBreakdown]]:
    """Train for ``steps`` minibatch steps; returns ``(step, losses)`` every
    ``log_every`` steps (and the last step)."""
    rng = np.random.default_rng(seed)
    opts = make_optimizers(model)
    n = X.shape[0]
    bs = min(model.config.batch_size, n)
    history = []
    for step in range(1, steps + 1):
        idx = rng.integers(0, n, size=bs)
        lb = train_step(model, X[idx], Y[idx], opts, rng)
        if (log_every and step % log_every == 0) or step == steps:
            history.append((step, lb))
    return history


def train_probe(
    model: PkModel,
    X: np.ndarray,
    Y: np.ndarray,
    steps: int,
    seed: int = 0,
    alpha: float = 1e-3,
    beta1: float = 0.9,
) -> Network:
    """Affect read-out with the D_em topology, trained on frozen latents.

    Used to score variants that have no D_em of their own. It is an evaluation
    instrument, so it gets its own (faster) Adam settings; batch size follows
    the model config.
    """
    c = model.config
    rng = np.random.default_rng([seed, 11])
    probe = build_network(rng, (c.latent_dim, c.em_hidden, 2), ["relu", "tanh"])
    state = AdamState.for_params([probe.flat_params()], alpha=alpha, beta1=beta1, beta2=c.beta2)
    Z = encode(model, X)
    Y = np.asarray(Y, dtype=np.float64)
    bs = min(c.batch_size, len(Z))
    for _ in range(steps):
        idx = rng.integers(0, len(Z), size=bs)
        pred, tape = forward(probe, Z[idx])
        _, g = em_loss(pred, Y[idx])
        _apply(probe, state, backward(probe, tape, g)[1], "probe")
    return probe


def affect_readout(model: PkModel, X: np.ndarray, probe: Network | None = None) -> np.ndarray:
    """``(n, 2)`` affect predictions from ``probe(E(x))``, or ``D_em(E(x))`` when
    no probe is given."""
    head = model.D_em if probe is None else probe
    return forward(head, encode(model, X))[0]


# -- gradient verification ------------------------------------------------------------

def gradcheck_components(
    model: PkModel,
    X: np.ndarray,
    Y: np.ndarray,
    rng: np.random.Generator,
    eps: float = 1e-5,
    per_block: int | None = None,
) -> dict[str, float]:
    """Max relative gradient error for every enabled loss and the weighted total.

    The encoder/generator terms are checked against the parameters each one
    trains; the discriminator objectives against their own parameters.
    ``per_block`` subsamples the entries of each parameter array; entries
    whose perturbation straddles a relu switch are skipped.
    """
    c = model.config
    results: dict[str, float] = {}
    Y_edit = Y[rng.permutation(len(Y))] if c.use_real and c.edit_target == "shuffled" else None

    def value(coefs):
        def f():
            vals = eg_pass(model, X, Y, {}, Y_edit)[0]
            return sum(coefs.get(t, 0.0) * vals[t] for t in EG_TERMS)
        return f

    def check(coefs):
        # E never sees the realism term, so its numeric reference omits it
        _, ge, gg = eg_pass(model, X, Y, coefs, Y_edit)
        coefs_e = {t: v for t, v in coefs.items() if t != "l_img_g"}
        err_e, _ = check_gradients(value(coefs_e), model.E.params(), ge, eps, per_block, rng, skip_kinks=True)
        err_g, _ = check_gradients(value(coefs), model.G.params(), gg, eps, per_block, rng, skip_kinks=True)
        return max(err_e, err_g)

    enabled = {"l_rec": True, "l_em": c.use_em, "l_iden": True, "l_prior_g": c.use_prior, "l_img_g": c.use_real}
    for term in EG_TERMS:
        if enabled[term]:
            results[term] = check({term: 1.0})
    results["total"] = check(dict(zip(EG_TERMS, c.effective_lambdas)))

    Z = encode(model, X)
    if c.use_em:
        _, g = d_em_pass(model, Z, Y)
        results["l_em_d"], _ = check_gradients(
            lambda: d_em_pass(model, Z, Y)[0], model.D_em.params(), g, eps, per_block, rng, skip_kinks=True
        )
    if c.use_prior:
        lo, hi = c.prior_range
        Zp = rng.uniform(lo, hi, size=Z.shape)
        _, g = d_prior_pass(model, Z, Zp)
        results["l_prior_d"], _ = check_gradients(
            lambda: d_prior_pass(model, Z, Zp)[0], model.D_prior.params(), g, eps, per_block, rng, skip_kinks=True
        )
    if c.use_real:
        Yc = Y if Y_edit is None else Y_edit
        Xg = generate(model, Z, Yc)
        _, g = d_real_pass(model, X, Xg, Y, Yc)
        results["l_img_d"], _ = check_gradients(
            lambda: d_real_pass(model, X, Xg, Y, Yc)[0], model.D_real.params(), g, eps, per_block, rng, skip_kinks=True
        )
    return results


# -- checkpoints ---------------------------------------------------------------------

def model_to_dict(model: PkModel) -> dict:
    cfg = asdict(model.config)
    return {
        "config": cfg,
        "lambdas": list(model.config.lambdas),
        "prior_range": list(model.config.prior_range),
        "trained_steps": model.trained_steps,
        "networks": {name: network_to_dict(net) for name, net in model.networks().items()},
        "surrogate": network_to_dict(model.surrogate),
    }


def model_from_dict(d: dict) -> PkModel:
    known = {f.name for f in fields(PkConfig)}
    cfg = PkConfig(**{k: v for k, v in d["config"].items() if k in known})
    nets = {name: network_from_dict(v) for name, v in d["networks"].items()}
    return PkModel(
        cfg,
        surrogate=network_from_dict(d["surrogate"]),
        trained_steps=int(d.get("trained_steps", 0)),
        **nets,
    )


def save_model(model: PkModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path) -> PkModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
