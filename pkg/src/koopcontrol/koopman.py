"""Split Koopman autoencoders: sensing (state) and controlling (action) models.

The sensing model lifts the state into a d-dimensional latent through an
encoder g and evolves the augmented vector y_m = [g(x_m); u_m] linearly,

    g(x_{m+1}) ~ K11 g(x_m) + K12 u_m,

with K_s = [K11 | K12] learned jointly with g, a decoder g^-1 taking y back
to the state, and a cost matrix that makes quadratic state costs computable
in latent space. Multi-step symbols like K_s^k y_m always mean the iterated
one-step map fed a control sequence, never a literal matrix power.

The controlling model reuses the same encoder and evolves the *action*:
u_{m+1} ~ K21' g(x_m) + K22' u_m, with its own decoder back to the state.
The actuator uses it to ride out downlink outages.

Training losses are built on the autodiff tape. Each loss accepts
precomputed latent tensors so a split deployment can inject latents as
received leaves (gradients then stop at the transmission boundary and are
shipped back separately); when omitted, latents are encoded in-graph.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .autodiff import (Parameter, Tensor, add_scalars, backward, block_affine,
                       concat_cols, constant, mse_flat, mse_rows, quad_rows,
                       scale)
from .neural import (Network, make_mlp, network_from_dict, network_to_dict)

CHECKPOINT_FORMAT = "koopcontrol-checkpoint-v1"

SCHEDULE_MODES = ("special", "general")

DEFAULT_ENCODER_HIDDEN = (128, 64, 32)


@dataclass(frozen=True)
class WeightSchedule:
    """Which starting offsets l feed the depth-M_d rollouts, and how they are
    weighted. "special" keeps only l=0 with weight one; "general" averages
    over l = 0..M_d-1."""
    mode: str
    depth: int

    def __post_init__(self):
        if self.mode not in SCHEDULE_MODES:
            raise ValueError(f"unknown schedule mode {self.mode!r}")
        if self.depth < 1:
            raise ValueError("prediction depth must be >= 1")

    def weights(self):
        if self.mode == "special":
            terms = [(0, 1.0)]
        else:
            terms = [(l, 1.0 / self.depth) for l in range(self.depth)]
        total = sum(w for _, w in terms)
        assert abs(total - 1.0) < 1e-12, "schedule weights must sum to 1"
        if self.mode == "special":
            assert len(terms) == 1
        return terms


@dataclass(frozen=True)
class SensingCoefficients:
    c1: float = 0.5
    c2: float = 1.0
    c3: float = 0.5
    c4: float = 1.0


@dataclass(frozen=True)
class ControllingCoefficients:
    c1: float = 0.5
    c2: float = 1.0
    c3: float = 0.5


def project_psd(m):
    """Nearest positive semidefinite matrix: symmetrize, then clip negative
    eigenvalues to zero. Idempotent."""
    m = np.asarray(m, dtype=np.float64)
    sym = 0.5 * (m + m.T)
    w, v = np.linalg.eigh(sym)
    w = np.clip(w, 0.0, None)
    out = (v * w) @ v.T
    return 0.5 * (out + out.T)


def _decoder_dims(p, d, q, encoder_hidden):
    # two width-(d+q) layers, then the encoder stack mirrored
    return [d + q, d + q, d + q, *reversed(encoder_hidden), p]


class SensingModel:
    """Encoder + state Koopman matrix + decoder + trainable cost matrix."""

    def __init__(self, encoder, koopman, decoder, cost):
        self.encoder = encoder
        self.decoder = decoder
        self.koopman = koopman if isinstance(koopman, Parameter) \
            else Parameter(koopman, name="K_s")
        self.cost = cost if isinstance(cost, Parameter) \
            else Parameter(cost, name="cost")
        self.p = encoder.d_in
        self.d = encoder.d_out
        self.q = self.koopman.value.shape[1] - self.d
        if self.koopman.value.shape[0] != self.d or self.q < 1:
            raise ValueError("state Koopman matrix must be (d, d+q)")
        if decoder.d_in != self.d + self.q or decoder.d_out != self.p:
            raise ValueError("decoder must map (d+q) -> p")
        if self.cost.value.shape != (self.d, self.d):
            raise ValueError("cost matrix must be (d, d)")

    @classmethod
    def build(cls, p, d, q, rng, encoder_hidden=DEFAULT_ENCODER_HIDDEN):
        encoder = make_mlp([p, *encoder_hidden, d], rng)
        decoder = make_mlp(_decoder_dims(p, d, q, encoder_hidden), rng)
        # start the latent map near "latent persists, control ignored";
        # a small perturbation breaks symmetry without risking unstable
        # rollouts in the first epochs
        k = np.concatenate([np.eye(d), np.zeros((d, q))], axis=1)
        k += 0.01 * rng.standard_normal(k.shape)
        cost = np.eye(d)
        return cls(encoder, Parameter(k, name="K_s"), decoder,
                   Parameter(cost, name="cost"))

    # numpy views of the Koopman blocks
    @property
    def k11(self):
        return self.koopman.value[:, :self.d]

    @property
    def k12(self):
        return self.koopman.value[:, self.d:]

    def encode(self, x):
        return self.encoder.predict(x)

    def decode(self, y):
        return self.decoder.predict(y)

    def cost_psd(self):
        return project_psd(self.cost.value)

    def encoder_parameters(self):
        return self.encoder.parameters()

    def server_parameters(self):
        """Everything trained on the controller side of the split."""
        return [self.koopman, *self.decoder.parameters(), self.cost]

    def parameters(self):
        return [*self.encoder_parameters(), *self.server_parameters()]


class ControllingModel:
    """Action Koopman matrix + decoder, sharing the sensing encoder."""

    def __init__(self, encoder, koopman, decoder):
        self.encoder = encoder
        self.decoder = decoder
        self.koopman = koopman if isinstance(koopman, Parameter) \
            else Parameter(koopman, name="K_a")
        self.p = encoder.d_in
        self.d = encoder.d_out
        self.q = self.koopman.value.shape[1] - self.d
        if self.koopman.value.shape[0] != self.q or self.q < 1:
            raise ValueError("action Koopman matrix must be (q, d+q)")
        if decoder.d_in != self.d + self.q or decoder.d_out != self.p:
            raise ValueError("decoder must map (d+q) -> p")

    @classmethod
    def build(cls, sensing, rng, encoder_hidden=None):
        if encoder_hidden is None:
            hidden = [layer.d_out for layer in sensing.encoder.layers[:-1]]
        else:
            hidden = list(encoder_hidden)
        p, d, q = sensing.p, sensing.d, sensing.q
        decoder = make_mlp(_decoder_dims(p, d, q, hidden), rng)
        k = np.concatenate([np.zeros((q, d)), np.eye(q)], axis=1)
        k += 0.01 * rng.standard_normal(k.shape)
        return cls(sensing.encoder, Parameter(k, name="K_a"), decoder)

    @property
    def k21(self):
        return self.koopman.value[:, :self.d]

    @property
    def k22(self):
        return self.koopman.value[:, self.d:]

    def encode(self, x):
        return self.encoder.predict(x)

    def decode(self, z):
        return self.decoder.predict(z)

    def local_parameters(self):
        """Trained at the actuator; the shared encoder is a snapshot and is
        left out on purpose."""
        return [self.koopman, *self.decoder.parameters()]

    def parameters(self):
        return [*self.encoder.parameters(), *self.local_parameters()]


# ---------------------------------------------------------------------------
# single-sample evolution and prediction (numpy, inference path)
# ---------------------------------------------------------------------------

def augmented(latent, u):
    """y = [latent; u]."""
    return np.concatenate([np.asarray(latent, dtype=np.float64).ravel(),
                           np.asarray(u, dtype=np.float64).ravel()])


def latent_step(model, latent, u):
    """One linear latent step: K11 latent + K12 u."""
    latent = np.asarray(latent, dtype=np.float64).ravel()
    u = np.asarray(u, dtype=np.float64).ravel()
    return model.k11 @ latent + model.k12 @ u


def action_step(model, latent, u):
    """One linear action step: K21' latent + K22' u."""
    latent = np.asarray(latent, dtype=np.float64).ravel()
    u = np.asarray(u, dtype=np.float64).ravel()
    return model.k21 @ latent + model.k22 @ u


def rollout_latent(model, y, controls):
    """Iterate the latent map from y = [latent; u_m] through `controls`.

    controls has one row per step; row 0 plays the role of u_m (normally it
    equals the control part of y). Returns the latent trajectory with the
    starting latent as row 0, so the result has len(controls)+1 rows."""
    y = np.asarray(y, dtype=np.float64).ravel()
    controls = np.atleast_2d(np.asarray(controls, dtype=np.float64))
    if controls.shape[1] != model.q:
        controls = controls.reshape(-1, model.q)
    lat = y[:model.d]
    out = [lat]
    for u in controls:
        lat = latent_step(model, lat, u)
        out.append(lat)
    return np.array(out)


def predict_states(model, y, depth, controls=None, policy=None):
    """Depth-k state prediction from y_m = [g(x_m); u_m].

    Each step advances the latent with the control in force, then decodes
    [latent; next control]. The next control comes from `controls` (recorded
    sequence for times m+1..m+depth) or from `policy(latent)` when running
    closed loop. Returns (depth, p) predicted states for times m+1..m+depth."""
    y = np.asarray(y, dtype=np.float64).ravel()
    if (controls is None) == (policy is None):
        raise ValueError("exactly one of controls/policy must be given")
    if controls is not None:
        controls = np.asarray(controls, dtype=np.float64).reshape(-1, model.q)
        if controls.shape[0] < depth:
            raise ValueError("need one control per predicted step")
    lat = y[:model.d]
    u = y[model.d:]
    states = []
    for k in range(depth):
        lat = latent_step(model, lat, u)
        u = controls[k] if controls is not None else np.atleast_1d(policy(lat))
        states.append(model.decode(np.concatenate([lat, u])))
    return np.array(states)


def predict_actions(model, z, depth, mode="hold", sensing=None, latents=None):
    """Depth-k action prediction from z_m = [g(x_m); u_m].

    mode "hold" keeps the anchor latent for every step (the conservative
    outage default), "advance" rolls it forward through a local copy of the
    sensing blocks using the predicted actions, "recorded" consumes a given
    latent sequence (one row per step, row 0 = anchor latent). Returns
    (depth, q) predicted actions for times m+1..m+depth."""
    z = np.asarray(z, dtype=np.float64).ravel()
    lat = z[:model.d]
    u = z[model.d:]
    if mode == "advance" and sensing is None:
        raise ValueError("advance mode needs the sensing model blocks")
    if mode == "recorded":
        latents = np.asarray(latents, dtype=np.float64).reshape(-1, model.d)
        if latents.shape[0] < depth:
            raise ValueError("need one latent per predicted step")
    actions = []
    for k in range(depth):
        if mode == "recorded":
            lat_k = latents[k]
        else:
            lat_k = lat
        u = action_step(model, lat_k, u)
        actions.append(u)
        if mode == "advance":
            lat = latent_step(sensing, lat, u)
    return np.array(actions)


# ---------------------------------------------------------------------------
# training losses (tape graph)
# ---------------------------------------------------------------------------

@dataclass
class WindowBatch:
    """A batch of length-(M_d+1) training windows.

    states:  (B, M_d+1, p) what the loss-computing side holds (received
             estimates for the sensing loss, true states for the controlling
             loss)
    actions: (B, M_d+1, q)
    """
    states: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if self.states.ndim != 3 or self.actions.ndim != 3:
            raise ValueError("window batch arrays must be 3-D")
        if self.states.shape[:2] != self.actions.shape[:2]:
            raise ValueError("states/actions disagree on batch or window size")

    @property
    def size(self):
        return self.states.shape[0]

    @property
    def depth(self):
        return self.states.shape[1] - 1


def encode_windows(model, batch):
    """In-graph latents, one (B, d) tensor per window time index."""
    return [model.encoder.forward(batch.states[:, t, :])
            for t in range(batch.depth + 1)]


def latents_as_leaves(arrays):
    """Wrap received latent arrays (B, T, d) as boundary leaf tensors."""
    arrays = np.asarray(arrays, dtype=np.float64)
    return [Tensor(arrays[:, t, :], requires_grad=True)
            for t in range(arrays.shape[1])]


def _check_depth(batch, schedule):
    if batch.depth != schedule.depth:
        raise ValueError(
            f"window depth {batch.depth} != schedule depth {schedule.depth}")


def _rollout_tensors(model, latents, batch, schedule):
    """Final-time latent tensor of each scheduled rollout: start at offset l,
    iterate to the window end feeding recorded controls."""
    finals = {}
    for l, _ in schedule.weights():
        lat = latents[l]
        for j in range(l, schedule.depth):
            lat = block_affine(lat, constant(batch.actions[:, j, :]),
                               model.koopman, model.d)
        finals[l] = lat
    return finals


def _weighted_sum(parts):
    terms = [scale(t, w) for t, w in parts]
    return add_scalars(terms) if len(terms) > 1 else terms[0]


def loss_reconstruction(model, batch, latents=None):
    """L1: anchor reconstruction through the decoder, mean over the batch."""
    if latents is None:
        latents = encode_windows(model, batch)
    y0 = concat_cols([latents[0], constant(batch.actions[:, 0, :])])
    return mse_rows(constant(batch.states[:, 0, :]), model.decoder.forward(y0))


def loss_latent_evolution(model, batch, schedule, latents=None):
    """L2: latent targets vs the schedule-weighted rollout endpoint, averaged
    over the target offsets m' = 1..M_d."""
    _check_depth(batch, schedule)
    if latents is None:
        latents = encode_windows(model, batch)
    finals = _rollout_tensors(model, latents, batch, schedule)
    pred = _weighted_sum([(finals[l], w) for l, w in schedule.weights()])
    terms = [mse_rows(latents[mp], pred) for mp in range(1, schedule.depth + 1)]
    return scale(add_scalars(terms), 1.0 / schedule.depth)


def loss_state_prediction(model, batch, schedule, latents=None):
    """L3: state targets vs the weighted sum of decoded rollout endpoints,
    each decoded with the control recorded at the window end."""
    _check_depth(batch, schedule)
    if latents is None:
        latents = encode_windows(model, batch)
    finals = _rollout_tensors(model, latents, batch, schedule)
    u_end = constant(batch.actions[:, schedule.depth, :])
    decoded = [(model.decoder.forward(concat_cols([finals[l], u_end])), w)
               for l, w in schedule.weights()]
    pred = _weighted_sum(decoded)
    terms = [mse_rows(constant(batch.states[:, mp, :]), pred)
             for mp in range(1, schedule.depth + 1)]
    return scale(add_scalars(terms), 1.0 / schedule.depth)


def loss_cost_consistency(model, batch, q_x, latents=None):
    """L4: quadratic state cost vs the latent quadratic form under the
    trainable cost matrix, at the window anchor."""
    if latents is None:
        latents = encode_windows(model, batch)
    x0 = batch.states[:, 0, :]
    q_x = np.asarray(q_x, dtype=np.float64)
    lhs = np.einsum("bi,ij,bj->b", x0, q_x, x0)
    rhs = quad_rows(latents[0], model.cost)
    return mse_flat(constant(lhs), rhs)


def total_sensing_loss(model, batch, schedule, coeffs=None, q_x=None,
                       latents=None, return_terms=False):
    """Weighted sensing loss c1 L1 + c2 L2 + c3 L3 + c4 L4 on one graph."""
    coeffs = coeffs or SensingCoefficients()
    if q_x is None:
        q_x = np.eye(model.p)
    if latents is None:
        latents = encode_windows(model, batch)
    l1 = loss_reconstruction(model, batch, latents)
    l2 = loss_latent_evolution(model, batch, schedule, latents)
    l3 = loss_state_prediction(model, batch, schedule, latents)
    l4 = loss_cost_consistency(model, batch, q_x, latents)
    total = add_scalars([scale(l1, coeffs.c1), scale(l2, coeffs.c2),
                         scale(l3, coeffs.c3), scale(l4, coeffs.c4)])
    if return_terms:
        return total, {"l1": l1, "l2": l2, "l3": l3, "l4": l4}
    return total


def _action_rollout_tensors(model, latents, batch, schedule):
    """Controlling analog of _rollout_tensors: evolve the action estimate,
    feeding the recorded latent at every intermediate step."""
    finals = {}
    for l, _ in schedule.weights():
        act = constant(batch.actions[:, l, :])
        for j in range(l, schedule.depth):
            act = block_affine(latents[j], act, model.koopman, model.d)
        finals[l] = act
    return finals


def loss_action_reconstruction(model, batch, latents=None):
    """L1': anchor state reconstruction through the actuator decoder."""
    if latents is None:
        latents = encode_windows(model, batch)
    z0 = concat_cols([latents[0], constant(batch.actions[:, 0, :])])
    return mse_rows(constant(batch.states[:, 0, :]), model.decoder.forward(z0))


def loss_action_evolution(model, batch, schedule, latents=None):
    """L2': action targets vs the weighted action-rollout endpoint."""
    _check_depth(batch, schedule)
    if latents is None:
        latents = encode_windows(model, batch)
    finals = _action_rollout_tensors(model, latents, batch, schedule)
    pred = _weighted_sum([(finals[l], w) for l, w in schedule.weights()])
    terms = [mse_rows(constant(batch.actions[:, mp, :]), pred)
             for mp in range(1, schedule.depth + 1)]
    return scale(add_scalars(terms), 1.0 / schedule.depth)


def loss_action_state_prediction(model, batch, schedule, latents=None):
    """L3': state targets vs the actuator decode of [end latent; predicted
    action]."""
    _check_depth(batch, schedule)
    if latents is None:
        latents = encode_windows(model, batch)
    finals = _action_rollout_tensors(model, latents, batch, schedule)
    lat_end = latents[schedule.depth]
    decoded = [(model.decoder.forward(concat_cols([lat_end, finals[l]])), w)
               for l, w in schedule.weights()]
    pred = _weighted_sum(decoded)
    terms = [mse_rows(constant(batch.states[:, mp, :]), pred)
             for mp in range(1, schedule.depth + 1)]
    return scale(add_scalars(terms), 1.0 / schedule.depth)


def total_controlling_loss(model, batch, schedule, coeffs=None, latents=None,
                           return_terms=False):
    """Weighted controlling loss c1' L1' + c2' L2' + c3' L3'."""
    coeffs = coeffs or ControllingCoefficients()
    if latents is None:
        latents = encode_windows(model, batch)
    l1 = loss_action_reconstruction(model, batch, latents)
    l2 = loss_action_evolution(model, batch, schedule, latents)
    l3 = loss_action_state_prediction(model, batch, schedule, latents)
    total = add_scalars([scale(l1, coeffs.c1), scale(l2, coeffs.c2),
                         scale(l3, coeffs.c3)])
    if return_terms:
        return total, {"l1": l1, "l2": l2, "l3": l3}
    return total


def loss_gradients(loss, params):
    """Backprop `loss` and return the per-parameter gradient list (zeros for
    parameters the graph never touched)."""
    backward(loss)
    return [p.grad if p.grad is not None else np.zeros_like(p.value)
            for p in params]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def checkpoint_to_dict(model, schedule=None):
    kind = "sensing" if isinstance(model, SensingModel) else "controlling"
    data = {
        "format": CHECKPOINT_FORMAT,
        "kind": kind,
        "p": model.p,
        "d": model.d,
        "q": model.q,
        "depth": schedule.depth if schedule else None,
        "schedule_mode": schedule.mode if schedule else None,
        "encoder": network_to_dict(model.encoder),
        "koopman": model.koopman.value.tolist(),
        "decoder": network_to_dict(model.decoder),
    }
    if kind == "sensing":
        data["cost"] = model.cost.value.tolist()
    return data


def checkpoint_from_dict(data, encoder=None):
    """Rebuild a model from its checkpoint dict. Pass `encoder` to re-share
    an existing encoder instance instead of loading the stored copy (the
    controlling model normally shares the sensing encoder)."""
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unknown checkpoint format {data.get('format')!r}")
    enc = encoder if encoder is not None else network_from_dict(data["encoder"])
    dec = network_from_dict(data["decoder"])
    k = Parameter(np.array(data["koopman"], dtype=np.float64))
    if data["kind"] == "sensing":
        cost = Parameter(np.array(data["cost"], dtype=np.float64))
        model = SensingModel(enc, k, dec, cost)
    else:
        model = ControllingModel(enc, k, dec)
    schedule = None
    if data.get("depth"):
        schedule = WeightSchedule(data["schedule_mode"], data["depth"])
    return model, schedule


def save_checkpoint(model, path, schedule=None):
    with open(path, "w") as fh:
        json.dump(checkpoint_to_dict(model, schedule), fh)


def load_checkpoint(path, encoder=None):
    with open(path) as fh:
        return checkpoint_from_dict(json.load(fh), encoder=encoder)
