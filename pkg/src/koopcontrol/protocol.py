"""Two-phase remote-control protocol over lossy links.

Phase 1 (training): the sensor encodes each sampled state and ships
(latent, state) packets uplink; the controller assembles training windows,
computes the sensing loss server-side, steps its own parameters, and returns
the boundary gradient for the encoder. Lost packets are patched in by
rolling the latent model forward from the last delivery; windows whose
anchor never arrived are dropped. The actuator meanwhile trains the
controlling model locally from the actions it received downlink.

Phase 2 (predictive operation): training traffic stops. The controller keeps
a latent estimate (refreshed on uplink deliveries, rolled forward through
the Koopman blocks otherwise) and sends LQR actions downlink; the actuator
applies received actions and rides out downlink outages by predicting the
missing commands with the controlling model.

The split trainer and the centralized reference share one batch-step core,
and the centralized path backpropagates in the same two stages (server
graph first, encoder graph seeded with the boundary gradient), so with an
ideal link the two produce bit-identical parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import channel, dynamics, koopman
from .autodiff import Tensor, backward
from .koopman import WindowBatch
from .neural import Adam


class ColdStartError(RuntimeError):
    """No prior reception to predict from."""


# ---------------------------------------------------------------------------
# messages and records
# ---------------------------------------------------------------------------

BOUNDARY_DIRECTIONS = ("activations_up", "gradient_down", "action_down")


@dataclass
class SplitBoundaryMessage:
    direction: str
    payload: np.ndarray
    bits: int

    def __post_init__(self):
        if self.direction not in BOUNDARY_DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")
        self.payload = np.asarray(self.payload, dtype=np.float64)


@dataclass
class LoopRecord:
    index: int
    uplink_delivered: bool | None      # None when no uplink was attempted
    downlink_delivered: bool
    state_source: str                  # received | predicted | cold
    state_depth: int
    action_source: str                 # received | predicted | held | cold
    action_depth: int
    tau_comm_up: float
    tau_comm_down: float
    tau_comp: float
    command: float
    applied: float
    state: np.ndarray = field(repr=False)

    def to_dict(self):
        return {
            "index": self.index,
            "uplink_delivered": self.uplink_delivered,
            "downlink_delivered": self.downlink_delivered,
            "state_source": self.state_source,
            "state_depth": self.state_depth,
            "action_source": self.action_source,
            "action_depth": self.action_depth,
            "tau_comm_up": self.tau_comm_up,
            "tau_comm_down": self.tau_comm_down,
            "tau_comp": self.tau_comp,
            "command": self.command,
            "applied": self.applied,
            "state": np.asarray(self.state).tolist(),
        }


def write_records(records, path):
    """Newline-delimited JSON, one loop per line."""
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict()))
            fh.write("\n")


@dataclass
class PhaseRecord:
    phase: str = "training"            # training | predictive
    transition_epoch: int | None = None
    transition_val_loss: float | None = None


# ---------------------------------------------------------------------------
# early stopping / phase switch
# ---------------------------------------------------------------------------

class EarlyStopping:
    """Stop when the validation loss has not improved by min_delta for
    `patience` consecutive epochs."""

    def __init__(self, patience=10, min_delta=1e-4):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience = patience
        self.min_delta = min_delta
        self.best = None
        self.stale = 0

    def update(self, val_loss):
        val_loss = float(val_loss)
        if self.best is None:
            self.best = val_loss
            self.stale = 0
            return False
        if self.best - val_loss >= self.min_delta:
            self.best = val_loss
            self.stale = 0
            return False
        self.stale += 1
        return self.stale >= self.patience


def switch_to_phase2(history, patience=10, min_delta=1e-4):
    """Decide from a validation-loss history whether training is done."""
    stopper = EarlyStopping(patience=patience, min_delta=min_delta)
    stop = False
    for v in history:
        stop = stopper.update(v)
    return stop


# ---------------------------------------------------------------------------
# missing-data prediction
# ---------------------------------------------------------------------------

def handle_missing_state(model, last_y, depth, controls, decode_u=None):
    """Estimate (latent, state) `depth` loops past the last received y.

    `controls` are the commands issued for the elapsed loops (row 0 pairs
    with last_y's own control). The state estimate is decoded with
    `decode_u`, defaulting to the freshest issued command. Raises
    ColdStartError when nothing was ever received."""
    if last_y is None:
        raise ColdStartError("no reception to predict from")
    if depth < 1:
        raise ValueError("depth must be >= 1")
    controls = np.asarray(controls, dtype=np.float64).reshape(-1, model.q)
    if controls.shape[0] != depth:
        raise ValueError("need exactly one issued control per missed loop")
    lat = koopman.rollout_latent(model, last_y, controls)[-1]
    if decode_u is None:
        decode_u = controls[-1]
    state = model.decode(np.concatenate([lat, np.ravel(decode_u)]))
    return lat, state


# ---------------------------------------------------------------------------
# phase 1: split sensing trainer
# ---------------------------------------------------------------------------

@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    batches: int
    packets_sent: int = 0
    packets_lost: int = 0
    windows_dropped: int = 0
    encoder_updates_skipped: int = 0


@dataclass
class TrainingResult:
    history: list
    stopped_early: bool
    phase: PhaseRecord

    @property
    def epochs(self):
        return len(self.history)

    @property
    def best_val(self):
        vals = [s.val_loss for s in self.history
                if np.isfinite(s.val_loss)]
        return min(vals) if vals else float("nan")


class SensingTrainer:
    """Runs phase-1 epochs for the sensing autoencoder.

    `uplink=None` trains centralized (no packetization); any link object
    with a .transmit(payload, bits) method enables the split path. The
    gradient downlink is lossless unless `impair_gradients` is set, in which
    case `gradient_link` carries one packet per batch and a loss skips that
    batch's encoder update."""

    def __init__(self, model, schedule, train_windows, val_windows,
                 uplink=None, coeffs=None, q_x=None, batch_size=64,
                 lr=1e-4, shuffle_seed=0, max_batches_per_epoch=None,
                 impair_gradients=False, gradient_link=None):
        self.model = model
        self.schedule = schedule
        self.coeffs = coeffs or koopman.SensingCoefficients()
        self.q_x = np.eye(model.p) if q_x is None else np.asarray(q_x, float)
        self.train_states, self.train_actions = train_windows
        self.val_states, self.val_actions = val_windows
        self.uplink = uplink
        self.batch_size = int(batch_size)
        self.max_batches = max_batches_per_epoch
        self.impair_gradients = bool(impair_gradients)
        self.gradient_link = gradient_link
        if self.impair_gradients and self.gradient_link is None:
            raise ValueError("impair_gradients requires a gradient_link")
        self.opt_server = Adam(model.server_parameters(), lr=lr)
        self.opt_encoder = Adam(model.encoder_parameters(), lr=lr)
        self.shuffle_rng = np.random.default_rng(shuffle_seed)
        self.epoch = 0
        self._uplink_bits = channel.payload_bits(model.d + model.p)

    # -- transport ---------------------------------------------------------

    def _transport(self, latent_vals, states, actions):
        """Ship per-sample (latent, state) packets through the uplink and
        rebuild the controller-side batch. Returns (kept row indices,
        received latents, received states, delivered mask, loss count)."""
        b, t = states.shape[0], states.shape[1]
        d, p = self.model.d, self.model.p
        if self.uplink is None:
            mask = np.ones((b, t), dtype=bool)
            return np.arange(b), latent_vals.copy(), states.copy(), mask, 0
        recv_lat = np.zeros_like(latent_vals)
        recv_states = np.zeros_like(states)
        mask = np.zeros((b, t), dtype=bool)
        lost = 0
        for i in range(b):
            for j in range(t):
                pkt = np.concatenate([latent_vals[i, j], states[i, j]])
                out = self.uplink.transmit(pkt, self._uplink_bits)
                if out.delivered:
                    recv_lat[i, j] = out.payload[:d]
                    recv_states[i, j] = out.payload[d:]
                    mask[i, j] = True
                else:
                    lost += 1
        kept = np.flatnonzero(mask[:, 0])
        # fill interior losses by rolling from the last delivery in-window;
        # fills are data, not graph nodes
        for i in kept:
            for j in range(1, t):
                if mask[i, j]:
                    continue
                j0 = max(jj for jj in range(j) if mask[i, jj])
                y_last = np.concatenate([recv_lat[i, j0], actions[i, j0]])
                lat, est = handle_missing_state(
                    self.model, y_last, j - j0,
                    actions[i, j0:j], decode_u=actions[i, j])
                recv_lat[i, j] = lat
                recv_states[i, j] = est
        return kept, recv_lat, recv_states, mask, lost

    # -- one mini-batch ----------------------------------------------------

    def _batch_step(self, states, actions):
        b, t = states.shape[0], states.shape[1]
        # stage A: sensor-side encode (graph kept for the second stage)
        enc_nodes = [self.model.encoder.forward(states[:, j, :])
                     for j in range(t)]
        latent_vals = np.stack([n.value for n in enc_nodes], axis=1)

        kept, recv_lat, recv_states, mask, lost = self._transport(
            latent_vals, states, actions)
        dropped = b - kept.size
        if kept.size == 0:
            return None, lost, dropped, False

        # stage B: controller-side loss on received (or filled) data
        leaves = [Tensor(recv_lat[kept, j, :], requires_grad=True)
                  for j in range(t)]
        batch = WindowBatch(recv_states[kept], actions[kept])
        loss = koopman.total_sensing_loss(
            self.model, batch, self.schedule, self.coeffs, self.q_x,
            latents=leaves)
        if not np.isfinite(loss.value):
            raise FloatingPointError(
                f"sensing loss diverged at epoch {self.epoch}")
        backward(loss)

        # boundary gradient: zero where the sensor's transmission never
        # reached the loss (losses and drops), then ship it back
        boundary = np.zeros_like(latent_vals)
        for j, leaf in enumerate(leaves):
            if leaf.grad is not None:
                boundary[kept, j, :] = leaf.grad
        boundary *= mask[:, :, None]

        encoder_update = True
        if self.impair_gradients:
            msg = SplitBoundaryMessage(
                "gradient_down", boundary,
                channel.payload_bits(boundary.size))
            out = self.gradient_link.transmit(msg.payload, msg.bits)
            if out.delivered:
                boundary = out.payload.reshape(boundary.shape)
            else:
                encoder_update = False

        if encoder_update:
            for j, node in enumerate(enc_nodes):
                backward(node, seed=boundary[:, j, :])
            self.opt_encoder.step()
        self.opt_server.step()
        self.opt_encoder.zero_grad()
        self.opt_server.zero_grad()
        return float(loss.value), lost, dropped, not encoder_update

    # -- epoch driver ------------------------------------------------------

    def run_epoch(self):
        """One pass: shuffle windows, stream batches through the link, step
        both parameter partitions, then score clean validation windows."""
        self.epoch += 1
        n = self.train_states.shape[0]
        order = self.shuffle_rng.permutation(n)
        starts = range(0, n, self.batch_size)
        losses = []
        sent = lost_total = dropped_total = skipped = 0
        batches = 0
        for s in starts:
            if self.max_batches is not None and batches >= self.max_batches:
                break
            idx = order[s:s + self.batch_size]
            states = self.train_states[idx]
            actions = self.train_actions[idx]
            sent += states.shape[0] * states.shape[1] if self.uplink else 0
            loss, lost, dropped, enc_skipped = self._batch_step(states, actions)
            batches += 1
            lost_total += lost
            dropped_total += dropped
            skipped += int(enc_skipped)
            if loss is not None:
                losses.append(loss)
        return EpochStats(
            epoch=self.epoch,
            train_loss=float(np.mean(losses)) if losses else float("nan"),
            val_loss=self.validation_loss(),
            batches=batches,
            packets_sent=sent,
            packets_lost=lost_total,
            windows_dropped=dropped_total,
            encoder_updates_skipped=skipped,
        )

    def validation_loss(self, chunk=1024):
        """Total sensing loss on clean validation windows (no channel)."""
        n = self.val_states.shape[0]
        if n == 0:
            return float("nan")
        total = 0.0
        for s in range(0, n, chunk):
            batch = WindowBatch(self.val_states[s:s + chunk],
                                self.val_actions[s:s + chunk])
            loss = koopman.total_sensing_loss(
                self.model, batch, self.schedule, self.coeffs, self.q_x)
            total += float(loss.value) * batch.size
        return total / n


# ---------------------------------------------------------------------------
# phase 1: actuator-side controlling trainer
# ---------------------------------------------------------------------------

def receive_action_stream(trajectories, link, q=1):
    """Stream each trajectory's commands through the downlink once, as the
    actuator would have received them. Returns per-trajectory (received
    actions, delivered mask)."""
    bits = channel.payload_bits(q)
    received = []
    for traj in trajectories:
        acts = np.zeros_like(traj.actions)
        mask = np.zeros(len(traj), dtype=bool)
        for m in range(len(traj)):
            out = link.transmit(traj.actions[m], bits)
            if out.delivered:
                acts[m] = out.payload
                mask[m] = True
        received.append((acts, mask))
    return received


def controlling_windows(trajectories, received, depth):
    """Windows of (true states, received actions) where every action packet
    in the window arrived; lossy windows are dropped rather than filled."""
    s_parts, a_parts = [], []
    t = depth + 1
    for traj, (acts, mask) in zip(trajectories, received):
        n = len(traj)
        if n < t:
            continue
        idx = np.arange(n - t + 1)[:, None] + np.arange(t)[None, :]
        keep = mask[idx].all(axis=1)
        if keep.any():
            s_parts.append(traj.states[idx[keep]])
            a_parts.append(acts[idx[keep]])
    if not s_parts:
        raise ValueError("every window lost at least one action packet")
    return np.concatenate(s_parts), np.concatenate(a_parts)


class ControllingTrainer:
    """Local training of the action model at the actuator.

    The encoder is the sensing snapshot: latents enter the loss as detached
    values and only the action Koopman matrix and the actuator decoder are
    stepped."""

    def __init__(self, model, schedule, train_windows, val_windows,
                 coeffs=None, batch_size=64, lr=1e-4, shuffle_seed=0,
                 max_batches_per_epoch=None):
        self.model = model
        self.schedule = schedule
        self.coeffs = coeffs or koopman.ControllingCoefficients()
        self.train_states, self.train_actions = train_windows
        self.val_states, self.val_actions = val_windows
        self.batch_size = int(batch_size)
        self.max_batches = max_batches_per_epoch
        self.opt = Adam(model.local_parameters(), lr=lr)
        self.shuffle_rng = np.random.default_rng(shuffle_seed)
        self.epoch = 0

    def _latent_leaves(self, states):
        t = states.shape[1]
        return [Tensor(self.model.encode(states[:, j, :])) for j in range(t)]

    def _loss(self, states, actions):
        batch = WindowBatch(states, actions)
        return koopman.total_controlling_loss(
            self.model, batch, self.schedule, self.coeffs,
            latents=self._latent_leaves(states))

    def run_epoch(self):
        self.epoch += 1
        n = self.train_states.shape[0]
        order = self.shuffle_rng.permutation(n)
        losses = []
        batches = 0
        for s in range(0, n, self.batch_size):
            if self.max_batches is not None and batches >= self.max_batches:
                break
            idx = order[s:s + self.batch_size]
            loss = self._loss(self.train_states[idx], self.train_actions[idx])
            if not np.isfinite(loss.value):
                raise FloatingPointError(
                    f"controlling loss diverged at epoch {self.epoch}")
            backward(loss)
            self.opt.step()
            self.opt.zero_grad()
            losses.append(float(loss.value))
            batches += 1
        return EpochStats(
            epoch=self.epoch,
            train_loss=float(np.mean(losses)) if losses else float("nan"),
            val_loss=self.validation_loss(),
            batches=batches,
        )

    def validation_loss(self, chunk=1024):
        n = self.val_states.shape[0]
        if n == 0:
            return float("nan")
        total = 0.0
        for s in range(0, n, chunk):
            loss = self._loss(self.val_states[s:s + chunk],
                              self.val_actions[s:s + chunk])
            total += float(loss.value) * min(chunk, n - s)
        return total / n


def fit_with_early_stopping(trainer, max_epochs, patience=10, min_delta=1e-4,
                            on_epoch=None):
    """Run epochs until the stopper fires or the budget runs out. Returns a
    TrainingResult whose phase record marks the switch point."""
    stopper = EarlyStopping(patience=patience, min_delta=min_delta)
    history = []
    stopped = False
    for _ in range(max_epochs):
        stats = trainer.run_epoch()
        history.append(stats)
        if on_epoch is not None:
            on_epoch(stats)
        if stopper.update(stats.val_loss):
            stopped = True
            break
    phase = PhaseRecord(phase="predictive",
                        transition_epoch=history[-1].epoch if history else None,
                        transition_val_loss=history[-1].val_loss if history else None)
    return TrainingResult(history=history, stopped_early=stopped, phase=phase)


# ---------------------------------------------------------------------------
# phase 1 over a live plant
# ---------------------------------------------------------------------------

class LivePlantSession:
    """Phase-1 training with the controller in the loop instead of a frozen
    dataset. Each epoch collects one fresh closed-loop trajectory under the
    current policy (the local-linearization baseline until a Koopman gain is
    set, the latent LQR afterwards), appends its windows to the training
    pool, and runs a normal split epoch over the pool. Set `gain` whenever a
    Riccati refresh succeeds to move the collection policy over."""

    def __init__(self, system, baseline, trainer, gen_cfg, plant_rng,
                 uplink, n_steps):
        self.system = system
        self.baseline = baseline
        self.trainer = trainer
        self.gen_cfg = gen_cfg
        self.plant_rng = plant_rng
        self.uplink = uplink
        self.n_steps = n_steps
        self.gain = None

    def collect(self):
        """One trajectory driven by the controller's received (or predicted)
        view of the state. Returns the true states and applied commands."""
        model = self.trainer.model
        x = self.plant_rng.uniform(self.gen_cfg.ic_low, self.gen_cfg.ic_high,
                                   size=dynamics.STATE_DIM)
        bits = channel.payload_bits(model.d + model.p)
        states = np.empty((self.n_steps, dynamics.STATE_DIM))
        actions = np.empty((self.n_steps, 1))
        issued = np.zeros((self.n_steps, 1))
        anchor_lat = None
        anchor_m = -1
        for m in range(self.n_steps):
            out = self.uplink.transmit(
                np.concatenate([model.encode(x), x]), bits)
            if out.delivered:
                lat_est = out.payload[:model.d]
                state_est = out.payload[model.d:]
                anchor_lat, anchor_m = lat_est.copy(), m
            elif anchor_lat is not None:
                depth = m - anchor_m
                y_last = np.concatenate([anchor_lat, issued[anchor_m]])
                lat_est, state_est = handle_missing_state(
                    model, y_last, depth, issued[anchor_m:m])
            else:
                # cold start: hold zero until something arrives
                lat_est, state_est = None, np.zeros(dynamics.STATE_DIM)

            if self.gain is not None and lat_est is not None:
                u = float(np.atleast_1d(-self.gain @ lat_est)[0])
            else:
                u = float(np.atleast_1d(self.baseline.action(state_est))[0])
            if self.gen_cfg.explore_std > 0.0:
                u += self.plant_rng.normal(0.0, self.gen_cfg.explore_std)
            issued[m, 0] = u
            states[m] = x
            actions[m, 0] = u
            if m < self.n_steps - 1:
                x = dynamics.step_plant(x, u, self.system.params,
                                        self.system.integrator,
                                        noise=self.system.noise,
                                        rng=self.plant_rng)
        return states, actions

    def run_epoch(self):
        states, actions = self.collect()
        t = self.trainer.schedule.depth + 1
        idx = np.arange(len(states) - t + 1)[:, None] + np.arange(t)[None, :]
        if self.trainer.train_states.size:
            self.trainer.train_states = np.concatenate(
                [self.trainer.train_states, states[idx]])
            self.trainer.train_actions = np.concatenate(
                [self.trainer.train_actions, actions[idx]])
        else:
            self.trainer.train_states = states[idx]
            self.trainer.train_actions = actions[idx]
        return self.trainer.run_epoch()


# ---------------------------------------------------------------------------
# phase 2: predictive closed loop
# ---------------------------------------------------------------------------

@dataclass
class ControlSystem:
    """Everything the closed loop needs in one place."""
    params: dynamics.CartPoleParams
    integrator: dynamics.IntegratorConfig
    noise: dynamics.NoiseSpec
    sensing: koopman.SensingModel
    gain: np.ndarray                      # latent LQR gain (q, d)
    controlling: koopman.ControllingModel | None = None
    tau_comp: float = 0.001


@dataclass
class Phase2Config:
    n_loops: int = 1000
    uplink_refresh: bool = True      # False = pure prediction after loop 0
    action_fallback: str = "predict"  # predict | hold
    action_predict_mode: str = "hold"  # latent handling inside predict_actions
    latent_fallback: str = "predict"   # controller side: predict | hold

    def __post_init__(self):
        if self.action_fallback not in ("predict", "hold"):
            raise ValueError("action_fallback must be predict or hold")
        if self.latent_fallback not in ("predict", "hold"):
            raise ValueError("latent_fallback must be predict or hold")


@dataclass
class Phase2Result:
    states: np.ndarray      # (n_loops+1, p), row 0 is x0
    commands: np.ndarray    # (n_loops, q) controller-issued
    applied: np.ndarray     # (n_loops, q) actuator-applied
    records: list


def run_phase2_loop(system, x0, uplink, downlink, config, plant_rng=None):
    """Predictive remote control for config.n_loops control periods.

    Per loop: uplink the fresh latent (unless in pure-prediction mode),
    compute u = -K g, downlink it, let the actuator apply the received or
    predicted command, then step the plant. Exactly one of received or
    predicted is used on each side each loop, which the records reflect."""
    model = system.sensing
    ctrl = system.controlling
    x = np.asarray(x0, dtype=np.float64).copy()
    n = config.n_loops
    d, q = model.d, model.q
    up_bits = channel.payload_bits(d)
    down_bits = channel.payload_bits(q)

    states = np.empty((n + 1, x.size))
    states[0] = x
    commands = np.zeros((n, q))
    applied = np.zeros((n, q))
    records = []

    ctrl_lat = None           # controller's latent estimate
    ctrl_depth = 0
    last_cmd = np.zeros(q)
    anchor_z = None           # actuator's [g(x); u] at last downlink delivery
    down_losses = 0
    last_applied = np.zeros(q)

    for m in range(n):
        # --- uplink ---------------------------------------------------
        attempt_uplink = config.uplink_refresh or m == 0
        up_out = None
        if attempt_uplink:
            up_out = uplink.transmit(model.encode(x), up_bits)
        if up_out is not None and up_out.delivered:
            ctrl_lat = up_out.payload
            ctrl_depth = 0
            state_source = "received"
        elif ctrl_lat is not None:
            if config.latent_fallback == "predict":
                ctrl_lat = koopman.latent_step(model, ctrl_lat, last_cmd)
            ctrl_depth += 1
            state_source = "predicted"
        else:
            state_source = "cold"

        # --- controller command ----------------------------------------
        if ctrl_lat is not None:
            u_cmd = np.atleast_1d(-system.gain @ ctrl_lat)
        else:
            u_cmd = np.zeros(q)   # cold start: hold zero
        last_cmd = u_cmd
        commands[m] = u_cmd

        # --- downlink ---------------------------------------------------
        down_out = downlink.transmit(u_cmd, down_bits)
        if down_out.delivered:
            u_app = np.atleast_1d(down_out.payload)
            down_losses = 0
            action_source = "received"
            anchor_z = np.concatenate([model.encode(x), u_app])
        else:
            down_losses += 1
            if config.action_fallback == "predict" and ctrl is not None \
                    and anchor_z is not None:
                seq = koopman.predict_actions(
                    ctrl, anchor_z, down_losses,
                    mode=config.action_predict_mode, sensing=model)
                u_app = seq[-1]
                action_source = "predicted"
            elif anchor_z is not None or m > 0:
                u_app = last_applied
                action_source = "held"
            else:
                u_app = np.zeros(q)
                action_source = "cold"
        applied[m] = u_app
        last_applied = u_app

        records.append(LoopRecord(
            index=m,
            uplink_delivered=None if up_out is None else up_out.delivered,
            downlink_delivered=down_out.delivered,
            state_source=state_source,
            state_depth=ctrl_depth if state_source != "received" else 0,
            action_source=action_source,
            action_depth=down_losses,
            tau_comm_up=up_out.tau_comm if up_out is not None else float("nan"),
            tau_comm_down=down_out.tau_comm,
            tau_comp=system.tau_comp,
            command=float(u_cmd[0]),
            applied=float(u_app[0]),
            state=x.copy(),
        ))

        x = dynamics.step_plant(x, u_app, system.params, system.integrator,
                                noise=system.noise, rng=plant_rng)
        states[m + 1] = x

    return Phase2Result(states=states, commands=commands, applied=applied,
                        records=records)
