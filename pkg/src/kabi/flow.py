"""Conditional affine coupling flow with hand-rolled reverse-mode gradients.

The flow maps coupling parameters (affinely rescaled to [-1, 1] by the prior
box) to a standard normal base, conditioned on a standardized feature vector.
Each layer transforms the unmasked parameter dims as z = theta * exp(s) + t,
with s and t produced by small ReLU MLPs fed the masked dims and the context.
For a single parameter the masked half is empty and each layer is a
context-conditioned affine map, which stays invertible and trainable.

Scale outputs pass through a smooth clamp s = s_max * tanh(raw / s_max).
Scale/shift output layers start at zero, so a fresh flow is the identity and
its density is exactly the standard normal.

Everything is numpy; gradients are exact reverse-mode, verified against
central finite differences in the test suite.
"""

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, NumericsError

__all__ = [
    "Mlp",
    "CouplingLayer",
    "FlowModel",
    "Adam",
    "train_flow",
    "save_checkpoint",
    "load_checkpoint",
]

LOG_2PI = math.log(2.0 * math.pi)


class Mlp:
    """Fully connected ReLU network with inverted dropout on hidden layers."""

    def __init__(self, input_dim, hidden_widths, output_dim, dropout, rng):
        self.input_dim = input_dim
        self.hidden_widths = tuple(hidden_widths)
        self.output_dim = output_dim
        self.dropout = dropout
        widths = [input_dim, *hidden_widths, output_dim]
        self.weights = []
        self.biases = []
        for k in range(len(widths) - 1):
            fan_in = widths[k]
            if k == len(widths) - 2:
                w = np.zeros((widths[k], widths[k + 1]))  # identity flow at init
            else:
                bound = 1.0 / math.sqrt(fan_in)
                w = rng.uniform(-bound, bound, (widths[k], widths[k + 1]))
            self.weights.append(w)
            self.biases.append(np.zeros(widths[k + 1]))

    def params(self):
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def forward(self, x, train=False, rng=None):
        h = x
        pre = []
        posts = [x]
        masks = []
        n_hidden = len(self.weights) - 1
        for k in range(n_hidden):
            a = h @ self.weights[k] + self.biases[k]
            h = np.maximum(a, 0.0)
            if train and self.dropout > 0.0:
                keep = rng.random(h.shape) >= self.dropout
                h = h * keep / (1.0 - self.dropout)
                masks.append(keep)
            else:
                masks.append(None)
            pre.append(a)
            posts.append(h)
        y = h @ self.weights[-1] + self.biases[-1]
        return y, (pre, posts, masks)

    def backward(self, dy, cache):
        pre, posts, masks = cache
        grads = [None] * (2 * len(self.weights))
        grads[-2] = posts[-1].T @ dy
        grads[-1] = dy.sum(axis=0)
        dh = dy @ self.weights[-1].T
        for k in range(len(self.weights) - 2, -1, -1):
            if masks[k] is not None:
                dh = dh * masks[k] / (1.0 - self.dropout)
            da = dh * (pre[k] > 0.0)
            grads[2 * k] = posts[k].T @ da
            grads[2 * k + 1] = da.sum(axis=0)
            dh = da @ self.weights[k].T
        return dh, grads


class CouplingLayer:
    """One conditional affine coupling transform over the parameter dims."""

    def __init__(self, mask, context_dim, hidden_widths, dropout, s_max, rng):
        self.mask = np.asarray(mask, dtype=bool)
        d = self.mask.shape[0]
        if d >= 2 and (self.mask.all() or not self.mask.any()):
            raise ConfigurationError("mask must be neither all-zero nor all-ones for dim >= 2")
        self.unmask = ~self.mask
        self.context_dim = context_dim
        self.s_max = s_max
        in_dim = int(self.mask.sum()) + context_dim
        out_dim = int(self.unmask.sum())
        self.scale_net = Mlp(in_dim, hidden_widths, out_dim, dropout, rng)
        self.shift_net = Mlp(in_dim, hidden_widths, out_dim, dropout, rng)

    def params(self):
        return self.scale_net.params() + self.shift_net.params()

    def _nets(self, x_masked, ctx, train, rng):
        inp = np.concatenate([x_masked, ctx], axis=1)
        raw_s, cache_s = self.scale_net.forward(inp, train, rng)
        t, cache_t = self.shift_net.forward(inp, train, rng)
        u = np.tanh(raw_s / self.s_max)
        s = self.s_max * u
        return s, u, t, cache_s, cache_t

    def forward(self, theta, ctx, train=False, rng=None):
        x_m = theta[:, self.mask]
        x_u = theta[:, self.unmask]
        s, u, t, cache_s, cache_t = self._nets(x_m, ctx, train, rng)
        z = theta.copy()
        z[:, self.unmask] = x_u * np.exp(s) + t
        log_det = s.sum(axis=1)
        cache = (x_u, s, u, cache_s, cache_t)
        return z, log_det, cache

    def inverse(self, z, ctx):
        x_m = z[:, self.mask]
        s, _, t, _, _ = self._nets(x_m, ctx, False, None)
        theta = z.copy()
        theta[:, self.unmask] = (z[:, self.unmask] - t) * np.exp(-s)
        return theta, -s.sum(axis=1)

    def backward(self, dz, dlogdet, cache):
        x_u, s, u, cache_s, cache_t = cache
        dz_u = dz[:, self.unmask]
        exp_s = np.exp(s)
        ds = dz_u * x_u * exp_s + dlogdet[:, None]
        draw_s = ds * (1.0 - u * u)  # d/draw of s_max * tanh(raw / s_max)
        dinp_s, grads_s = self.scale_net.backward(draw_s, cache_s)
        dinp_t, grads_t = self.shift_net.backward(dz_u, cache_t)
        n_masked = int(self.mask.sum())
        dtheta = np.zeros_like(dz)
        dtheta[:, self.unmask] = dz_u * exp_s
        dtheta[:, self.mask] = dz[:, self.mask] + dinp_s[:, :n_masked] + dinp_t[:, :n_masked]
        return dtheta, grads_s + grads_t


def _alternating_masks(param_dim, n_layers):
    if param_dim == 1:
        return [np.zeros(1, dtype=bool) for _ in range(n_layers)]
    return [np.arange(param_dim) % 2 == (layer % 2) for layer in range(n_layers)]


class FlowModel:
    """Stack of coupling layers over a standard-normal base distribution."""

    def __init__(self, layers, param_dim, context_dim, arch):
        self.layers = layers
        self.param_dim = param_dim
        self.context_dim = context_dim
        self.arch = arch
        self.training = False

    @classmethod
    def build(cls, param_dim, context_dim, n_layers=6, hidden_widths=(128, 128),
              dropout=0.1, s_max=3.0, seed=0):
        rng = np.random.default_rng(seed)
        masks = _alternating_masks(param_dim, n_layers)
        layers = [
            CouplingLayer(m, context_dim, hidden_widths, dropout, s_max, rng)
            for m in masks
        ]
        arch = {
            "param_dim": param_dim,
            "context_dim": context_dim,
            "n_layers": n_layers,
            "hidden_widths": list(hidden_widths),
            "dropout": dropout,
            "s_max": s_max,
        }
        return cls(layers, param_dim, context_dim, arch)

    def train_mode(self):
        self.training = True

    def eval_mode(self):
        self.training = False

    def parameters(self):
        out = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def _as_batch(self, theta, ctx):
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        ctx = np.atleast_2d(np.asarray(ctx, dtype=float))
        if ctx.shape[0] == 1 and theta.shape[0] > 1:
            ctx = np.broadcast_to(ctx, (theta.shape[0], ctx.shape[1]))
        if theta.shape[1] != self.param_dim or ctx.shape[1] != self.context_dim:
            raise ConfigurationError("theta/context width does not match the model")
        return theta, ctx

    def forward(self, theta, ctx, rng=None):
        """(z, log_det) of the parameter-to-base map."""
        theta, ctx = self._as_batch(theta, ctx)
        z = theta
        log_det = np.zeros(theta.shape[0])
        caches = []
        for i, layer in enumerate(self.layers):
            z, ld, cache = layer.forward(z, ctx, self.training, rng)
            if not np.all(np.isfinite(z)):
                raise NumericsError(f"non-finite output in coupling layer {i}")
            log_det += ld
            caches.append(cache)
        return z, log_det, caches

    def inverse(self, z, ctx):
        z, ctx = self._as_batch(z, ctx)
        log_det = np.zeros(z.shape[0])
        theta = z
        for i in reversed(range(len(self.layers))):
            theta, ld = self.layers[i].inverse(theta, ctx)
            if not np.all(np.isfinite(theta)):
                raise NumericsError(f"non-finite output in coupling layer {i} (inverse)")
            log_det += ld
        return theta, log_det

    def log_prob(self, theta, ctx):
        z, log_det, _ = self.forward(theta, ctx)
        base = -0.5 * (z ** 2).sum(axis=1) - 0.5 * self.param_dim * LOG_2PI
        return base + log_det

    def sample(self, n, ctx, rng, prior=None, max_factor=10):
        """Draw from the flow posterior; with a prior box, reject outside draws.

        Returns raw-scale draws when ``prior`` is given (via its inverse box
        map), else draws in the flow's own standardized space.
        """
        if self.training:
            raise ConfigurationError("sample requires eval mode")
        ctx = np.atleast_2d(np.asarray(ctx, dtype=float))
        accepted = []
        n_accepted = 0
        attempts = 0
        budget = max_factor * n
        while n_accepted < n:
            batch = min(n - n_accepted if prior is None else n, budget - attempts)
            if batch <= 0:
                rate = n_accepted / max(attempts, 1)
                raise NumericsError(
                    f"prior-box rejection cap exceeded (acceptance rate {rate:.3f})"
                )
            z = rng.standard_normal((batch, self.param_dim))
            theta, _ = self.inverse(z, np.broadcast_to(ctx, (batch, ctx.shape[1])))
            attempts += batch
            if prior is None:
                accepted.append(theta)
                n_accepted += batch
                continue
            raw = prior.from_unit(theta)
            keep = prior.contains(raw)
            if keep.any():
                accepted.append(raw[keep])
                n_accepted += int(keep.sum())
        return np.concatenate(accepted, axis=0)[:n]

    def loss_and_grads(self, theta, ctx, rng=None):
        """Mean negative log posterior density and exact gradients."""
        theta, ctx = self._as_batch(theta, ctx)
        was_training = self.training
        self.training = True
        try:
            z, log_det, caches = self.forward(theta, ctx, rng)
        finally:
            self.training = was_training
        b = theta.shape[0]
        loss = float(
            (0.5 * (z ** 2).sum(axis=1) + 0.5 * self.param_dim * LOG_2PI - log_det).mean()
        )
        dz = z / b
        dlogdet = -np.ones(b) / b
        grads_per_layer = []
        for i in reversed(range(len(self.layers))):
            dz, g = self.layers[i].backward(dz, dlogdet, caches[i])
            grads_per_layer.append(g)
        grads = []
        for g in reversed(grads_per_layer):
            grads.extend(g)
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise NumericsError("non-finite gradient")
        return loss, grads

    def nll(self, theta, ctx):
        return float(-self.log_prob(theta, ctx).mean())


class Adam:
    """Adaptive-moment optimizer over a list of parameter arrays (in place)."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.step_count = 0

    def step(self, grads, lr):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.step_count
        corr2 = 1.0 - b2 ** self.step_count
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / corr1) / (np.sqrt(v / corr2) + self.eps)


@dataclass
class TrainState:
    optimizer: Adam
    step: int
    lr_scale: float
    nan_recoveries: int


def _snapshot(params):
    return [p.copy() for p in params]


def _restore(params, snapshot):
    for p, s in zip(params, snapshot):
        p[:] = s


def train_flow(train_dataset, val_dataset, config, n_layers=6, hidden_widths=(128, 128),
               s_max=3.0):
    """Fit the flow by minimizing mean negative log density of training pairs.

    Parameters enter the flow box-mapped to [-1, 1]; features enter z-scored
    by the train standardizer. Cosine decay of the learning rate to zero,
    per-epoch validation loss, best-validation checkpoint restored at the end.
    """
    prior = config.prior
    theta_tr = prior.to_unit(train_dataset.params)
    ctx_tr = train_dataset.contexts()
    theta_va = prior.to_unit(val_dataset.params)
    ctx_va = val_dataset.contexts()

    model = FlowModel.build(
        param_dim=prior.dim,
        context_dim=ctx_tr.shape[1],
        n_layers=n_layers,
        hidden_widths=hidden_widths,
        dropout=config.dropout,
        s_max=s_max,
        seed=config.seed,
    )
    params = model.parameters()
    optimizer = Adam(params)
    rng = np.random.default_rng(config.seed + 1)

    total_steps = config.epochs * config.batches_per_epoch
    batch_size = config.batch_size
    n = theta_tr.shape[0]
    lr_scale = 1.0
    nan_recoveries = 0
    best_val = math.inf
    best_params = _snapshot(params)
    history = []
    step = 0

    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(n)
        epoch_losses = []
        for b in range(config.batches_per_epoch):
            idx = perm[(b * batch_size) % n:(b * batch_size) % n + batch_size]
            if idx.size < batch_size:  # wrap when batches * size > n
                idx = np.concatenate([idx, perm[:batch_size - idx.size]])
            lr = config.initial_lr * lr_scale * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))
            try:
                loss, grads = model.loss_and_grads(theta_tr[idx], ctx_tr[idx], rng)
                bad = not math.isfinite(loss)
            except NumericsError:
                bad = True
            if bad:
                nan_recoveries += 1
                if nan_recoveries > 3:
                    raise NumericsError("training diverged after 3 learning-rate halvings")
                lr_scale *= 0.5
                _restore(params, best_params)
                optimizer = Adam(params)
                step += 1
                continue
            optimizer.step(grads, lr)
            epoch_losses.append(loss)
            step += 1
        model.eval_mode()
        val_loss = model.nll(theta_va, ctx_va)
        train_loss = float(np.mean(epoch_losses)) if epoch_losses else math.nan
        history.append({"epoch": epoch, "train_loss": train_loss,
                        "val_loss": val_loss, "lr": lr})
        if val_loss < best_val:
            best_val = val_loss
            best_params = _snapshot(params)

    _restore(params, best_params)
    model.eval_mode()
    return model, history


def save_training_log(history, path):
    with open(path, "w") as f:
        f.write("epoch,train_loss,val_loss,lr\n")
        for row in history:
            f.write(f"{row['epoch']},{row['train_loss']!r},{row['val_loss']!r},{row['lr']!r}\n")


# ---------------------------------------------------------------------------
# checkpoint format: magic, u64 header length, JSON header, raw float64 LE
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"KABIFLW1"


def save_checkpoint(path, model, standardizer_hash="", history=None, prior=None):
    params = model.parameters()
    header = {
        "version": 1,
        "arch": model.arch,
        "shapes": [list(p.shape) for p in params],
        "standardizer_hash": standardizer_hash,
        "log_tail": (history or [])[-10:],
    }
    if prior is not None:
        header["prior_lower"] = prior.lower.tolist()
        header["prior_upper"] = prior.upper.tolist()
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for p in params:
            f.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ConfigurationError(
                f"not a flow checkpoint (magic {magic!r}, expected {CHECKPOINT_MAGIC!r})"
            )
        (header_len,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(header_len).decode())
        arch = header["arch"]
        model = FlowModel.build(
            param_dim=arch["param_dim"],
            context_dim=arch["context_dim"],
            n_layers=arch["n_layers"],
            hidden_widths=tuple(arch["hidden_widths"]),
            dropout=arch["dropout"],
            s_max=arch["s_max"],
        )
        for p, shape in zip(model.parameters(), header["shapes"]):
            n_items = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(f.read(8 * n_items), dtype="<f8").reshape(shape)
            p[:] = data
    model.eval_mode()
    return model, header
