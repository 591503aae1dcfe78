"""Optimizers, losses, pipelines, experiment templates and the metrics ledger."""
from __future__ import annotations

import copy
import csv
from dataclasses import dataclass
import json
import logging
import math
import os
from typing import NamedTuple

import numpy as np
from scipy.special import log_softmax, softmax

from . import ansatz as A
from .density import (DensityModel, coefficients, expectation_exact, lcu_expectation,
                      mean_abs_errors, check_mixing_bound, logits_for)
from .errors import QubitIndexError, ConfigError
from .grad import (density_gradient, model_plan, circuit_plan, fast_subunit_expectations,
                   diagonal_block)
from .moe import GatingNetwork, gate_forward, gate_backward, softmax_backward, GELU_SOFTMAX, \
    LINEAR_SOFTMAX
from .pauli import Observable, pauli, z_sum
from .subspace import subspace_forward, subspace_gradient
from . import data as D

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# optimizers

def _check(params, grads):
    if np.shape(params) != np.shape(grads):
        raise QubitIndexError(f"shape mismatch {np.shape(params)} vs {np.shape(grads)}")


def sgd_step(params, grads, lr):
    _check(params, grads)
    return params - lr * grads


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; ``state`` is None or (m, v, t)."""
    _check(params, grads)
    m, v, t = state if state is not None else (np.zeros_like(params), np.zeros_like(params), 0)
    t += 1
    m = beta1 * m + (1 - beta1) * grads
    v = beta2 * v + (1 - beta2) * grads * grads
    mh = m / (1 - beta1 ** t)
    vh = v / (1 - beta2 ** t)
    return params - lr * mh / (np.sqrt(vh) + eps), (m, v, t)


def rmsprop_step(params, grads, state, lr, rho=0.9, eps=1e-8):
    _check(params, grads)
    v = np.zeros_like(params) if state is None else state
    v = rho * v + (1 - rho) * grads * grads
    return params - lr * grads / (np.sqrt(v) + eps), v


class Optimizer:
    """Applies one of ADAM / SGD / RMSPROP to a dict of named arrays in place."""

    def __init__(self, tag: str = "ADAM", lr: float = 1e-3, **consts):
        tag = tag.upper()
        if tag not in ("ADAM", "SGD", "RMSPROP"):
            raise ConfigError(f"unknown optimizer {tag}")
        if not lr > 0:
            raise ConfigError("learning rate must be positive")
        self.tag, self.lr, self.consts = tag, lr, consts
        self.state = {}

    def step(self, params: dict, grads: dict, keys=None):
        for k in keys or grads:
            p, g = params[k], grads[k]
            if self.tag == "SGD":
                new = sgd_step(p, g, self.lr)
            elif self.tag == "ADAM":
                new, self.state[k] = adam_step(p, g, self.state.get(k), self.lr, **self.consts)
            else:
                new, self.state[k] = rmsprop_step(p, g, self.state.get(k), self.lr, **self.consts)
            p[...] = new


# ---------------------------------------------------------------------------
# losses

def mse(pred, target):
    """Mean squared error and its gradient w.r.t. pred."""
    d = np.asarray(pred, dtype=float) - np.asarray(target, dtype=float)
    return float(np.mean(d * d)), 2 * d / d.size


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy over rows and its gradient w.r.t. logits."""
    logits = np.atleast_2d(logits)
    labels = np.asarray(labels, dtype=int)
    lp = log_softmax(logits, axis=1)
    b = logits.shape[0]
    loss = -float(np.mean(lp[np.arange(b), labels]))
    g = np.exp(lp)
    g[np.arange(b), labels] -= 1
    return loss, g / b


# ---------------------------------------------------------------------------
# classical layers

class Linear:
    def __init__(self, w, b):
        self.w = np.asarray(w, dtype=float)
        self.b = np.asarray(b, dtype=float)

    @classmethod
    def init(cls, n_in, n_out, rng):
        bound = 1 / math.sqrt(n_in)
        return cls(rng.uniform(-bound, bound, (n_in, n_out)), rng.uniform(-bound, bound, n_out))

    def __call__(self, x):
        return x @ self.w + self.b

    def backward(self, x, dout):
        return x.T @ dout, dout.sum(axis=0), dout @ self.w.T


# ---------------------------------------------------------------------------
# pipelines

class DensityRegressor:
    """Scalar model scale * sum_k alpha_k <H>_k on top of a DensityModel."""

    def __init__(self, model: DensityModel, H: Observable, scale: float = 1.0, loss: str = "MSE",
                 train_logits: bool = True, engine: str = "auto"):
        self.model, self.H, self.scale, self.loss = model, H, scale, loss
        self.engine = engine
        self.p = {"theta": model.theta}
        if model.K > 1 and train_logits:
            self.p["logits"] = model.logits
        self._plan = model_plan(model, H, "commuting" if engine != "shift" else "shift", params=False)

    @property
    def circuits_per_sample(self) -> int:
        """Gradient circuits plus one forward circuit per sub-unit."""
        return self._plan.n_gradient_circuits + self.model.K

    def predict(self, x):
        m = self.model
        x = np.atleast_2d(x)
        f = fast_subunit_expectations(m, x, self.H)
        a = np.broadcast_to(coefficients(m, x if m.gating is not None else None), f.shape)
        return self.scale * np.sum(a * f, axis=1)

    def loss_and_grad(self, x, y):
        """(batch-mean loss, grads by name, info) with info['correct'] and info['circuits']."""
        m = self.model
        fast = [diagonal_block(c) for c in m.circuits] if self.engine == "auto" else [None]
        if all(f is not None for f in fast) and m.gating is None:
            # one pass: values and per-sample Jacobians of every sub-unit
            vj = [fb.value_and_jac(m.subunit_params(k), x, self.H, m.loader)
                  for k, fb in enumerate(fast)]
            F = np.stack([v for v, _ in vj], axis=1)
            alpha = coefficients(m)
            pred = self.scale * F @ alpha
            loss, dpred = mse(pred, y)
            w = self.scale * dpred
            g = np.zeros_like(m.theta)
            for k, (_, J) in enumerate(vj):
                np.add.at(g, m.index_map[k], alpha[k] * (w @ J))
            g = np.concatenate([g, softmax_backward(alpha, w @ F)])
        else:
            pred = self.predict(x)
            loss, dpred = mse(pred, y)
            g, _ = density_gradient(m, x, self.H, engine=self.engine, weights=self.scale * dpred,
                                    with_plan=False)
        t = m.theta.size
        grads = {"theta": g[:t]}
        if "logits" in self.p:
            grads["logits"] = g[t:t + m.K]
        info = {"correct": int(np.sum(np.sign(pred) == y)),
                "circuits": self.circuits_per_sample * len(y)}
        return loss, grads, info

    def evaluate(self, x, y):
        pred = self.predict(x)
        loss, _ = mse(pred, y)
        return loss, float(np.mean(np.sign(pred) == y))

    def alpha_mean(self, x=None):
        return coefficients(self.model).tolist()


class OrthoPipeline:
    """PCA features -> Linear + ReLU -> unary load -> K orthogonal experts -> Linear -> softmax.

    ``readout`` is ``amplitude`` (sum_k alpha_k O_k x, signed amplitudes as
    recovered by l-inf tomography) or ``probability`` (sum_k alpha_k (O_k x)^2,
    the unary diagonal of the density state). ``coef`` is ``logits``,
    ``gating`` or ``none`` (single expert). With ``parallel`` every expert
    is scored on its own and the losses are averaged (pretraining).
    """

    def __init__(self, circuits, n_in, n_classes, rng, readout="amplitude", coef="logits",
                 gating_variant=LINEAR_SOFTMAX, eps=1e-6, parallel=False):
        self.circuits = list(circuits)
        n = self.circuits[0].n_qubits
        self.n, self.K = n, len(self.circuits)
        self.readout, self.coef, self.eps, self.parallel = readout, coef, eps, parallel
        pre, post = Linear.init(n_in, n, rng), Linear.init(n, n_classes, rng)
        self.p = {"pre_w": pre.w, "pre_b": pre.b, "post_w": post.w, "post_b": post.b}
        for k, c in enumerate(self.circuits):
            self.p[f"theta{k}"] = c.init_params(rng)
        if self.K > 1 and coef == "logits":
            self.p["logits"] = np.zeros(self.K)
        elif self.K > 1 and coef == "gating":
            g = GatingNetwork.init(n, self.K, rng, gating_variant)
            self.p["gate_w"], self.p["gate_b"] = g.weights, g.bias
            self.gating_variant = gating_variant
        self._plans = None

    def copy(self):
        return copy.deepcopy(self)

    def gating(self):
        return GatingNetwork(self.p["gate_w"], self.p["gate_b"], self.gating_variant)

    def alpha(self, h):
        b = h.shape[0]
        if self.K == 1 or self.coef == "none":
            return np.full((b, self.K), 1.0 / self.K)
        if self.coef == "logits":
            return np.broadcast_to(softmax(self.p["logits"]), (b, self.K))
        return gate_forward(self.gating(), h)

    @property
    def circuits_per_sample(self) -> int:
        if self._plans is None:
            total = 0
            for c in self.circuits:
                # single commuting block: grouped gradients, otherwise parameter shift
                engine = "commuting" if len(c.blocks) == 1 else "shift"
                total += sum(e.circuits for e in circuit_plan(c, None, engine))
            fwd = (3 if self.readout == "amplitude" else 1) * self.K
            self._plans = total + fwd
        return self._plans

    def _features(self, x):
        z = x @ self.p["pre_w"] + self.p["pre_b"]
        h = np.maximum(z, 0)
        v = h + self.eps
        nv = np.linalg.norm(v, axis=1, keepdims=True)
        return z, h, v / nv, nv

    def forward(self, x):
        z, h, u, nv = self._features(x)
        ys = [subspace_forward(c, self.p[f"theta{k}"], u) for k, c in enumerate(self.circuits)]
        a = self.alpha(h)
        if self.parallel:
            reads = [y if self.readout == "amplitude" else y * y for y in ys]
            return [r @ self.p["post_w"] + self.p["post_b"] for r in reads], (z, h, u, nv, ys, a)
        if self.readout == "amplitude":
            r = sum(a[:, k:k + 1] * y for k, y in enumerate(ys))
        else:
            r = sum(a[:, k:k + 1] * y * y for k, y in enumerate(ys))
        return r @ self.p["post_w"] + self.p["post_b"], (z, h, u, nv, ys, a, r)

    def predict(self, x):
        out, _ = self.forward(x)
        if self.parallel:
            return np.mean([softmax(o, axis=1) for o in out], axis=0)
        return out

    def loss_and_grad(self, x, labels):
        out, cache = self.forward(x)
        z, h, u, nv, ys = cache[:5]
        g = {k: np.zeros_like(v) for k, v in self.p.items()}
        du = np.zeros_like(u)
        dh = np.zeros_like(h)
        if self.parallel:
            loss = 0.0
            for k, (o, y) in enumerate(zip(out, ys)):
                lk, do = cross_entropy(o, labels)
                loss += lk / self.K
                do = do / self.K
                r = y if self.readout == "amplitude" else y * y
                g["post_w"] += r.T @ do
                g["post_b"] += do.sum(axis=0)
                dr = do @ self.p["post_w"].T
                dy = dr if self.readout == "amplitude" else 2 * y * dr
                dth, dx = subspace_gradient(self.circuits[k], self.p[f"theta{k}"], u, dy)
                g[f"theta{k}"] += dth
                du += dx
        else:
            a, r = cache[5], cache[6]
            loss, do = cross_entropy(out, labels)
            g["post_w"] += r.T @ do
            g["post_b"] += do.sum(axis=0)
            dr = do @ self.p["post_w"].T
            da = np.zeros_like(a)
            for k, y in enumerate(ys):
                if self.readout == "amplitude":
                    dy = a[:, k:k + 1] * dr
                    da[:, k] = np.sum(dr * y, axis=1)
                else:
                    dy = 2 * a[:, k:k + 1] * y * dr
                    da[:, k] = np.sum(dr * y * y, axis=1)
                dth, dx = subspace_gradient(self.circuits[k], self.p[f"theta{k}"], u, dy)
                g[f"theta{k}"] += dth
                du += dx
            if "logits" in self.p:
                g["logits"] += softmax_backward(a[0], da.sum(axis=0))
            elif "gate_w" in self.p:
                dW, db, dhg = gate_backward(self.gating(), h, da)
                g["gate_w"] += dW
                g["gate_b"] += db
                dh += dhg
        dv = (du - u * np.sum(u * du, axis=1, keepdims=True)) / nv
        dh += dv
        dz = dh * (z > 0)
        g["pre_w"] += x.T @ dz
        g["pre_b"] += dz.sum(axis=0)
        if self.parallel:
            pred = np.mean([softmax(o, axis=1) for o in out], axis=0)
        else:
            pred = out
        info = {"correct": int(np.sum(pred.argmax(axis=1) == labels)),
                "circuits": self.circuits_per_sample * len(labels)}
        return loss, g, info

    def evaluate(self, x, labels):
        out = self.predict(x)
        if self.parallel:
            loss = -float(np.mean(np.log(out[np.arange(len(labels)), labels] + 1e-300)))
            return loss, float(np.mean(out.argmax(axis=1) == labels))
        loss, _ = cross_entropy(out, labels)
        return loss, float(np.mean(out.argmax(axis=1) == labels))

    def alpha_mean(self, x):
        _, h, _, _ = self._features(x)
        return self.alpha(h).mean(axis=0).tolist()

    def to_density(self, readout="probability", coef="logits", gating_variant=LINEAR_SOFTMAX,
                   rng=None, logits=None):
        """Copy with parallel scoring switched off (density assembly)."""
        out = self.copy()
        out.parallel = False
        out.readout, out.coef = readout, coef
        out._plans = None
        for k in ("logits", "gate_w", "gate_b"):
            out.p.pop(k, None)
        if coef == "logits":
            out.p["logits"] = np.zeros(self.K) if logits is None else np.asarray(logits, float).copy()
        elif coef == "gating":
            g = GatingNetwork.init(self.n, self.K, rng, gating_variant)
            out.p["gate_w"], out.p["gate_b"] = g.weights, g.bias
            out.gating_variant = gating_variant
        return out


# ---------------------------------------------------------------------------
# ledger

LEDGER_FIELDS = ("model", "epoch", "train_loss", "test_loss", "gap", "train_acc", "test_acc",
                 "cum_circuits", "cum_shots", "alpha")


CHECKPOINT_VERSION = 1


class MetricsLedger:
    """Per-epoch metric rows; cumulative counters must not decrease per model."""

    def __init__(self):
        self.rows = []
        self._last = {}
        self.checkpoints = {}

    def add(self, **row):
        m = row["model"]
        prev = self._last.get(m)
        if prev and (row["cum_circuits"] < prev["cum_circuits"] or row["cum_shots"] < prev["cum_shots"]):
            raise ValueError("cumulative counters decreased")
        self.rows.append(row)
        self._last[m] = row

    def final(self, model):
        return self._last[model]

    def models(self):
        return list(self._last)

    def extend(self, other: "MetricsLedger"):
        for r in other.rows:
            self.add(**r)
        self.checkpoints.update(other.checkpoints)

    def save_checkpoints(self, path, seed=None):
        """Final parameters of every model as JSON lists, keyed by model then parameter name."""
        doc = {"layout_version": CHECKPOINT_VERSION, "seed": seed,
               "models": {m: {k: np.asarray(v).tolist() for k, v in ps.items()}
                          for m, ps in self.checkpoints.items()}}
        with open(path, "w") as f:
            json.dump(doc, f)

    def to_csv(self, path):
        fields = list(LEDGER_FIELDS)
        for r in self.rows:
            fields += [k for k in r if k not in fields]
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=fields)
            w.writeheader()
            for r in self.rows:
                out = dict(r)
                out["alpha"] = json.dumps(r.get("alpha"))
                w.writerow(out)

    def to_jsonl(self, path):
        with open(path, "w") as f:
            for r in self.rows:
                f.write(json.dumps(r) + "\n")


@dataclass
class Counters:
    circuits: int = 0
    shots: int = 0


def train_loop(pipe, train, test, epochs, batch, opt: Optimizer, rng, ledger: MetricsLedger,
               name: str, counters: Counters | None = None, keys=None, shots_per_circuit: int = 100,
               start_epoch: int = 0, log_initial: bool = True, train_eval: str = "full"):
    """Mini-batch training; one ledger row per epoch (plus the starting point).

    ``train_eval="running"`` reports the mean batch loss and accuracy seen
    during the epoch instead of re-evaluating the training set at its end.
    """
    counters = counters or Counters()
    x, y = train.features, train.labels
    n = len(y)

    def record(ep, running=None):
        if running is None:
            trl, tra = pipe.evaluate(x, y)
        else:
            trl, tra = running
        tel, tea = pipe.evaluate(test.features, test.labels)
        ledger.add(model=name, epoch=ep, train_loss=trl, test_loss=tel, gap=tel - trl, train_acc=tra,
                   test_acc=tea, cum_circuits=counters.circuits, cum_shots=counters.shots,
                   alpha=pipe.alpha_mean(x[:256]))

    if log_initial:
        record(start_epoch)
    for ep in range(1, epochs + 1):
        perm = rng.permutation(n)
        tot, correct = 0.0, 0
        for s in range(0, n, batch):
            idx = perm[s:s + batch]
            loss, grads, info = pipe.loss_and_grad(x[idx], y[idx])
            opt.step(pipe.p, grads, keys)
            tot += loss * len(idx)
            correct += info["correct"]
            counters.circuits += info["circuits"]
            counters.shots += info["circuits"] * shots_per_circuit
        record(start_epoch + ep, (tot / n, correct / n) if train_eval == "running" else None)
    ledger.checkpoints[name] = {k: np.array(v, copy=True) for k, v in pipe.p.items()}
    return counters


# ---------------------------------------------------------------------------
# Fourier analysis

class Spectrum(NamedTuple):
    freqs: np.ndarray
    coeffs: np.ndarray
    residual: float


def fourier_spectrum(f, grid_size: int = 128, bandwidth=None, domain=(-math.pi, math.pi)):
    """DFT of f on a uniform periodic grid; residual is the spectral mass beyond ``bandwidth``.

    Frequencies are in cycles per 2 pi when the domain has length 2 pi.
    """
    lo, hi = domain
    xs = lo + (hi - lo) * np.arange(grid_size) / grid_size
    vals = np.asarray(f(xs), dtype=complex)
    c = np.fft.fft(vals) / grid_size
    # shift so the phase refers to x rather than the grid index
    freqs = np.fft.fftfreq(grid_size, d=1.0 / grid_size) * (2 * math.pi / (hi - lo))
    c = c * np.exp(-1j * freqs * lo)
    order = np.argsort(freqs)
    freqs, c = freqs[order], c[order]
    res = 0.0 if bandwidth is None else float(np.sum(np.abs(c[np.abs(freqs) > bandwidth + 1e-9]) ** 2))
    return Spectrum(freqs, c, res)


def reupload_function(circuit, params, H=None):
    """x -> <H> for a single-qubit reuploading circuit."""
    H = H or Observable([(1.0, "Z")])

    def f(xs):
        return expectation_exact(DensityModel([circuit], params), np.asarray(xs)[:, None], H)
    return f


# ---------------------------------------------------------------------------
# experiment templates

TEMPLATES = {
    "bars-dots": dict(d=10, sigma=1.8, n_train=1000, n_test=100, batch=20, lr=0.001,
                      optimizer="ADAM", pretrain_epochs=200, joint_epochs=200,
                      alpha_init=[0.99, 0.01], max_body=3, shots_per_circuit=100, seeds=1,
                      shifts=True),
    "chebyshev-overfit": dict(order=2, L=50, K=5, D=0, n_train=25, n_test=110, noise=0.5,
                              test_noise=0.0, batch=5, lr=0.01, optimizer="ADAM", epochs=150,
                              shots_per_circuit=100, seeds=1),
    "mnist-round-robin": dict(n=10, depths=[1, 2, 3, 4, 9], pca=10, n_train=4000, batch=32, lr=0.01,
                              optimizer="ADAM", ortho_epochs=25, pretrain_epochs=20,
                              joint_epochs=10, shots_per_circuit=100, seeds=1, mnist_path="",
                              include_ortho=True, readout="probability"),
    "mnist-moe": dict(n=10, depth=1, pca=10, n_train=4000, batch=32, lr=0.01, optimizer="ADAM",
                      pretrain_epochs=5, joint_epochs=5, gating="LINEAR_SOFTMAX",
                      shots_per_circuit=100, seeds=1, mnist_path="", readout="probability"),
    "lcu-compare": dict(n=10, depth=1, pca=10, n_train=4000, batch=32, lr=0.01, optimizer="ADAM",
                        pretrain_epochs=5, coef_epochs=5, shots_per_circuit=100, seeds=1,
                        mnist_path=""),
    "mixing-check": dict(instances=20, n=3, K_max=3, eps=0.3, n_points=200, layers=3),
}


def make_config(template: str, overrides=None, strict: bool = True) -> dict:
    if template not in TEMPLATES:
        raise ConfigError(f"unknown template {template!r}; choose from {sorted(TEMPLATES)}")
    cfg = copy.deepcopy(TEMPLATES[template])
    for k, v in (overrides or {}).items():
        if k in ("seed", "template", "output"):
            continue
        if strict and k not in cfg:
            raise ConfigError(f"unknown key {k!r} for template {template}")
        cfg[k] = v
    cfg["template"] = template
    cfg["seed"] = int((overrides or {}).get("seed", 0))
    return cfg


def _run_seed(args):
    tpl, config, seed, tag = args
    ledger = MetricsLedger()
    EXPERIMENTS[tpl](config, seed, ledger, tag)
    return ledger


def run_experiment(config: dict, output=None, workers: int = 1) -> MetricsLedger:
    """Run a template over ``seeds`` consecutive seeds, optionally in a process pool.

    Writes metrics.csv, metrics.jsonl and checkpoints.json when ``output`` is set.
    """
    tpl = config.get("template")
    if tpl not in TEMPLATES:
        raise ConfigError(f"unknown template {tpl!r}")
    seeds = int(config.get("seeds", 1))
    jobs = [(tpl, config, config["seed"] + s, f"s{config['seed'] + s}:" if seeds > 1 else "")
            for s in range(seeds)]
    if workers > 1 and seeds > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(min(workers, seeds)) as pool:
            parts = list(pool.map(_run_seed, jobs))
    else:
        parts = [_run_seed(j) for j in jobs]
    ledger = MetricsLedger()
    for part in parts:
        ledger.extend(part)
    if output:
        os.makedirs(output, exist_ok=True)
        ledger.to_csv(os.path.join(output, "metrics.csv"))
        ledger.to_jsonl(os.path.join(output, "metrics.jsonl"))
        if ledger.checkpoints:
            ledger.save_checkpoints(os.path.join(output, "checkpoints.json"), config.get("seed"))
    return ledger


# bars and dots -------------------------------------------------------------

def _bars_dots(cfg, seed, ledger, tag=""):
    rng = np.random.default_rng(seed)
    d = cfg["d"]
    train = D.gen_bars_dots(d, cfg["n_train"], cfg["sigma"], rng, cfg["shifts"], "train", seed)
    test = D.gen_bars_dots(d, cfg["n_test"], cfg["sigma"], rng, cfg["shifts"], "test", seed)
    H = z_sum(d)
    loader = A.Loader("product_ry")
    cxx = A.build_equivariant(d, "X", cfg["max_body"])
    cyy = A.build_equivariant(d, "Y", cfg["max_body"])
    spc, bs, pe, je = cfg["shots_per_circuit"], cfg["batch"], cfg["pretrain_epochs"], cfg["joint_epochs"]

    def single(c):
        m = DensityModel([c], c.init_params(rng), loader=loader)
        return DensityRegressor(m, H, 1.0 / d)

    xx, yy = single(cxx), single(cyy)
    opt_xx = Optimizer(cfg["optimizer"], cfg["lr"])
    run = dict(shots_per_circuit=spc, train_eval="running")
    cx = train_loop(xx, train, test, pe, bs, opt_xx, rng, ledger, tag + "xx", **run)
    cy = train_loop(yy, train, test, pe, bs, Optimizer(cfg["optimizer"], cfg["lr"]), rng, ledger,
                    tag + "yy", **run)
    # density: pretrained XX and YY, alpha = alpha_init, everything trainable
    dm = DensityModel([cxx, cyy], [xx.model.theta.copy(), yy.model.theta.copy()],
                      logits=logits_for(cfg["alpha_init"]), loader=loader)
    dens = DensityRegressor(dm, H, 1.0 / d)
    cd = Counters(cx.circuits + cy.circuits, cx.shots + cy.shots)
    train_loop(dens, train, test, je, bs, Optimizer(cfg["optimizer"], cfg["lr"]), rng, ledger,
               tag + "density", cd, start_epoch=pe, **run)
    # baseline keeps training XX for the same number of epochs
    train_loop(xx, train, test, je, bs, opt_xx, rng, ledger, tag + "xx", cx, start_epoch=pe,
               log_initial=False, **run)


# Chebyshev -----------------------------------------------------------------

def _chebyshev(cfg, seed, ledger, tag=""):
    rng = np.random.default_rng(seed)
    train, test = D.gen_chebyshev(cfg["order"], cfg["n_train"], cfg["n_test"], cfg["noise"],
                                  cfg["test_noise"], rng, seed)
    L, K = cfg["L"], cfg["K"]
    Dk = cfg["D"] or max(1, round(L / K))
    Z = Observable([(1.0, "Z")])
    vc = A.build_reuploading(L)
    vanilla = ChebModel(DensityModel([vc], vc.init_params(rng)), Z)
    subs = [A.build_reuploading(Dk) for _ in range(K)]
    dens = ChebModel(DensityModel(subs, [c.init_params(rng) for c in subs]), Z)
    for name, pipe in (("vanilla", vanilla), ("density", dens)):
        train_loop(pipe, train, test, cfg["epochs"], cfg["batch"],
                   Optimizer(cfg["optimizer"], cfg["lr"]), rng, ledger, tag + name,
                   shots_per_circuit=cfg["shots_per_circuit"])


class ChebModel(DensityRegressor):
    """Regression head: accuracy column holds the train/test generalization gap."""

    def __init__(self, model, H):
        super().__init__(model, H, 1.0, engine="adjoint")
        self._plan = model_plan(model, H, "shift", params=False)

    def evaluate(self, x, y):
        loss, _ = mse(self.predict(x), y)
        return loss, float("nan")


# MNIST ---------------------------------------------------------------------

def _mnist_data(cfg, seed):
    path = cfg.get("mnist_path") or os.environ.get(D.MNIST_ENV)
    if path:
        train, test = D.load_mnist(path, "train"), D.load_mnist(path, "test")
        if cfg["n_train"] and cfg["n_train"] < len(train):
            train = D.Dataset(train.features[:cfg["n_train"]], train.labels[:cfg["n_train"]], "train")
    else:
        train, test = D.load_mnist_sample(cfg["n_train"], seed)
    basis = D.pca_fit(train.features, cfg["pca"])
    sc = np.abs(D.pca_apply(basis, train.features)).max()
    f = lambda ds: D.Dataset(D.pca_apply(basis, ds.features) / sc, ds.labels, ds.split, seed)
    return f(train), f(test)


def _rr_experts(n, depth):
    """n - 1 round-robin circuits of the given depth with cycled starting layers."""
    return [A.build_round_robin(n, depth, start=k) for k in range(n - 1)]


def _mnist_rr(cfg, seed, ledger, tag=""):
    rng = np.random.default_rng(seed)
    train, test = _mnist_data(cfg, seed)
    n, spc, bs = cfg["n"], cfg["shots_per_circuit"], cfg["batch"]
    if cfg["include_ortho"]:
        ortho = OrthoPipeline([A.build_round_robin(n, n - 1)], cfg["pca"], 10, rng)
        train_loop(ortho, train, test, cfg["ortho_epochs"], bs, Optimizer(cfg["optimizer"], cfg["lr"]),
                   rng, ledger, tag + "ortho", shots_per_circuit=spc)
    for depth in cfg["depths"]:
        pre = OrthoPipeline(_rr_experts(n, depth), cfg["pca"], 10, rng, readout=cfg["readout"],
                            parallel=True)
        c = train_loop(pre, train, test, cfg["pretrain_epochs"], bs,
                       Optimizer(cfg["optimizer"], cfg["lr"]), rng, ledger,
                       tag + f"pretrain_D{depth}", shots_per_circuit=spc, train_eval="running")
        dens = pre.to_density(readout=cfg["readout"])
        train_loop(dens, train, test, cfg["joint_epochs"], bs, Optimizer(cfg["optimizer"], cfg["lr"]),
                   rng, ledger, tag + f"density_D{depth}", Counters(c.circuits, c.shots),
                   shots_per_circuit=spc, start_epoch=cfg["pretrain_epochs"], train_eval="running")


def _mnist_moe(cfg, seed, ledger, tag=""):
    rng = np.random.default_rng(seed)
    train, test = _mnist_data(cfg, seed)
    n, spc, bs = cfg["n"], cfg["shots_per_circuit"], cfg["batch"]
    variant = cfg["gating"].upper()
    if variant not in (LINEAR_SOFTMAX, GELU_SOFTMAX):
        raise ConfigError(f"unknown gating {variant}")
    pre = OrthoPipeline(_rr_experts(n, cfg["depth"]), cfg["pca"], 10, rng, readout=cfg["readout"],
                        parallel=True)
    c = train_loop(pre, train, test, cfg["pretrain_epochs"], bs, Optimizer(cfg["optimizer"], cfg["lr"]),
                   rng, ledger, tag + "pretrain", shots_per_circuit=spc)
    moe = pre.to_density(readout=cfg["readout"], coef="gating", gating_variant=variant, rng=rng)
    train_loop(moe, train, test, cfg["joint_epochs"], bs, Optimizer(cfg["optimizer"], cfg["lr"]),
               rng, ledger, tag + "moe", Counters(c.circuits, c.shots), shots_per_circuit=spc,
               start_epoch=cfg["pretrain_epochs"])


def _lcu_compare(cfg, seed, ledger, tag=""):
    rng = np.random.default_rng(seed)
    train, test = _mnist_data(cfg, seed)
    n, spc, bs = cfg["n"], cfg["shots_per_circuit"], cfg["batch"]
    total = cfg["pretrain_epochs"] + cfg["coef_epochs"]
    single = OrthoPipeline([A.build_round_robin(n, cfg["depth"])], cfg["pca"], 10, rng)
    train_loop(single, train, test, total, bs, Optimizer(cfg["optimizer"], cfg["lr"]), rng, ledger,
               tag + "single", shots_per_circuit=spc)
    pre = OrthoPipeline(_rr_experts(n, cfg["depth"]), cfg["pca"], 10, rng, parallel=True)
    c = train_loop(pre, train, test, cfg["pretrain_epochs"], bs, Optimizer(cfg["optimizer"], cfg["lr"]),
                   rng, ledger, tag + "pretrain", shots_per_circuit=spc)
    lcu = pre.to_density(readout="amplitude", coef="gating", rng=rng)
    train_loop(lcu, train, test, cfg["coef_epochs"], bs, Optimizer(cfg["optimizer"], cfg["lr"]),
               rng, ledger, tag + "lcu", Counters(c.circuits, c.shots), keys=["gate_w", "gate_b"],
               shots_per_circuit=spc, start_epoch=cfg["pretrain_epochs"])


# mixing lemma --------------------------------------------------------------

def mixing_instance(seed: int, n: int = 3, K: int = 2, eps: float = 0.3, n_points: int = 200,
                    layers: int = 3):
    """Teacher h(x) = <H> under a fixed hardware-efficient V; K students near V.

    The student sub-unitaries are random perturbations of the teacher's
    angles; alpha is fitted to minimize the LCU error, then all three
    errors enter the mixing bound.
    """
    from scipy.optimize import minimize
    rng = np.random.default_rng(seed)
    c = A.build_hardware_efficient(n, layers)
    tv = rng.uniform(-math.pi, math.pi, c.n_params)
    loader = A.Loader("product_ry")
    teacher = DensityModel([c], [tv], loader=loader)
    H = pauli(n, {0: "Z"})
    X = rng.uniform(-1, 1, (n_points, n))
    h = expectation_exact(teacher, X, H)
    m = DensityModel([c] * K, [tv + eps * rng.normal(size=tv.size) for _ in range(K)], loader=loader)

    def lcu_err(lg):
        m.logits = lg
        return float(np.mean(np.abs(lcu_expectation(m, X, H) - h)))

    m.logits = minimize(lcu_err, np.zeros(K), method="Nelder-Mead").x
    sub, lcu, dens = mean_abs_errors(m, X, h, H)
    return check_mixing_bound(sub, lcu, dens, H.norm_inf(), premise="shared-teacher")


def _mixing(cfg, seed, ledger, tag=""):
    for i in range(cfg["instances"]):
        K = 2 + i % (cfg["K_max"] - 1)
        r = mixing_instance(seed * 1000 + i, cfg["n"], K, cfg["eps"], cfg["n_points"], cfg["layers"])
        ledger.add(model=f"{tag}instance{i}", epoch=0, cum_circuits=0, cum_shots=0, K=K,
                   delta1=r.delta1, delta2=r.delta2, density_error=r.density_error,
                   bound=r.bound, holds=bool(r.holds), premise=r.premise)


EXPERIMENTS = {"bars-dots": _bars_dots, "chebyshev-overfit": _chebyshev, "mnist-round-robin": _mnist_rr,
               "mnist-moe": _mnist_moe, "lcu-compare": _lcu_compare, "mixing-check": _mixing}
