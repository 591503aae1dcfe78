"""One check per acceptance criterion, printed as PASS/FAIL in the terminal summary.

The experiment reproductions are marked ``slow``; deselect them with
``-m "not slow"``.
"""
import math
import os
import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from dqnn import ansatz as A
from dqnn.ansatz import _layers_to_circuit
from dqnn.cli import audit_rows
from dqnn.density import (DensityModel, expectation_exact, expectation_sampled,
                          prepare_deterministic)
from dqnn.grad import (adjoint_gradient, commuting_gradients, density_gradient, expval,
                       finite_difference, shift_gradient)
from dqnn.moe import GELU_SOFTMAX, LINEAR_SOFTMAX, GatingNetwork
from dqnn.pauli import pauli, z_sum
from dqnn.subspace import subspace_forward, subspace_gradient
from dqnn.train import (fourier_spectrum, make_config, reupload_function, run_experiment)

WORKERS = os.cpu_count() or 1
LOADER = A.Loader("product_ry")
H_STEP = 1e-5


def _fd_circuit(c, th, x, H, psi0):
    return finite_difference(lambda t: float(expval(c, t, x, H, psi0=psi0)[0]), th, H_STEP)


def _commuting(c, th, x, H, psi0):
    return sum(commuting_gradients(c, th, x, H, psi0=psi0, block=b).values
               for b in range(len(c.blocks)))


def _families(rng):
    """(name, builder of a random instance) with n <= 6."""
    def hwe():
        n = int(rng.integers(2, 7))
        return A.build_hardware_efficient(n, int(rng.integers(1, 4)))

    def equi():
        n = int(rng.integers(3, 7))
        return A.build_equivariant(n, "XY"[int(rng.integers(2))], int(rng.integers(1, 4)))

    def reup():
        return A.build_reuploading(int(rng.integers(1, 6)))

    def ortho(kind, fam):
        def make():
            if fam == "butterfly":
                n = int(rng.choice([2, 4]))
                layers = [[(i, i + (1 << l)) for i in range(n) if not i & (1 << l)]
                          for l in range(int(math.log2(n)))]
            elif fam == "round-robin":
                n = int(rng.choice([2, 4, 6]))
                sched = A.round_robin_schedule(n)
                layers = sched[:int(rng.integers(1, n))]
            elif fam == "x":
                n = int(rng.integers(2, 7))
                ref = A.build_x(n)
                layers = [[o.targets for o in ref.ops[s:e]] for s, e in ref.blocks]
            else:
                n = int(rng.integers(2, 7))
                layers = A.pyramid_layers(n)
            return _layers_to_circuit(n, layers, fam, kind=kind)
        return make

    fams = [("hardware-efficient", hwe), ("equivariant", equi), ("reuploading", reup)]
    for fam in ("pyramid", "x", "butterfly", "round-robin"):
        fams.append((f"{fam}/RBS", ortho("RBS", fam)))
    fams.append(("pyramid/FBS", ortho("FBS", "pyramid")))
    return fams


def test_gradient_oracle_suite(accept):
    rng = np.random.default_rng(11)
    t0 = time.time()
    worst = {}
    for name, make in _families(rng):
        for _ in range(50):
            c = make()
            n = c.n_qubits
            th = rng.uniform(-np.pi, np.pi, c.n_params)
            if c.n_data:
                x, psi0 = rng.uniform(-1, 1, (1, c.n_data)), None
                H = pauli(1, {0: "Z"})
            else:
                x = None
                if c.ops[0].kind == "RBS":
                    psi0 = A.unary_embed(rng.normal(size=n), n)
                else:
                    psi0 = LOADER.prepare(rng.uniform(-1, 1, (1, n)), n)
                H = z_sum(n, rng.normal(size=n))
                if n > 1:
                    H = H + pauli(n, {0: "X", n - 1: "X"}) * 0.4
            fd = _fd_circuit(c, th, x, H, psi0)
            engines = {"shift": shift_gradient(c, th, x, H, psi0=psi0),
                       "adjoint": adjoint_gradient(c, th, x, H, psi0=psi0)[1],
                       "commuting": _commuting(c, th, x, H, psi0)}
            if c.ops[0].kind == "RBS":
                v = A.unary_amplitudes(psi0[0], n).real
                w = rng.normal(size=n)
                engines["subspace"] = subspace_gradient(c, th, v, w)[0]
                sfd = finite_difference(lambda t: float(w @ subspace_forward(c, t, v)), th, H_STEP)
                worst[(name, "subspace")] = max(worst.get((name, "subspace"), 0),
                                                np.max(np.abs(engines.pop("subspace") - sfd)))
            for eng, g in engines.items():
                err = float(np.max(np.abs(np.asarray(g).ravel() - fd)))
                worst[(name, eng)] = max(worst.get((name, eng), 0), err)
    # density assembly incl. logits and gating
    for variant in (None, LINEAR_SOFTMAX, GELU_SOFTMAX):
        for _ in range(50):
            n, K = int(rng.integers(2, 5)), int(rng.integers(1, 4))
            cs = [A.build_hardware_efficient(n, int(rng.integers(1, 3))) for _ in range(K)]
            gate = None if variant is None else GatingNetwork.init(n, K, rng, variant, scale=1.0)
            m = DensityModel(cs, [rng.uniform(-np.pi, np.pi, c.n_params) for c in cs],
                             rng.normal(size=K), gate, LOADER)
            x = rng.uniform(-1, 1, (3, n))
            H = z_sum(n, rng.normal(size=n))
            eng = ["adjoint", "shift", "commuting"][int(rng.integers(3))]
            g, _ = density_gradient(m, x, H, engine=eng)

            def loss(v):
                mm = m.copy()
                mm.set_flat(v)
                return float(np.mean(expectation_exact(mm, x, H)))
            err = float(np.max(np.abs(g - finite_difference(loss, m.flat(), H_STEP))))
            key = ("density", variant or "logits")
            worst[key] = max(worst.get(key, 0), err)
    secs = time.time() - t0
    bad = {k: v for k, v in worst.items() if not v < 1e-5}
    ok = not bad and secs < 120
    accept("gradient-oracle suite (all engines vs finite differences, 50 instances per family)", ok,
           f"max error {max(worst.values()):.2e} over {len(worst)} engine/family pairs "
           f"(tol 1e-5), {secs:.0f}s (limit 120s)" + (f", failing {sorted(bad)}" if bad else ""))
    assert ok


def test_mode_equivalence_suite(accept):
    rng = np.random.default_rng(12)
    t0 = time.time()
    det_err, zs = 0.0, []
    for i in range(20):
        n, K = int(rng.integers(2, 7)), int(rng.integers(1, 5))
        cs = [A.build_hardware_efficient(n, 2) for _ in range(K)]
        m = DensityModel(cs, [rng.uniform(-np.pi, np.pi, c.n_params) for c in cs],
                         rng.normal(size=K), loader=LOADER)
        x = rng.uniform(-1, 1, n)
        H = z_sum(n, rng.normal(size=n)) + pauli(n, {0: "X"})
        e = expectation_exact(m, x, H)
        det_err = max(det_err, abs(prepare_deterministic(m, x).expectation(H) - e))
        if i < 4:
            ests = [expectation_sampled(m, x, H, 100, 50, np.random.default_rng(s)).estimate
                    for s in range(50)]
            zs.append(abs(np.mean(ests) - e) / (np.std(ests, ddof=1) / math.sqrt(50)))
    secs = time.time() - t0
    ok = det_err < 1e-9 and max(zs) < 4 and secs < 120
    accept("mode equivalence (deterministic and sampled vs exact, K<=4, n<=6)", ok,
           f"max |exact - Tr(H rho)| {det_err:.1e} (tol 1e-9), max |bias|/SEM {max(zs):.2f} "
           f"over 50 seeds (tol 4), {secs:.0f}s (limit 120s)")
    assert ok


def test_circuit_counts(accept):
    rows = audit_rows(ns=(4, 8, 10), depth=3)
    mism = [r for r in rows if r["shift"] != r["expected_shift"] or r["density"] != r["expected_density"]]
    fams = {r["family"] for r in rows}
    bfly = {r["n"]: r["density"] for r in rows if r["family"] == "butterfly"}
    ok = not mism and fams == {"hwe", "round-robin", "butterfly", "pyramid"} and \
        bfly == {4: 2, 8: 3}
    rr10 = next(r for r in rows if r["family"] == "round-robin" and r["n"] == 10)
    accept("circuit counts (2nD, 2D, 4n(n-1)/2, n-1, log2 n)", ok,
           f"{len(rows)} rows, {len(mism)} mismatches; round-robin n=10: {rr10['shift']} vs "
           f"{rr10['density']}; butterfly density {bfly}")
    assert ok


def test_mixing_bound(accept):
    t0 = time.time()
    cfg = make_config("mixing-check", {"instances": 20, "n": 3, "K_max": 3})
    led = run_experiment(cfg)
    secs = time.time() - t0
    held = sum(bool(r["holds"]) for r in led.rows)
    slack = min(r["bound"] - r["density_error"] for r in led.rows)
    ok = held == 20 and secs < 300
    accept("mixing bound on 20 teacher instances (n=3, K in {2,3})", ok,
           f"{held}/20 hold, min slack {slack:.2e}, {secs:.0f}s (limit 300s)")
    assert ok


def test_fourier_bandwidth(accept):
    rng = np.random.default_rng(13)
    res = {}
    for L in (1, 3, 5):
        worst = 0.0
        for _ in range(10):
            c = A.build_reuploading(L)
            f = reupload_function(c, rng.uniform(-np.pi, np.pi, c.n_params))
            worst = max(worst, fourier_spectrum(f, 64, bandwidth=L).residual)
        res[L] = worst
    subs = [A.build_reuploading(int(d)) for d in (1, 2, 3)]
    alpha = rng.dirichlet(np.ones(3))
    fs = [reupload_function(c, rng.uniform(-np.pi, np.pi, c.n_params)) for c in subs]
    mix = fourier_spectrum(lambda x: sum(a * f(x) for a, f in zip(alpha, fs)), 64).coeffs
    parts = sum(a * fourier_spectrum(f, 64).coeffs for a, f in zip(alpha, fs))
    mix_err = float(np.max(np.abs(mix - parts)))
    ok = max(res.values()) < 1e-8 and mix_err < 1e-10
    accept("Fourier bandwidth (L in {1,3,5}) and mixture spectrum", ok,
           f"max residual beyond L {max(res.values()):.1e} (tol 1e-8), "
           f"mixture vs weighted sum {mix_err:.1e} (tol 1e-10)")
    assert ok


def _by_model(led, prefix, seeds):
    return [led.final(f"s{s}:{prefix}") for s in seeds]


@pytest.mark.slow
def test_bars_dots(accept):
    t0 = time.time()
    cfg = make_config("bars-dots", {"seeds": 5})
    led = run_experiment(cfg, workers=WORKERS)
    secs = time.time() - t0
    xx = [r["test_acc"] for r in _by_model(led, "xx", range(5))]
    dens = [r["test_acc"] for r in _by_model(led, "density", range(5))]
    ok = np.mean(dens) >= np.mean(xx) - 0.01 and secs < 1800
    accept("bars-and-dots density >= XX baseline - 1pp (5 seeds)", ok,
           f"density {np.mean(dens):.3f} {np.round(dens, 2).tolist()}, XX {np.mean(xx):.3f} "
           f"{np.round(xx, 2).tolist()}, {secs:.0f}s (limit 1800s)")
    assert ok


@pytest.mark.slow
def test_chebyshev_overfit(accept):
    t0 = time.time()
    cfg = make_config("chebyshev-overfit", {"seeds": 5})
    led = run_experiment(cfg, workers=WORKERS)
    secs = time.time() - t0
    van = _by_model(led, "vanilla", range(5))
    den = _by_model(led, "density", range(5))
    vm, dm = np.mean([r["test_loss"] for r in van]), np.mean([r["test_loss"] for r in den])
    vg, dg = np.mean([r["gap"] for r in van]), np.mean([r["gap"] for r in den])
    ok = dm < vm and dg < vg and secs < 600
    accept("Chebyshev overfitting: density test MSE and gap below vanilla (L=50, 5 seeds)", ok,
           f"test MSE density {dm:.3f} vs vanilla {vm:.3f}, gap {dg:.3f} vs {vg:.3f}, "
           f"{secs:.0f}s (limit 600s)")
    assert ok


@pytest.mark.slow
def test_mnist_round_robin(accept):
    pytest.importorskip("mlxtend") if not os.environ.get("DQNN_MNIST") else None
    t0 = time.time()
    depths = [1, 2, 4, 9]
    cfg = make_config("mnist-round-robin", {"seeds": 3, "depths": depths})
    led = run_experiment(cfg, workers=WORKERS)
    secs = time.time() - t0
    best = [max(r["test_acc"] for r in led.rows if r["model"] == f"s{s}:ortho") for s in range(3)]
    acc = {d: np.mean([led.final(f"s{s}:density_D{d}")["test_acc"] for s in range(3)]) for d in depths}
    rho = spearmanr(depths, [acc[d] for d in depths]).statistic
    ok_ortho = np.mean(best) >= 0.80
    ok_depth = acc[9] >= acc[1] and rho > 0
    ok = ok_ortho and ok_depth and secs < 1800
    accept("MNIST round-robin: full-depth pipeline >= 80% within 25 epochs; accuracy rises with D", ok,
           f"ortho best-epoch test acc {np.mean(best):.3f} {np.round(best, 3).tolist()}; "
           f"density mean acc by D {{{', '.join(f'{d}: {acc[d]:.3f}' for d in depths)}}}, "
           f"Spearman {rho:+.2f}; {secs:.0f}s (limit 1800s)")
    assert ok


@pytest.mark.slow
def test_lcu_compare_harness(accept):
    pytest.importorskip("mlxtend") if not os.environ.get("DQNN_MNIST") else None
    t0 = time.time()
    led = run_experiment(make_config("lcu-compare", {}), workers=WORKERS)
    secs = time.time() - t0
    single, lcu = led.final("single")["test_acc"], led.final("lcu")["test_acc"]
    ok = np.isfinite(single) and np.isfinite(lcu)
    accept("LCU-vs-single harness runs end to end", ok,
           f"single {single:.3f}, LCU {lcu:.3f} (no bound), {secs:.0f}s")
    assert ok
