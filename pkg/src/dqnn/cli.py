"""Command-line entry point: ``dqnn run | grad-audit | verify | export-dataset``."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import platform
import sys
import time

import numpy as np

from . import ansatz as A
from . import data as D
from .errors import ConfigError
from .train import TEMPLATES, make_config, run_experiment

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

log = logging.getLogger("dqnn")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# config

def parse_value(text: str):
    """A ``--set`` value as a TOML scalar or array; bare words stay strings."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def parse_sets(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = parse_value(v.strip())
    return out


def load_config_file(path) -> dict:
    """Flat TOML: ``template`` plus template keys, optionally ``seed`` and ``output``.

    A ``[params]`` table is merged into the top level. Syntax errors carry the
    decoder's line and column.
    """
    with open(path, "rb") as f:
        try:
            raw = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from None
    params = raw.pop("params", {})
    if not isinstance(params, dict):
        raise ConfigError(f"{path}: [params] must be a table")
    raw.update(params)
    return raw


def resolve_config(args) -> dict:
    raw = load_config_file(args.config) if args.config else {}
    template = args.template or raw.pop("template", None)
    raw.pop("template", None)
    if template is None:
        raise ConfigError("give --template or a config file with a 'template' key")
    output = raw.pop("output", None)
    raw.update(parse_sets(args.set))
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = make_config(template, raw)
    cfg["_output"] = args.output or output
    return cfg


def config_hash(cfg: dict) -> str:
    body = json.dumps({k: v for k, v in cfg.items() if not k.startswith("_")}, sort_keys=True)
    return hashlib.sha256(body.encode()).hexdigest()


def _versions():
    import scipy
    try:
        from importlib.metadata import version
        own = version("artifact")
    except Exception:
        own = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
            "artifact": own}


def write_manifest(path, cfg, argv, seconds):
    man = {"config": {k: v for k, v in cfg.items() if not k.startswith("_")},
           "config_hash": config_hash(cfg), "seed": cfg["seed"], "versions": _versions(),
           "argv": list(argv), "wall_seconds": round(seconds, 3),
           "artifacts": ["metrics.csv", "metrics.jsonl", "checkpoints.json"]}
    with open(path, "w") as f:
        json.dump(man, f, indent=2)


def _threads(args):
    return args.threads or os.cpu_count() or 1


# ---------------------------------------------------------------------------
# run

def cmd_run(args) -> int:
    cfg = resolve_config(args)
    out = cfg["_output"] or os.path.join("runs", f"{cfg['template']}-{config_hash(cfg)[:8]}")
    t0 = time.time()
    try:
        ledger = run_experiment(cfg, out, workers=_threads(args))
    except (FileNotFoundError, ImportError) as e:
        if cfg["template"].startswith(("mnist", "lcu")):
            print(f"error: MNIST data unavailable ({e}).\n"
                  f"  Point {D.MNIST_ENV} (or --set mnist_path=...) at a directory holding the four\n"
                  f"  IDX files (train-images-idx3-ubyte, ...), or install the bundled 5k subset\n"
                  f"  with: pip install 'artifact[mnist]'", file=sys.stderr)
            return EXIT_DATA
        raise
    write_manifest(os.path.join(out, "manifest.json"), cfg, sys.argv, time.time() - t0)
    for m in ledger.models():
        r = ledger.final(m)
        fields = [f"{k}={r[k]:.4g}" for k in ("train_loss", "test_loss", "gap", "train_acc", "test_acc")
                  if isinstance(r.get(k), float)]
        print(f"{m:24s} epoch={r.get('epoch')} " + " ".join(fields))
    print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# grad-audit

def _audit_model(family, n, depth):
    """(monolithic circuit, density sub-units, observable, expected counts)."""
    from .pauli import Observable, z_sum
    if family == "hwe":
        H = Observable([(1.0, "I" * q + c + "I" * (n - q - 1)) for q in range(n) for c in "XZ"], n)
        mono = A.build_hardware_efficient(n, depth)
        subs = [A.build_hardware_efficient(n, 1, first_layer=l) for l in range(depth)]
        return mono, subs, H, (2 * n * depth, 2 * depth)
    H = z_sum(n, np.arange(1, n + 1))
    if family == "round-robin":
        mono = A.build_round_robin(n, n - 1)
        subs = [A.build_round_robin(n, 1, start=k) for k in range(n - 1)]
        return mono, subs, H, (4 * n * (n - 1) // 2, n - 1)
    if family == "butterfly":
        mono = A.build_butterfly(n)
        subs = A.build_layer_subunits(mono)
        return mono, subs, H, (4 * mono.n_params, int(math.log2(n)))
    if family == "pyramid":
        mono = A.build_pyramid(n)
        subs = A.build_odd_even(n)
        return mono, subs, H, (4 * mono.n_params, len(subs))
    raise ConfigError(f"unknown family {family!r}")


def audit_rows(families=("hwe", "round-robin", "butterfly", "pyramid"), ns=(4, 8, 10), depth=3):
    from .density import DensityModel
    from .grad import model_plan
    rows = []
    for fam in families:
        for n in ns:
            if fam == "butterfly" and n & (n - 1):
                continue
            mono, subs, H, (want_mono, want_dens) = _audit_model(fam, n, depth)
            pm = model_plan(DensityModel([mono]), H, "shift", params=False)
            pd = model_plan(DensityModel(subs), H, "commuting", params=False)
            rows.append(dict(family=fam, n=n, D=depth if fam == "hwe" else len(mono.blocks), K=len(subs),
                             n_params=mono.n_params, shift=pm.n_gradient_circuits, expected_shift=want_mono,
                             density=pd.n_gradient_circuits, expected_density=want_dens))
    return rows


def cmd_grad_audit(args) -> int:
    fams = [args.family] if args.family != "all" else ["hwe", "round-robin", "butterfly", "pyramid"]
    ns = args.n or [4, 8, 10]
    rows = audit_rows(fams, ns, args.depth)
    head = f"{'family':12s} {'n':>3s} {'D':>3s} {'K':>3s} {'N_params':>8s} {'N_grad shift':>12s} " \
           f"{'N_grad density':>14s}  ok"
    print(head)
    bad = 0
    for r in rows:
        ok = r["shift"] == r["expected_shift"] and r["density"] == r["expected_density"]
        bad += not ok
        print(f"{r['family']:12s} {r['n']:3d} {r['D']:3d} {r['K']:3d} {r['n_params']:8d} "
              f"{r['shift']:12d} {r['density']:14d}  {'yes' if ok else 'NO'}")
    if args.output:
        os.makedirs(args.output, exist_ok=True)
        with open(os.path.join(args.output, "grad_audit.json"), "w") as f:
            json.dump(rows, f, indent=2)
    return EXIT_OK if not bad else EXIT_FAIL


# ---------------------------------------------------------------------------
# verify

def _suite_gradients(rng):
    from .density import DensityModel
    from .grad import density_gradient, finite_difference
    from .pauli import z_sum
    out = []
    loader = A.Loader("product_ry")
    x = rng.uniform(-1, 1, (3, 4))
    H = z_sum(4, [1.0, -0.5, 0.3, 0.8])
    cases = {"hwe": [A.build_hardware_efficient(4, 1, first_layer=l) for l in range(3)],
             "equivariant": [A.build_equivariant(4, "X", 2), A.build_equivariant(4, "Y", 2)]}
    for name, subs in cases.items():
        m = DensityModel(subs, [c.init_params(rng) * 5 for c in subs], logits=rng.normal(size=len(subs)),
                         loader=loader)

        def loss(v):
            m2 = m.copy()
            m2.set_flat(v)
            from .density import expectation_exact
            return float(np.mean(expectation_exact(m2, x, H)))

        fd = finite_difference(loss, m.flat())
        for eng in ("shift", "adjoint", "commuting"):
            g, _ = density_gradient(m, x, H, engine=eng)
            err = float(np.max(np.abs(g - fd)))
            out.append((f"{name} {eng} vs finite differences", err < 1e-6, err))
    rr = A.build_round_robin(4, 3)
    th = rr.init_params(rng) * 5
    xs = A.unary_embed(rng.normal(size=(1, 4)) / 2, 4)
    from .grad import shift_gradient, adjoint_gradient
    g1 = shift_gradient(rr, th, None, H, psi0=xs[0])
    _, g2 = adjoint_gradient(rr, th, None, H, psi0=xs[0])
    err = float(np.max(np.abs(np.asarray(g1).ravel() - np.asarray(g2).ravel())))
    out.append(("four-term RBS shift vs adjoint", err < 1e-9, err))
    return out


def _suite_mixing(rng):
    from .train import mixing_instance
    out = []
    for i in range(20):
        r = mixing_instance(1000 + i, 3, 2 + i % 2)
        out.append((f"instance {i} K={2 + i % 2}", bool(r.holds), r.density_error - r.bound))
    return out


def _suite_subspace(rng):
    from .subspace import subspace_forward, subspace_gradient
    out = []
    for name, c in (("pyramid", A.build_pyramid(6)), ("x", A.build_x(6)), ("butterfly", A.build_butterfly(8)),
                    ("round-robin", A.build_round_robin(6, 5))):
        th = rng.uniform(-np.pi, np.pi, c.n_params)
        v = rng.normal(size=c.n_qubits)
        v /= np.linalg.norm(v)
        y = subspace_forward(c, th, v)
        psi = c.apply(A.unary_embed(v[None], c.n_qubits), th)[0]
        err = float(np.max(np.abs(A.unary_amplitudes(psi, c.n_qubits) - y)))
        out.append((f"{name} unary vs statevector", err < 1e-10, err))
        u = rng.normal(size=c.n_qubits)
        g, _ = subspace_gradient(c, th, v, u)
        from .grad import finite_difference
        fd = finite_difference(lambda t: float(u @ subspace_forward(c, t, v)), th)
        err = float(np.max(np.abs(g - fd)))
        out.append((f"{name} subspace gradient vs finite differences", err < 1e-7, err))
    return out


def _suite_modes(rng):
    from .density import DensityModel, expectation_exact, prepare_deterministic, expectation_sampled
    from .pauli import z_sum
    out = []
    subs = [A.build_hardware_efficient(3, 2, first_layer=l) for l in range(3)]
    m = DensityModel(subs, [c.init_params(rng) * 5 for c in subs], logits=rng.normal(size=3),
                     loader=A.Loader("product_ry"))
    x = rng.uniform(-1, 1, (1, 3))
    H = z_sum(3)
    e = float(expectation_exact(m, x, H)[0])
    rho = prepare_deterministic(m, x[0])
    d = rho.expectation(H)
    out.append(("deterministic density matrix vs exact mixture", abs(d - e) < 1e-10, abs(d - e)))
    s, sem = expectation_sampled(m, x, H, 200, 400, rng, return_sem=True)
    z = abs(s.estimate - e) / max(sem, 1e-12)
    out.append(("sampled mode within 4 standard errors", z < 4, z))
    return out


SUITES = {"gradients": _suite_gradients, "mixing": _suite_mixing, "subspace": _suite_subspace,
          "modes": _suite_modes}


def cmd_verify(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    failed = 0
    for s in names:
        for label, ok, val in SUITES[s](rng):
            failed += not ok
            print(f"[{'PASS' if ok else 'FAIL'}] {s}: {label} ({val:.3g})")
    print(f"{failed} failed")
    return EXIT_OK if not failed else EXIT_FAIL


# ---------------------------------------------------------------------------
# export-dataset

def cmd_export(args) -> int:
    seed = args.seed if args.seed is not None else 0
    rng = np.random.default_rng(seed)
    over = parse_sets(args.set)
    out = args.output or "."
    os.makedirs(out, exist_ok=True)
    if args.dataset == "bars-dots":
        cfg = {"d": 10, "sigma": 1.8, "n_train": 1000, "n_test": 100, "shifts": True}
        _merge(cfg, over)
        sets = [D.gen_bars_dots(cfg["d"], cfg["n_train"], cfg["sigma"], rng, cfg["shifts"], "train", seed),
                D.gen_bars_dots(cfg["d"], cfg["n_test"], cfg["sigma"], rng, cfg["shifts"], "test", seed)]
    elif args.dataset == "chebyshev":
        cfg = {"order": 2, "n_train": 25, "n_test": 110, "noise": 0.5, "test_noise": 0.0}
        _merge(cfg, over)
        sets = list(D.gen_chebyshev(cfg["order"], cfg["n_train"], cfg["n_test"], cfg["noise"],
                                    cfg["test_noise"], rng, seed))
    else:
        cfg = {"pca": 10, "n_train": 4000, "mnist_path": ""}
        _merge(cfg, over)
        from .train import _mnist_data
        try:
            sets = list(_mnist_data(cfg, seed))
        except (FileNotFoundError, ImportError) as e:
            print(f"error: MNIST data unavailable ({e}); set {D.MNIST_ENV} or install artifact[mnist]",
                  file=sys.stderr)
            return EXIT_DATA
    for ds in sets:
        path = os.path.join(out, f"{args.dataset}_{ds.split}.csv")
        D.export_csv(ds, path)
        print(f"wrote {path} ({len(ds)} rows)")
    return EXIT_OK


def _merge(cfg, over):
    for k, v in over.items():
        if k not in cfg:
            raise ConfigError(f"unknown key {k!r}; expected one of {sorted(cfg)}")
        cfg[k] = v


# ---------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="base RNG seed")
    common.add_argument("--threads", type=int, default=None,
                        help="worker processes (default: CPU count)")
    common.add_argument("--output", default=None, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dqnn", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="run an experiment template")
    r.add_argument("--config", help="TOML config file")
    r.add_argument("--template", choices=sorted(TEMPLATES))
    r.add_argument("--set", nargs="+", action="extend", metavar="KEY=VALUE", help="override config keys")
    r.set_defaults(func=cmd_run)

    g = sub.add_parser("grad-audit", parents=[common], help="gradient circuit counts per engine")
    g.add_argument("--family", default="all", choices=["all", "hwe", "round-robin", "butterfly", "pyramid"])
    g.add_argument("--n", type=int, nargs="+", help="qubit counts (default 4 8 10)")
    g.add_argument("--depth", type=int, default=3, help="hardware-efficient depth")
    g.set_defaults(func=cmd_grad_audit)

    v = sub.add_parser("verify", parents=[common], help="run an invariant suite")
    v.add_argument("suite", choices=["all"] + sorted(SUITES))
    v.set_defaults(func=cmd_verify)

    e = sub.add_parser("export-dataset", parents=[common], help="write a dataset to CSV")
    e.add_argument("dataset", choices=["bars-dots", "chebyshev", "mnist"])
    e.add_argument("--set", nargs="+", action="extend", metavar="KEY=VALUE")
    e.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
