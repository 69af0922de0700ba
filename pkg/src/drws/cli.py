"""Benchmark command line: generate, train, evaluate, bounds, diagnose.

One INI-style config file drives all subcommands (sections documented in
docs/formats.md).  Every output embeds the SHA-256 digest of the config
bytes plus the effective seed, and all outputs are byte-reproducible from
(config, seed); the training history's wall-clock column is the one
documented exception.  Iteration counts in the benchmark table are means
over test problems rounded half-up; reduction fractions are computed from
the unrounded means.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import math
import sys as _sys
import time
from pathlib import Path

import numpy as np

from . import bounds, engine, nn, unroll, zoo
from .errors import ConfigError, DrwsError
from .qp import ParametricFamily

KNOB_TYPES = {
    "rows": int, "cols": int, "theta_low": float, "theta_high": float,
    "n": int, "m": int, "lam_min": float, "g_scale": float,
    "masses": int, "horizon": int, "dt": float, "damping": float,
    "u_max": float, "x_max": float, "pos_init": float, "vel_init": float,
    "strict_feasibility": lambda s: s.lower() in ("1", "true", "yes"),
    "assets": int, "factors": int, "rho": float, "mu_noise": float,
}


def _load_config(path: str) -> tuple[configparser.ConfigParser, str]:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    raw = p.read_bytes()
    cp = configparser.ConfigParser()
    try:
        cp.read_string(raw.decode())
    except (UnicodeDecodeError, configparser.Error) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    return cp, hashlib.sha256(raw).hexdigest()


def _family_from_config(cp: configparser.ConfigParser, seed_override: int | None) -> ParametricFamily:
    if not cp.has_section("family"):
        raise ConfigError("config needs a [family] section")
    section = cp["family"]
    family_id = section.get("id")
    if family_id is None:
        raise ConfigError("[family] section needs an 'id' key")
    seed = seed_override if seed_override is not None else section.getint("seed", 0)
    knobs = {}
    for key, value in section.items():
        if key in ("id", "seed"):
            continue
        if key not in KNOB_TYPES:
            raise ConfigError(f"[family] unknown knob {key!r} for {family_id!r}")
        try:
            knobs[key] = KNOB_TYPES[key](value)
        except ValueError as exc:
            raise ConfigError(f"[family] bad value for {key!r}: {value!r}") from exc
    return zoo.make_family(zoo.FamilySpec(family=family_id, seed=seed, knobs=knobs))


def _getfloat(section, key, default):
    try:
        return section.getfloat(key, default)
    except ValueError as exc:
        raise ConfigError(f"[{section.name}] bad float for {key!r}") from exc


def _getint(section, key, default):
    try:
        return section.getint(key, default)
    except ValueError as exc:
        raise ConfigError(f"[{section.name}] bad int for {key!r}") from exc


def _float_list(section, key, default):
    text = section.get(key, default)
    try:
        return [float(tok) for tok in text.replace(",", " ").split()]
    except ValueError as exc:
        raise ConfigError(f"[{section.name}] bad list for {key!r}: {text!r}") from exc


def _int_list(section, key, default):
    return [int(round(v)) for v in _float_list(section, key, default)]


def _stamp(digest: str, seed: int) -> str:
    return f"# config_digest={digest} seed={seed}"


def _write_csv(path: Path, digest: str, seed: int, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(_stamp(digest, seed) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def cmd_generate(cp, digest: str, seed: int | None, out: Path) -> None:
    """Write the train/test JSON-lines datasets."""
    family = _family_from_config(cp, seed)
    n_train, n_test = 1000, 200
    if cp.has_section("generate"):
        section = cp["generate"]
        n_train = _getint(section, "n_train", n_train)
        n_test = _getint(section, "n_test", n_test)
    if n_train < 1 or n_test < 0:
        raise ConfigError("[generate] n_train must be >= 1 and n_test >= 0")
    extra = {"config_digest": digest}
    train = family.sample_thetas(n_train)
    zoo.write_dataset(out / "train.jsonl", family, train, extra_header=extra)
    test = family.sample_thetas(n_test, seed=family.seed + 1)
    zoo.write_dataset(out / "test.jsonl", family, test, extra_header=extra)
    print(f"wrote {out / 'train.jsonl'} ({n_train}) and {out / 'test.jsonl'} ({n_test})")


def _train_config(cp, seed: int | None) -> nn.TrainConfig:
    section = cp["train"] if cp.has_section("train") else None
    if section is None:
        raise ConfigError("config needs a [train] section")
    hidden = tuple(_int_list(section, "hidden", "100 100"))
    cfg = nn.TrainConfig(
        k=_getint(section, "k", 15),
        epochs=_getint(section, "epochs", 100),
        batch_size=_getint(section, "batch_size", 0),
        learning_rate=_getfloat(section, "learning_rate", 1e-3),
        seed=seed if seed is not None else _getint(section, "seed", 0),
        hidden=hidden,
        normalize=section.getboolean("normalize", True),
        pretrain=section.getboolean("pretrain", False),
        pretrain_epochs=_getint(section, "pretrain_epochs", 50),
    )
    return cfg


def cmd_train(cp, digest: str, seed: int | None, out: Path) -> None:
    """Train a predictor on the generated training set; persist model and history."""
    family = _family_from_config(cp, seed)
    cfg = _train_config(cp, seed)
    train_path = out / "train.jsonl"
    if not train_path.exists():
        raise ConfigError(f"training dataset not found: {train_path} (run generate first)")
    _, thetas, _ = zoo.read_dataset(train_path)
    holdout = None
    test_path = out / "test.jsonl"
    if test_path.exists():
        _, holdout, _ = zoo.read_dataset(test_path)
    initial = None
    if cfg.pretrain:
        fact = family.shared_fact()
        Q = family.q_batch(thetas)
        Z_inf, _, _ = engine.solve_batch(
            fact, family.n, Q, np.zeros((family.dim, thetas.shape[0])),
            tol=1e-10, max_iters=200_000,
        )
        mean, std = nn.normalization_stats(thetas)
        base = nn.init_model(
            d=family.d, out_dim=family.dim, hidden=cfg.hidden, seed=cfg.seed,
            normalize=cfg.normalize, input_mean=mean, input_std=std,
            meta={"family_id": family.family_id, "k": cfg.k, "seed": cfg.seed,
                  "d": family.d, "out_dim": family.dim},
        )
        initial = nn.pretrain(base, thetas, Z_inf.T, cfg.pretrain_epochs)
    model, history = nn.train(family, thetas, cfg, holdout_thetas=holdout, initial=initial)
    model_path = out / f"model_k{cfg.k}.json"
    nn.save_model(model, model_path)
    rows = [
        [e, _fmt(tl), _fmt(hl), _fmt(sec)]
        for e, (tl, hl, sec) in enumerate(
            zip(history.train_loss, history.holdout_loss, history.seconds)
        )
    ]
    _write_csv(
        out / f"history_k{cfg.k}.csv", digest, cfg.seed,
        ["epoch", "train_loss", "holdout_loss", "seconds"], rows,
    )
    print(f"wrote {model_path} and {out / f'history_k{cfg.k}.csv'}")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _iters_to_eps(residuals: np.ndarray, eps: float, max_iters: int) -> np.ndarray:
    """First iteration with residual <= eps per column; max_iters if never."""
    hit = residuals <= eps
    any_hit = hit.any(axis=0)
    first = hit.argmax(axis=0) + 1
    return np.where(any_hit, first, max_iters)


def _log_checkpoints(limit: int) -> list[int]:
    pts = sorted({int(round(10 ** (e / 8.0))) for e in range(int(8 * math.log10(max(limit, 2))) + 1)})
    return [p for p in pts if 1 <= p <= limit]


def cmd_evaluate(cp, digest: str, seed: int | None, out: Path) -> None:
    """Iterations-to-accuracy table across warm-start strategies."""
    family = _family_from_config(cp, seed)
    section = cp["evaluate"] if cp.has_section("evaluate") else None
    if section is None:
        raise ConfigError("config needs an [evaluate] section")
    eps_grid = _float_list(section, "epsilons", "1e-2 1e-3 1e-4")
    ks = _int_list(section, "ks", "15")
    max_iters = _getint(section, "max_iters", 5000)
    nn_store_tol = _getfloat(section, "nn_store_tol", 1e-8)
    test_path = out / "test.jsonl"
    train_path = out / "train.jsonl"
    for p in (test_path, train_path):
        if not p.exists():
            raise ConfigError(f"dataset not found: {p} (run generate first)")
    _, test_thetas, _ = zoo.read_dataset(test_path)
    _, train_thetas, _ = zoo.read_dataset(train_path)
    fact = family.shared_fact()
    eff_seed = seed if seed is not None else family.seed

    strategies: list[tuple[str, bounds.WarmStartStrategy]] = [
        ("no_learn", bounds.cold_start(family.dim))
    ]
    Q_train = family.q_batch(train_thetas)
    Z_store, _, _ = engine.solve_batch(
        fact, family.n, Q_train, np.zeros((family.dim, train_thetas.shape[0])),
        tol=nn_store_tol, max_iters=max_iters * 20,
    )
    strategies.append(("naive_ws", bounds.nearest_neighbor(train_thetas, Z_store.T)))
    for k in ks:
        model_path = out / f"model_k{k}.json"
        if not model_path.exists():
            raise ConfigError(f"model not found: {model_path} (run train with k={k})")
        strategies.append((f"traink{k}", bounds.learned(nn.load_model(model_path))))

    Q_test = family.q_batch(test_thetas)
    per_strategy: dict[str, np.ndarray] = {}
    curves: dict[str, np.ndarray] = {}
    for name, strategy in strategies:
        Z0 = bounds.warm_start_batch(strategy, test_thetas)
        _, _, residuals = engine.solve_batch(
            fact, family.n, Q_test, Z0, tol=min(eps_grid), max_iters=max_iters
        )
        per_strategy[name] = residuals
        curves[name] = residuals.mean(axis=1)

    names = [name for name, _ in strategies]
    table_rows = []
    report_rows = []
    for eps in eps_grid:
        iters = {
            name: _iters_to_eps(per_strategy[name], eps, max_iters) for name in names
        }
        means = {name: float(iters[name].mean()) for name in names}
        cold = means["no_learn"]
        row = [_fmt(eps), str(_round_half_up(cold))]
        entry = {"epsilon": eps, "no_learn_iters": means["no_learn"]}
        for name in names[1:]:
            red = 1.0 - means[name] / cold if cold > 0 else 0.0
            row += [str(_round_half_up(means[name])), _fmt(round(red, 4))]
            entry[f"{name}_iters"] = means[name]
            entry[f"{name}_red"] = red
        table_rows.append(row)
        report_rows.append(entry)

    header = ["accuracies", "no_learn_iters"]
    for name in names[1:]:
        header += [f"{name}_iters", f"{name}_red"]
    _write_csv(out / "evaluate.csv", digest, eff_seed, header, table_rows)

    # Mean residual curves per strategy, plus per-problem curves at
    # log-spaced checkpoints (the paper leaves per-problem vs mean
    # unspecified, so both are emitted).
    depth = max(len(curves[name]) for name in names)
    mean_rows = []
    for i in range(depth):
        mean_rows.append(
            [i + 1] + [_fmt(float(curves[n][i])) if i < len(curves[n]) else "" for n in names]
        )
    _write_csv(out / "curves_mean.csv", digest, eff_seed, ["iter"] + names, mean_rows)
    checks = _log_checkpoints(depth)
    prob_rows = []
    for name in names:
        res = per_strategy[name]
        for j in range(res.shape[1]):
            for it in checks:
                if it <= res.shape[0]:
                    prob_rows.append([name, j, it, _fmt(float(res[it - 1, j]))])
    _write_csv(
        out / "curves_problems.csv", digest, eff_seed,
        ["strategy", "problem", "iter", "fp_residual"], prob_rows,
    )
    report = {
        "config_digest": digest,
        "seed": eff_seed,
        "family": family.family_id,
        "n_test": int(test_thetas.shape[0]),
        "max_iters": max_iters,
        "rows": report_rows,
    }
    with open(out / "evaluate.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {out / 'evaluate.csv'}, curves, and {out / 'evaluate.json'}")


def cmd_bounds(cp, digest: str, seed: int | None, out: Path) -> None:
    """Estimate bound inputs and evaluate the requested bound kinds."""
    family = _family_from_config(cp, seed)
    section = cp["bounds"] if cp.has_section("bounds") else None
    if section is None:
        raise ConfigError("config needs a [bounds] section")
    delta = _getfloat(section, "delta", 0.05)
    if not (0.0 < delta < 1.0):
        raise ConfigError(f"[bounds] delta must lie in (0, 1), got {delta}")
    k = _getint(section, "k", 15)
    kind = section.get("kind", "linear_corollary")
    if kind not in ("theorem1", "linear_corollary", "averaged"):
        raise ConfigError(f"[bounds] unknown kind {kind!r}")
    trials = _getint(section, "trials", 0)
    n_train = _getint(section, "n_train", 300)
    n_test = _getint(section, "n_test", 100)
    eff_seed = seed if seed is not None else family.seed
    if family.rho2 is None and kind == "linear_corollary":
        raise ConfigError("family has no analytic rho2; use kind=theorem1 with rad")

    frac = None
    details: list[dict] = []
    if trials > 0:
        frac, details = bounds.bound_violation_trial(
            family, k=k, delta=delta, trials=trials,
            n_train=n_train, n_test=n_test, seed=eff_seed,
            fit_samples=_getint(section, "fit_samples", 100),
            b_samples=_getint(section, "b_samples", 50),
            beta_samples=_getint(section, "beta_samples", 5),
        )
        rep = details[-1]
        inp = bounds.BoundInputs(
            beta=rep["beta"], k=k, n_samples=n_train, delta=delta,
            b_dist=rep["B"], rho2=family.rho2, d=family.d,
        )
        report = bounds.bound_report(kind, inp, rep["empirical_risk"], rep["bound_value"], frac)
    else:
        thetas = family.sample_thetas(n_train)
        beta = bounds.family_beta(
            family, thetas[: _getint(section, "beta_samples", 5)], seed=eff_seed
        )
        fact = family.shared_fact()
        sub = thetas[: _getint(section, "fit_samples", 100)]
        Q_sub = family.q_batch(sub)
        Z_inf, _, _ = engine.solve_batch(
            fact, family.n, Q_sub, np.zeros((family.dim, sub.shape[0])),
            tol=1e-10, max_iters=200_000,
        )
        hypothesis = bounds.fit_linear_predictor(family, sub, Z_inf.T)
        strategy = bounds.learned(hypothesis)
        b_hat = bounds.estimate_B(strategy, family, thetas[: _getint(section, "b_samples", 50)])
        emp = nn.empirical_risk(fact, family.n, family.q_batch(thetas), hypothesis, thetas, k)
        inp = bounds.BoundInputs(
            beta=beta, k=k, n_samples=n_train, delta=delta, b_dist=b_hat,
            rho2=family.rho2, d=family.d, rad=section.getfloat("rad", fallback=None),
        )
        value = {
            "theorem1": bounds.bound_theorem1,
            "linear_corollary": bounds.bound_linear_corollary,
            "averaged": bounds.bound_averaged,
        }[kind](inp, emp)
        report = bounds.bound_report(kind, inp, emp, value, None)
    report["config_digest"] = digest
    report["seed"] = eff_seed
    report["trials"] = details
    with open(out / "bounds.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"wrote {out / 'bounds.json'}")


def cmd_diagnose(cp, digest: str, seed: int | None, out: Path) -> None:
    """Gradient-decay and contraction diagnostics across a k grid."""
    family = _family_from_config(cp, seed)
    section = cp["diagnose"] if cp.has_section("diagnose") else None
    if section is None:
        raise ConfigError("config needs a [diagnose] section")
    k_grid = _int_list(section, "k_grid", "5 10 20 40")
    count = _getint(section, "instances", 20)
    eff_seed = seed if seed is not None else family.seed
    thetas = family.sample_thetas(count)
    rng = np.random.default_rng(np.random.SeedSequence((eff_seed, 5)))
    regime = "averaged" if family.averaged_regime else "contractive"
    grad_norms = {k: [] for k in k_grid}
    rows = []
    for i, theta in enumerate(thetas):
        sys = family.lcp(theta)
        z0 = rng.standard_normal(sys.dim)
        beta = engine.estimate_beta(sys, [z0], engine.SolveSettings(max_iters=200_000))
        z_inf = engine.solve(
            sys, z0, engine.SolveSettings(tol=1e-10, max_iters=200_000)
        ).z
        dist = float(np.linalg.norm(z0 - z_inf))
        margin = 0.0
        for k in (1, 5, 15, 50):
            _, loss = engine.run_k(sys, z0, k)
            denom = 2.0 * beta**k * dist
            margin = max(margin, loss / denom if denom > 0 else 0.0)
        for k in k_grid:
            _, grad = unroll.loss_gradient(sys, z0, k)
            grad_norms[k].append(float(np.linalg.norm(grad)))
        rows.append([i, _fmt(beta), _fmt(margin), regime])
    _write_csv(
        out / "diagnose_instances.csv", digest, eff_seed,
        ["instance", "beta_hat", "lemma_margin", "regime"], rows,
    )
    k_rows = [
        [k, _fmt(float(np.median(grad_norms[k]))), regime] for k in k_grid
    ]
    _write_csv(
        out / "diagnose.csv", digest, eff_seed,
        ["k", "median_grad_norm", "regime"], k_rows,
    )
    print(f"wrote {out / 'diagnose.csv'} and {out / 'diagnose_instances.csv'}")


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "bounds": cmd_bounds,
    "diagnose": cmd_diagnose,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="drws",
        description="Benchmark driver for learned Douglas-Rachford warm starts.",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="path to the INI config file")
    parser.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    parser.add_argument("--out", default=".", help="output directory")
    args = parser.parse_args(argv)
    try:
        cp, digest = _load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        COMMANDS[args.command](cp, digest, args.seed, out)
        print(f"{args.command} finished in {time.perf_counter() - t0:.1f}s")
    except ConfigError as exc:
        print(f"config error: {exc}", file=_sys.stderr)
        return 2
    except DrwsError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
