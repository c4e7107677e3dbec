"""Command-line front end.

One subcommand per reproduction suite. Configuration is plain
``key=value`` text (``--config`` file plus repeatable ``--set``
overrides); unknown keys are rejected. Every run writes
``manifest.txt`` (the resolved config with version comments) into the
output directory, and feeding that manifest back through ``--config``
reproduces the run's CSV artifacts bit for bit.

Exit codes: 0 all checks pass, 1 a property failed or training
diverged, 2 usage error.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import __version__, metrics, ops, training
from .autograd import Tape, Variable, backward, grad_check
from .data_io import (from_u8, gen_shapes_cls, gen_sr_textures, gen_teacher_1d,
                      load_cifar10_bin, load_ppm, save_ppm)
from .kernels import BACKEND
from .layers import (PaLaConv, PaLaDense, PaonDegree, pala_param_count,
                     reduce_config)
from .models import (ClsNetConfig, SrNetConfig, build_cls, build_srnet,
                     load_checkpoint)
from .nn import Conv2d
from .shifter import ShifterConfig
from .tensor_ops import ConvSpec


class UsageError(ValueError):
    pass


def _parse_value(kind, raw):
    raw = raw.strip()
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    if kind == "bool":
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise UsageError(f"not a boolean: {raw!r}")
    if kind == "str":
        return raw
    if kind == "ints":
        return tuple(int(t) for t in raw.split(",") if t.strip() != "")
    if kind == "floats":
        return tuple(float(t) for t in raw.split(",") if t.strip() != "")
    raise AssertionError(kind)


def _format_value(kind, val):
    if kind == "bool":
        return "true" if val else "false"
    if kind == "float":
        return repr(float(val))
    if kind in ("ints", "floats"):
        fmt = repr if kind == "floats" else str
        return ",".join(fmt(v) for v in val)
    return str(val)


_TRAIN_KEYS = {
    "seed": ("int", 0),
    "iterations": ("int", 2000),
    "batch_size": ("int", 4),
    "loss": ("str", "barron"),
    "barron_alpha": ("float", 1.5),
    "barron_c": ("float", 2.0),
    "optimizer": ("str", "adamw"),
    "lr": ("float", 1e-3),
    "lr_min": ("float", 1e-6),
    "weight_decay": ("float", 0.0),
    "momentum": ("float", 0.9),
    "schedule": ("str", "cosine"),
    "clip_norm": ("float", 1.0),
    "noise": ("bool", True),
    "noise_snr_db": ("float", 40.0),
    "eval_every": ("int", 250),
}

_SR_MODEL_KEYS = {
    "family": ("str", "pala"),
    "degree": ("ints", (1, 1)),
    "smoothed": ("bool", True),
    "channels": ("int", 16),
    "r_blocks": ("int", 2),
    "activation": ("str", "none"),
    "scale": ("int", 2),
    "shared_pixelshuffle": ("bool", False),
    "shifter": ("str", "none"),
    "shifter_b": ("float", 0.0),
    "shifter_ks": ("int", 1),
}

_SR_DATA_KEYS = {
    "pairs": ("int", 200),
    "n_val": ("int", 20),
    "size": ("int", 64),
    "data_seed": ("int", 0),
}

_SR_KEYS = {**_TRAIN_KEYS, **_SR_MODEL_KEYS, **_SR_DATA_KEYS}

_CLS_KEYS = {
    **_TRAIN_KEYS,
    "family": ("str", "classic"),
    "degree": ("ints", (1, 1)),
    "smoothed": ("bool", True),
    "stage_blocks": ("ints", (2, 2, 2)),
    "stage_channels": ("ints", (16, 32, 64)),
    "head": ("str", "affine"),
    "shifter": ("str", "none"),
    "shifter_b": ("float", 0.0),
    "shifter_ks": ("int", 1),
    "source": ("str", "shapes"),
    "cifar_dir": ("str", ""),
    "n_train": ("int", 1800),
    "n_val": ("int", 200),
    "data_seed": ("int", 0),
}

SCHEMAS = {
    "approx": {
        "seed": ("int", 0),
        "samples": ("int", 512),
        "iterations": ("int", 2000),
        "restarts": ("int", 6),
        "lr": ("float", 0.05),
        "teacher_a": ("floats", (0.0, 1.0)),
        "teacher_b": ("floats", (1.0,)),
        "interval": ("floats", (-3.0, 3.0)),
        "mse_limit": ("float", 1.0),
    },
    "gradcheck": {
        "seed": ("int", 0),
        "tol": ("float", 1e-4),
        "n_coords": ("int", 120),
    },
    "count": {
        "in_channels": ("int", 3),
        "out_channels": ("int", 3),
        "kernel": ("int", 5),
        "height": ("int", 256),
        "width": ("int", 256),
        "degree": ("ints", (1, 1)),
        "smoothed": ("bool", True),
        "shifter": ("str", "none"),
        "shifter_b": ("float", 0.0),
        "shifter_ks": ("int", 1),
    },
    "singularity": {
        **_SR_KEYS,
        "threshold": ("float", 0.01),
    },
    "train-sr": _SR_KEYS,
    "train-cls": _CLS_KEYS,
    "eval": {
        **_SR_KEYS,
        "checkpoint": ("str", ""),
        "dump_images": ("int", 4),
        "pair_a": ("str", ""),
        "pair_b": ("str", ""),
    },
    "reduce-check": {
        "seed": ("int", 0),
        "instances": ("int", 100),
        "tol": ("float", 1e-12),
    },
}


def read_config_file(path):
    entries = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, val = stripped.partition("=")
        entries[key.strip()] = val
    return entries


def resolve_config(subcommand, config_path, sets):
    schema = SCHEMAS[subcommand]
    cfg = {k: default for k, (_, default) in schema.items()}
    raw = {}
    if config_path:
        raw.update(read_config_file(config_path))
    for item in sets or ():
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, _, val = item.partition("=")
        raw[key.strip()] = val
    for key, val in raw.items():
        if key not in schema:
            raise UsageError(f"unknown config key {key!r} for {subcommand!r} "
                             f"(known: {', '.join(sorted(schema))})")
        cfg[key] = _parse_value(schema[key][0], val)
    return cfg


def write_manifest(outdir, subcommand, cfg):
    schema = SCHEMAS[subcommand]
    lines = [
        f"# paonkit {__version__}",
        f"# numpy {np.__version__}",
        f"# backend {BACKEND}",
        f"# subcommand {subcommand}",
    ]
    for key in sorted(cfg):
        lines.append(f"{key}={_format_value(schema[key][0], cfg[key])}")
    (Path(outdir) / "manifest.txt").write_text("\n".join(lines) + "\n")


def _outdir(args):
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _shifter_cfg(kind, b, ks, channels):
    if kind == "none":
        return None
    return ShifterConfig(kind, b, channels=channels, k_s=ks)


# --- approx ---------------------------------------------------------------

def _train_scalar_paon(xt, yt, seed, iterations, lr):
    rng = np.random.default_rng(seed)
    layer = PaLaDense(PaonDegree(1, 1), 1, 1, rng, smoothed=True, dtype=np.float64)
    for p in layer.parameters():
        p.value[...] = rng.normal(scale=1.0, size=p.value.shape)
    params = layer.parameters()
    state = training.make_adamw_state(params)
    xv, yv = Variable(xt), Variable(yt)
    for it in range(iterations):
        cur = training.cosine_lr(it, iterations, lr, lr * 1e-3)
        with Tape() as tape:
            loss = training.l2_loss(layer(xv), yv)
        for p in params:
            p.zero_grad()
        backward(tape, loss)
        training.adamw_step(params, [p.grad for p in params], state, cur, 0.0)
    with Tape():
        mse = float(training.l2_loss(layer(xv), yv).value)
    return mse, layer


def fit_approx(cfg):
    """Teacher-student fit: smoothed [1/1] by gradient, [2/0] closed form.

    Returns (paon_mse, quad_mse, curves) where curves is the
    (x, teacher, paon, quadratic) column stack on the sample grid.
    """
    x, y = gen_teacher_1d(cfg["samples"], cfg["seed"], cfg["teacher_a"],
                          cfg["teacher_b"], cfg["interval"])
    xt = x.reshape(-1, 1)
    yt = y.reshape(-1, 1)
    best_mse, best_layer = np.inf, None
    for r in range(cfg["restarts"]):
        mse, layer = _train_scalar_paon(xt, yt, cfg["seed"] + 1000 * (r + 1),
                                        cfg["iterations"], cfg["lr"])
        if np.isfinite(mse) and mse < best_mse:
            best_mse, best_layer = mse, layer

    design = np.stack([np.ones_like(x), x, x * x], axis=1)
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    quad_pred = design @ coef
    quad_mse = float(((quad_pred - y) ** 2).mean())

    if best_layer is None:
        return np.inf, quad_mse, None
    with Tape():
        paon_pred = best_layer(Variable(xt)).value[:, 0]
    curves = np.column_stack([x, y, paon_pred, quad_pred])
    return best_mse, quad_mse, curves


def cmd_approx(args):
    cfg = resolve_config("approx", args.config, args.set)
    out = _outdir(args)
    write_manifest(out, "approx", cfg)
    paon_mse, quad_mse, curves = fit_approx(cfg)
    lines = ["model,mse",
             f"paon_smoothed_1_1,{paon_mse!r}",
             f"quadratic_lstsq,{quad_mse!r}"]
    (out / "summary.csv").write_text("\n".join(lines) + "\n")
    if curves is not None:
        rows = ["x,teacher,paon,quadratic"]
        rows += [",".join(repr(float(v)) for v in row) for row in curves]
        (out / "curves.csv").write_text("\n".join(rows) + "\n")
    print(f"paon mse={paon_mse:.3e}  quadratic mse={quad_mse:.3e}")
    if not np.isfinite(paon_mse) or paon_mse > cfg["mse_limit"]:
        print("approx diverged", file=sys.stderr)
        return 1
    return 0


# --- gradcheck ------------------------------------------------------------

def _gradcheck_case(rng, degree, smoothed, dense, shifter_kind, tol, n_coords):
    K, L = degree
    if dense:
        layer = PaLaDense(PaonDegree(K, L), 4, 3, rng, smoothed=smoothed,
                          dtype=np.float64)
        x = Variable(rng.normal(size=(3, 4)))
    else:
        scfg = None
        if shifter_kind == "kernelwise":
            scfg = ShifterConfig("kernelwise", 2.0, channels=2)
        elif shifter_kind == "elementwise":
            scfg = ShifterConfig("elementwise", 1.0, channels=2, k_s=3)
        layer = PaLaConv(PaonDegree(K, L), ConvSpec(2, 2, 3), rng,
                         smoothed=smoothed, shifter_cfg=scfg, dtype=np.float64)
        x = Variable(rng.normal(size=(1, 2, 5, 5)))
    # random parameter values keep the check away from the zero-init
    # stationary points where finite differences lose signal
    for p in layer.parameters():
        p.value += 0.2 * rng.normal(size=p.value.shape)
    params = layer.parameters()
    report = grad_check(lambda: ops.mean_all(ops.tanh(layer(x))), params,
                        tol_rel=tol, n_coords=n_coords, seed=int(rng.integers(1 << 31)))
    return report


def cmd_gradcheck(args):
    cfg = resolve_config("gradcheck", args.config, args.set)
    out = _outdir(args)
    write_manifest(out, "gradcheck", cfg)
    rng = np.random.default_rng(cfg["seed"])
    rows = ["layer,degree,smoothed,shifter,max_rel_err,passed"]
    failed = 0
    for degree in ((1, 0), (2, 0), (1, 1), (2, 1)):
        for smoothed in (False, True):
            for dense, shifter in [(True, "none"), (False, "none"),
                                   (False, "kernelwise"), (False, "elementwise")]:
                rep = _gradcheck_case(rng, degree, smoothed, dense, shifter,
                                      cfg["tol"], cfg["n_coords"])
                kind = "dense" if dense else "conv"
                rows.append(f"{kind},{degree[0]}/{degree[1]},{smoothed},"
                            f"{shifter},{rep.max_rel_err!r},{rep.passed}")
                print(f"{kind:5s} [{degree[0]}/{degree[1]}] "
                      f"{'smooth ' if smoothed else 'vanilla'} shifter={shifter:11s} "
                      f"max_rel_err={rep.max_rel_err:.3e} {'ok' if rep.passed else 'FAIL'}")
                failed += not rep.passed
    (out / "gradcheck.csv").write_text("\n".join(rows) + "\n")
    print(f"{'all passed' if not failed else f'{failed} case(s) FAILED'}")
    return 1 if failed else 0


# --- count ----------------------------------------------------------------

def cmd_count(args):
    cfg = resolve_config("count", args.config, args.set)
    out = _outdir(args)
    write_manifest(out, "count", cfg)
    rng = np.random.default_rng(0)
    shape = (cfg["in_channels"], cfg["height"], cfg["width"])
    spec = ConvSpec(cfg["in_channels"], cfg["out_channels"], cfg["kernel"])
    K, L = cfg["degree"]
    scfg = _shifter_cfg(cfg["shifter"], cfg["shifter_b"], cfg["shifter_ks"],
                        cfg["in_channels"])
    classic = Conv2d(cfg["in_channels"], cfg["out_channels"], cfg["kernel"], rng)
    paon = PaLaConv(PaonDegree(K, L), spec, rng, smoothed=cfg["smoothed"],
                    shifter_cfg=scfg)
    rep_c = metrics.count_ops(classic, shape)
    rep_p = metrics.count_ops(paon, shape)
    rep_c.layers[0].name = "classic"
    rep_p.layers[0].name = f"paon[{K}/{L}]"
    combined = metrics.OpCountReport(layers=rep_c.layers + rep_p.layers)
    (out / "counts.csv").write_text(combined.to_csv())
    table = combined.to_table()
    ratio = rep_p.total("mults") / rep_c.total("mults")
    print(table)
    print(f"paon/classic mult ratio: {ratio:g} (K+L = {K + L})")
    (out / "counts.txt").write_text(table + f"\nratio {ratio:g}\n")

    bad = []
    if rep_p.total("mults") != (K + L) * rep_c.total("mults"):
        bad.append("mult ratio != K+L")
    if combined.flops != 2 * combined.macs:
        bad.append("flops != 2x macs")
    defaults = {k: d for k, (_, d) in SCHEMAS["count"].items()}
    if cfg == defaults:
        if rep_c.macs != 14_745_600:
            bad.append(f"classic anchor {rep_c.macs} != 14745600")
        if rep_p.macs != 29_491_200:
            bad.append(f"paon anchor {rep_p.macs} != 29491200")
    for msg in bad:
        print(f"FAIL: {msg}", file=sys.stderr)
    return 1 if bad else 0


# --- shared training plumbing ----------------------------------------------

def _train_cfg(cfg):
    return training.TrainConfig(
        iterations=cfg["iterations"], batch_size=cfg["batch_size"],
        loss=cfg["loss"], barron_alpha=cfg["barron_alpha"],
        barron_c=cfg["barron_c"], optimizer=cfg["optimizer"], lr=cfg["lr"],
        lr_min=cfg["lr_min"], weight_decay=cfg["weight_decay"],
        momentum=cfg["momentum"], schedule=cfg["schedule"],
        clip_norm=cfg["clip_norm"] if cfg["clip_norm"] > 0 else None,
        noise_snr_db=cfg["noise_snr_db"] if cfg["noise"] else None,
        seed=cfg["seed"], eval_every=cfg["eval_every"])


def _sr_model_cfg(cfg):
    return SrNetConfig(
        r_blocks=cfg["r_blocks"], channels=cfg["channels"],
        family=cfg["family"], degree=tuple(cfg["degree"]),
        smoothed=cfg["smoothed"], activation=cfg["activation"],
        scale=cfg["scale"], shared_pixelshuffle=cfg["shared_pixelshuffle"],
        shifter_kind=cfg["shifter"], shifter_b=cfg["shifter_b"],
        shifter_ks=cfg["shifter_ks"])


def _sr_task(cfg, tcfg):
    pairs = gen_sr_textures(cfg["pairs"], cfg["size"], cfg["scale"], cfg["data_seed"])
    n_val = cfg["n_val"]
    if not 0 < n_val < len(pairs):
        raise UsageError(f"n_val={n_val} must split {len(pairs)} pairs")
    return training.SrTask(pairs[:-n_val], pairs[-n_val:], tcfg)


def _run_training(model, task, tcfg, out):
    log = training.train_loop(model, task, tcfg, checkpoint_dir=out / "checkpoint")
    (out / "run.csv").write_text(log.to_csv())
    return log


def cmd_train_sr(args):
    cfg = resolve_config("train-sr", args.config, args.set)
    out = _outdir(args)
    write_manifest(out, "train-sr", cfg)
    tcfg = _train_cfg(cfg)
    model = build_srnet(_sr_model_cfg(cfg), seed=cfg["seed"])
    task = _sr_task(cfg, tcfg)
    try:
        log = _run_training(model, task, tcfg, out)
    except training.TrainAbort as err:
        print(f"diverged: {err}", file=sys.stderr)
        return 1
    print(f"params={model.param_count()}  best psnr={log.best_metric:.4f} dB "
          f"at iter {log.best_iter}")
    return 0


def cmd_train_cls(args):
    cfg = resolve_config("train-cls", args.config, args.set)
    out = _outdir(args)
    write_manifest(out, "train-cls", cfg)
    tcfg = _train_cfg(cfg)
    mcfg = ClsNetConfig(
        stage_blocks=tuple(cfg["stage_blocks"]),
        stage_channels=tuple(cfg["stage_channels"]), family=cfg["family"],
        degree=tuple(cfg["degree"]), smoothed=cfg["smoothed"],
        head=cfg["head"], shifter_kind=cfg["shifter"],
        shifter_b=cfg["shifter_b"], shifter_ks=cfg["shifter_ks"])
    model = build_cls(mcfg, seed=cfg["seed"])
    if cfg["source"] == "cifar10":
        tx, ty = load_cifar10_bin(cfg["cifar_dir"], "train", cfg["n_train"])
        vx, vy = load_cifar10_bin(cfg["cifar_dir"], "test", cfg["n_val"])
    elif cfg["source"] == "shapes":
        x, y = gen_shapes_cls(cfg["n_train"] + cfg["n_val"], cfg["data_seed"])
        tx, ty = x[:cfg["n_train"]], y[:cfg["n_train"]]
        vx, vy = x[cfg["n_train"]:], y[cfg["n_train"]:]
    else:
        raise UsageError(f"source must be shapes or cifar10, got {cfg['source']!r}")
    task = training.ClsTask(tx, ty, vx, vy, tcfg)
    try:
        log = _run_training(model, task, tcfg, out)
    except training.TrainAbort as err:
        print(f"diverged: {err}", file=sys.stderr)
        return 1
    print(f"layers={model.layer_count()}  params={model.param_count()}  "
          f"best acc={log.best_metric:.4f} at iter {log.best_iter}")
    return 0


# --- singularity ------------------------------------------------------------

def cmd_singularity(args):
    cfg = resolve_config("singularity", args.config, args.set)
    out = _outdir(args)
    write_manifest(out, "singularity", cfg)
    cfg_t = dict(cfg)
    tcfg = _train_cfg(cfg_t)
    tcfg.singularity_threshold = cfg["threshold"]
    model = build_srnet(_sr_model_cfg(cfg), seed=cfg["seed"])
    task = _sr_task(cfg, tcfg)
    try:
        log = _run_training(model, task, tcfg, out)
    except training.TrainAbort as err:
        print(f"diverged: {err}", file=sys.stderr)
        return 1
    slog = metrics.SingularityLog(log.layer_names)
    for row in log.rows:
        slog.append(row["iter"], row["events"])
    (out / "singularity.csv").write_text(slog.to_csv())
    total = slog.total_events()
    for i, name in enumerate(log.layer_names):
        events = sum(r["events"][i] for r in log.rows)
        print(f"events {name}: {events}")
    print(f"events total: {total} (threshold {cfg['threshold']:g})")
    if cfg["smoothed"] and cfg["degree"][1] >= 1 and total > 0:
        print("FAIL: smoothed run logged denominator events", file=sys.stderr)
        return 1
    return 0


# --- eval -------------------------------------------------------------------

def _eval_rows(preds_refs):
    rows = ["image,psnr_db,ssim"]
    psnrs, ssims = [], []
    for name, pred, ref in preds_refs:
        p = metrics.psnr_rgb(pred, ref)
        s = metrics.ssim_y(pred, ref)
        rows.append(f"{name},{metrics.cap_db(p)!r},{s!r}")
        print(f"{name}: psnr={p:.4f} dB  ssim={s:.6f}")
        psnrs.append(metrics.cap_db(p))
        ssims.append(s)
    return rows, float(np.mean(psnrs)), float(np.mean(ssims))


def cmd_eval(args):
    cfg = resolve_config("eval", args.config, args.set)
    out = _outdir(args)
    write_manifest(out, "eval", cfg)
    if cfg["pair_a"]:
        a = load_ppm(cfg["pair_a"])
        b = load_ppm(cfg["pair_b"]) if cfg["pair_b"] else a
        rows, mp, ms = _eval_rows([("pair", a, b)])
    else:
        if not cfg["checkpoint"]:
            raise UsageError("eval needs checkpoint=DIR or pair_a=FILE.ppm")
        model = build_srnet(_sr_model_cfg(cfg), seed=cfg["seed"])
        load_checkpoint(model, cfg["checkpoint"])
        model.eval()
        tcfg = _train_cfg(cfg)
        task = _sr_task(cfg, tcfg)
        triples = []
        for i, pair in enumerate(task.val_pairs):
            with Tape():
                pred = model(Variable(pair.lr[None])).value[0]
            triples.append((f"val_{i:03d}", pred, pair.hr))
            if i < cfg["dump_images"]:
                save_ppm(out / f"pred_{i:03d}.ppm", np.clip(pred, -1, 1))
                save_ppm(out / f"ref_{i:03d}.ppm", pair.hr)
        rows, mp, ms = _eval_rows(triples)
    (out / "eval.csv").write_text("\n".join(rows) + "\n")
    print(f"mean psnr={mp:.4f} dB (capped)  mean ssim={ms:.6f}")
    return 0


# --- reduce-check -----------------------------------------------------------

def _quadratic_reference(x, a0, a1, a2, spec):
    lin = ops.conv2d(x, a1, a0, spec)
    sq = ops.conv2d(ops.mul(x, x), a2, None, spec)
    return ops.add(lin, sq)


def _forward_grads(fn, x, params):
    """(output, gradients for x then params) under a sum-of-squares loss."""
    for p in params:
        p.zero_grad()
    x.zero_grad()
    with Tape() as tape:
        y = fn(x)
        loss = ops.sum_all(ops.mul(y, y))
    backward(tape, loss)
    return y.value.copy(), [x.grad.copy()] + [p.grad.copy() for p in params]


def _pair_delta(fn_a, params_a, fn_b, params_b, x):
    """(output+weight-grad gap, input-grad gap) between two graphs.

    The input gradient is reported separately: the graphs join x's
    contributions in different orders, so it carries ordinary float
    reassociation noise even when every weight gradient is bit-exact.
    """
    ya, ga = _forward_grads(fn_a, x, params_a)
    yb, gb = _forward_grads(fn_b, x, params_b)
    worst = float(np.abs(ya - yb).max())
    for a, b in zip(ga[1:], gb[1:]):
        worst = max(worst, float(np.abs(a - b).max()))
    return worst, float(np.abs(ga[0] - gb[0]).max())


def reduce_deltas(seed, instances):
    """Deviations of [1/0] vs conv and [2/0] vs quadratic.

    Returns (max output/weight-grad gap, max input-grad gap) over the
    random instances.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_dx = 0.0
    for _ in range(instances):
        ci = int(rng.integers(1, 4))
        co = int(rng.integers(1, 4))
        k = int(rng.choice((1, 3)))
        h = int(rng.integers(4, 8))
        x = Variable(rng.normal(size=(1, ci, h, h)), requires_grad=True)
        spec = ConvSpec(ci, co, k)

        paon1 = PaLaConv(PaonDegree(1, 0), spec, rng, dtype=np.float64)
        paon1.a0.value[...] = rng.normal(size=co)
        paon1.A[0].value[...] = rng.normal(size=paon1.A[0].value.shape)
        conv = Conv2d(ci, co, k, rng, dtype=np.float64)
        conv.weight.value[...] = paon1.A[0].value
        conv.bias.value[...] = paon1.a0.value
        d, dx = _pair_delta(paon1, [paon1.a0, paon1.A[0]],
                            conv, [conv.bias, conv.weight], x)
        worst, worst_dx = max(worst, d), max(worst_dx, dx)

        paon2 = PaLaConv(PaonDegree(2, 0), spec, rng, dtype=np.float64)
        paon2.a0.value[...] = rng.normal(size=co)
        for wvar in paon2.A:
            wvar.value[...] = rng.normal(size=wvar.value.shape)
        shared = [paon2.a0, paon2.A[0], paon2.A[1]]
        ref = lambda xv: _quadratic_reference(xv, paon2.a0, paon2.A[0],
                                              paon2.A[1], spec)
        d, dx = _pair_delta(paon2, shared, ref, shared, x)
        worst, worst_dx = max(worst, d), max(worst_dx, dx)
    return worst, worst_dx


def cmd_reduce_check(args):
    cfg = resolve_config("reduce-check", args.config, args.set)
    out = _outdir(args)
    write_manifest(out, "reduce-check", cfg)
    worst, worst_dx = reduce_deltas(cfg["seed"], cfg["instances"])
    print(f"[1/0] vs conv and [2/0] vs quadratic over {cfg['instances']} instances: "
          f"max |delta| = {worst:.3e} (outputs and weight grads); "
          f"input-grad gap {worst_dx:.3e}")

    rows = ["K,L,shifted,family,params_equal_conv_budget"]
    print("K  L  shifted  family")
    off = None
    on = ShifterConfig("kernelwise", 2.0, channels=3)
    for K, L in ((1, 0), (2, 0), (3, 0), (1, 1), (2, 1), (2, 2)):
        for scfg, label in ((off, "no"), (on, "yes")):
            fam = reduce_config(PaonDegree(K, L), scfg).name
            eq = pala_param_count(PaonDegree(K, L), 3, 4, 3) == \
                pala_param_count(PaonDegree(K + L, 0), 3, 4, 3)
            rows.append(f"{K},{L},{label},{fam},{eq}")
            print(f"{K}  {L}  {label:7s}  {fam}")
    (out / "reduce.csv").write_text("\n".join(rows) + "\n")
    if worst > cfg["tol"]:
        print(f"FAIL: delta {worst:.3e} above tolerance {cfg['tol']:g}", file=sys.stderr)
        return 1
    return 0


# --- entry point ------------------------------------------------------------

_COMMANDS = {
    "approx": cmd_approx,
    "gradcheck": cmd_gradcheck,
    "count": cmd_count,
    "singularity": cmd_singularity,
    "train-sr": cmd_train_sr,
    "train-cls": cmd_train_cls,
    "eval": cmd_eval,
    "reduce-check": cmd_reduce_check,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="paonkit",
                                     description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None,
                       help="key=value config file (e.g. a prior manifest.txt)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key; repeatable")
        p.add_argument("--outdir", required=True,
                       help="directory for manifest and artifacts")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
