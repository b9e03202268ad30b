"""Batch pipeline entry points.

Subcommands: gen (datasets), analyze (shift geometry + bound report),
pretrain / finetune / eval (diffusion stages), render (PGM export),
verify (re-solve stored pairs and check every physics invariant).

Every option can come from a line-based ``key = value`` config file
(--config); explicit flags win. Each command writes the fully resolved
configuration next to its outputs, and re-running from that file
reproduces the outputs byte for byte.

Exit codes: 0 success, 2 argument or config problem, 3 numeric/training
problem (including failed verification), 4 file IO or format problem.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from .diffuse import (finetune, load_checkpoint, make_schedule, pretrain,
                      sample, save_checkpoint)
from .diffuse.data import (build_finetune_set, build_pretrain_set,
                           compute_stats, normalize_map)
from .diffuse.training import TrainState
from .envgrid import SceneParams, generate_scene, load_scene, save_scene
from .errors import RaymapError, FormatError
from .featspace import (distance_stability_check, estimate_shift,
                        feature_increment_check, load_geometry,
                        make_encoder, save_geometry)
from .fields import load_radiomap, save_radiomap, write_pgm
from .metrics import evaluate_maps, format_report
from .propagate import (gaussian_kernel, load_pair, residual, save_pair,
                        solve_scene, verify_lowfreq_bound)

MU_LAYOUT_OFFSET = 1_000_000
MANIFEST_NAME = "manifest.txt"


# ----------------------------------------------------------------------
# config plumbing
# ----------------------------------------------------------------------

def read_config_file(path) -> dict:
    vals = {}
    text = Path(path).read_text(encoding="utf-8")
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad config line: {raw!r}")
        key, _, value = line.partition("=")
        vals[key.strip()] = value.strip()
    return vals


def write_config_file(path, resolved: dict) -> None:
    lines = [f"{k} = {resolved[k]}" for k in sorted(resolved)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _to_bool(raw) -> bool:
    if isinstance(raw, bool):
        return raw
    if str(raw).lower() in ("1", "true", "yes", "on"):
        return True
    if str(raw).lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _resolve(args, opts) -> dict:
    file_vals = {}
    if getattr(args, "config", None):
        file_vals = read_config_file(args.config)
    known = {name for name, _, _ in opts}
    unknown = set(file_vals) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    out = {}
    for name, typ, default in opts:
        val = getattr(args, name)
        if val is None:
            val = file_vals.get(name, default)
        if val is None:
            out[name] = None
        elif typ is bool:
            out[name] = _to_bool(val)
        else:
            out[name] = typ(val)
    return out


def _require(cfg, *names):
    for n in names:
        if cfg.get(n) in (None, ""):
            raise ValueError(f"missing required option --{n.replace('_','-')}")


def _add_options(sub, opts):
    sub.add_argument("--config", default=None,
                     help="key = value file; flags override its entries")
    for name, typ, _default in opts:
        flag = "--" + name.replace("_", "-")
        if typ is bool:
            sub.add_argument(flag, dest=name, action="store_const",
                             const=True, default=None)
        else:
            sub.add_argument(flag, dest=name, default=None)


# ----------------------------------------------------------------------
# dataset layout
# ----------------------------------------------------------------------

def _scene_params(cfg, tx_index=0) -> SceneParams:
    return SceneParams(
        width=cfg["width"], height=cfg["height"], cell_size=cfg["cell_size"],
        building_count=(cfg["building_min"], cfg["building_max"]),
        building_size=(cfg["size_min"], cfg["size_max"]),
        margin=cfg["margin"], tx_index=tx_index)


def write_manifest(path, header: dict, rows: list) -> None:
    lines = [f"{k} = {header[k]}" for k in sorted(header)]
    lines += rows
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(root) -> tuple:
    """Returns (header dict, mp rows, pair rows); rows are dicts."""
    path = Path(root) / MANIFEST_NAME
    if not path.is_file():
        raise FormatError(f"no {MANIFEST_NAME} under {root}")
    header = {}
    mp_rows, pair_rows = [], []
    for raw in path.read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith(("mp ", "pair ")):
            kind, idx, *fields = line.split()
            row = {"index": int(idx)}
            for f in fields:
                k, _, v = f.partition("=")
                row[k] = v
            (mp_rows if kind == "mp" else pair_rows).append(row)
        elif "=" in line:
            k, _, v = line.partition("=")
            header[k.strip()] = v.strip()
    return header, mp_rows, pair_rows


def load_mp_split(root):
    """(scenes, maps) for the main-path training split."""
    root = Path(root)
    _, mp_rows, _ = read_manifest(root)
    scenes, maps = [], []
    for row in mp_rows:
        scenes.append(load_scene(root / row["scene"]))
        maps.append(load_radiomap(root / row["map"]))
    return scenes, maps


def load_pair_split(root, one_shot=False):
    """(scenes, mp maps, mu maps) for the paired split.

    one_shot keeps only the first transmitter placement per layout seed.
    """
    root = Path(root)
    _, _, pair_rows = read_manifest(root)
    seen = set()
    scenes, mps, mus = [], [], []
    for row in pair_rows:
        if one_shot:
            if row["seed"] in seen:
                continue
            seen.add(row["seed"])
        mp, mu, scene = load_pair(root / row["file"])
        scenes.append(scene)
        mps.append(mp)
        mus.append(mu)
    return scenes, mps, mus


# ----------------------------------------------------------------------
# gen
# ----------------------------------------------------------------------

GEN_OPTS = [
    ("out", str, None), ("mp_count", int, 24), ("mu_count", int, 8),
    ("tx_per_scene", int, 1), ("seed0", int, 0), ("width", int, 32),
    ("height", int, 32), ("cell_size", float, 1.0), ("k", int, 2),
    ("building_min", int, 2), ("building_max", int, 4),
    ("size_min", int, 2), ("size_max", int, 7), ("margin", int, 1),
]


def cmd_gen(cfg) -> int:
    _require(cfg, "out")
    root = Path(cfg["out"])
    (root / "scenes").mkdir(parents=True, exist_ok=True)
    (root / "mp").mkdir(exist_ok=True)
    (root / "pairs").mkdir(exist_ok=True)
    k = cfg["k"]
    tx_per = cfg["tx_per_scene"]
    if tx_per < 1:
        raise ValueError("tx_per_scene must be at least 1")
    rows = []
    for i in range(cfg["mp_count"] * tx_per):
        seed = cfg["seed0"] + i // tx_per
        scene = generate_scene(seed, _scene_params(cfg, tx_index=i % tx_per))
        mp, _, _ = solve_scene(scene, k)
        scene_rel = f"scenes/mp_{i:05d}.rsc"
        map_rel = f"mp/mp_{i:05d}.rfm"
        save_scene(scene, root / scene_rel)
        save_radiomap(mp, root / map_rel)
        rows.append(f"mp {i:05d} seed={seed} tx={i % tx_per} "
                    f"scene={scene_rel} map={map_rel}")
    for j in range(cfg["mu_count"] * tx_per):
        seed = cfg["seed0"] + MU_LAYOUT_OFFSET + j // tx_per
        scene = generate_scene(seed, _scene_params(cfg, tx_index=j % tx_per))
        mp, mu, _ = solve_scene(scene, k)
        rel = f"pairs/pair_{j:05d}.rpr"
        save_pair(mp, mu, scene, root / rel)
        rows.append(f"pair {j:05d} seed={seed} tx={j % tx_per} file={rel}")
    header = {"format": "radio-dataset-v1",
              "mp_count": cfg["mp_count"] * tx_per,
              "mu_count": cfg["mu_count"] * tx_per,
              "k": k, "width": cfg["width"], "height": cfg["height"]}
    write_manifest(root / MANIFEST_NAME, header, rows)
    write_config_file(root / "gen.config", cfg)
    print(f"wrote {header['mp_count']} mp maps and "
          f"{header['mu_count']} pairs under {root}")
    return 0


# ----------------------------------------------------------------------
# analyze
# ----------------------------------------------------------------------

ANALYZE_OPTS = [
    ("data", str, None), ("out", str, None), ("checkpoint", str, None),
    ("enc_kind", str, "ident"), ("enc_seed", int, 0),
    ("pool_size", int, 8), ("enc_dim", int, 64),
]


def _make_enc(cfg, shape):
    """Build the pipeline's frozen encoder. The default is block-mean
    pooling (identity projection); 'gauss' uses the seeded random
    projection instead."""
    kind = cfg["enc_kind"]
    if kind == "ident":
        if cfg["enc_dim"] != cfg["pool_size"] ** 2:
            raise ValueError("ident encoder needs enc_dim == pool_size^2")
        return make_encoder(input_shape=shape, pool_size=cfg["pool_size"],
                            d=cfg["enc_dim"],
                            projection=np.eye(cfg["enc_dim"]))
    if kind == "gauss":
        return make_encoder(input_shape=shape, pool_size=cfg["pool_size"],
                            d=cfg["enc_dim"], seed=cfg["enc_seed"])
    raise ValueError("enc_kind must be 'ident' or 'gauss'")


def cmd_analyze(cfg) -> int:
    _require(cfg, "data", "out")
    root = Path(cfg["out"])
    root.mkdir(parents=True, exist_ok=True)
    scenes, mps, mus = load_pair_split(cfg["data"])
    if not scenes:
        raise ValueError("dataset has no pairs to analyze")
    lines = []
    ok = True

    def check(name, passed, detail):
        nonlocal ok
        ok = ok and passed
        lines.append(f"{'PASS' if passed else 'FAIL'} {name} {detail}")

    # physics: decomposition and smoothing bounds on raw maps
    worst_rel = 0.0
    worst_neg = 0.0
    kernel = gaussian_kernel(1.5)
    bounds_ok = True
    for mp, mu in zip(mps, mus):
        res = residual(mu, mp)
        scale = float(np.max(mu.values)) or 1.0
        recon = np.abs(mp.values + res.map.values - mu.values) / scale
        worst_rel = max(worst_rel, float(recon.max()))
        worst_neg = min(worst_neg, float(res.map.values.min()))
        rep = verify_lowfreq_bound(res.map, kernel)
        bounds_ok = bounds_ok and rep.passed
    check("decomposition", worst_rel <= 1e-12,
          f"max_rel={worst_rel:.3e}")
    check("residual-nonnegative", worst_neg >= 0.0, f"min={worst_neg:.3e}")
    check("smoothing-bounds", bounds_ok, f"pairs={len(mps)}")

    # feature space on the normalized scale
    if cfg["checkpoint"]:
        stats = load_checkpoint(cfg["checkpoint"]).stats
    else:
        stats = compute_stats(mps + mus)
    h, w = mus[0].values.shape
    enc = _make_enc(cfg, (h, w))
    pairs_n = [(normalize_map(mp, stats), normalize_map(mu, stats))
               for mp, mu in zip(mps, mus)]
    inc_ok = all(feature_increment_check(enc, a, b).passed
                 for a, b in pairs_n)
    check("feature-increment", inc_ok, f"pairs={len(pairs_n)}")
    geometry = estimate_shift(enc, pairs_n)
    lines.append(f"INFO shift-norm {np.linalg.norm(geometry.w):.6e}")
    lines.append(f"INFO eta-bound {geometry.eta_bound:.6e}")
    if len(pairs_n) >= 2:
        stab = distance_stability_check(enc, pairs_n, geometry)
        check("distance-stability", stab.passed,
              f"max_dev={stab.max_deviation:.3e} bound={stab.bound:.3e}")
    else:
        lines.append("INFO distance-stability skipped (single pair)")
    save_geometry(geometry, root / "geometry.rfw")
    (root / "report.txt").write_text("\n".join(lines) + "\n",
                                     encoding="utf-8")
    write_config_file(root / "analyze.config", cfg)
    print("\n".join(lines))
    print(f"geometry written to {root / 'geometry.rfw'}")
    return 0 if ok else 3


# ----------------------------------------------------------------------
# pretrain / finetune / eval
# ----------------------------------------------------------------------

SCHED_OPTS = [("T", int, 200), ("beta_min", float, 1e-4),
              ("beta_max", float, 0.02)]

PRETRAIN_OPTS = [
    ("data", str, None), ("out", str, None), ("steps", int, 3000),
    ("batch", int, 8), ("lr", float, 1e-3), ("seed", int, 0),
] + SCHED_OPTS

FINETUNE_OPTS = [
    ("checkpoint", str, None), ("data", str, None), ("geometry", str, None),
    ("out", str, None), ("mode", str, "full"), ("lambda_max", float, 0.4),
    ("beta", float, 1.0), ("steps", int, 600), ("batch", int, 4),
    ("lr", float, 1e-4), ("seed", int, 0), ("rank", int, 4),
    ("one_shot", bool, False), ("enc_kind", str, "ident"),
    ("enc_seed", int, 0), ("pool_size", int, 8), ("enc_dim", int, 64),
] + SCHED_OPTS

EVAL_OPTS = [
    ("checkpoint", str, None), ("data", str, None), ("out", str, None),
    ("seed", int, 0), ("limit", int, 0),
] + SCHED_OPTS


def _sched_from(cfg):
    return make_schedule(cfg["T"], cfg["beta_min"], cfg["beta_max"])


def _write_losses(path, history):
    Path(path).write_text(
        "".join(f"{v!r}\n" for v in history), encoding="utf-8")


def cmd_pretrain(cfg) -> int:
    _require(cfg, "data", "out")
    root = Path(cfg["out"])
    root.mkdir(parents=True, exist_ok=True)
    scenes, maps = load_mp_split(cfg["data"])
    if not scenes:
        raise ValueError("dataset has no mp split")
    stats = compute_stats(maps)
    ds = build_pretrain_set(scenes, maps, stats)
    sched = _sched_from(cfg)
    state = pretrain(ds, steps=cfg["steps"], batch_size=cfg["batch"],
                     lr=cfg["lr"], seed=cfg["seed"], sched=sched)
    extra = {"stage": "pretrain", "steps": cfg["steps"],
             "seed": cfg["seed"], "T": cfg["T"]}
    save_checkpoint(root / "checkpoint.rfc", state.params, stats,
                    extra=extra)
    _write_losses(root / "losses.txt", state.loss_history)
    write_config_file(root / "pretrain.config", cfg)
    first = state.loss_history[0] if state.loss_history else float("nan")
    last = state.loss_history[-1] if state.loss_history else float("nan")
    print(f"pretrained {cfg['steps']} steps; loss {first:.4f} -> {last:.4f}")
    print(f"checkpoint at {root / 'checkpoint.rfc'}")
    return 0


def cmd_finetune(cfg) -> int:
    _require(cfg, "checkpoint", "data", "geometry", "out")
    root = Path(cfg["out"])
    root.mkdir(parents=True, exist_ok=True)
    ck = load_checkpoint(cfg["checkpoint"])
    geometry = load_geometry(cfg["geometry"])
    scenes, mps, mus = load_pair_split(cfg["data"],
                                       one_shot=cfg["one_shot"])
    if not scenes:
        raise ValueError("dataset has no pairs")
    h, w = mus[0].values.shape
    enc = _make_enc(cfg, (h, w))
    if geometry.w.shape != (cfg["enc_dim"],):
        raise ValueError("geometry dimension does not match the encoder")
    fset = build_finetune_set(scenes, list(zip(mps, mus)), ck.stats, enc,
                              geometry.v)
    state0 = TrainState(params=ck.params, adapters=ck.adapters, moments={},
                        step=0, seed=cfg["seed"])
    sched = _sched_from(cfg)
    state = finetune(state0, fset, geometry, enc, mode=cfg["mode"],
                     lam_max=cfg["lambda_max"], beta=cfg["beta"],
                     steps=cfg["steps"], batch_size=cfg["batch"],
                     lr=cfg["lr"], seed=cfg["seed"], sched=sched,
                     rank=cfg["rank"])
    extra = {"stage": "finetune", "mode": cfg["mode"],
             "lambda_max": cfg["lambda_max"], "beta": cfg["beta"],
             "steps": cfg["steps"], "seed": cfg["seed"],
             "one_shot": cfg["one_shot"]}
    save_checkpoint(root / "checkpoint.rfc", state.params, ck.stats,
                    adapters=state.adapters, extra=extra)
    _write_losses(root / "losses.txt", state.loss_history)
    write_config_file(root / "finetune.config", cfg)
    print(f"finetuned {cfg['steps']} steps on {len(fset)} pairs "
          f"(mode={cfg['mode']}, lambda_max={cfg['lambda_max']})")
    print(f"checkpoint at {root / 'checkpoint.rfc'}")
    return 0


def cmd_eval(cfg) -> int:
    _require(cfg, "checkpoint", "data", "out")
    root = Path(cfg["out"])
    root.mkdir(parents=True, exist_ok=True)
    ck = load_checkpoint(cfg["checkpoint"])
    scenes, _, mus = load_pair_split(cfg["data"])
    if cfg["limit"]:
        scenes = scenes[:cfg["limit"]]
        mus = mus[:cfg["limit"]]
    if not scenes:
        raise ValueError("dataset has no pairs to evaluate")
    sched = _sched_from(cfg)
    state = TrainState(params=ck.params, adapters=ck.adapters, moments={},
                       step=0, seed=cfg["seed"])
    targets, preds = [], []
    for i, (scene, mu) in enumerate(zip(scenes, mus)):
        rng = np.random.default_rng(
            np.random.SeedSequence([41, cfg["seed"], i]))
        pred = sample(state, scene, ck.stats, sched, rng)
        targets.append(normalize_map(mu, ck.stats))
        preds.append(normalize_map(pred, ck.stats))
    rep = evaluate_maps(targets, preds)
    text = format_report(rep)
    (root / "metrics.txt").write_text(text, encoding="utf-8")
    write_config_file(root / "eval.config", cfg)
    print(f"evaluated {rep.count} scenes: nmse={rep.nmse:.6f} "
          f"rmse={rep.rmse:.6f} psnr={rep.psnr:.3f} ssim={rep.ssim:.6f}")
    return 0


# ----------------------------------------------------------------------
# render / verify
# ----------------------------------------------------------------------

RENDER_OPTS = [("map", str, None), ("out", str, None)]


def cmd_render(cfg) -> int:
    _require(cfg, "map", "out")
    m = load_radiomap(cfg["map"])
    v = m.values
    lo, hi = float(v.min()), float(v.max())
    if hi > lo:
        v = (v - lo) / (hi - lo)
    write_pgm(v, cfg["out"])
    write_config_file(str(cfg["out"]) + ".config", cfg)
    print(f"rendered {cfg['map']} -> {cfg['out']}")
    return 0


VERIFY_OPTS = [("data", str, None), ("out", str, None)]


def cmd_verify(cfg) -> int:
    _require(cfg, "data")
    header, _, pair_rows = read_manifest(cfg["data"])
    k = int(header.get("k", 2))
    root = Path(cfg["data"])
    lines = []
    ok = True

    def check(name, passed, detail):
        nonlocal ok
        ok = ok and passed
        lines.append(f"{'PASS' if passed else 'FAIL'} {name} {detail}")

    stored_ok = True
    worst_rel = 0.0
    neg = False
    support_ok = True
    bounds_ok = True
    kernel = gaussian_kernel(1.5)
    for row in pair_rows:
        mp_s, mu_s, scene = load_pair(root / row["file"])
        mp, mu, cnt = solve_scene(scene, k)
        for fresh, stored in ((mp, mp_s), (mu, mu_s)):
            f32 = fresh.values.astype(np.float32).astype(np.float64)
            stored_ok = stored_ok and np.array_equal(f32, stored.values)
        delta = mu.values - mp.values
        scale = float(mu.values.max()) or 1.0
        worst_rel = max(worst_rel, float(
            np.abs(mp.values + delta - mu.values).max()) / scale)
        neg = neg or bool(np.any(delta < 0.0))
        single = cnt <= 1
        support_ok = support_ok and bool(np.all(delta[single] == 0.0))
        res = residual(mu, mp)
        bounds_ok = bounds_ok and verify_lowfreq_bound(res.map,
                                                       kernel).passed
    n = len(pair_rows)
    check("stored-maps-match-solver", stored_ok, f"pairs={n}")
    check("decomposition", worst_rel <= 1e-12, f"max_rel={worst_rel:.3e}")
    check("residual-nonnegative", not neg, f"pairs={n}")
    check("residual-support", support_ok, f"pairs={n}")
    check("smoothing-bounds", bounds_ok, f"pairs={n}")
    report = "\n".join(lines) + "\n"
    if cfg["out"]:
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / "verify_report.txt").write_text(report, encoding="utf-8")
        write_config_file(out / "verify.config", cfg)
    print(report, end="")
    return 0 if ok else 3


# ----------------------------------------------------------------------
# driver
# ----------------------------------------------------------------------

COMMANDS = {
    "gen": (cmd_gen, GEN_OPTS, "generate scene + map datasets"),
    "analyze": (cmd_analyze, ANALYZE_OPTS,
                "estimate shift geometry and check every bound"),
    "pretrain": (cmd_pretrain, PRETRAIN_OPTS,
                 "train the denoiser on main-path maps"),
    "finetune": (cmd_finetune, FINETUNE_OPTS,
                 "adapt a checkpoint on paired samples"),
    "eval": (cmd_eval, EVAL_OPTS, "sample maps and score them"),
    "render": (cmd_render, RENDER_OPTS, "export a map as a PGM image"),
    "verify": (cmd_verify, VERIFY_OPTS,
               "re-solve stored pairs and check invariants"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="raymap",
        description="radio-map simulation and few-shot diffusion pipeline")
    subs = parser.add_subparsers(dest="command", required=True)
    for name, (_fn, opts, help_text) in COMMANDS.items():
        sub = subs.add_parser(name, help=help_text)
        _add_options(sub, opts)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    fn, opts, _ = COMMANDS[args.command]
    try:
        cfg = _resolve(args, opts)
        return fn(cfg)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except RaymapError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
