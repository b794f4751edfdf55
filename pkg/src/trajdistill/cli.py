"""Command-line surface: generate, train, distill, eval, ablate, plot.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
The TRAJDISTILL_NUM_THREADS environment variable pins the BLAS/OpenMP
thread count before numpy loads (reproducibility requires a fixed count).
"""

from __future__ import annotations

import argparse
import os
import sys
import time


def _pin_threads():
    n = os.environ.get("TRAJDISTILL_NUM_THREADS")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ.setdefault(var, n)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        from .errors import UsageError

        raise UsageError(message)


def _parse_mix(text: str, known) -> dict:
    out = {}
    for item in text.split(","):
        key, _, val = item.partition("=")
        key = key.strip()
        if key not in known:
            raise ValueError(f"unknown key {key!r} (expected one of {sorted(known)})")
        out[key] = float(val)
    return out


def _parse_floats(text: str) -> list:
    return [float(x) for x in text.split(",")]


def _parse_ints(text: str) -> list:
    return [int(x) for x in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="trajdistill", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a synthetic dataset")
    g.add_argument("--scenes", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--split", default="0.8,0.1,0.1")
    g.add_argument("--layout-mix", default=None)
    g.add_argument("--maneuver-mix", default=None)
    g.add_argument("--agents", default="2:5", help="min:max agents per scene")
    g.add_argument("--noise-std", type=float, default=0.1)

    def add_model_flags(sp):
        sp.add_argument("--d-model", type=int, default=64)
        sp.add_argument("--heads", type=int, default=4)
        sp.add_argument("--k-modes", type=int, default=6)
        sp.add_argument("--h-levels", type=int, default=3)
        sp.add_argument("--enc-layers", type=int, default=3)
        sp.add_argument("--dec-layers", type=int, default=3)
        sp.add_argument("--iters", type=int, default=3)
        sp.add_argument("--radius", type=float, default=100.0)

    def add_train_flags(sp):
        sp.add_argument("--epochs", type=int, default=30)
        sp.add_argument("--batch-size", type=int, default=16)
        sp.add_argument("--lr", type=float, default=1e-4)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--dtype", choices=("float32", "float64"), default="float32")
        sp.add_argument("--train-fraction", type=float, default=1.0)
        sp.add_argument("--alpha", type=float, default=1.0)
        sp.add_argument("--beta", type=float, default=1.0)

    t = sub.add_parser("train", help="train the map-based or map-free network")
    t.add_argument("--phase", choices=("teacher", "student_nkd"), required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    add_model_flags(t)
    add_train_flags(t)

    d = sub.add_parser("distill", help="train the map-free network against a frozen teacher")
    d.add_argument("--data", required=True)
    d.add_argument("--teacher", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--gamma", type=float, default=1.0)
    d.add_argument("--kd-squared", action="store_true")
    add_train_flags(d)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--out", required=True)
    e.add_argument("--use-map", choices=("true", "false"), default=None)
    e.add_argument("--all-agents", action="store_true")
    e.add_argument("--mr-radius", type=float, default=2.0)
    e.add_argument("--eval-batch", type=int, default=64)

    a = sub.add_parser("ablate", help="train/evaluate ablation variants with shared seeds")
    a.add_argument("--which", choices=("aata", "aasa", "fa", "qqa", "H", "iters"), required=True)
    a.add_argument("--values", default=None, help="comma list; default depends on --which")
    a.add_argument("--seeds", default="0,1,2")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    add_model_flags(a)
    add_train_flags(a)

    pl = sub.add_parser("plot", help="emit per-scene overlay data for external plotting")
    pl.add_argument("--eval", dest="eval_dir", required=True)
    pl.add_argument("--data", required=True)
    pl.add_argument("--split", default="test")
    pl.add_argument("--out", required=True)
    return p


# ------------------------------------------------------------------ commands
def cmd_generate(args) -> int:
    from .errors import UsageError
    from .manifest import write_manifest
    from .synthgen import GeneratorConfig, LAYOUTS, MANEUVERS, generate_dataset

    if args.scenes <= 0:
        raise UsageError("--scenes must be positive")
    t0 = time.time()
    ratios = _parse_floats(args.split)
    lo, _, hi = args.agents.partition(":")
    gen_kwargs = {"n_agents_range": (int(lo), int(hi)), "noise_std": args.noise_std}
    if args.layout_mix:
        gen_kwargs["layout_mix"] = _parse_mix(args.layout_mix, LAYOUTS)
    if args.maneuver_mix:
        gen_kwargs["maneuver_mix"] = _parse_mix(args.maneuver_mix, MANEUVERS)
    gen = GeneratorConfig(**gen_kwargs)
    ids = generate_dataset(args.scenes, gen, ratios, args.out, args.seed)
    write_manifest(
        args.out, "generate",
        config={"scenes": args.scenes, "split": ratios, "generator": gen.__dict__},
        seeds={"master_seed": args.seed},
        inputs=[], outputs=[f"{split}/ ({len(v)} scenes)" for split, v in ids.items()],
        wall_clock_s=time.time() - t0,
    )
    total = sum(len(v) for v in ids.values())
    print(f"wrote {total} scenes to {args.out} " +
          " ".join(f"{k}={len(v)}" for k, v in ids.items()))
    return 0


def _model_config_from_args(args):
    from .scene import ModelConfig

    return ModelConfig(
        D=args.d_model, heads=args.heads, K=args.k_modes, H=args.h_levels,
        L_E=args.enc_layers, L_D=args.dec_layers, d_n=args.radius,
    ).with_iterations(args.iters)


def _train_config_from_args(args, phase, gamma=0.0, kd_squared=False):
    from .trainer import TrainConfig

    return TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, base_lr=args.lr,
        seed=args.seed, alpha=args.alpha, beta=args.beta, gamma=gamma,
        phase=phase, dtype=args.dtype, train_fraction=args.train_fraction,
        kd_squared=kd_squared,
    )


def _write_training_outputs(out_dir, result, cfg, tcfg, with_map, command, inputs, t0):
    import dataclasses

    from .checkpoint import save_checkpoint
    from .manifest import write_manifest

    os.makedirs(out_dir, exist_ok=True)
    ckpt_path = os.path.join(out_dir, "checkpoint.bin")
    save_checkpoint(
        ckpt_path, result.values, cfg, dataclasses.asdict(tcfg),
        epoch=result.best_epoch, rng_state=result.rng_state,
        metric_history=result.history, with_map=with_map,
    )
    log_path = os.path.join(out_dir, "train_log.csv")
    with open(log_path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(result.log_rows) + "\n")
    write_manifest(
        out_dir, command,
        config={"model": dataclasses.asdict(cfg), "train": dataclasses.asdict(tcfg)},
        seeds={"seed": tcfg.seed},
        inputs=inputs, outputs=["checkpoint.bin", "train_log.csv"],
        wall_clock_s=time.time() - t0,
    )
    print(f"checkpoint: {ckpt_path} (best epoch {result.best_epoch})")
    return 0


def cmd_train(args) -> int:
    from .sceneio import load_split
    from .trainer import train_phase

    t0 = time.time()
    cfg = _model_config_from_args(args)
    tcfg = _train_config_from_args(args, args.phase)
    train_scenes = load_split(args.data, "train", L=cfg.L)
    val_scenes = load_split(args.data, "val", L=cfg.L)
    result = train_phase(train_scenes, val_scenes, cfg, tcfg)
    return _write_training_outputs(
        args.out, result, cfg, tcfg, with_map=(args.phase == "teacher"),
        command=f"train --phase {args.phase}", inputs=[args.data], t0=t0,
    )


def cmd_distill(args) -> int:
    from .checkpoint import load_checkpoint
    from .sceneio import load_split
    from .trainer import distill_student

    t0 = time.time()
    teacher = load_checkpoint(args.teacher)
    cfg = teacher.model_config
    phase = "student_kd" if args.gamma != 0.0 else "student_nkd"
    tcfg = _train_config_from_args(args, phase, gamma=args.gamma, kd_squared=args.kd_squared)
    train_scenes = load_split(args.data, "train", L=cfg.L)
    val_scenes = load_split(args.data, "val", L=cfg.L)
    result = distill_student(train_scenes, val_scenes, cfg, tcfg, teacher)
    return _write_training_outputs(
        args.out, result, cfg, tcfg, with_map=False,
        command="distill", inputs=[args.data, args.teacher], t0=t0,
    )


def _write_predictions(pred_dir, preds, n_t):
    os.makedirs(pred_dir, exist_ok=True)
    for scene_id in sorted(preds):
        rec = preds[scene_id]
        traj = rec["trajectories"]
        conf = rec["confidences"]
        lines = [f"PREDSET,{scene_id},{rec['agent_id']},{len(conf)},{n_t}"]
        for k, c in enumerate(conf):
            lines.append(f"CONF,{k},{c:.6f}")
        for k in range(traj.shape[0]):
            for t in range(traj.shape[1]):
                lines.append(f"PRED,{k},{t + 1},{traj[k, t, 0]:.6f},{traj[k, t, 1]:.6f}")
        with open(os.path.join(pred_dir, scene_id + ".pred.txt"), "w",
                  encoding="utf-8", newline="\n") as f:
            f.write("\n".join(lines) + "\n")


def cmd_eval(args) -> int:
    from .checkpoint import load_checkpoint
    from .errors import UsageError
    from .manifest import write_manifest
    from .sceneio import load_split
    from .trainer import evaluate_model

    t0 = time.time()
    ckpt = load_checkpoint(args.checkpoint)
    cfg = ckpt.model_config
    if args.use_map is None:
        use_map = ckpt.with_map
    else:
        use_map = args.use_map == "true"
    if use_map and not ckpt.with_map:
        raise UsageError("--use-map=true requires a map-based checkpoint")
    scenes = load_split(args.data, args.split, L=cfg.L)
    report, rows, preds = evaluate_model(
        ckpt.values, scenes, cfg, use_map=use_map, dtype=ckpt.dtype,
        batch_size=args.eval_batch, focal_only=not args.all_agents,
        mr_radius=args.mr_radius, with_map_model=use_map, collect_predictions=True,
    )
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8", newline="\n") as f:
        f.write(report.format())
    with open(os.path.join(args.out, "per_scene.csv"), "w", encoding="utf-8", newline="\n") as f:
        f.write("scene_id,agent_id,minADE,minFDE,miss,brier_minFDE,dac\n")
        for r in rows:
            f.write(f"{r.scene_id},{r.agent_id},{r.minADE:.6f},{r.minFDE:.6f},"
                    f"{int(r.miss)},{r.brier_minFDE:.6f},{r.dac:.6f}\n")
    _write_predictions(os.path.join(args.out, "predictions"), preds, cfg.N_T)
    write_manifest(
        args.out, "eval",
        config={"split": args.split, "use_map": use_map, "all_agents": args.all_agents,
                "mr_radius": args.mr_radius},
        seeds={}, inputs=[args.checkpoint, args.data],
        outputs=["report.txt", "per_scene.csv", "predictions/"],
        wall_clock_s=time.time() - t0,
    )
    print(report.format().strip())
    return 0


ABLATION_DEFAULTS = {
    "aata": "on,off", "aasa": "on,off", "fa": "on,off", "qqa": "on,off",
    "H": "1,2,3,4", "iters": "1,2,3,6",
}


def ablation_variant(base_cfg, which: str, value: str):
    """ModelConfig for one ablation variant; value is 'on'/'off' or an int."""
    import dataclasses

    if which in ("aata", "aasa", "fa", "qqa"):
        if value not in ("on", "off"):
            raise ValueError(f"{which} takes values on/off, got {value!r}")
        flag = {"aata": "use_aata", "aasa": "use_aasa", "fa": "use_fa", "qqa": "use_qqa"}[which]
        return dataclasses.replace(base_cfg, **{flag: value == "on"})
    if which == "H":
        return dataclasses.replace(base_cfg, H=int(value))
    if which == "iters":
        return base_cfg.with_iterations(int(value))
    raise ValueError(f"unknown ablation {which!r}")


def cmd_ablate(args) -> int:
    import dataclasses

    from .manifest import write_manifest
    from .sceneio import load_split
    from .trainer import evaluate_model, train_phase

    t0 = time.time()
    base_cfg = _model_config_from_args(args)
    values = (args.values or ABLATION_DEFAULTS[args.which]).split(",")
    seeds = _parse_ints(args.seeds)
    train_scenes = load_split(args.data, "train", L=base_cfg.L)
    val_scenes = load_split(args.data, "val", L=base_cfg.L)

    rows = []
    for value in values:
        cfg = ablation_variant(base_cfg, args.which, value.strip())
        for seed in seeds:
            tcfg = _train_config_from_args(args, "student_nkd")
            tcfg = dataclasses.replace(tcfg, seed=seed)
            result = train_phase(train_scenes, val_scenes, cfg, tcfg)
            report, _, _ = evaluate_model(
                result.values, val_scenes, cfg, use_map=False, dtype=tcfg.dtype,
                with_map_model=False,
            )
            rows.append((args.which, value.strip(), seed, report))
            print(f"[ablate] {args.which}={value.strip()} seed={seed} "
                  f"minADE={report.minADE:.4f} minFDE={report.minFDE:.4f}")

    os.makedirs(args.out, exist_ok=True)
    table = os.path.join(args.out, "ablation.csv")
    with open(table, "w", encoding="utf-8", newline="\n") as f:
        f.write("which,variant,seed,minADE,minFDE,MR,brier_minFDE,DAC\n")
        for which, value, seed, r in rows:
            f.write(f"{which},{value},{seed},{r.minADE:.6f},{r.minFDE:.6f},"
                    f"{r.MR:.6f},{r.brier_minFDE:.6f},{r.DAC:.6f}\n")
    import statistics

    summary = os.path.join(args.out, "ablation_summary.csv")
    with open(summary, "w", encoding="utf-8", newline="\n") as f:
        f.write("which,variant,n_seeds,median_minADE,median_minFDE,median_MR\n")
        for value in values:
            rs = [r for w, v, s, r in rows if v == value.strip()]
            f.write(
                f"{args.which},{value.strip()},{len(rs)},"
                f"{statistics.median(r.minADE for r in rs):.6f},"
                f"{statistics.median(r.minFDE for r in rs):.6f},"
                f"{statistics.median(r.MR for r in rs):.6f}\n"
            )
    write_manifest(
        args.out, f"ablate --which {args.which}",
        config={"values": values, "seeds": seeds,
                "model": dataclasses.asdict(base_cfg),
                "epochs": args.epochs, "train_fraction": args.train_fraction},
        seeds={"seeds": seeds}, inputs=[args.data],
        outputs=["ablation.csv", "ablation_summary.csv"],
        wall_clock_s=time.time() - t0,
    )
    print(f"ablation table: {table}")
    return 0


def cmd_plot(args) -> int:
    from .errors import DataError
    from .manifest import write_manifest
    from .sceneio import load_split

    t0 = time.time()
    pred_dir = os.path.join(args.eval_dir, "predictions")
    if not os.path.isdir(pred_dir):
        raise DataError(f"no predictions directory in {args.eval_dir} (run eval first)")
    scenes = {s.id: s for s in load_split(args.data, args.split)}
    os.makedirs(args.out, exist_ok=True)
    n = 0
    for name in sorted(os.listdir(pred_dir)):
        if not name.endswith(".pred.txt"):
            continue
        scene_id = name[: -len(".pred.txt")]
        if scene_id not in scenes:
            raise DataError(f"prediction for unknown scene {scene_id}")
        scene = scenes[scene_id]
        confs = {}
        preds = {}
        agent_id = None
        with open(os.path.join(pred_dir, name), "r", encoding="utf-8") as f:
            for line in f:
                parts = line.strip().split(",")
                if parts[0] == "PREDSET":
                    agent_id = parts[2]
                elif parts[0] == "CONF":
                    confs[int(parts[1])] = parts[2]
                elif parts[0] == "PRED":
                    preds.setdefault(int(parts[1]), []).append((int(parts[2]), parts[3], parts[4]))
        focal = scene.agents[scene.focal_index]
        T = focal.history.shape[0]
        lines = [f"OVERLAY,{scene_id},{agent_id},{len(confs)}"]
        for j in range(T):
            if focal.history_valid[j]:
                lines.append(f"HIST,{j - (T - 1)},{focal.history[j, 0]:.6f},{focal.history[j, 1]:.6f}")
        if focal.future is not None:
            for j in range(focal.future.shape[0]):
                if focal.future_valid[j]:
                    lines.append(f"GT,{j + 1},{focal.future[j, 0]:.6f},{focal.future[j, 1]:.6f}")
        for k in sorted(preds):
            for t, x, y in preds[k]:
                lines.append(f"PRED,{k},{confs[k]},{t},{x},{y}")
        for poly in scene.map_polylines:
            idx = 0
            for j in range(poly.points.shape[0]):
                if poly.valid[j]:
                    lines.append(f"LANE,{poly.id},{idx},{poly.points[j, 0]:.6f},{poly.points[j, 1]:.6f}")
                    idx += 1
        with open(os.path.join(args.out, scene_id + ".overlay.txt"), "w",
                  encoding="utf-8", newline="\n") as f:
            f.write("\n".join(lines) + "\n")
        n += 1
    if n == 0:
        raise DataError(f"no prediction files found in {pred_dir}")
    write_manifest(
        args.out, "plot", config={"split": args.split}, seeds={},
        inputs=[args.eval_dir, args.data], outputs=[f"{n} overlay files"],
        wall_clock_s=time.time() - t0,
    )
    print(f"wrote {n} overlay files to {args.out}")
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "distill": cmd_distill,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "plot": cmd_plot,
}


def main(argv=None) -> int:
    _pin_threads()
    from .errors import DataError, NumericalError, UsageError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3
    except ValueError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
