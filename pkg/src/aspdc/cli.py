"""Command-line surface.

Subcommands: synth, train-deblur, train-reblur, finetune, deblur, reblur,
eval, gradcheck, dump-attn. Exit codes: 0 success, 1 usage error, 2 IO
error, 3 numeric-check failure. Diagnostics go to stderr.
"""

import argparse
import os
import sys

import numpy as np

from . import checkpoint, config as cfgmod, gradcheck, synth, tensor as T, training
from .blocks import AspdcConfig
from .deblur import DeblurConfig, DeblurNet
from .imageio import read_png, reflect_pad_to_multiple, to_tensor, write_png
from .metrics import MetricReport

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


class UsageError(Exception):
    pass


def _build_parser():
    p = _Parser(prog="aspdc", description="Non-uniform motion deblurring toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic blur corpus")
    sp.add_argument("--out", required=True)
    sp.add_argument("--config")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--count", type=int)
    sp.add_argument("--size", type=int)
    sp.add_argument("--frames", type=int)
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--max-disp", type=float, dest="max_disp")
    sp.add_argument("--kind", choices=sorted(synth.FIELD_KINDS))

    for name in ("train-deblur", "train-reblur"):
        tp = sub.add_parser(name, help=f"phase-one training ({name.split('-')[1]} net)")
        tp.add_argument("--corpus", required=True)
        tp.add_argument("--run", required=True)
        tp.add_argument("--config")
        tp.add_argument("--seed", type=int)
        tp.add_argument("--steps", type=int)
        tp.add_argument("--batch", type=int)
        tp.add_argument("--crop", type=int)
        tp.add_argument("--period", type=int, help="lr halving period in epochs (0 = auto)")
        tp.add_argument("--width", type=int, help="base channel width")
        if name == "train-deblur":
            tp.add_argument("--modules", type=int, help="pyramid blocks in the stack")

    fp = sub.add_parser("finetune", help="consistency fine-tuning of the deblurring net")
    fp.add_argument("--corpus", required=True)
    fp.add_argument("--run", required=True)
    fp.add_argument("--deblur-ckpt", required=True)
    fp.add_argument("--reblur-ckpt", required=True)
    fp.add_argument("--config")
    fp.add_argument("--lam", default=None,
                    help="consistency weight, or comma list for a sweep (e.g. 0.01,0.1,1)")
    fp.add_argument("--seed", type=int)
    fp.add_argument("--steps", type=int)
    fp.add_argument("--batch", type=int)
    fp.add_argument("--crop", type=int)
    fp.add_argument("--period", type=int)
    fp.add_argument("--no-freeze-reblur", action="store_true")

    dp = sub.add_parser("deblur", help="deblur PNG image(s) with a checkpoint")
    dp.add_argument("--ckpt", required=True, help="checkpoint path, or 'zeroinit'")
    dp.add_argument("--in", dest="inputs", nargs="+", required=True)
    dp.add_argument("--out", required=True, help="output file (single input) or directory")
    dp.add_argument("--width", type=int, default=32, help="width for --ckpt zeroinit")
    dp.add_argument("--modules", type=int, default=6, help="modules for --ckpt zeroinit")

    rp = sub.add_parser("reblur", help="reblur a sharp image using blur information")
    rp.add_argument("--ckpt", required=True)
    rp.add_argument("--sharp", required=True)
    rp.add_argument("--blurred", required=True)
    rp.add_argument("--out", required=True)

    ep = sub.add_parser("eval", help="PSNR/SSIM/difference-map report")
    ep.add_argument("--pred", nargs="+", required=True)
    ep.add_argument("--target", nargs="+", required=True)
    ep.add_argument("--out", required=True, help="CSV report path")

    gp = sub.add_parser("gradcheck", help="finite-difference check of every op")
    gp.add_argument("--seed", type=int, default=0)
    gp.add_argument("--tol", type=float, default=gradcheck.DEFAULT_TOL)

    ap = sub.add_parser("dump-attn", help="write the last block's attention maps as PNGs")
    ap.add_argument("--ckpt", required=True)
    ap.add_argument("--in", dest="input", required=True)
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--width", type=int, default=32)
    ap.add_argument("--modules", type=int, default=6)
    return p


def _resolved(args, section_defaults, overrides):
    out = dict(section_defaults)
    for key, val in overrides.items():
        if val is not None:
            out[key] = val
    return out


def _load_deblur_net(ckpt, width, modules):
    if ckpt == "zeroinit":
        return DeblurNet(DeblurConfig(base_width=width, n_modules=modules),
                         rng=np.random.default_rng(0))
    net, _ = checkpoint.load_deblur(ckpt)
    return net


def _deblur_one(net, path):
    img = read_png(path)
    padded, (h, w) = reflect_pad_to_multiple(img, 4)
    out = net.infer(to_tensor([padded]))
    return out.data[0].transpose(1, 2, 0)[:h, :w]


def cmd_synth(args):
    sec = cfgmod.parse_config(args.config)["synth"]
    vals = _resolved(args, sec, {k: getattr(args, k) for k in
                                 ("seed", "count", "size", "frames", "gamma", "sigma", "max_disp", "kind")})
    spec = synth.CorpusSpec(**vals)
    manifest = synth.make_corpus(args.out, spec)
    print(f"wrote {spec.count} pairs to {args.out} ({manifest})")
    return EXIT_OK


def _train_common(args, resolved):
    t = resolved["train"]
    return training.TrainConfig(
        seed=t["seed"] if args.seed is None else args.seed,
        batch=t["batch"] if args.batch is None else args.batch,
        crop=t["crop"] if args.crop is None else args.crop,
        steps=t["steps"] if args.steps is None else args.steps,
        period_epochs=t["period_epochs"] if args.period is None else args.period,
        ckpt_every=t["ckpt_every"],
    )


def cmd_train_deblur(args):
    resolved = cfgmod.parse_config(args.config)
    cfg = _train_common(args, resolved)
    net_sec = dict(resolved["net"])
    if args.width is not None:
        net_sec["base_width"] = args.width
    if getattr(args, "modules", None) is not None:
        net_sec["n_modules"] = args.modules
    net_cfg = cfgmod.deblur_config_from(net_sec)
    result = training.train_deblur(args.corpus, cfg, net_cfg, run_dir=args.run)
    last = result.history[-1]
    print(f"trained {cfg.steps} steps; final loss {last['loss']:.6g}, "
          f"psnr {last['psnr']:.2f} dB; checkpoint {result.checkpoint}")
    return EXIT_OK


def cmd_train_reblur(args):
    resolved = cfgmod.parse_config(args.config)
    cfg = _train_common(args, resolved)
    net_sec = dict(resolved["net"])
    if args.width is not None:
        net_sec["reblur_width"] = args.width
    net_cfg = cfgmod.reblur_config_from(net_sec)
    result = training.train_reblur(args.corpus, cfg, net_cfg, run_dir=args.run)
    last = result.history[-1]
    print(f"trained {cfg.steps} steps; final loss {last['loss']:.6g}, "
          f"psnr {last['psnr']:.2f} dB; checkpoint {result.checkpoint}")
    return EXIT_OK


def cmd_finetune(args):
    resolved = cfgmod.parse_config(args.config)
    t = resolved["train"]
    cfg = training.TrainConfig(
        seed=t["seed"] if args.seed is None else args.seed,
        batch=t["batch"] if args.batch is None else args.batch,
        crop=t["crop"] if args.crop is None else args.crop,
        steps=t["steps"] if args.steps is None else args.steps,
        lr0=t["finetune_lr0"],
        period_epochs=t["finetune_period_epochs"] if args.period is None else args.period,
    )
    lam_raw = args.lam if args.lam is not None else str(t["lam"])
    lams = [float(v) for v in str(lam_raw).split(",")]
    freeze = not args.no_freeze_reblur and t["freeze_reblur"]
    results = []
    for lam in lams:
        deblur_net, _ = checkpoint.load_deblur(args.deblur_ckpt)
        reblur_net, _ = checkpoint.load_reblur(args.reblur_ckpt)
        run_dir = args.run if len(lams) == 1 else os.path.join(args.run, f"lam_{lam:g}")
        cc = training.ConsistencyConfig(lam=lam, freeze_reblur=freeze)
        res = training.finetune_consistency(deblur_net, reblur_net, args.corpus, cc, cfg, run_dir=run_dir)
        last = res.history[-1]
        results.append((lam, last))
        print(f"lam={lam:g}: final loss {last['loss']:.6g}, psnr {last['psnr']:.2f} dB, "
              f"checkpoint {res.checkpoint}")
    return EXIT_OK


def cmd_deblur(args):
    net = _load_deblur_net(args.ckpt, args.width, args.modules)
    multi = len(args.inputs) > 1
    if multi:
        os.makedirs(args.out, exist_ok=True)
    for path in args.inputs:
        out_img = _deblur_one(net, path)
        dest = os.path.join(args.out, os.path.basename(path)) if multi or os.path.isdir(args.out) else args.out
        write_png(dest, out_img)
        print(f"{path} -> {dest}")
    return EXIT_OK


def cmd_reblur(args):
    net, _ = checkpoint.load_reblur(args.ckpt)
    sharp = read_png(args.sharp)
    blurred = read_png(args.blurred)
    if sharp.shape != blurred.shape:
        raise UsageError(f"input sizes disagree: {sharp.shape} vs {blurred.shape}")
    ps, (h, w) = reflect_pad_to_multiple(sharp, 8)
    pb, _ = reflect_pad_to_multiple(blurred, 8)
    out = net.infer(to_tensor([ps]), to_tensor([pb]))
    write_png(args.out, out.data[0].transpose(1, 2, 0)[:h, :w])
    print(f"reblurred {args.sharp} -> {args.out}")
    return EXIT_OK


def cmd_eval(args):
    if len(args.pred) != len(args.target):
        raise UsageError(f"{len(args.pred)} predictions vs {len(args.target)} targets")
    report = MetricReport()
    for pred, target in zip(args.pred, args.target):
        report.add(os.path.basename(pred), read_png(pred), read_png(target))
    report.write_csv(args.out)
    agg = report.aggregate()
    print(f"{len(report.rows)} image(s): mean psnr {agg['psnr_db']}, mean ssim {agg['ssim']:.4f} -> {args.out}")
    return EXIT_OK


def cmd_gradcheck(args):
    results = gradcheck.run_suite(seed=args.seed, tol=args.tol)
    n_checks = 0
    failed = False
    for res in results:
        for line in res.lines():
            print(line)
            n_checks += 1
        failed = failed or not res.passed
    print(f"{n_checks} checks across {len(results)} cases, tolerance {args.tol:g}")
    if failed:
        print("gradcheck FAILED", file=sys.stderr)
        return EXIT_NUMERIC
    print("gradcheck passed")
    return EXIT_OK


def cmd_dump_attn(args):
    net = _load_deblur_net(args.ckpt, args.width, args.modules)
    img = read_png(args.input)
    padded, _ = reflect_pad_to_multiple(img, 4)
    net.infer(to_tensor([padded]))
    maps = net.last_attn[-1][0]  # final block, first batch item: (B, h, w)
    os.makedirs(args.out, exist_ok=True)
    for i in range(maps.shape[0]):
        dest = os.path.join(args.out, f"attn_{i + 1}.png")
        write_png(dest, maps[i])
    print(f"wrote {maps.shape[0]} attention maps to {args.out}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train-deblur": cmd_train_deblur,
    "train-reblur": cmd_train_reblur,
    "finetune": cmd_finetune,
    "deblur": cmd_deblur,
    "reblur": cmd_reblur,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "dump-attn": cmd_dump_attn,
}


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except T.NumericError as exc:
        print(f"numeric check failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, checkpoint.CheckpointError, synth.SynthError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (cfgmod.ConfigFileError, T.ShapeError, T.ContractError, training.TrainError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
