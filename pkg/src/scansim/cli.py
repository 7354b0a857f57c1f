"""Command line entry point: ``scansim <command> [flags]``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""
import argparse
import json
import os
import sys
from pathlib import Path

from . import experiments as ex
from .csi import LengthSet
from .errors import ConfigError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError("<arguments>", message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="scansim", description="Semantic image transmission with adaptive CSI feedback.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON experiment config")
        sp.add_argument("--seed", type=int, help="overrides the config seed")
        sp.add_argument("--out", help="output directory (default $SCAN_OUT or .)")

    common(sub.add_parser("simulate-link", help="PSNR/SDOP over the (SNR, B) grid"))
    common(sub.add_parser("train-evaluator", help="build the distillation set and train the predictor"))
    sp = sub.add_parser("eval-sdop", help="SDOP per SNR point for one length policy")
    common(sp)
    sp.add_argument("--policy", choices=("fixed", "instance", "group"), default="fixed")
    sp.add_argument("--fixed-b", type=int, help="length for the fixed policy (default: closest to l_th)")
    sp = sub.add_parser("allocate", help="group-wise allocation for a table of predicted distortions")
    common(sp, config_required=False)
    sp.add_argument("--table", required=True, help="CSV, M rows x T predicted distortions")
    sp.add_argument("--l-th", type=float, help="average length budget (overrides config)")
    sp.add_argument("--lengths", help="comma separated length set (overrides config)")
    grp = sp.add_mutually_exclusive_group()
    grp.add_argument("--gamma-th", type=float, help="PSNR threshold in dB")
    grp.add_argument("--d-th", type=float, help="distortion (MSE) threshold")
    return p


def _config(args):
    cfg = ex.load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed", "must be non-negative")
        cfg = ex.dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(ex.ENV_OUT, "."))


def _allocate(args):
    cfg = ex.load_config(args.config) if args.config else None
    if args.lengths:
        try:
            lengths = LengthSet(tuple(int(v) for v in args.lengths.split(",")))
        except ValueError as exc:
            raise ConfigError("--lengths", str(exc)) from None
    else:
        lengths = cfg.lengths if cfg else LengthSet()
    if args.d_th is not None:
        D_th = args.d_th
    elif args.gamma_th is not None:
        D_th = 10.0 ** (-args.gamma_th / 10.0)
    elif cfg:
        D_th = cfg.D_th
    else:
        raise ConfigError("--gamma-th", "give a threshold (--gamma-th / --d-th) or a config")
    if not D_th > 0:
        raise ConfigError("--d-th", "must be positive")
    L_th = args.l_th if args.l_th is not None else (cfg.L_th if cfg else None)
    if L_th is None:
        raise ConfigError("--l-th", "give an average length budget or a config")
    if not lengths[0] <= L_th <= lengths[-1]:
        raise ConfigError("--l-th", f"must satisfy {lengths[0]} <= l_th <= {lengths[-1]}")
    report = ex.cmd_allocate(args.table, L_th, lengths, D_th)
    report["lengths"] = list(lengths)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    (out / "allocation.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    lines = ["image,level,length"] + [f"{i},{lv},{L}" for i, (lv, L) in
                                      enumerate(zip(report["omega"], report["lengths_assigned"]))]
    (out / "allocation.csv").write_text("\n".join(lines) + "\n")
    gap = "n/a" if report["oracle_gap"] is None else report["oracle_gap"]
    print(f"average length {report['average_length']:.3f} (budget {L_th:g}); "
          f"predicted outages {report['predicted_outages']}; oracle gap {gap}")


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "allocate":
            _allocate(args)
            return EXIT_OK
        cfg = _config(args)
        out = _out_dir(args)
        if args.command == "simulate-link":
            rows = ex.cmd_simulate_link(cfg)
            path = ex.write_outputs(out, "simulate_link", ex.rows_to_csv(rows), ex._meta(cfg, "simulate-link"))
        elif args.command == "train-evaluator":
            res = ex.cmd_train_evaluator(cfg)
            out.mkdir(parents=True, exist_ok=True)
            (out / "evaluator.ckpt").write_bytes(res.checkpoint)
            (out / "loss_trace.csv").write_text(ex.trace_csv(res.initial_loss, res.trace))
            path = ex.write_outputs(out, "train_evaluator", ex.rows_to_csv(res.rows),
                                    ex._meta(cfg, "train-evaluator", checkpoint="evaluator.ckpt"))
            print(f"held-out PSNR RMSE {res.heldout_rmse:.3f} dB; loss {res.initial_loss:.4g} -> {res.final_loss:.4g}")
        else:
            rows = ex.cmd_eval_sdop(cfg, args.policy, args.fixed_b)
            path = ex.write_outputs(out, f"eval_sdop_{args.policy}", ex.rows_to_csv(rows),
                                    ex._meta(cfg, "eval-sdop", policy=args.policy, fixed_b=args.fixed_b))
        print(f"wrote {path}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
