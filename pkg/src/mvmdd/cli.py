"""Command-line surface.

Subcommands cover the whole experiment cycle: gen-data builds a synthetic
corpus, train fits the multi-task model, evaluate scores a checkpoint (or an
oracle baseline) against a manifest, inspect-schedule prints the curriculum
timeline, and map-af shows the articulatory class sequences for a phone list.

Every artifact embeds the configuration that produced it, so any output can
be regenerated from its own echo. Exit codes: 0 success, 2 usage or config
error, 3 numerical failure, 4 I/O or file-format error.
"""

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

from .af_inventory import AF_STREAMS, AfTableError, load_af_table, map_phones
from .corpusio import (
    FeatureFormatError,
    ManifestError,
    SynthConfig,
    generate,
    load_checkpoint,
    load_manifest,
    load_phone_map,
    save_checkpoint,
)
from .ctc import CtcError
from .evalmetrics import score_corpus
from .netops import ModelParams, NetConfig
from .trainer import (
    AllAtOnce,
    Sequential,
    TrainConfig,
    TrainingDivergedError,
    active_tasks,
    evaluate_model,
    fit,
    prepare_dataset,
)

PROG = "mvmdd"


def config_hash(config):
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def _write_json(obj, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(obj, f, sort_keys=True, indent=2)
        f.write("\n")


def _strategy_flags(parser):
    parser.add_argument("--strategy", choices=("seq", "all"), default="seq",
                        help="sequential curriculum or all tasks at once")
    parser.add_argument("--warmup", type=int, default=2000,
                        help="PR-only steps before the first auxiliary task")
    parser.add_argument("--interval", type=int, default=2000,
                        help="steps per auxiliary task phase")
    parser.add_argument("--order", default="AF_M,AF_P,AF_HL,AF_FB",
                        help="comma-separated auxiliary task order")


def _strategy_from(args):
    if args.strategy == "all":
        return AllAtOnce()
    return Sequential(warmup=args.warmup, interval=args.interval,
                      order=tuple(args.order.split(",")))


def _net_flags(parser):
    defaults = NetConfig()
    parser.add_argument("--pool-dim", type=int, default=defaults.pool_dim)
    parser.add_argument("--conv-kernel", type=int, default=defaults.conv_kernel)
    parser.add_argument("--conv-stride", type=int, default=defaults.conv_stride)
    parser.add_argument("--conv-channels", type=int, default=defaults.conv_channels)
    parser.add_argument("--d-emb", type=int, default=defaults.d_emb)
    parser.add_argument("--af-hidden", type=int, default=defaults.af_hidden)


def _net_config_from(args):
    return NetConfig(pool_dim=args.pool_dim, conv_kernel=args.conv_kernel,
                     conv_stride=args.conv_stride, conv_channels=args.conv_channels,
                     d_emb=args.d_emb, af_hidden=args.af_hidden)


def _net_config_dict(cfg):
    d = dataclasses.asdict(cfg)
    d["af_classes"] = [list(pair) for pair in cfg.af_classes]
    return d


def _net_config_from_dict(d):
    return NetConfig(pool_dim=d["pool_dim"], conv_kernel=d["conv_kernel"],
                     conv_stride=d["conv_stride"], conv_channels=d["conv_channels"],
                     d_emb=d["d_emb"], af_hidden=d["af_hidden"],
                     n_phones=d["n_phones"],
                     af_classes=tuple((s, n) for s, n in d["af_classes"]))


def cmd_gen_data(args):
    config = SynthConfig(
        n_train=args.train, n_dev=args.dev, n_test=args.test,
        phones_per_utt=(args.phones_min, args.phones_max),
        frames_per_phone=(args.frames_min, args.frames_max),
        mispronunciation_rate=args.rho, noise_sigma=args.sigma,
        seed=args.seed, mono_dim=args.mono_dim, multi_dim=args.multi_dim,
    )
    report = generate(config, args.out)
    echo = {"command": "gen-data", "synth": config.to_dict()}
    _write_json(echo, Path(args.out) / "config.json")
    print(f"wrote {config.n_train}/{config.n_dev}/{config.n_test} utterances "
          f"under {args.out} (mispronounced fraction "
          f"{report['mispronounced_fraction']:.3f})")
    return 0


def cmd_train(args):
    train_cfg = TrainConfig(
        steps=args.steps, lr=args.lr, batch_size=args.batch,
        beta1=args.beta1, beta2=args.beta2, eps=args.eps, seed=args.seed,
        strategy=_strategy_from(args), eval_every=args.eval_every,
        patience=args.patience, loss_combination=args.loss_combination,
    )
    net_cfg = _net_config_from(args)
    table = load_af_table(args.af_table)
    phone_map = load_phone_map(args.phone_map) if args.phone_map else None
    data = Path(args.data)
    train_recs = load_manifest(data / "train.jsonl", inventory=table.inventory,
                               phone_map=phone_map)
    dev_recs = load_manifest(data / "dev.jsonl", inventory=table.inventory,
                             phone_map=phone_map)
    train_utts = prepare_dataset(train_recs, data, table=table, net_cfg=net_cfg)
    dev_utts = prepare_dataset(dev_recs, data, table=table, net_cfg=net_cfg)

    echo = {
        "command": "train",
        "data": str(args.data),
        "train": train_cfg.to_dict(),
        "net": _net_config_dict(net_cfg),
        "af_table": args.af_table or "builtin",
        "phone_map": args.phone_map,
    }
    result = fit(train_utts, dev_utts, train_cfg, net_cfg=net_cfg, table=table)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_path = out / "log.jsonl"
    with open(log_path, "w", encoding="utf-8") as f:
        f.write(json.dumps({"config": echo}, sort_keys=True) + "\n")
        for rec in result.log:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    ckpt_path = out / "checkpoint.mvcp"
    save_checkpoint(ckpt_path, result.params.to_dict(), echo)
    if result.best_step >= 0:
        print(f"best dev PER {result.best_dev_per:.4f} at step {result.best_step}"
              f"{' (early stop)' if result.stopped_early else ''}")
    print(f"checkpoint -> {ckpt_path}")
    print(f"log -> {log_path}")
    return 0


def cmd_evaluate(args):
    if args.oracle is None and args.ckpt is None:
        print(f"{PROG}: evaluate needs --ckpt unless --oracle is given",
              file=sys.stderr)
        return 2
    table = load_af_table(args.af_table)
    phone_map = load_phone_map(args.phone_map) if args.phone_map else None
    records = load_manifest(args.manifest, inventory=table.inventory,
                            phone_map=phone_map)
    echo = {
        "command": "evaluate",
        "manifest": str(args.manifest),
        "oracle": args.oracle,
        "insertion_mode": args.insertion_mode,
        "average": args.average,
        "af_table": args.af_table or "builtin",
        "phone_map": args.phone_map,
    }
    if args.oracle is not None:
        triples = [(r.canonical, r.perceived,
                    r.canonical if args.oracle == "canonical" else r.perceived)
                   for r in records]
        report = score_corpus(triples, inventory=table.inventory,
                              insertion_mode=args.insertion_mode,
                              average=args.average)
    else:
        arrays, ckpt_config = load_checkpoint(args.ckpt)
        params = ModelParams.from_dict(arrays)
        net_cfg = _net_config_from_dict(ckpt_config["net"])
        echo["checkpoint"] = str(args.ckpt)
        echo["checkpoint_config"] = ckpt_config
        base_dir = Path(args.manifest).parent
        utts = prepare_dataset(records, base_dir, table=table, net_cfg=net_cfg)
        report = evaluate_model(params, net_cfg, utts, table=table,
                                insertion_mode=args.insertion_mode,
                                average=args.average)
    report["config"] = echo
    report["config_hash"] = config_hash(echo)
    summary = (f"PER {report['per']:.4f}  F1 {report['f1']:.4f}  "
               f"(R {report['recall']:.4f} P {report['precision']:.4f})")
    if args.out:
        _write_json(report, args.out)
        print(f"report -> {args.out}")
        print(summary)
    else:
        json.dump(report, sys.stdout, sort_keys=True, indent=2)
        print()
        print(summary, file=sys.stderr)
    return 0


def cmd_inspect_schedule(args):
    strategy = _strategy_from(args)
    phases = []
    for step in range(args.steps):
        tasks = active_tasks(step, strategy)
        if not phases or phases[-1][2] != tasks:
            phases.append([step, step, tasks])
        else:
            phases[-1][1] = step
    for start, end, tasks in phases:
        print(f"[{start}-{end}] {'+'.join(tasks)}")
    return 0


def cmd_map_af(args):
    table = load_af_table(args.af_table)
    for phone in args.phones:
        if phone not in table.inventory:
            print(f"{PROG}: unknown phone {phone!r}", file=sys.stderr)
            return 2
    for stream in AF_STREAMS:
        names = map_phones(args.phones, stream, table)
        print(f"{stream}: {' '.join(names)}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog=PROG,
        description="multi-view multi-task mispronunciation detection and diagnosis")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rho", type=float, default=0.15,
                   help="per-phone mispronunciation probability")
    p.add_argument("--sigma", type=float, default=0.3, help="feature noise scale")
    p.add_argument("--train", type=int, default=400)
    p.add_argument("--dev", type=int, default=50)
    p.add_argument("--test", type=int, default=50)
    p.add_argument("--phones-min", type=int, default=3)
    p.add_argument("--phones-max", type=int, default=8)
    p.add_argument("--frames-min", type=int, default=2)
    p.add_argument("--frames-max", type=int, default=4)
    p.add_argument("--mono-dim", type=int, default=768)
    p.add_argument("--multi-dim", type=int, default=1024)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fit the model on a dataset directory")
    p.add_argument("--data", required=True, help="directory with train/dev manifests")
    p.add_argument("--out", required=True, help="output directory for checkpoint+log")
    p.add_argument("--steps", type=int, default=10000)
    p.add_argument("--lr", type=float, default=4e-5)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--beta1", type=float, default=0.9)
    p.add_argument("--beta2", type=float, default=0.999)
    p.add_argument("--eps", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-every", type=int, default=200)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--loss-combination", choices=("mean", "sum"), default="mean")
    p.add_argument("--af-table", default=None, help="custom articulatory table TSV")
    p.add_argument("--phone-map", default=None, help="phone-mapping TSV applied at load")
    _strategy_flags(p)
    _net_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint or oracle on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ckpt", default=None)
    p.add_argument("--out", default=None, help="report path (stdout if omitted)")
    p.add_argument("--oracle", choices=("canonical", "perceived"), default=None,
                   help="score a fixed transcript instead of a model")
    p.add_argument("--insertion-mode", choices=("exclude", "score"), default="exclude")
    p.add_argument("--average", choices=("micro", "macro"), default="micro")
    p.add_argument("--af-table", default=None)
    p.add_argument("--phone-map", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("inspect-schedule", help="print the curriculum timeline")
    p.add_argument("--steps", type=int, default=10000)
    _strategy_flags(p)
    p.set_defaults(func=cmd_inspect_schedule)

    p = sub.add_parser("map-af", help="articulatory classes for a phone sequence")
    p.add_argument("phones", nargs="+")
    p.add_argument("--af-table", default=None)
    p.set_defaults(func=cmd_map_af)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FeatureFormatError, ManifestError) as exc:
        print(f"{PROG}: {exc}", file=sys.stderr)
        return 4
    except (TrainingDivergedError, CtcError) as exc:
        print(f"{PROG}: {exc}", file=sys.stderr)
        return 3
    except (AfTableError, ValueError) as exc:
        print(f"{PROG}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"{PROG}: {exc}", file=sys.stderr)
        return 4


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
