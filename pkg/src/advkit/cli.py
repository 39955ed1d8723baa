"""Command-line interface.

Subcommands: dataset gen, train, corrupt, evaluate, attack, defend,
detect, report. A single JSON config file can carry the gate policy,
pipelines, attack configs, and the target descriptor; flags override it.
Exit status is 0 on success and 2 when a campaign was transport-degraded.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from advkit import attack as attack_mod
from advkit import dataset as dataset_mod
from advkit import defense as defense_mod
from advkit import model as model_mod
from advkit.corruption import METHODS, CorruptionSpec, apply_corruption
from advkit.gate import GatePolicy
from advkit.harness import (
    DefenseRow,
    EvaluationReport,
    LocalTarget,
    run_attack_campaign,
    run_corruption_campaign,
)
from advkit.image import load_image, save_image
from advkit.remote import FieldMap, RemoteTarget
from advkit.report import emit_report, report_from_json_str

EXIT_OK = 0
EXIT_PARTIAL = 2


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help()
        return EXIT_OK
    return args.func(args)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="advkit", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("dataset", help="dataset utilities")
    dsub = p.add_subparsers(dest="dataset_command")
    g = dsub.add_parser("gen", help="generate the bundled synthetic corpus")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--train", type=int, default=600)
    g.add_argument("--test", type=int, default=300)
    g.set_defaults(func=cmd_dataset_gen)

    p = sub.add_parser("train", help="train the built-in model")
    p.add_argument("--data", required=True, help="dataset root (train/ subdir)")
    p.add_argument("--out", required=True, help="params file to write")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=0.05)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("corrupt", help="apply one corruption to an image")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--method", required=True, choices=sorted(METHODS))
    p.add_argument("--severity", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--param", action="append", default=[], metavar="KEY=VALUE",
                   help="raw parameter override (repeatable)")
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("evaluate", help="corruption campaign against a target")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON config with target/policy")
    p.add_argument("--params", help="local target params file (overrides config)")
    p.add_argument("--methods", help="comma list, default all")
    p.add_argument("--severities", default="1,2,3,4,5")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--parallelism", type=int, default=1)
    p.add_argument("--formats", default="json,csv,svg")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("attack", help="attack campaign against a target")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON config with target/attacks")
    p.add_argument("--params", help="local target params file")
    p.add_argument("--kinds", default="fgsm,pgd")
    p.add_argument("--epsilon", type=float, default=8.0)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--shadow", help="shadow params file (for ffl_pgd)")
    p.add_argument("--corpus", help="directory for the adversarial corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--formats", default="json,csv,svg")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("defend", help="train a hardened model (augmentation + PGD)")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=40, help="augmentation-phase epochs")
    p.add_argument("--adv-epochs", type=int, default=20, help="adversarial-phase epochs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--adv-epsilon", type=float, default=4.0)
    p.add_argument("--adv-steps", type=int, default=5)
    p.add_argument("--compare-undefended", help="undefended params for defense rows")
    p.add_argument("--methods", default="gaussian_noise,rotation,salt_pepper,monochrome_red")
    p.add_argument("--severities", default="3")
    p.add_argument("--report-out", help="directory for the comparison report")
    p.set_defaults(func=cmd_defend)

    p = sub.add_parser("detect", help="train or apply the adversarial detector")
    p.add_argument("--params", required=True, help="protected model params")
    p.add_argument("--data", help="dataset root (train mode)")
    p.add_argument("--out", help="detector file to write (train mode)")
    p.add_argument("--epsilon", type=float, default=8.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--detector", help="detector file (score mode)")
    p.add_argument("--inputs", nargs="*", default=[], help="images to score")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("report", help="convert a JSON report to other formats")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--formats", default="csv,svg")
    p.set_defaults(func=cmd_report)

    return parser


# ---------------------------------------------------------------- helpers


def _load_config(path) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _build_target(args, config: dict):
    if getattr(args, "params", None):
        params = model_mod.load_params(args.params)
        return LocalTarget(params)
    tgt = config.get("target")
    if not tgt:
        raise SystemExit("no target: pass --params or a config with a target entry")
    if tgt["kind"] == "local":
        params = model_mod.load_params(tgt["params"])
        pipeline = None
        if tgt.get("pipeline"):
            pipeline = defense_mod.PreprocessPipeline.from_json(tgt["pipeline"])
        return LocalTarget(params, pipeline=pipeline)
    if tgt["kind"] == "remote":
        return RemoteTarget(
            endpoint=tgt["endpoint"],
            auth_header=tgt.get("auth_header"),
            timeout_ms=int(tgt.get("timeout_ms", 5000)),
            max_retries=int(tgt.get("max_retries", 3)),
            rate_limit_qps=tgt.get("rate_limit_qps"),
            top_k=int(tgt.get("top_k", 5)),
            field_map=FieldMap.from_json(tgt.get("field_map", {})),
        )
    raise SystemExit(f"unknown target kind {tgt['kind']!r}")


def _policy_from_config(config: dict) -> GatePolicy:
    if config.get("gate_policy"):
        return GatePolicy.from_json(config["gate_policy"])
    return GatePolicy()


def _parse_params(pairs):
    raw = {}
    for pair in pairs:
        key, _, value = pair.partition("=")
        raw[key] = float(value)
    return raw or None


# ------------------------------------------------------------ subcommands


def cmd_dataset_gen(args) -> int:
    train, test = dataset_mod.generate_dataset(seed=args.seed, n_train=args.train, n_test=args.test)
    dataset_mod.save_dataset(train, os.path.join(args.out, "train"))
    dataset_mod.save_dataset(test, os.path.join(args.out, "test"))
    print(f"wrote {len(train.items)} train / {len(test.items)} test images to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    train_ds = dataset_mod.load_dataset(os.path.join(args.data, "train"))
    params, log = model_mod.train(train_ds, epochs=args.epochs, lr=args.lr, seed=args.seed)
    model_mod.save_params(params, args.out)
    if log:
        last = log[-1]
        print(f"trained {args.epochs} epochs; final loss {last['mean_loss']:.4f} "
              f"acc {last['train_accuracy']:.3f}; params -> {args.out}")
    return EXIT_OK


def cmd_corrupt(args) -> int:
    img = load_image(args.input)
    spec = CorruptionSpec(
        method=args.method,
        severity=args.severity,
        seed=args.seed,
        raw_params=_parse_params(args.param),
    )
    save_image(apply_corruption(img, spec), args.output)
    print(f"{args.method} severity {args.severity} -> {args.output}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = _load_config(args.config)
    target = _build_target(args, config)
    policy = _policy_from_config(config)
    test_ds = dataset_mod.load_dataset(os.path.join(args.data, "test"))
    methods = args.methods.split(",") if args.methods else sorted(METHODS)
    severities = [int(s) for s in args.severities.split(",")]
    report = run_corruption_campaign(
        target, test_ds, methods, severities, policy=policy,
        seed=args.seed, parallelism=args.parallelism,
    )
    paths = emit_report(report, args.out, formats=args.formats.split(","))
    print(f"clean accuracy {report.clean.accuracy:.3f}; report -> {paths}")
    return EXIT_PARTIAL if report.partial else EXIT_OK


def cmd_attack(args) -> int:
    config = _load_config(args.config)
    target = _build_target(args, config)
    policy = _policy_from_config(config) if config.get("gate_policy") else None
    test_ds = dataset_mod.load_dataset(os.path.join(args.data, "test"))
    if config.get("attacks"):
        cfgs = [attack_mod.AttackConfig.from_json(a) for a in config["attacks"]]
    else:
        cfgs = [
            attack_mod.AttackConfig(kind=k, epsilon=args.epsilon, steps=args.steps, seed=args.seed)
            for k in args.kinds.split(",")
        ]
    shadow = model_mod.load_params(args.shadow) if args.shadow else None
    report = run_attack_campaign(
        target, test_ds, cfgs, shadow=shadow, policy=policy, seed=args.seed
    )
    paths = emit_report(report, args.out, formats=args.formats.split(","))
    if args.corpus:
        _emit_cli_corpus(args, target, test_ds, cfgs[0])
    for row in report.attack_rows:
        rate = "n/a" if row.escape_rate is None else f"{row.escape_rate:.3f}"
        print(f"{row.kind} eps={row.epsilon}: escape rate {rate} over {row.n}")
    print(f"report -> {paths}")
    return EXIT_PARTIAL if report.partial else EXIT_OK


def _emit_cli_corpus(args, target, test_ds, cfg) -> None:
    from advkit.rng import derive_seed

    results = []
    names = []
    for i, (img, _label) in enumerate(test_ds.items):
        pred = target.classify(img)
        item_cfg = cfg.with_seed(derive_seed(cfg.seed, "item", i))
        if cfg.kind == "ffl_pgd":
            shadow = model_mod.load_params(args.shadow)
            res = attack_mod.ffl_pgd_attack(shadow, target, img, pred.top1_index, item_cfg)
        elif cfg.kind == "fgsm":
            res = attack_mod.fgsm(target.params, img, pred.top1_index, item_cfg)
        else:
            res = attack_mod.pgd(target.params, img, pred.top1_index, item_cfg)
        results.append(res)
        names.append(f"img_{i:05d}.ppm")
    manifest = attack_mod.save_corpus(args.corpus, results, cfg, original_names=names)
    print(f"corpus -> {manifest}")


def cmd_defend(args) -> int:
    train_ds = dataset_mod.load_dataset(os.path.join(args.data, "train"))
    pgd_cfg = attack_mod.AttackConfig(
        kind="pgd", epsilon=args.adv_epsilon, steps=args.adv_steps,
        step_size=max(1.0, args.adv_epsilon / 4.0), seed=args.seed,
    )
    params, deploy = defense_mod.train_defended(
        train_ds, seed=args.seed, aug_epochs=args.epochs, adv_epochs=args.adv_epochs,
        input_size=defense_mod.LOCAL_INPUT_SIZE, pgd_cfg=pgd_cfg,
    )
    model_mod.save_params(params, args.out)
    print(f"hardened params -> {args.out}")

    if args.compare_undefended and args.report_out:
        test_ds = dataset_mod.load_dataset(os.path.join(args.data, "test"))
        undef = model_mod.load_params(args.compare_undefended)
        rows = []
        for method in args.methods.split(","):
            for severity in (int(s) for s in args.severities.split(",")):
                u = defense_mod.spatial_defense_rate(undef, test_ds, method, severity, seed=args.seed)
                d = defense_mod.spatial_defense_rate(
                    params, test_ds, method, severity, preprocessing=deploy, seed=args.seed
                )
                rows.append(DefenseRow(
                    method=method, severity=severity, n=len(test_ds.items),
                    undefended_rate=u, defended_rate=d,
                ))
                print(f"{method} s{severity}: undefended {u:.3f} -> defended {d:.3f}")
        report = EvaluationReport(
            metadata={"seed": args.seed, "kind": "defense-comparison", "timestamp": None},
            defense_rows=rows,
        )
        emit_report(report, args.report_out, formats=("json", "csv"))
    return EXIT_OK


def cmd_detect(args) -> int:
    params = model_mod.load_params(args.params)
    if args.out:
        if not args.data:
            raise SystemExit("--data is required to train a detector")
        test_ds = dataset_mod.load_dataset(os.path.join(args.data, "test"))
        cfg = attack_mod.AttackConfig(kind="pgd", epsilon=args.epsilon, seed=args.seed)
        from advkit.rng import derive_seed

        clean, adv = [], []
        for i, (img, _label) in enumerate(test_ds.items):
            pred = model_mod.predict(params, img)
            res = attack_mod.pgd(params, img, pred.top1_index,
                                 cfg.with_seed(derive_seed(cfg.seed, "item", i)))
            clean.append(img)
            adv.append(res.adversarial)
        det = defense_mod.train_detector(params, clean, adv, seed=args.seed)
        defense_mod.save_detector(det, args.out)
        print(f"detector -> {args.out}")
        return EXIT_OK
    if args.detector and args.inputs:
        det = defense_mod.load_detector(args.detector)
        verdicts = []
        for path in args.inputs:
            img = load_image(path)
            p = defense_mod.detect(det, params, img)
            verdicts.append({"file": path, "p_adversarial": p, "adversarial": p >= 0.5})
        print(json.dumps(verdicts, indent=2))
        return EXIT_OK
    raise SystemExit("detect: pass --out (train mode) or --detector with --inputs")


def cmd_report(args) -> int:
    with open(args.input) as fh:
        report = report_from_json_str(fh.read())
    paths = emit_report(report, args.out, formats=args.formats.split(","))
    print(f"report -> {paths}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
