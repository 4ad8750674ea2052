"""Command-line pipeline: synth-bank, build-splits, pretrain, select-texts,
train-head, probe, eval, report.

Configs are single JSON documents; the universal flags (--seed, --out and the
path flags) override file values. Every run writes a manifest with the config
digest and content hashes of its inputs, and every artifact embeds the digest
of the config that produced it; `eval` refuses artifacts whose digests do not
chain unless --force is passed.
"""

import os

_threads = os.environ.get("GVR_THREADS")
if _threads:  # must precede the first numpy import to reach the BLAS pools
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, _threads)

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

from gvr import evaluate as E
from gvr.bank import corpus_stats, load_bank, manifest_path_for, save_bank
from gvr.errors import GvrError, ValidationError
from gvr.head import (
    HeadParams,
    SalientTextBank,
    Stage2Config,
    TSRConfig,
    linear_probe,
    run_stage2,
    select_salient_texts,
)
from gvr.model import ModelConfig, load_checkpoint
from gvr.pretrain import PretrainConfig, run_stage1
from gvr.splits import (
    DatasetIndex,
    ParetoConfig,
    SplitSpec,
    build_close_split,
    build_cway_split,
    build_fewshot_episode,
    build_lt_split,
    build_open_split,
    split_fewshot_classes,
)
from gvr.synthetic import SyntheticConfig, make_synthetic


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True,
                                     separators=(",", ":")).encode()).hexdigest()


def load_config(args) -> dict:
    cfg = {}
    if getattr(args, "config", None):
        cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    return cfg


def require(args, *flags):
    missing = [f"--{f.replace('_', '-')}" for f in flags if getattr(args, f, None) is None]
    if missing:
        raise ValidationError(f"missing required flags: {', '.join(missing)}")


def write_manifest(out_dir, command, cfg, inputs, t0, seed=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "command": command,
        "config_digest": config_digest(cfg),
        "inputs": {str(p): sha256_file(p) for p in inputs if p and Path(p).exists()},
        "seed": seed,
        "elapsed_s": round(time.time() - t0, 3),
    }
    (out_dir / "run_manifest.json").write_text(
        json.dumps(doc, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return doc


def cmd_synth_bank(args):
    t0 = time.time()
    cfg = load_config(args)
    require(args, "out")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    section = dict(cfg.get("synth", {}))
    if "seed" in cfg:
        section["seed"] = int(cfg["seed"])
    syn = SyntheticConfig(**section)
    bank, dataset = make_synthetic(syn)
    bank.config_digest = config_digest(syn.to_json())
    save_bank(bank, out / "bank.gvre")
    dataset.save(out / "dataset.json")
    stats = corpus_stats(bank)
    (out / "corpus_stats.json").write_text(
        json.dumps(stats.to_json(), sort_keys=True, separators=(",", ":")) + "\n",
        encoding="utf-8")
    write_manifest(out, "synth-bank", syn.to_json(), [], t0, seed=syn.seed)
    return 0


def cmd_build_splits(args):
    t0 = time.time()
    cfg = load_config(args)
    require(args, "regime", "dataset", "out")
    dataset = DatasetIndex.load(args.dataset)
    seed = int(cfg.get("seed", 0))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    digest = config_digest(cfg)

    if args.regime == "close":
        split = build_close_split(dataset)
    elif args.regime == "lt":
        split = build_lt_split(dataset, ParetoConfig(**cfg.get("pareto", {
            "max_per_class": 930, "min_per_class": 5})), seed)
    elif args.regime == "open":
        split = build_open_split(dataset, int(cfg.get("n_known", 250)), seed)
    elif args.regime == "cway":
        split = build_cway_split(dataset, int(cfg.get("shot", 5)), seed)
    elif args.regime == "fewshot":
        pools = cfg.get("class_pools") or split_fewshot_classes(
            dataset.class_ids, tuple(cfg.get("pool_fractions", (64, 12, 24))), seed)
        way, shot = int(cfg.get("way", 5)), int(cfg.get("shot", 5))
        episode = build_fewshot_episode(dataset, way, shot, pools["test"], seed)
        split = SplitSpec(regime="fewshot5x5", train=[], val=[], test=[],
                          class_train_counts={}, seed=seed,
                          config={"class_pool": pools["test"], "pools": pools,
                                  "way": way, "shot": shot})
        episode.config_digest = digest
        episode.save(out / "fewshot_episode0.json")
    else:
        raise ValidationError(f"unknown regime {args.regime!r}")

    split.config_digest = digest
    split.save(out / f"{args.regime}.json")
    write_manifest(out, "build-splits", cfg, [args.dataset], t0, seed=seed)
    return 0


def _model_config(bank, cfg):
    model_cfg = dict(cfg.get("model", {}))
    model_cfg.setdefault("dim_base", bank.dim)
    return ModelConfig(**model_cfg)


def cmd_pretrain(args):
    t0 = time.time()
    cfg = load_config(args)
    require(args, "bank", "split", "out")
    bank = load_bank(args.bank)
    split = SplitSpec.load(args.split)
    pre = PretrainConfig(**{**cfg.get("pretrain", {}), "seed": int(cfg.get("seed", 0))})
    run_stage1(bank, split, pre, model_config=_model_config(bank, cfg), out_dir=args.out,
               ckpt_extra={"config_digest": config_digest(cfg),
                           "bank_digest": sha256_file(args.bank)})
    write_manifest(args.out, "pretrain", cfg, [args.bank, args.split], t0, seed=pre.seed)
    return 0


def cmd_select_texts(args):
    t0 = time.time()
    cfg = load_config(args)
    require(args, "bank", "split", "ckpt", "out")
    bank = load_bank(args.bank)
    split = SplitSpec.load(args.split)
    params, _ = load_checkpoint(args.ckpt)
    tsr = TSRConfig(**{**cfg.get("tsr", {}), "seed": int(cfg.get("seed", 0))})
    class_ids = split.known_classes if split.known_classes else None
    salient = select_salient_texts(params, bank, split, tsr, class_ids=class_ids)
    salient.provenance["ckpt_digest"] = sha256_file(args.ckpt)
    salient.provenance["config_digest"] = config_digest(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    salient.save(out / "salient.gvre")
    write_manifest(args.out, "select-texts", cfg, [args.bank, args.split, args.ckpt],
                   t0, seed=tsr.seed)
    return 0


def cmd_train_head(args):
    t0 = time.time()
    cfg = load_config(args)
    require(args, "bank", "split", "ckpt", "salient", "out")
    bank = load_bank(args.bank)
    split = SplitSpec.load(args.split)
    params, _ = load_checkpoint(args.ckpt)
    salient = SalientTextBank.load(args.salient)
    s2 = Stage2Config(**{**cfg.get("stage2", {}), "seed": int(cfg.get("seed", 0))})
    result = run_stage2(bank, split, salient, s2, params, out_dir=args.out)
    result.head.save(Path(args.out) / "head.ckpt", extra={
        "seed": s2.seed, "config_digest": config_digest(cfg),
        "ckpt_digest": sha256_file(args.ckpt),
        "salient_digest": sha256_file(args.salient)})
    write_manifest(args.out, "train-head", cfg,
                   [args.bank, args.split, args.ckpt, args.salient], t0, seed=s2.seed)
    return 0


def cmd_probe(args):
    t0 = time.time()
    cfg = load_config(args)
    require(args, "bank", "split", "ckpt", "out")
    bank = load_bank(args.bank)
    split = SplitSpec.load(args.split)
    params, _ = load_checkpoint(args.ckpt)
    from gvr.head import ProbeConfig  # noqa: PLC0415

    probe = linear_probe(bank, split, params, ProbeConfig(**cfg.get("probe", {})))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    acc = None
    if split.test:
        acc = E.evaluate_linear_probe(bank, split, split.test, params)
    doc = {
        "class_ids": probe.class_ids,
        "weights": probe.weights.tolist(),
        "bias": probe.bias.tolist(),
        "converged": probe.converged,
        "iters": probe.iters,
        "test_top1": acc,
        "config_digest": config_digest(cfg),
    }
    (out / "probe.json").write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")
    write_manifest(args.out, "probe", cfg, [args.bank, args.split, args.ckpt], t0,
                   seed=cfg.get("seed"))
    return 0


def _check_digest_chain(args, salient, head_header):
    problems = []
    want = salient.provenance.get("ckpt_digest")
    if want and want != sha256_file(args.ckpt):
        problems.append("salient bank was selected with a different stage-1 checkpoint")
    if head_header is not None:
        want = head_header.get("salient_digest")
        if want and want != sha256_file(args.salient):
            problems.append("head was trained against a different salient bank")
        want = head_header.get("ckpt_digest")
        if want and want != sha256_file(args.ckpt):
            problems.append("head was trained against a different stage-1 checkpoint")
    if problems and not args.force:
        raise ValidationError("; ".join(problems) + " (pass --force to evaluate anyway)")


def cmd_eval(args):
    t0 = time.time()
    cfg = load_config(args)
    require(args, "regime", "bank", "ckpt", "out")
    bank = load_bank(args.bank)
    params, _ = load_checkpoint(args.ckpt)
    seed = int(cfg.get("seed", 0))
    eval_kwargs = dict(cfg.get("eval", {}))
    if "tsr" in eval_kwargs:
        eval_kwargs["tsr"] = TSRConfig(**eval_kwargs["tsr"])
    if "stage2" in eval_kwargs:
        eval_kwargs["stage2"] = Stage2Config(**eval_kwargs["stage2"])
    ecfg = E.EvalConfig(**eval_kwargs, seed=seed)

    split = SplitSpec.load(args.split) if args.split else None
    dataset = DatasetIndex.load(args.dataset) if args.dataset else None
    head = salient = None
    head_header = None
    if args.regime in ("close", "lt", "open"):
        require(args, "split", "salient", "head")
        salient = SalientTextBank.load(args.salient)
        head, head_header = HeadParams.load(args.head)
        _check_digest_chain(args, salient, head_header)
    elif args.regime in ("fewshot5x5", "fewshotCway"):
        require(args, "dataset")

    report = E.evaluate_regime(args.regime, bank, split, params, head=head,
                               salient=salient, dataset=dataset, cfg=ecfg)
    report.config_digest = config_digest(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.save(out / f"eval_{args.regime}.json")
    E.write_report_csv(report, out / f"eval_{args.regime}.csv")
    write_manifest(args.out, "eval", cfg,
                   [args.bank, args.ckpt, args.split, args.salient, args.head,
                    args.dataset], t0, seed=seed)
    return 0


def cmd_report(args):
    t0 = time.time()
    require(args, "out")
    if not args.inputs:
        raise ValidationError("missing required flags: --inputs")
    reports = [E.EvalReport.load(p) for p in args.inputs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    E.merge_reports(reports, out / "summary.csv")
    write_manifest(args.out, "report", {"inputs": list(args.inputs)}, args.inputs, t0)
    return 0


def cmd_validate_bank(args):
    require(args, "bank")
    bank = load_bank(args.bank)
    print(f"ok: {bank.rows} rows, dim {bank.dim}, {bank.num_classes} classes, "
          f"manifest {manifest_path_for(args.bank).name}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(f"gvr: error: usage: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser():
    parser = _Parser(prog="gvr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, *flags):
        p = sub.add_parser(name)
        p.set_defaults(fn=fn)
        for flag in flags:
            if flag == "seed":
                p.add_argument("--seed", type=int)
            elif flag == "force":
                p.add_argument("--force", action="store_true")
            elif flag == "inputs":
                p.add_argument("--inputs", nargs="+")
            else:
                p.add_argument(f"--{flag.replace('_', '-')}")
        return p

    add("synth-bank", cmd_synth_bank, "config", "out", "seed")
    add("build-splits", cmd_build_splits, "regime", "dataset", "config", "out", "seed")
    add("pretrain", cmd_pretrain, "bank", "split", "config", "out", "seed")
    add("select-texts", cmd_select_texts, "bank", "split", "ckpt", "config", "out", "seed")
    add("train-head", cmd_train_head, "bank", "split", "ckpt", "salient", "config", "out", "seed")
    add("probe", cmd_probe, "bank", "split", "ckpt", "config", "out", "seed")
    add("eval", cmd_eval, "regime", "bank", "split", "ckpt", "salient", "head",
        "dataset", "config", "out", "seed", "force")
    add("report", cmd_report, "inputs", "out")
    add("validate-bank", cmd_validate_bank, "bank")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except ValidationError as exc:
        print(f"gvr: error: validation: {exc}", file=sys.stderr)
        return 2
    except GvrError as exc:
        print(f"gvr: error: {exc.kind}: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"gvr: error: missing-file: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
