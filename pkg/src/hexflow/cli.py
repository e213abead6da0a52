"""Command-line surface: one binary, one subcommand per pipeline stage.

Heavy imports happen inside the handlers so that --threads can cap the BLAS
pools before NumPy first loads.  Settings resolve as: explicit flag, then
config-file entry, then built-in default.

Exit codes: 0 success, 1 runtime failure, 2 usage error (including missing
input files).
"""

from __future__ import annotations

import argparse
import os
import sys

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def read_config_file(path: str) -> dict[str, str]:
    """key=value lines; blank lines and # comments ignored."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


class Settings:
    """Flag > config file > default, uniformly for every option."""

    def __init__(self, args: argparse.Namespace, config: dict[str, str]):
        self._args = vars(args)
        self._config = config
        self.resolved: dict[str, object] = {}

    def get(self, key: str, default=None, conv=None):
        value = self._args.get(key)
        if value is None:
            raw = self._config.get(key)
            if raw is None:
                value = default
            elif conv is bool:
                value = _parse_bool(raw)
            elif conv is not None:
                value = conv(raw)
            else:
                value = raw
        self.resolved[key] = value
        return value

    def echo(self, stream=None):
        # resolve the stream at call time so redirection works
        stream = sys.stdout if stream is None else stream
        for key in sorted(self.resolved):
            print(f"  {key} = {self.resolved[key]}", file=stream)


def _require_file(path: str, what: str) -> bool:
    if path is None:
        print(f"error: missing required {what}", file=sys.stderr)
        return False
    if not os.path.exists(path):
        print(f"error: {what} not found: {path}", file=sys.stderr)
        return False
    return True


def _model_config_for(settings: Settings, n_packets: int, row_length: int):
    from .model import ModelConfig

    scale = settings.get("scale", "desk")
    base = ModelConfig.paper_scale if scale == "paper" else ModelConfig.desk
    overrides = {}
    for key in ("embed_dim", "n_layers", "n_heads", "mlp_hidden"):
        value = settings.get(key, None, conv=int)
        if value is not None:
            overrides[key] = value
    return base(n_packets=n_packets, row_length=row_length, **overrides)


def parse_packet_policy(text: str, seed: int):
    """first:K keeps arrival order; rand:KofM samples K of the first M."""
    from .ingest import FirstK, RandomKofFirstM

    kind, _, rest = text.partition(":")
    try:
        if kind == "first":
            return FirstK(int(rest))
        if kind == "rand":
            k_text, _, m_text = rest.partition("of")
            return RandomKofFirstM(int(k_text), int(m_text), seed)
    except ValueError:
        pass
    raise ValueError(f"bad packet policy {text!r}; use first:K or rand:KofM")


# --- subcommand handlers ---

def cmd_preprocess(args, settings: Settings) -> int:
    import numpy as np

    from . import ingest, tokenizer

    pcap_path = settings.get("pcap")
    out_path = settings.get("out")
    labels_path = settings.get("labels")
    hex_out = settings.get("hex_out")
    n_packets = settings.get("n_packets", 5, conv=int)
    row_length = settings.get("row_length", 32, conv=int)
    policy_text = settings.get("packets", "first:5")
    seed = settings.get("seed", 0, conv=int)
    if not _require_file(pcap_path, "pcap file"):
        return EXIT_USAGE
    if labels_path is not None and not _require_file(labels_path, "label file"):
        return EXIT_USAGE
    if out_path is None:
        print("error: --out is required", file=sys.stderr)
        return EXIT_USAGE
    print("resolved configuration:")
    settings.echo()

    label_map = ingest.read_label_file(labels_path) if labels_path else {}
    packets = ingest.read_pcap(pcap_path)
    flows, stats = ingest.segment_flows_with_stats(packets)
    grids = []
    labels = []
    hex_rows = []
    for index, flow in enumerate(flows):
        policy = parse_packet_policy(policy_text, seed)
        if hasattr(policy, "m"):
            per_flow_seed = int(np.random.SeedSequence((seed, index)).generate_state(1)[0])
            policy = type(policy)(policy.k, policy.m, per_flow_seed)
        chosen = ingest.select_packets(flow, policy)
        payloads = [p.data for p in chosen]
        label = label_map.get(flow.key.key_string(), -1)
        grid = tokenizer.build_token_grid(payloads, n_packets, row_length, label)
        grids.append(grid.ids)
        labels.append(label)
        if hex_out:
            hex_rows.append((label, payloads))
    if not grids:
        print("error: no flows admitted from the capture", file=sys.stderr)
        return EXIT_FAILURE
    dataset = tokenizer.TokenDataset(
        np.stack(grids), np.asarray(labels, dtype=np.int32)
    )
    tokenizer.write_token_dataset(out_path, dataset)
    if hex_out:
        ingest.write_hex_flows(hex_out, hex_rows)
    print(f"packets read:        {stats.packets_total}")
    print(f"packets admitted:    {stats.packets_kept}")
    print(f"dropped non-ipv4:    {stats.dropped_non_ipv4}")
    print(f"dropped non-tcp-udp: {stats.dropped_non_tcp_udp}")
    print(f"dropped malformed:   {stats.dropped_malformed}")
    print(f"flows:               {len(flows)}")
    print(f"records written:     {len(dataset)} -> {out_path}")
    return EXIT_OK


def cmd_synth(args, settings: Settings) -> int:
    from . import synth
    from .tokenizer import write_token_dataset
    from .ingest import write_label_file

    mode = settings.get("mode", "tokens")
    out_path = settings.get("out")
    spec = synth.SyntheticSpec(
        class_count=settings.get("classes", 4, conv=int),
        flows_per_class=settings.get("flows_per_class", 60, conv=int),
        packets_min=settings.get("packets_min", 5, conv=int),
        packets_max=settings.get("packets_max", 8, conv=int),
        payload_min=settings.get("payload_min", 40, conv=int),
        payload_max=settings.get("payload_max", 120, conv=int),
        motif_len=settings.get("motif_len", 6, conv=int),
        noise_rate=settings.get("noise", 0.05, conv=float),
        seed=settings.get("seed", 0, conv=int),
    )
    if out_path is None:
        print("error: --out is required", file=sys.stderr)
        return EXIT_USAGE
    print("resolved configuration:")
    settings.echo()
    if mode == "pcap":
        labels_path = settings.get("labels", out_path + ".labels")
        data, labels = synth.generate_pcap(spec)
        with open(out_path, "wb") as fh:
            fh.write(data)
        write_label_file(labels_path, labels)
        print(f"wrote {len(data)} pcap bytes, {len(labels)} labeled flows")
        return EXIT_OK
    if mode == "tokens":
        n_packets = settings.get("n_packets", 5, conv=int)
        row_length = settings.get("row_length", 32, conv=int)
        dataset = synth.generate_token_dataset(spec, n_packets, row_length)
        test_fraction = settings.get("test_fraction", None, conv=float)
        if test_fraction:
            train, test = synth.split_dataset(
                dataset, test_fraction, seed=spec.seed
            )
            write_token_dataset(out_path + ".train", train)
            write_token_dataset(out_path + ".test", test)
            print(f"wrote {len(train)} train / {len(test)} test records")
        else:
            write_token_dataset(out_path, dataset)
            print(f"wrote {len(dataset)} records -> {out_path}")
        return EXIT_OK
    print(f"error: unknown synth mode {mode!r}", file=sys.stderr)
    return EXIT_USAGE


def _load_dataset(path: str):
    from .tokenizer import read_token_dataset

    return read_token_dataset(path)


def cmd_pretrain(args, settings: Settings) -> int:
    import numpy as np

    from . import trainer
    from .model import init_params

    data_path = settings.get("data")
    if not _require_file(data_path, "dataset"):
        return EXIT_USAGE
    out_path = settings.get("out")
    resume_path = settings.get("resume")
    if resume_path is not None and not _require_file(resume_path, "checkpoint"):
        return EXIT_USAGE
    no_freeze = settings.get("no_freeze", False, conv=bool)
    freeze_patterns = settings.get("freeze", None)
    if no_freeze:
        patterns = ()
    elif freeze_patterns:
        patterns = tuple(p for p in freeze_patterns.split(",") if p)
    else:
        patterns = trainer.DEFAULT_PRETRAIN_FREEZE
    dataset = _load_dataset(data_path)
    model_config = _model_config_for(settings, dataset.n_packets, dataset.row_length)
    train_config = trainer.TrainConfig(
        stage="pretrain",
        steps=settings.get("steps", 200, conv=int),
        batch_size=settings.get("batch_size", 32, conv=int),
        learning_rate=settings.get("lr", 2e-5, conv=float),
        weight_decay=settings.get("weight_decay", 0.01, conv=float),
        freeze_patterns=patterns,
        seed=settings.get("seed", 0, conv=int),
        warmup_steps=settings.get("warmup", 0, conv=int),
        mask_ratio=settings.get("mask_ratio", 0.15, conv=float),
        alpha=settings.get("alpha", 0.2, conv=float),
        beta=settings.get("beta", 0.2, conv=float),
        log_every=settings.get("log_every", 10, conv=int),
    )
    print("resolved configuration:")
    settings.echo()
    print(f"model: {model_config.to_dict()}")

    if resume_path is not None:
        ckpt = trainer.load_checkpoint(resume_path, expect_config=model_config)
        params = ckpt.params
        opt_state = ckpt.opt_state
        rng = trainer.restore_rng(ckpt.rng_state) if ckpt.rng_state else None
        start_step = ckpt.step
    else:
        params = init_params(model_config, seed=train_config.seed)
        opt_state = None
        rng = None
        start_step = 0
    result = trainer.run_pretraining(
        params, model_config, train_config, dataset,
        opt_state=opt_state, rng=rng, start_step=start_step,
        metrics_path=settings.get("metrics"),
    )
    if result.trace:
        first, last = result.trace[0], result.trace[-1]
        print(f"step {start_step}: total={first.total:.4f} "
              f"(mfp={first.mfp:.4f} prpp={first.prpp:.4f} fcl={first.fcl:.4f})")
        print(f"step {train_config.steps - 1}: total={last.total:.4f} "
              f"(mfp={last.mfp:.4f} prpp={last.prpp:.4f} fcl={last.fcl:.4f})")
    if out_path:
        trainer.save_checkpoint(out_path, params, model_config, result.opt_state,
                                train_config, result.rng, step=train_config.steps)
        print(f"checkpoint -> {out_path}")
    return EXIT_OK


def _warm_start(params: dict, source: dict) -> int:
    """Copy matching tensors from a source checkpoint; returns copy count."""
    import numpy as np

    copied = 0
    for name, arr in source.items():
        if name in params and params[name].shape == arr.shape:
            params[name] = np.array(arr, dtype=params[name].dtype)
            copied += 1
    return copied


def cmd_finetune(args, settings: Settings) -> int:
    from . import trainer
    from .model import init_params

    data_path = settings.get("data")
    if not _require_file(data_path, "dataset"):
        return EXIT_USAGE
    init_path = settings.get("init")
    if init_path is not None and not _require_file(init_path, "checkpoint"):
        return EXIT_USAGE
    dataset = _load_dataset(data_path)
    n_classes = settings.get("classes", None, conv=int)
    if n_classes is None:
        n_classes = int(dataset.labels.max()) + 1
    if dataset.labels.min() < 0:
        print("error: fine-tuning needs labeled flows (found label -1)",
              file=sys.stderr)
        return EXIT_FAILURE
    freeze_patterns = settings.get("freeze", None)
    patterns = tuple(p for p in freeze_patterns.split(",") if p) if freeze_patterns else ()
    train_config = trainer.TrainConfig(
        stage="finetune",
        steps=settings.get("steps", 300, conv=int),
        batch_size=settings.get("batch_size", 64, conv=int),
        learning_rate=settings.get("lr", 2e-5, conv=float),
        weight_decay=settings.get("weight_decay", 0.01, conv=float),
        freeze_patterns=patterns,
        seed=settings.get("seed", 0, conv=int),
        warmup_steps=settings.get("warmup", 0, conv=int),
        mask_aware_pool=settings.get("mask_aware_pool", False, conv=bool),
        log_every=settings.get("log_every", 10, conv=int),
    )
    print("resolved configuration:")
    settings.echo()

    if init_path is not None:
        ckpt = trainer.load_checkpoint(init_path)
        model_config = ckpt.model_config
        if (model_config.n_packets, model_config.row_length) != (
            dataset.n_packets, dataset.row_length
        ):
            print("error: checkpoint grid shape does not match the dataset",
                  file=sys.stderr)
            return EXIT_FAILURE
        params = init_params(model_config, seed=train_config.seed,
                             n_classes=n_classes)
        copied = _warm_start(params, ckpt.params)
        print(f"warm start: {copied} tensors from {init_path}")
    else:
        model_config = _model_config_for(settings, dataset.n_packets,
                                         dataset.row_length)
        params = init_params(model_config, seed=train_config.seed,
                             n_classes=n_classes)
    print(f"model: {model_config.to_dict()}  classes: {n_classes}")
    result = trainer.run_finetune(
        params, model_config, train_config, dataset,
        metrics_path=settings.get("metrics"),
    )
    if result.trace:
        print(f"loss: first={result.trace[0].total:.4f} "
              f"last={result.trace[-1].total:.4f}")
    out_path = settings.get("out")
    if out_path:
        trainer.save_checkpoint(out_path, params, model_config, result.opt_state,
                                train_config, result.rng, step=train_config.steps)
        print(f"checkpoint -> {out_path}")
    eval_path = settings.get("eval_data")
    if eval_path:
        if not _require_file(eval_path, "evaluation dataset"):
            return EXIT_USAGE
        from .finetune import evaluate

        report = evaluate(params, model_config, _load_dataset(eval_path),
                          n_classes,
                          batch_size=train_config.batch_size,
                          mask_aware=train_config.mask_aware_pool)
        print(f"eval accuracy={report.accuracy:.4f} macro_f1={report.macro_f1:.4f}")
    return EXIT_OK


def cmd_evaluate(args, settings: Settings) -> int:
    from . import trainer
    from .finetune import evaluate

    data_path = settings.get("data")
    ckpt_path = settings.get("ckpt")
    if not _require_file(data_path, "dataset") or not _require_file(ckpt_path, "checkpoint"):
        return EXIT_USAGE
    print("resolved configuration:")
    settings.echo()
    ckpt = trainer.load_checkpoint(ckpt_path)
    if "cls_head.out.b" not in ckpt.params:
        print("error: checkpoint has no classifier head; fine-tune first",
              file=sys.stderr)
        return EXIT_FAILURE
    n_classes = ckpt.params["cls_head.out.b"].shape[0]
    dataset = _load_dataset(data_path)
    report = evaluate(
        ckpt.params, ckpt.model_config, dataset, n_classes,
        batch_size=settings.get("batch_size", 32, conv=int),
        mask_aware=settings.get("mask_aware_pool", False, conv=bool),
    )
    print(report.to_text())
    report_path = settings.get("report")
    if report_path:
        with open(report_path, "w", encoding="utf-8") as fh:
            fh.write(report.to_text())
    kv_path = settings.get("kv")
    if kv_path:
        with open(kv_path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(report.to_kv_lines()) + "\n")
    return EXIT_OK


def cmd_gradcheck(args, settings: Settings) -> int:
    from . import trainer
    from .model import ModelConfig

    scale = settings.get("scale", "desk")
    overrides = {}
    for key in ("n_packets", "row_length", "embed_dim", "n_layers", "n_heads",
                "mlp_hidden"):
        value = settings.get(key, None, conv=int)
        if value is not None:
            overrides[key] = value
    base = ModelConfig.paper_scale if scale == "paper" else ModelConfig.desk
    model_config = base(**overrides)
    freeze_text = settings.get("freeze", None)
    patterns = tuple(p for p in freeze_text.split(",") if p) if freeze_text else ()
    print("resolved configuration:")
    settings.echo()
    report = trainer.audit_pretrain_gradients(
        model_config,
        h=settings.get("h", 1e-5, conv=float),
        seed=settings.get("seed", 0, conv=int),
        batch_size=settings.get("batch_size", 3, conv=int),
        alpha=settings.get("alpha", 0.2, conv=float),
        beta=settings.get("beta", 0.2, conv=float),
        freeze_patterns=patterns,
        entries_per_param=settings.get("entries", 4, conv=int),
    )
    print(report.to_text())
    tol = settings.get("tol", None, conv=float)
    if tol is not None and report.max_rel_err >= tol:
        print(f"FAIL: max relative error {report.max_rel_err:.3e} >= {tol:g}",
              file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def cmd_benchmark(args, settings: Settings) -> int:
    from . import backend, bench
    from .model import ModelConfig

    scale = settings.get("scale", "desk")
    overrides = {}
    for key in ("n_packets", "row_length", "embed_dim", "n_heads"):
        value = settings.get(key, None, conv=int)
        if value is not None:
            overrides[key] = value
    base = ModelConfig.paper_scale if scale == "paper" else ModelConfig.desk
    model_config = base(**overrides)
    print("resolved configuration:")
    settings.echo()
    print(f"active attention backend: {backend.backend_name()} "
          f"(available: {', '.join(backend.available_backends())})")
    result = bench.benchmark_attention(
        model_config,
        batch_size=settings.get("batch", 4, conv=int),
        repeats=settings.get("repeats", 5, conv=int),
        seed=settings.get("seed", 0, conv=int),
    )
    print(result.to_text())
    if settings.get("kernels", False, conv=bool):
        kb = bench.benchmark_kernels(
            rows=settings.get("rows", 64, conv=int),
            seq=settings.get("seq", 64, conv=int),
            heads=model_config.n_heads,
            head_dim=max(model_config.embed_dim // model_config.n_heads, 8),
            repeats=settings.get("repeats", 5, conv=int),
            seed=settings.get("seed", 0, conv=int),
        )
        print(kb.to_text())
    return EXIT_OK


# --- parser wiring ---

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hexflow",
        description="Encrypted-traffic flow classification: pcap ingestion, "
                    "bigram tokenization, two-level attention encoder, "
                    "self-supervised pre-training, fine-tuning.",
    )
    parser.add_argument("--config", help="key=value settings file")
    parser.add_argument("--threads", type=int,
                        help="cap BLAS/OpenMP thread pools")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add(name, handler, help_text, flags):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(handler=handler)
        for flag, kwargs in flags:
            p.add_argument(flag, **kwargs)
        return p

    intf = {"type": int}
    floatf = {"type": float}
    boolf = {"action": argparse.BooleanOptionalAction, "default": None}

    add("preprocess", cmd_preprocess, "pcap -> token dataset", [
        ("--pcap", {}), ("--out", {}), ("--labels", {}), ("--hex-out", {}),
        ("--n-packets", dict(intf)), ("--row-length", dict(intf)),
        ("--packets", {"help": "first:K or rand:KofM"}),
        ("--seed", dict(intf)),
    ])
    add("synth", cmd_synth, "generate labeled synthetic traffic", [
        ("--mode", {"choices": ["pcap", "tokens"]}), ("--out", {}),
        ("--labels", {}), ("--classes", dict(intf)),
        ("--flows-per-class", dict(intf)), ("--packets-min", dict(intf)),
        ("--packets-max", dict(intf)), ("--payload-min", dict(intf)),
        ("--payload-max", dict(intf)), ("--motif-len", dict(intf)),
        ("--noise", dict(floatf)), ("--seed", dict(intf)),
        ("--n-packets", dict(intf)), ("--row-length", dict(intf)),
        ("--test-fraction", dict(floatf)),
    ])
    add("pretrain", cmd_pretrain, "three-task self-supervised training", [
        ("--data", {}), ("--out", {}), ("--metrics", {}), ("--resume", {}),
        ("--steps", dict(intf)), ("--batch-size", dict(intf)),
        ("--lr", dict(floatf)), ("--weight-decay", dict(floatf)),
        ("--alpha", dict(floatf)), ("--beta", dict(floatf)),
        ("--mask-ratio", dict(floatf)), ("--warmup", dict(intf)),
        ("--freeze", {"help": "comma-separated parameter globs"}),
        ("--no-freeze", dict(boolf)), ("--seed", dict(intf)),
        ("--scale", {"choices": ["desk", "paper"]}),
        ("--embed-dim", dict(intf)), ("--n-layers", dict(intf)),
        ("--n-heads", dict(intf)), ("--mlp-hidden", dict(intf)),
        ("--log-every", dict(intf)),
    ])
    add("finetune", cmd_finetune, "supervised classification training", [
        ("--data", {}), ("--init", {}), ("--out", {}), ("--metrics", {}),
        ("--eval-data", {}), ("--classes", dict(intf)),
        ("--steps", dict(intf)), ("--batch-size", dict(intf)),
        ("--lr", dict(floatf)), ("--weight-decay", dict(floatf)),
        ("--warmup", dict(intf)), ("--freeze", {}),
        ("--mask-aware-pool", dict(boolf)), ("--seed", dict(intf)),
        ("--scale", {"choices": ["desk", "paper"]}),
        ("--embed-dim", dict(intf)), ("--n-layers", dict(intf)),
        ("--n-heads", dict(intf)), ("--mlp-hidden", dict(intf)),
        ("--log-every", dict(intf)),
    ])
    add("evaluate", cmd_evaluate, "metrics report from a checkpoint", [
        ("--data", {}), ("--ckpt", {}), ("--report", {}), ("--kv", {}),
        ("--batch-size", dict(intf)), ("--mask-aware-pool", dict(boolf)),
    ])
    add("gradcheck", cmd_gradcheck, "finite-difference gradient audit", [
        ("--scale", {"choices": ["desk", "paper"]}), ("--h", dict(floatf)),
        ("--entries", dict(intf)), ("--batch-size", dict(intf)),
        ("--seed", dict(intf)), ("--tol", dict(floatf)),
        ("--alpha", dict(floatf)), ("--beta", dict(floatf)),
        ("--freeze", {}), ("--n-packets", dict(intf)),
        ("--row-length", dict(intf)), ("--embed-dim", dict(intf)),
        ("--n-layers", dict(intf)), ("--n-heads", dict(intf)),
        ("--mlp-hidden", dict(intf)),
    ])
    add("benchmark", cmd_benchmark, "attention cost: analytic and measured", [
        ("--scale", {"choices": ["desk", "paper"]}),
        ("--n-packets", dict(intf)), ("--row-length", dict(intf)),
        ("--embed-dim", dict(intf)), ("--n-heads", dict(intf)),
        ("--batch", dict(intf)), ("--repeats", dict(intf)),
        ("--seed", dict(intf)), ("--kernels", dict(boolf)),
        ("--rows", dict(intf)), ("--seq", dict(intf)),
    ])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be positive", file=sys.stderr)
            return EXIT_USAGE
        if "numpy" in sys.modules:
            print("note: numpy already loaded; --threads may not take effect",
                  file=sys.stderr)
        for var in _THREAD_VARS:
            os.environ[var] = str(args.threads)
    config: dict[str, str] = {}
    if args.config is not None:
        if not _require_file(args.config, "config file"):
            return EXIT_USAGE
        try:
            config = read_config_file(args.config)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_USAGE

    from .errors import HexflowError

    settings = Settings(args, config)
    try:
        return args.handler(args, settings)
    except HexflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
