"""Command-line surface: gen | detect | sweep | verify | attack.

Experiments are described by a JSON config (diffable artifacts); flags only
carry paths and suite selection. Exit codes: 2 config error, 3 solver
non-convergence, 4 stream/score-matrix mismatch, 5 verification failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .harness import (
    CSV_HEADER,
    AttackConfig,
    DirichletIID,
    MarkovChain,
    SourceConfig,
    SpikeIID,
    attack as run_attack,
    detect_for_scheme,
    generate,
    sweep as run_sweep,
)
from .schemes import (
    CorrelatedChannel,
    Gumbel,
    HeavyWater,
    RedGreen,
    SchemeConfig,
    SimplexWater,
    TiltConfig,
)
from .scores import (
    ScoreFamily,
    ScoreMatrix,
    load_score_matrix,
    qary_simplex_score,
    random_score,
    save_score_matrix,
    simplex_score,
)
from .sideinfo import SideInfoConfig
from .sinkhorn import NonConvergenceError, SinkhornConfig

EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_MISMATCH = 4
EXIT_VERIFY = 5


class ConfigError(ValueError):
    pass


def _require_keys(obj: dict, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def _get(obj: dict, key: str, where: str, default=None, required=False):
    if key not in obj:
        if required:
            raise ConfigError(f"{where}.{key}: required field is missing")
        return default
    return obj[key]


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def parse_source(obj: dict) -> SourceConfig:
    _require_keys(obj, {"kind", "m", "seed", "lam", "alpha", "temperature"}, "source")
    kind = _get(obj, "kind", "source", required=True)
    m = int(_get(obj, "m", "source", required=True))
    seed = int(_get(obj, "seed", "source", default=0))
    if kind == "spike":
        lam = float(_get(obj, "lam", "source", required=True))
        _check(0.5 <= lam < 1.0, f"source.lam: must be in [0.5, 1), got {lam}")
        return SourceConfig(SpikeIID(lam), m=m, seed=seed)
    if kind == "dirichlet":
        alpha = float(_get(obj, "alpha", "source", default=0.3))
        temperature = float(_get(obj, "temperature", "source", default=1.0))
        _check(alpha > 0, "source.alpha: must be positive")
        _check(temperature > 0, "source.temperature: must be positive")
        return SourceConfig(DirichletIID(alpha, temperature), m=m, seed=seed)
    if kind == "markov":
        return SourceConfig(MarkovChain(), m=m, seed=seed)
    raise ConfigError(f"source.kind: unknown kind {kind!r}")


def parse_family(obj: dict, where: str) -> ScoreFamily:
    _require_keys(obj, {"name", "a", "b", "normalize"}, where)
    name = _get(obj, "name", where, required=True)
    try:
        return ScoreFamily(
            name,
            float(_get(obj, "a", where, default=0.0 if name != "gamma" else 1.0)),
            float(_get(obj, "b", where, default=1.0)),
            bool(_get(obj, "normalize", where, default=True)),
        )
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_score(obj: dict, m: int) -> ScoreMatrix:
    _require_keys(obj, {"kind", "q", "k", "family", "seed"}, "score")
    kind = _get(obj, "kind", "score", required=True)
    if kind == "simplex":
        return simplex_score(m)
    if kind == "qary":
        return qary_simplex_score(m, int(_get(obj, "q", "score", required=True)))
    if kind == "random":
        k = int(_get(obj, "k", "score", default=1024))
        family = parse_family(_get(obj, "family", "score", default={"name": "lognormal"}), "score.family")
        seed = int(_get(obj, "seed", "score", default=0))
        return random_score(m, k, family, seed)
    raise ConfigError(f"score.kind: unknown kind {kind!r}")


def parse_sinkhorn(obj: dict) -> SinkhornConfig:
    _require_keys(obj, {"epsilon", "tol", "max_iters"}, "sinkhorn")
    try:
        return SinkhornConfig(
            epsilon=float(_get(obj, "epsilon", "sinkhorn", default=0.05)),
            tol=float(_get(obj, "tol", "sinkhorn", default=1e-5)),
            max_iters=int(_get(obj, "max_iters", "sinkhorn", default=10_000)),
        )
    except ValueError as exc:
        raise ConfigError(f"sinkhorn: {exc}") from exc


def parse_scheme(obj: dict, sinkhorn: SinkhornConfig) -> SchemeConfig:
    _require_keys(
        obj, {"variant", "delta", "top_p", "gamma", "delta_rg", "k", "family", "seed"}, "scheme"
    )
    variant_name = _get(obj, "variant", "scheme", required=True)
    delta = float(_get(obj, "delta", "scheme", default=0.0))
    top_p = float(_get(obj, "top_p", "scheme", default=0.999))
    try:
        tilt = TiltConfig(delta)
        if variant_name == "simplex":
            variant = SimplexWater()
        elif variant_name == "heavy":
            family = parse_family(
                _get(obj, "family", "scheme", default={"name": "lognormal"}), "scheme.family"
            )
            variant = HeavyWater(family=family, k=int(_get(obj, "k", "scheme", default=1024)))
        elif variant_name == "red-green":
            variant = RedGreen(
                gamma=float(_get(obj, "gamma", "scheme", default=0.5)),
                delta_rg=float(_get(obj, "delta_rg", "scheme", default=1.0)),
            )
        elif variant_name == "gumbel":
            variant = Gumbel()
        elif variant_name == "correlated-channel":
            variant = CorrelatedChannel(k=int(_get(obj, "k", "scheme", default=2)))
        else:
            raise ConfigError(f"scheme.variant: unknown variant {variant_name!r}")
        return SchemeConfig(variant=variant, tilt=tilt, top_p=top_p, sinkhorn=sinkhorn)
    except ValueError as exc:
        raise ConfigError(f"scheme: {exc}") from exc


def parse_sideinfo(obj: dict, default_k: int) -> SideInfoConfig:
    _require_keys(obj, {"scheme", "key", "k", "window"}, "sideinfo")
    try:
        return SideInfoConfig(
            key=int(_get(obj, "key", "sideinfo", default="1")),
            k=int(_get(obj, "k", "sideinfo", default=default_k)),
            scheme=_get(obj, "scheme", "sideinfo", default="fresh"),
            window=int(_get(obj, "window", "sideinfo", default=1)),
        )
    except ValueError as exc:
        raise ConfigError(f"sideinfo: {exc}") from exc


TOP_LEVEL_KEYS = {"source", "score", "scheme", "sideinfo", "sinkhorn", "detect", "sweep", "gen"}


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")
    _require_keys(obj, TOP_LEVEL_KEYS, "config")
    return obj


def build_score_matrix(scheme: SchemeConfig, source: SourceConfig, cfg: dict) -> ScoreMatrix | None:
    """Score matrix for a scheme: explicit config section when present,
    otherwise the scheme's natural table (simplex code / random heavy-tailed);
    baselines carry no matrix."""
    variant = scheme.variant
    if isinstance(variant, SimplexWater):
        return parse_score(cfg.get("score", {"kind": "simplex"}), source.m)
    if isinstance(variant, HeavyWater):
        score_cfg = cfg.get(
            "score",
            {"kind": "random", "k": variant.k, "family": {"name": variant.family.name}},
        )
        return parse_score(score_cfg, source.m)
    return None


class Experiment:
    """Parsed experiment: source, scheme, score matrix, and side stream setup."""

    def __init__(self, cfg: dict):
        self.source = parse_source(cfg.get("source", {"kind": "spike", "m": 64, "lam": 0.7}))
        sinkhorn = parse_sinkhorn(cfg.get("sinkhorn", {}))
        self.scheme = parse_scheme(cfg.get("scheme", {"variant": "simplex"}), sinkhorn)
        self.score = build_score_matrix(self.scheme, self.source, cfg)
        default_k = self.score.k if self.score is not None else 1
        if isinstance(self.scheme.variant, CorrelatedChannel):
            default_k = self.scheme.variant.k
        self.side = parse_sideinfo(cfg.get("sideinfo", {}), default_k)
        detect_cfg = cfg.get("detect", {})
        _require_keys(detect_cfg, {"p_star"}, "detect")
        self.p_star = float(_get(detect_cfg, "p_star", "detect", default=1e-3))
        gen_cfg = cfg.get("gen", {})
        _require_keys(gen_cfg, {"n", "sequences", "seed"}, "gen")
        self.n = int(_get(gen_cfg, "n", "gen", default=300))
        self.sequences = int(_get(gen_cfg, "sequences", "gen", default=1))
        self.seed = int(_get(gen_cfg, "seed", "gen", default=0))
        if self.score is not None and self.side.k != self.score.k:
            raise ConfigError(
                f"sideinfo.k: must equal the score alphabet {self.score.k}, got {self.side.k}"
            )


def cmd_gen(args) -> int:
    cfg = load_config(args.config)
    exp = Experiment(cfg)
    records = []
    for i in range(exp.sequences):
        result = generate(
            exp.source, exp.scheme, exp.score, exp.side, exp.n, seed=exp.seed + i
        )
        records.append(
            {
                "tokens": result.tokens,
                "scheme": exp.scheme.variant.name,
                "side_cfg": exp.side.to_json(),
                "seed": exp.seed + i,
                "n": exp.n,
                "m": exp.source.m,
            }
        )
    with open(args.out, "w") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")
    if exp.score is not None:
        save_score_matrix(exp.score, args.scores or args.out + ".scores")
    return 0


def _read_stream(path: str) -> list[dict]:
    records = []
    try:
        with open(path) as fh:
            for line_no, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{line_no}: invalid JSON record: {exc}") from exc
                if "tokens" not in record:
                    raise ValueError(f"{path}:{line_no}: record has no 'tokens' field")
                records.append(record)
    except OSError as exc:
        raise ValueError(f"cannot read stream {path}: {exc}") from exc
    return records


def cmd_detect(args) -> int:
    cfg = load_config(args.config)
    exp = Experiment(cfg)
    try:
        records = _read_stream(args.stream)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    score = exp.score
    if args.scores:
        try:
            score = load_score_matrix(args.scores)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_MISMATCH
        if exp.score is not None and (
            score.m != exp.score.m or score.kind.tag != exp.score.kind.tag
        ):
            print(
                f"error: score sidecar (m={score.m}, kind={score.kind.tag}) does not match "
                f"the config (m={exp.score.m}, kind={exp.score.kind.tag})",
                file=sys.stderr,
            )
            return EXIT_MISMATCH
    reports = []
    for record in records:
        side = SideInfoConfig.from_json(record["side_cfg"]) if "side_cfg" in record else exp.side
        report = detect_for_scheme(
            exp.scheme, record["tokens"], score, side, exp.source.m, exp.p_star
        )
        reports.append(report.to_json())
    payload = json.dumps(reports, indent=2)
    if args.json:
        with open(args.json, "w") as fh:
            fh.write(payload + "\n")
    else:
        print(payload)
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    sweep_cfg = cfg.get("sweep", {})
    _require_keys(
        sweep_cfg, {"schemes", "deltas", "n", "trials", "seed", "p_star"}, "sweep"
    )
    schemes = _get(sweep_cfg, "schemes", "sweep", default=["simplex"])
    deltas = [float(d) for d in _get(sweep_cfg, "deltas", "sweep", default=[0.0])]
    n = int(_get(sweep_cfg, "n", "sweep", default=300))
    trials = int(_get(sweep_cfg, "trials", "sweep", default=200))
    seed = int(_get(sweep_cfg, "seed", "sweep", default=0))
    p_star = float(_get(sweep_cfg, "p_star", "sweep", default=1e-3))
    source = parse_source(cfg.get("source", {"kind": "spike", "m": 64, "lam": 0.7}))
    sinkhorn = parse_sinkhorn(cfg.get("sinkhorn", {}))
    side = parse_sideinfo(cfg.get("sideinfo", {}), default_k=1)
    cells = []
    for name in schemes:
        scheme_obj = dict(cfg.get("scheme", {}))
        scheme_obj["variant"] = name
        base = parse_scheme(scheme_obj, sinkhorn)
        matrix = build_score_matrix(base, source, cfg)
        for delta in deltas:
            cells.append((name, base.with_delta(delta), matrix))
    workers = args.threads or int(os.environ.get("LOWTIDE_THREADS", "1"))
    rows = run_sweep(
        cells, source, side, n=n, trials=trials, master_seed=seed, p_star=p_star,
        workers=workers,
    )
    lines = [CSV_HEADER] + [row.csv_line() for row in rows]
    with open(args.out, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return 0


def _verify_plotkin() -> list[dict]:
    from .theory import verify_plotkin_equality

    certificates = []
    for m, lam, gap, bound, slack in verify_plotkin_equality():
        certificates.append(
            {
                "name": f"plotkin-equality m={m} lam={lam}",
                "value": float(gap),
                "expected": float(bound),
                "tolerance": 0.0,
                "passed": bool(slack == 0),
            }
        )
    return certificates


def _verify_tail() -> list[dict]:
    from .scores import gamma_family, gaussian_family, gumbel_family, lognormal_family
    from .theory import tail_integral

    gauss = tail_integral(gaussian_family(), 0.5, seed=11)
    oracle = float(1.0 / np.sqrt(np.pi))
    certificates = [
        {
            "name": "tail-integral gaussian lam=0.5 vs 1/sqrt(pi)",
            "value": gauss.value,
            "expected": oracle,
            "tolerance": 0.01,
            "passed": bool(abs(gauss.value - oracle) <= 0.01),
        }
    ]
    deep = 0.97
    values = {
        name: tail_integral(fam, deep, seed=13, normalize=True).value
        for name, fam in (
            ("lognormal", lognormal_family()),
            ("gamma", gamma_family()),
            ("gumbel", gumbel_family()),
        )
    }
    certificates.append(
        {
            "name": f"deep-tail ordering lam={deep}: lognormal, gamma above gumbel",
            "value": float(min(values["lognormal"], values["gamma"]) - values["gumbel"]),
            "expected": 0.0,
            "tolerance": 0.0,
            "passed": bool(
                values["lognormal"] > values["gumbel"] and values["gamma"] > values["gumbel"]
            ),
        }
    )
    return certificates


def _verify_gumbel() -> list[dict]:
    from .verification import gumbel_argmax_concentration

    fractions = gumbel_argmax_concentration(k_grid=(100, 1000, 10_000), seeds=3)
    increasing = all(b > a for a, b in zip(fractions, fractions[1:]))
    return [
        {
            "name": "gumbel-as-ot argmax concentration (k grid 1e2..1e4)",
            "value": float(fractions[-1]),
            "expected": 0.85,
            "tolerance": 0.0,
            "passed": bool(fractions[-1] >= 0.85 and increasing),
        }
    ]


def _verify_spike_oracle() -> list[dict]:
    from .verification import spike_oracle_agreement

    worst_lp, worst_sink = spike_oracle_agreement(instances=200, seed=5)
    return [
        {
            "name": "greedy spike coupling vs exhaustive vertex oracle",
            "value": float(worst_lp),
            "expected": 0.0,
            "tolerance": 1e-12,
            "passed": bool(worst_lp <= 1e-12),
        },
        {
            "name": "sinkhorn (eps=0.01) vs exact spike gap",
            "value": float(worst_sink),
            "expected": 0.0,
            "tolerance": 1e-2,
            "passed": bool(worst_sink <= 1e-2),
        },
    ]


VERIFY_SUITES = {
    "plotkin": _verify_plotkin,
    "tail": _verify_tail,
    "gumbel": _verify_gumbel,
    "spike-oracle": _verify_spike_oracle,
}


def cmd_verify(args) -> int:
    suites = list(VERIFY_SUITES) if args.suite == "all" else [args.suite]
    certificates = []
    for suite in suites:
        certificates.extend(VERIFY_SUITES[suite]())
    report = {"suites": suites, "certificates": certificates}
    payload = json.dumps(report, indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(payload + "\n")
    else:
        print(payload)
    failures = [c for c in certificates if not c["passed"]]
    if failures:
        print("verification failed:", file=sys.stderr)
        for c in failures:
            print(json.dumps(c, indent=2), file=sys.stderr)
        return EXIT_VERIFY
    return 0


def cmd_attack(args) -> int:
    try:
        records = _read_stream(args.stream)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    cfg = AttackConfig(kind=args.kind, rate=args.rate, seed=args.seed)
    with open(args.out, "w") as fh:
        for record in records:
            m = int(record.get("m", max(record["tokens"], default=0) + 1))
            record = dict(record)
            record["tokens"] = run_attack(record["tokens"], cfg, m)
            record["n"] = len(record["tokens"])
            fh.write(json.dumps(record) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lowtide")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate watermarked token streams")
    p_gen.add_argument("--config", required=True)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--scores", help="score-matrix sidecar path (default: <out>.scores)")
    p_gen.set_defaults(func=cmd_gen)

    p_det = sub.add_parser("detect", help="detect watermarks in a token stream")
    p_det.add_argument("--stream", required=True)
    p_det.add_argument("--scores", help="score-matrix sidecar to use")
    p_det.add_argument("--config", required=True)
    p_det.add_argument("--json", help="write the report array here instead of stdout")
    p_det.set_defaults(func=cmd_detect)

    p_sweep = sub.add_parser("sweep", help="detection-distortion sweep to CSV")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--threads", type=int, default=None)
    p_sweep.set_defaults(func=cmd_sweep)

    p_ver = sub.add_parser("verify", help="run numerical verification suites")
    p_ver.add_argument("--suite", choices=[*VERIFY_SUITES, "all"], default="all")
    p_ver.add_argument("--out")
    p_ver.set_defaults(func=cmd_verify)

    p_atk = sub.add_parser("attack", help="apply token-level edit attacks to a stream")
    p_atk.add_argument("--stream", required=True)
    p_atk.add_argument("--out", required=True)
    p_atk.add_argument("--kind", choices=["substitute", "delete", "insert"], required=True)
    p_atk.add_argument("--rate", type=float, required=True)
    p_atk.add_argument("--seed", type=int, default=0)
    p_atk.set_defaults(func=cmd_attack)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergenceError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
