"""Command-line front end: ``affine-pr <command> ...``.

Exit codes: 0 success, 1 domain failure (a failed expectation, an
unrecoverable measurement vector, an invalid certificate), 2 usage or I/O
error.  The master seed falls back to $AFFINE_PR_SEED, then to 0.
"""

from __future__ import annotations

import argparse
import os
import sys
import warnings

from . import __version__
from .constructions import OffsetError, min_measurements, perturbed_ensemble, random_ensemble, tight_ensemble
from .experiments import ConfigError, ExperimentConfig, run_experiment, write_rows
from .forward import measure
from .injectivity import (
    NON_INJECTIVE,
    CertificateInvalid,
    DeficiencyError,
    SearchOptions,
    certificate_from_collision,
    collision_from_certificate,
    collision_search,
    deficiency_collision,
    injectivity_report,
    verify_certificate,
)
from .model import Field, FieldMismatch, MetaKind
from .recovery import InconsistentMeasurements, RecoveryError, lsq_recover, tight_recover
from .serialization import (
    FormatError,
    certificate_from_dict,
    certificate_to_dict,
    deserialize_ensemble,
    deserialize_measurements,
    deserialize_signal,
    dumps,
    loads,
    report_to_dict,
    serialize_ensemble,
    serialize_measurements,
    serialize_signal,
    witness_from_dict,
    witness_to_dict,
)

SEED_ENV = "AFFINE_PR_SEED"
EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def resolve_seed(flag: int | None) -> int:
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env is None or env.strip() == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={env!r} is not an integer") from None


def _read(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _write(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="affine-pr", description="Generalized affine phase retrieval toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    b = sub.add_parser("build", help="write an ensemble file")
    b.add_argument("--field", choices=[f.value for f in Field], default="real")
    b.add_argument("--dim", type=int, required=True, help="signal dimension d")
    b.add_argument("--rank", type=int, required=True, help="columns r of each M_j")
    b.add_argument("--kind", choices=["tight", "random", "perturbed"], default="tight")
    b.add_argument("--m", type=int, help="number of pairs (random only)")
    b.add_argument("--delta", type=float, help="perturbation size (perturbed only)")
    b.add_argument("--seed", type=int)
    b.add_argument("--out")

    m = sub.add_parser("measure", help="measurement vector of a signal")
    m.add_argument("--ensemble", required=True)
    m.add_argument("--signal", required=True)
    m.add_argument("--out")

    r = sub.add_parser("recover", help="signal from a measurement vector")
    r.add_argument("--ensemble", required=True)
    r.add_argument("--measurements", required=True)
    r.add_argument("--method", choices=["auto", "tight", "lsq"], default="auto")
    r.add_argument("--strict", action="store_true", help="fail on measurements no signal can produce")
    r.add_argument("--restarts", type=int, default=20)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")

    v = sub.add_parser("verify", help="injectivity report")
    v.add_argument("--ensemble", required=True)
    v.add_argument("--restarts", type=int, default=50)
    v.add_argument("--max-iter", type=int, default=300)
    v.add_argument("--seed", type=int)
    v.add_argument("--expect", choices=["injective", "non-injective"])
    v.add_argument("--out")

    c = sub.add_parser("collide", help="find a colliding pair")
    c.add_argument("--ensemble", required=True)
    c.add_argument("--restarts", type=int, default=50)
    c.add_argument("--seed", type=int)
    c.add_argument("--out")

    q = sub.add_parser("certify", help="witness -> certificate, or check a certificate")
    q.add_argument("--ensemble", required=True)
    src = q.add_mutually_exclusive_group(required=True)
    src.add_argument("--witness")
    src.add_argument("--certificate")
    q.add_argument("--out")

    e = sub.add_parser("experiment", help="run a batch experiment")
    e.add_argument("name", choices=["tightness", "generic", "openness"])
    e.add_argument("--field", choices=[f.value for f in Field], default="real")
    e.add_argument("--dims", type=_int_list, default=[2, 3, 4])
    e.add_argument("--ranks", type=_int_list)
    e.add_argument("--ms", type=_int_list)
    e.add_argument("--trials", type=int, default=20)
    e.add_argument("--restarts", type=int, default=50)
    e.add_argument("--deltas", type=_float_list, default=[1e-1, 1e-3, 1e-6])
    e.add_argument("--no-control", action="store_true")
    e.add_argument("--seed", type=int)
    e.add_argument("--format", choices=["csv", "json"], default="csv")
    e.add_argument("--out")
    return p


def _cmd_build(a) -> int:
    seed = resolve_seed(a.seed)
    if a.kind == "tight":
        E = tight_ensemble(a.dim, a.rank, a.field)
    elif a.kind == "random":
        if a.m is None:
            raise UsageError("build --kind random needs --m")
        E = random_ensemble(a.dim, a.rank, a.m, a.field, seed)
    else:
        if a.delta is None:
            raise UsageError("build --kind perturbed needs --delta")
        E = perturbed_ensemble(a.dim, a.rank, a.field, a.delta).perturbed
    _write(serialize_ensemble(E), a.out)
    return EXIT_OK


def _cmd_measure(a) -> int:
    E = deserialize_ensemble(_read(a.ensemble))
    field, x = deserialize_signal(_read(a.signal))
    if field is Field.COMPLEX and E.field is Field.REAL:
        raise FieldMismatch("complex signal given to a real ensemble")
    _write(serialize_measurements(measure(E, x)), a.out)
    return EXIT_OK


def _cmd_recover(a) -> int:
    E = deserialize_ensemble(_read(a.ensemble))
    y = deserialize_measurements(_read(a.measurements))
    if y.shape != (E.m,):
        raise FormatError(f"y: expected {E.m} values, got {y.shape[0]}")
    method = a.method
    if method == "auto":
        method = "tight" if E.meta is not None and E.meta.kind is MetaKind.TIGHT else "lsq"
    if method == "tight":
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                x = tight_recover(E, y, strict=a.strict)
            except InconsistentMeasurements as exc:
                print(f"affine-pr: {exc}", file=sys.stderr)
                return EXIT_DOMAIN
        for w in caught:
            print(f"affine-pr: warning: {w.message}", file=sys.stderr)
    else:
        rep = lsq_recover(E, y, restarts=a.restarts, seed=resolve_seed(a.seed))
        if not rep.success:
            print(f"affine-pr: least-squares recovery failed (residual {rep.residual:.3g})", file=sys.stderr)
            return EXIT_DOMAIN
        x = rep.x
    _write(serialize_signal(x, E.field), a.out)
    return EXIT_OK


def _cmd_verify(a) -> int:
    E = deserialize_ensemble(_read(a.ensemble))
    opts = SearchOptions(restarts=a.restarts, max_iter=a.max_iter, seed=resolve_seed(a.seed))
    rep = injectivity_report(E, opts)
    _write(dumps(report_to_dict(rep, E.field)), a.out)
    if a.expect == "injective" and rep.verdict == NON_INJECTIVE:
        return EXIT_DOMAIN
    if a.expect == "non-injective" and rep.verdict != NON_INJECTIVE:
        return EXIT_DOMAIN
    return EXIT_OK


def _cmd_collide(a) -> int:
    E = deserialize_ensemble(_read(a.ensemble))
    seed = resolve_seed(a.seed)
    w = None
    if E.m < min_measurements(E.d, E.r, E.field):
        try:
            w = deficiency_collision(E, seed=seed)
        except DeficiencyError:
            w = None
    if w is None or not w.valid:
        w = collision_search(E, restarts=a.restarts, seed=seed).witness
    if w is None:
        print("affine-pr: no collision found", file=sys.stderr)
        return EXIT_DOMAIN
    _write(dumps(witness_to_dict(w, E.field)), a.out)
    return EXIT_OK


def _cmd_certify(a) -> int:
    E = deserialize_ensemble(_read(a.ensemble))
    if a.witness:
        _, w = witness_from_dict(loads(_read(a.witness), "witness"))
        cert = certificate_from_collision(w, E)
        rep = verify_certificate(E, cert.Q)
        out = certificate_to_dict(cert)
        out["checks"] = _checks(rep)
        _write(dumps(out), a.out)
        return EXIT_OK if rep.ok else EXIT_DOMAIN
    cert = certificate_from_dict(loads(_read(a.certificate), "certificate"))
    try:
        w = collision_from_certificate(cert.Q, E)
    except CertificateInvalid as exc:
        print(f"affine-pr: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    _write(dumps(witness_to_dict(w, E.field)), a.out)
    return EXIT_OK


def _checks(rep) -> dict:
    return {
        "hermitian": rep.hermitian,
        "corner_zero": rep.corner_zero,
        "rank_le_2": rep.rank_le_2,
        "kernel": rep.kernel,
        "normalized": rep.normalized,
        "failing_pairs": rep.failing_pairs,
    }


def _cmd_experiment(a) -> int:
    cfg = ExperimentConfig(
        a.name,
        field=a.field,
        dims=a.dims,
        ranks=a.ranks,
        ms=a.ms,
        trials=a.trials,
        restarts=a.restarts,
        seed=resolve_seed(a.seed),
        deltas=a.deltas,
        control=not a.no_control,
        output=a.out,
        fmt=a.format,
    )
    rows = run_experiment(cfg)
    text = write_rows(rows, cfg)
    if not a.out:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "build": _cmd_build,
    "measure": _cmd_measure,
    "recover": _cmd_recover,
    "verify": _cmd_verify,
    "collide": _cmd_collide,
    "certify": _cmd_certify,
    "experiment": _cmd_experiment,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"affine-pr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RecoveryError, OffsetError) as exc:
        print(f"affine-pr: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (OSError, ValueError, FieldMismatch) as exc:
        # FormatError and bad parameters (e.g. d < 1) land here
        print(f"affine-pr: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
