"""Command-line entry point: demos, table/noise generation and batch certification."""
from __future__ import annotations

import argparse
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import attacks, minifloat, pipeline
from .binio import FormatError, ValidationError
from .exact_tables import GridSpec, build_table, failure_probability_bound, read_table, write_table
from .sampler import SpecMismatchError, build_noise_buffer, read_noise, write_noise
from .stats import ABSTAIN

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3


def _fraction(text: str) -> Fraction:
    try:
        value = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"expected a rational like 1/2, got {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError("value must be positive")
    return value


def _radius_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def _fmt_radius(r) -> str:
    return "abstain" if r is None or r is ABSTAIN else f"{r:.4f}"


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# -- subcommands ----------------------------------------------------------------------


def cmd_attack_demo(args) -> int:
    prec = attacks.HostPrecision.parse(args.precision)
    r = pipeline.scalar_attack_demo(args.sigma, args.samples, args.alpha, args.anchor, args.L, args.seed, prec)
    print(f"p1 (around 0)       = {r.p_at_zero:.4f}")
    print(f"p2 (around a)       = {r.p_at_anchor:.4f}")
    print(f"hoeffding radius    = {_fmt_radius(r.hoeffding_radius)}")
    print(f"clopper-pearson r.  = {_fmt_radius(r.cp_radius)}")
    print(f"prediction at 0     = {r.prediction_at_zero!r}")
    print(f"distance |a - 0|    = {r.distance:.4f}")
    return EXIT_OK


def cmd_theorem_demo(args) -> int:
    prec = attacks.HostPrecision.parse(args.precision)
    reports = pipeline.memorization_demo(args.images, args.d, args.samples, args.n0, args.sigma, args.alpha, args.k,
                                    args.seed, args.literal, prec)
    print("anchor,label,unsound_radius,perturbed_prediction,flipped,sound_prediction,sound_radius,norm")
    for j, r in enumerate(reports):
        print(f"{j},{r.label},{_fmt_radius(r.unsound_radius)},{r.perturbed_prediction!r},{int(r.flipped)},"
              f"{r.sound_prediction!r},{_fmt_radius(r.sound_radius)},{r.perturbation_norm:.4f}")
    min_u = min((pipeline.normalize_radius(r.unsound_radius) for r in reports), default=float("nan"))
    print(f"# min unsound radius {min_u:.4f}; flipped {sum(r.flipped for r in reports)}/{len(reports)}; "
          f"sound covers perturbation {sum(r.sound_covers_perturbation for r in reports)}/{len(reports)}")
    return EXIT_OK


def _parse_operand(text: str) -> minifloat.MiniFloat8:
    s = text.strip().replace("_", "")
    if len(s.replace(" ", "")) == 8 and set(s.replace(" ", "")) <= {"0", "1"}:
        return minifloat.parse_bits(s)
    return minifloat.encode(Fraction(s))


def cmd_minifloat(args) -> int:
    a = _parse_operand(args.a)
    if args.op is None:
        print(f"{minifloat.format_bits(a)} = {minifloat.decode(a)!r}")
        return EXIT_OK
    b = _parse_operand(args.b)
    res = minifloat.add(a, b) if args.op == "add" else minifloat.sub(a, b)
    sym = "+" if args.op == "add" else "-"
    print(f"{minifloat.format_bits(a)} ({minifloat.decode(a)!r}) {sym} "
          f"{minifloat.format_bits(b)} ({minifloat.decode(b)!r}) = {minifloat.format_bits(res)} ({minifloat.decode(res)!r})")
    return EXIT_OK


def _spec_from(args) -> GridSpec:
    return GridSpec.normalized(args.L, args.k, args.sigma, args.bits)


def cmd_table_gen(args) -> int:
    spec = _spec_from(args)
    table = build_table(spec)
    write_table(table, args.out)
    fb = failure_probability_bound(table)
    print(f"wrote {len(table)} thresholds to {args.out}; ambiguous {sum(table.ambiguous)}; "
          f"per-draw failure {float(fb.per_draw):.3e}")
    return EXIT_OK


def cmd_noise_gen(args) -> int:
    table = read_table(args.table)
    buf = build_noise_buffer(table, args.n, args.d, args.seed, args.stream)
    write_noise(buf, args.out)
    print(f"wrote {buf.n}x{buf.d} offsets to {args.out}; failures {buf.fail_flat.size}")
    return EXIT_OK


def _classifier(text: str, images, prec):
    kind, _, rest = text.partition(":")
    parts = rest.split(":") if rest else []
    if kind == "toy":
        return pipeline.ThresholdClassifier(float(parts[0]) if parts else 0.5, prec)
    if kind == "const":
        return pipeline.ConstantClassifier(int(parts[0]) if parts else 0)
    if kind == "fa":
        return attacks.FaClassifier(int(parts[0]), 255, prec)
    if kind == "fai":
        return attacks.FaiClassifier(int(parts[0]), int(parts[1]), 255, prec)
    anchors = attacks.AnchorSet.from_images(images, np.arange(len(images)) % 2)
    if kind == "ga":
        return attacks.GaClassifier(anchors.image(int(parts[0]) if parts else 0), prec)
    if kind == "ha":
        return attacks.HAClassifier(anchors, prec)
    if kind == "m":
        return attacks.MClassifier.from_anchors(anchors, prec)
    raise ValidationError(f"unknown classifier {text!r}")


def _params(args) -> pipeline.CertifyParams:
    base = pipeline.CertifyParams()
    pick = lambda v, d: d if v is None else v
    return pipeline.CertifyParams(pick(args.sigma, base.sigma), pick(args.n0, base.n0), pick(args.n, base.n),
                                  args.alpha, args.seed, pick(args.k, base.k), pick(args.bits, base.n_bits),
                                  args.bound, attacks.HostPrecision.parse(args.precision))


def _check_given(args, table, buf0, buf) -> None:
    """Reject explicit options that contradict the loaded table or buffers."""
    spec = table.spec
    given = {
        "--sigma": (args.sigma, lambda v: Fraction(v) == spec.sigma),
        "--k": (args.k, lambda v: v * spec.L == spec.k),
        "--bits": (args.bits, lambda v: v == spec.n_bits),
        "--n0": (args.n0, lambda v: v == buf0.n),
        "--n": (args.n, lambda v: v == buf.n),
    }
    for flag, (value, agrees) in given.items():
        if value is not None and not agrees(value):
            raise ValidationError(f"{flag} {value} contradicts the precomputed table or noise files")


def _context(args, params, images):
    if not args.table and not args.noise:
        return None
    if not (args.table and args.noise):
        raise ValidationError("--table and --noise must be given together")
    table = read_table(args.table)
    buf0, buf = read_noise(args.noise[0]), read_noise(args.noise[1])
    if images and (table.spec.L != images[0].L):
        raise ValidationError("table grid does not match the images")
    _check_given(args, table, buf0, buf)
    return pipeline.SoundContext(table, buf0, buf)


def cmd_certify(args) -> int:
    images = pipeline.read_dataset(args.images)
    params = _params(args)
    f = _classifier(args.classifier, images, params.precision)
    ctx = _context(args, params, images) if args.method == "sound" else None
    res = pipeline.run_dataset(images, f, args.method, params, radii=args.radii, context=ctx)
    _emit(pipeline.emit_csv(res.outcomes), args.out)
    return EXIT_OK


def cmd_compare(args) -> int:
    images = pipeline.read_dataset(args.images)
    params = _params(args)
    f = _classifier(args.classifier, images, params.precision)
    text, results = pipeline.compare(images, f, params, args.radii)
    _emit(text, args.out)
    if args.details:
        rows = [o for m in ("unsound", "sound") for o in results[m].outcomes]
        Path(args.details).write_text(pipeline.emit_csv(rows))
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.kind == "anchors":
        a = attacks.synthetic_anchors(args.count, args.d, args.L, args.seed)
        images = [a.image(j) for j in range(len(a))]
    else:
        images = pipeline.synthetic_images(args.count, args.d, args.L, args.seed)
    pipeline.write_dataset(images, args.out, args.d, args.L)
    print(f"wrote {len(images)} images of dimension {args.d} to {args.out}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------


def _add_certify_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--classifier", default="toy:0.5",
                   help="toy[:theta] | const:c | fa:num | fai:num:i | ga:j | ha | m (anchors come from --images)")
    p.add_argument("--images", required=True, help="image set file")
    # unset grid and sample-size options default from CertifyParams, or from --table/--noise when given
    p.add_argument("--sigma", type=_fraction, help="noise scale (default 1/2)")
    p.add_argument("--k", type=int, help="clamp margin in units of the full intensity range (default 6)")
    p.add_argument("--bits", type=int, help="draw width in bits (default 64)")
    p.add_argument("--n0", type=int, help="selection samples (default 100)")
    p.add_argument("--n", type=int, help="bounding samples (default 10000)")
    p.add_argument("--alpha", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bound", choices=("clopper-pearson", "hoeffding"), default="clopper-pearson")
    p.add_argument("--precision", default="binary64", choices=("binary32", "binary64"))
    p.add_argument("--radii", type=_radius_list, default=pipeline.RADIUS_GRID)
    p.add_argument("--out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="soundsmooth", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attack-demo", help="smooth the scalar round-trip classifier around a and around 0")
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--alpha", type=float, default=0.001)
    p.add_argument("--anchor", type=int, default=210)
    p.add_argument("--L", type=int, default=255)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", default="binary64", choices=("binary32", "binary64"))
    p.set_defaults(func=cmd_attack_demo)

    p = sub.add_parser("theorem-demo", help="memorizing classifier over synthetic anchors, both pipelines")
    p.add_argument("--images", type=int, default=100)
    p.add_argument("--samples", type=int, default=50)
    p.add_argument("--n0", type=int, default=50)
    p.add_argument("--d", type=int, default=3072)
    p.add_argument("--sigma", type=_fraction, default=Fraction(1))
    p.add_argument("--alpha", type=float, default=0.001)
    p.add_argument("--k", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--literal", action="store_true", help="use alpha = (240/L)/L for the first coordinate")
    p.add_argument("--precision", default="binary64", choices=("binary32", "binary64"))
    p.set_defaults(func=cmd_theorem_demo)

    p = sub.add_parser("minifloat", help="decode a pattern or add/subtract two 8-bit values")
    p.add_argument("a", help='bit pattern like "1 110 1010" or a rational like 6.5')
    p.add_argument("op", nargs="?", choices=("add", "sub"))
    p.add_argument("b", nargs="?")
    p.set_defaults(func=cmd_minifloat)

    p = sub.add_parser("table-gen", help="build a breaking-point table")
    p.add_argument("--L", type=int, default=255)
    p.add_argument("--k", type=_fraction, default=Fraction(6))
    p.add_argument("--sigma", type=_fraction, default=Fraction(1, 2))
    p.add_argument("--bits", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_table_gen)

    p = sub.add_parser("noise-gen", help="draw a reusable noise buffer from a table")
    p.add_argument("--table", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--d", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stream", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_noise_gen)

    p = sub.add_parser("certify", help="certify every image of a set")
    p.add_argument("--method", choices=("sound", "unsound"), default="sound")
    p.add_argument("--table", help="precomputed table (sound method)")
    p.add_argument("--noise", nargs=2, metavar=("SELECT", "BOUND"), help="precomputed buffers (sound method)")
    _add_certify_options(p)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("compare", help="certified accuracy per radius for both methods")
    p.add_argument("--details", help="also write per-image outcomes of both methods here")
    _add_certify_options(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("synth", help="write a synthetic image set")
    p.add_argument("--kind", choices=("toy", "anchors"), default="toy")
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--L", type=int, default=255)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, SpecMismatchError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
