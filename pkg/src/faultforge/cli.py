"""Command-line front end (``python -m faultforge``)."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import catalog as cat
from . import mini_ir as ir
from . import robustness as rb
from .explorer import default_jobs
from .harness import HarnessError, bundle_benchmarks, load_harness
from .placement import STRATEGIES, InstrumentationError, check_nominal, harden, verify_hardening

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--harness", required=True, help="harness file or bundled benchmark name")
    p.add_argument("--order", type=int, help="maximum number of faults")
    p.add_argument("--models", help="comma-separated fault models (ti,dlm,eft)")
    p.add_argument("--oracle", help="success condition over result and parameters")
    p.add_argument("--jobs", type=int, default=None, help="parallel workers (default: all cores)")


def _output(p: argparse.ArgumentParser, formats=("json", "csv", "text"), default="text") -> None:
    p.add_argument("--format", choices=formats, default=default)
    p.add_argument("--out", help="write to this file instead of stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="faultforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, help_ in (("analyze", "attack counts per order"),
                        ("minimal", "minimal attacks"),
                        ("hotspots", "per-IP occurrence counts in attacks")):
        sp = sub.add_parser(name, help=help_)
        _common(sp)
        _output(sp)

    sp = sub.add_parser("compare", help="robustness comparison of two analyze reports")
    sp.add_argument("old", help="report of the reference program")
    sp.add_argument("new", help="report of the candidate program")
    sp.add_argument("--order", type=int, help="compare up to this order")
    _output(sp, ("json", "text"))

    sp = sub.add_parser("adequacy", help="adequacy of countermeasures against fault models")
    sp.add_argument("--strict", action="store_true", help="require every single fault to be detected")
    _output(sp, ("json", "csv", "text"))

    sp = sub.add_parser("protection-level", help="protection levels of countermeasure schemes")
    sp.add_argument("--cm", choices=cat.CM_NAMES, action="append")
    sp.add_argument("--copies", type=int, default=3, help="compute for 1..copies instances")
    sp.add_argument("--models", help="a single model set such as ti+dlm (default: ti, dlm, ti+dlm)")
    sp.add_argument("--bound", type=int, default=8)
    _output(sp, ("json", "csv", "text"))

    sp = sub.add_parser("harden", help="insert countermeasures")
    _common(sp)
    sp.add_argument("--strategy", choices=STRATEGIES, default="single")
    sp.add_argument("--catalog", help="catalog JSON (default: built from the bundled schemes)")
    sp.add_argument("--degraded", action="store_true",
                    help="insert the best available countermeasure when none reaches the order")
    sp.add_argument("--program-out", help="write the hardened program here")
    _output(sp, ("json", "text"), "json")

    sp = sub.add_parser("verify", help="check a hardened program against its original")
    _common(sp)
    sp.add_argument("--program", required=True, help="hardened MiniC program")
    _output(sp, ("json", "text"))

    sp = sub.add_parser("catalog-build", help="compute and save the countermeasure catalog")
    sp.add_argument("--out", required=True)
    sp.add_argument("--copies", type=int, default=3)
    sp.add_argument("--bound", type=int, default=8)

    sp = sub.add_parser("bundle", help="copy the benchmark corpus and scheme programs")
    sp.add_argument("--out", required=True)
    return parser


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _harness(args):
    h = load_harness(args.harness)
    try:
        h = h.with_overrides(max_order=args.order, models=args.models, oracle=args.oracle)
        if args.oracle:
            from .explorer import Oracle
            Oracle(h.oracle).compile(h.program)
    except (ValueError, ir.MiniCError) as exc:
        raise UsageError(str(exc)) from exc
    if h.max_order < 0:
        raise UsageError("--order must be >= 0")
    return h


def _jobs(args) -> int:
    return args.jobs if args.jobs is not None else default_jobs()


def cmd_analyze(args) -> int:
    h = _harness(args)
    a = h.explore(jobs=_jobs(args))
    f = rb.vuln(a)
    if args.format == "json":
        text = json.dumps(rb.report(a, h.digest()), indent=2) + "\n"
    elif args.format == "csv":
        text = rb.vuln_csv(f)
    else:
        text = rb.vuln_text(f)
        text += f"explored paths: {a.explored_paths}, complete: {str(a.complete).lower()}\n"
    _emit(text, args.out)
    return EXIT_OK


def cmd_minimal(args) -> int:
    h = _harness(args)
    a = h.explore(jobs=_jobs(args))
    minimal = rb.minimal_attacks(a.all_attacks())
    if args.format == "json":
        text = json.dumps([[o.to_json() for o in atk] for atk in minimal], indent=2) + "\n"
    elif args.format == "csv":
        text = "order,attack\n" + "".join(
            f"{len(atk)},{' '.join(o.label() for o in atk)}\n" for atk in minimal)
    else:
        text = "".join(f"{len(atk)}: <{', '.join(o.label() for o in atk)}>\n" for atk in minimal)
        text += f"{len(minimal)} minimal attack(s)\n"
    _emit(text, args.out)
    return EXIT_OK


def cmd_hotspots(args) -> int:
    h = _harness(args)
    t = rb.hotspots(h.explore(jobs=_jobs(args)))
    if args.format == "json":
        text = json.dumps(t.to_json(), indent=2) + "\n"
    elif args.format == "csv":
        text = rb.hotspots_csv(t)
    else:
        text = rb.hotspots_text(t)
    _emit(text, args.out)
    return EXIT_OK


def _read_report(path: str) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read report {path}: {exc}") from exc
    if not isinstance(data, dict) or "vuln" not in data:
        raise UsageError(f"{path} is not an analyze report")
    return data


def cmd_compare(args) -> int:
    old, new = _read_report(args.old), _read_report(args.new)
    if old.get("harness_hash") != new.get("harness_hash"):
        raise UsageError("reports come from different harnesses (inputs, models, oracle or order differ)")
    try:
        verdict = rb.compare_robustness(new["vuln"], old["vuln"], args.order)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.format == "json":
        w = verdict.first_failure
        text = json.dumps({"holds": verdict.holds,
                           "first_failure": None if w is None else w.__dict__,
                           "new_cumulative": {k: list(v) for k, v in verdict.new_cumulative.items()},
                           "old_cumulative": {k: list(v) for k, v in verdict.old_cumulative.items()}},
                          indent=2) + "\n"
    else:
        text = f"{args.new} vs {args.old}: {verdict.describe()}\n"
    _emit(text, args.out)
    return EXIT_OK if verdict.holds else EXIT_VIOLATION


def cmd_adequacy(args) -> int:
    rows = []
    for cm, kind, model in cat._ENTRY_SPECS:
        v = cat.check_adequacy(cat.protected_scheme(cm, model), model, strict=args.strict)
        cex = None
        if v.counterexample is not None:
            t = v.counterexample
            cex = {"input": t.init, "plan": [o.to_json() for o in t.plan], "status": t.status,
                   "result": t.result}
        rows.append({"cm": cm, "model": model, "verdict": str(v), "counterexample": cex})
    if args.format == "json":
        text = json.dumps(rows, indent=2) + "\n"
    elif args.format == "csv":
        text = "cm,model,verdict\n" + "".join(f"{r['cm']},{r['model']},{r['verdict']}\n" for r in rows)
    else:
        lines = []
        for r in rows:
            lines.append(f"{r['cm']:<10} {r['model']:<4} {r['verdict']}")
            if r["counterexample"]:
                c = r["counterexample"]
                plan = ", ".join(f"{o['ip']}({o['model']})" for o in c["plan"])
                lines.append(f"    counterexample: input {c['input']}, faults <{plan}> -> {c['status']} {c['result']}")
        text = "\n".join(lines) + "\n"
    _emit(text, args.out)
    return EXIT_OK


def cmd_protection_level(args) -> int:
    cms = args.cm or list(cat.CM_NAMES)
    try:
        sets = [tuple(args.models.replace("+", ",").split(","))] if args.models else list(cat.MODEL_SETS)
        sets = [tuple(sorted(cat.parse_models(s))) for s in sets]
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.copies < 1 or args.bound < 1:
        raise UsageError("--copies and --bound must be >= 1")
    rows = []
    for cm in cms:
        for k in range(1, args.copies + 1):
            row = {"cm": cm, "copies": k}
            for ms in sets:
                row[cat.model_key(ms)] = str(cat.protection_level(cat.countermeasure_scheme(cm, k), ms, args.bound))
            rows.append(row)
    keys = [cat.model_key(ms) for ms in sets]
    if args.format == "json":
        text = json.dumps(rows, indent=2) + "\n"
    elif args.format == "csv":
        text = ",".join(["cm", "copies", *keys]) + "\n" + "".join(
            ",".join([r["cm"], str(r["copies"]), *(r[k] for k in keys)]) + "\n" for r in rows)
    else:
        head = f"{'countermeasure':<16}{'copies':>7}" + "".join(f"{k:>10}" for k in keys)
        text = head + "\n" + "".join(
            f"{r['cm']:<16}{r['copies']:>7}" + "".join(f"{r[k]:>10}" for k in keys) + "\n" for r in rows)
    _emit(text, args.out)
    return EXIT_OK


def _catalog(path: Optional[str]):
    if not path:
        return cat.default_catalog()
    try:
        return cat.Catalog.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read catalog {path}: {exc}") from exc


def cmd_harden(args) -> int:
    h = _harness(args)
    n = h.max_order
    c = _catalog(args.catalog)
    jobs = _jobs(args)
    analysis = h.explore(jobs=jobs)
    r = harden(args.strategy, h.program, analysis, n, c, args.degraded)
    rep = verify_hardening(h.program, r, h, n, analysis, jobs)
    data = {
        "strategy": r.strategy, "n": n, "added": r.added_cm_count,
        "ips": [p.to_json() for p in r.ip_protected],
        "protected_attacks": len(r.protected_attacks), "unprotected": len(r.unprotected_attacks),
        "residual_level": rep.residual_level, "verified": rep.verified, "complete": rep.complete,
        "skipped": r.skipped,
    }
    if args.program_out:
        Path(args.program_out).write_text(ir.format_program(r.hardened))
    if args.format == "json":
        text = json.dumps(data, indent=2) + "\n"
    else:
        ips = ", ".join(f"{p.ip}:{p.cm}x{p.copies}" for p in r.ip_protected) or "none"
        text = (f"strategy {r.strategy}, n={n}: {r.added_cm_count} countermeasure instance(s) at {ips}\n"
                f"protected attacks: {len(r.protected_attacks)}, unprotected: {len(r.unprotected_attacks)}, "
                f"residual level: {rep.residual_level}\n"
                f"verified: {str(rep.verified).lower()}, complete: {str(rep.complete).lower()}\n")
    _emit(text, args.out)
    return EXIT_OK if rep.verified else EXIT_VIOLATION


def cmd_verify(args) -> int:
    h = _harness(args)
    try:
        hardened = ir.parse_program(Path(args.program).read_text(), h.program.entry)
    except OSError as exc:
        raise UsageError(f"cannot read program {args.program}: {exc}") from exc
    check_nominal(h.program, hardened, h)
    jobs = _jobs(args)
    old, new = h.explore(jobs=jobs), h.explore(hardened, jobs=jobs)
    verdict = rb.compare_robustness(rb.vuln(new), rb.vuln(old))
    data = {"nominal_preserved": True, "holds": verdict.holds,
            "old": rb.vuln(old).to_json(), "new": rb.vuln(new).to_json(),
            "complete": old.complete and new.complete}
    if args.format == "json":
        text = json.dumps(data, indent=2) + "\n"
    else:
        text = f"nominal behaviour preserved; comparison {verdict.describe()}\n"
    _emit(text, args.out)
    return EXIT_OK if verdict.holds else EXIT_VIOLATION


def cmd_catalog_build(args) -> int:
    c = cat.build_catalog(args.copies, args.bound) if (args.copies, args.bound) != (3, 8) else cat.default_catalog()
    c.save(args.out)
    return EXIT_OK


def cmd_bundle(args) -> int:
    for path in bundle_benchmarks(args.out):
        print(path)
    return EXIT_OK


COMMANDS = {
    "analyze": cmd_analyze, "minimal": cmd_minimal, "hotspots": cmd_hotspots,
    "compare": cmd_compare, "adequacy": cmd_adequacy, "protection-level": cmd_protection_level,
    "harden": cmd_harden, "verify": cmd_verify, "catalog-build": cmd_catalog_build,
    "bundle": cmd_bundle,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except (UsageError, HarnessError) as exc:
        print(f"faultforge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InstrumentationError as exc:
        print(f"faultforge: nominal behaviour differs: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except ir.MiniCError as exc:
        print(f"faultforge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"faultforge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run())
