"""Command-line entry point: ``confflow <command> [options]``."""

import argparse
import json
import sys
from collections import Counter

import numpy as np

from . import __version__, pipeline
from ._accel import backend
from .checkpoint import load_checkpoint, save_checkpoint
from .config import PRESETS, load_config, preset
from .errors import ConfflowError, NonFiniteError
from .moldata import SYMBOLS, BondOrder, write_jsonl
from .otcfm import draw_coupling, num_pairs


class _Parser(argparse.ArgumentParser):
    # usage text and exit status 2 on any bad flag, including in subcommands
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _run_config(spec):
    return preset(spec[len("preset:"):]) if spec.startswith("preset:") else load_config(spec)


def cmd_train(args):
    run = _run_config(args.config)
    mols, stats = pipeline.load_molecules(args.data)
    if stats.total_dropped:
        print(f"dropped {stats.total_dropped} record(s) during grouping: {stats.dropped}", file=sys.stderr)
    resume = load_checkpoint(args.resume) if args.resume else None
    log_fh = open(args.log, "w") if args.log else None

    def on_log(entry):
        if log_fh is not None:
            log_fh.write(json.dumps(entry, sort_keys=True) + "\n")
        if not args.quiet and (entry["step"] % 50 == 0 or "val_loss" in entry):
            extra = f" val_loss {entry['val_loss']:.4f}" if "val_loss" in entry else ""
            print(f"step {entry['step']:>6d} loss {entry['loss']:.4f}{extra}", file=sys.stderr)

    try:
        ckpt = pipeline.train_from_config(run, mols, resume, on_log)
    finally:
        if log_fh is not None:
            log_fh.close()
    save_checkpoint(ckpt, args.out)
    print(f"wrote {args.out} at step {ckpt.step}")
    return 0


def cmd_sample(args):
    ckpt = load_checkpoint(args.ckpt)
    mols, _ = pipeline.load_molecules(args.data)
    if args.id:
        wanted = set(args.id)
        mols = [m for m in mols if m.id in wanted]
    samples = pipeline.sample_molecules(ckpt, mols, args.per_molecule, args.steps, args.seed)
    pipeline.write_samples(samples, args.out_dir)
    total = sum(len(x) for _, x in samples.values())
    print(f"wrote {total} conformers for {len(samples)} molecules under {args.out_dir}")
    return 0


def cmd_eval(args):
    truth, _ = pipeline.load_molecules(args.truth)
    report = pipeline.evaluate_dir(args.pred, truth, args.delta, heavy_only=not args.keep_hydrogens)
    print(report.to_json())
    print(report.table())
    if args.json_out:
        with open(args.json_out, "w") as fh:
            fh.write(report.to_json() + "\n")
    return 0


def cmd_selftest(args):
    from .selftest import run_all

    print(f"confflow {__version__} ({backend()} kernels)")
    return 0 if run_all() else 1


def cmd_ot_plan(args):
    mols, _ = pipeline.load_molecules(args.data)
    try:
        mol = mols.get(args.id)
    except KeyError:
        print(f"no molecule with id {args.id!r}", file=sys.stderr)
        return 1
    n = num_pairs(mol.num_conformers, args.max_conformers)
    _, plan, _ = draw_coupling(mol, n, args.seed, "otcfm")
    out = {"id": mol.id, "seed": args.seed, "num_pairs": n}
    out.update(plan.to_dict())
    print(json.dumps(out, indent=2))
    return 0


def cmd_dataset_stats(args):
    mols, stats = pipeline.load_molecules(args.data)
    atoms = np.array([m.num_atoms for m in mols])
    confs = np.array([m.num_conformers for m in mols])
    elements = Counter(SYMBOLS[z] for m in mols for z in m.atom_types)
    orders = Counter(b.order.value for m in mols for b in m.bonds)

    def span(a):
        return {"min": int(a.min()), "max": int(a.max()), "mean": float(a.mean())}

    out = {
        "records": stats.records_in,
        "molecules": len(mols),
        "dropped": stats.dropped,
        "atoms": span(atoms),
        "conformers": span(confs),
        "total_conformers": int(confs.sum()),
        "elements": dict(sorted(elements.items())),
        "bond_orders": {o.value: orders.get(o.value, 0) for o in BondOrder},
        "content_hash": mols.content_hash(),
    }
    print(json.dumps(out, indent=2))
    return 0


def cmd_make_toy(args):
    from .synthetic import toy_dataset

    data = toy_dataset(args.num_molecules, seed=args.seed)
    with open(args.out, "w") as fh:
        write_jsonl(data, fh)
    print(f"wrote {len(data)} molecules to {args.out}")
    return 0


def build_parser():
    p = _Parser(prog="confflow", description="Equivariant OT flow matching for molecular conformers.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", required=True, help=f"config JSON, or preset:<name> with name in {PRESETS}")
    t.add_argument("--data", required=True, help="molecule JSONL")
    t.add_argument("--out", required=True, help="checkpoint path to write")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--log", help="write the JSONL training log here")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("sample", help="generate conformers to XYZ files")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--per-molecule", type=int, default=None, help="default: sample coefficient x reference count")
    s.add_argument("--steps", type=int, default=50, help="RK4 steps")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--id", action="append", help="restrict to this molecule id (repeatable)")
    s.set_defaults(func=cmd_sample)

    e = sub.add_parser("eval", help="coverage and matching metrics for sampled conformers")
    e.add_argument("--pred", required=True, help="directory of <id>/<index>.xyz")
    e.add_argument("--truth", required=True, help="reference molecule JSONL")
    e.add_argument("--delta", type=float, default=0.5, help="coverage threshold in Angstrom")
    e.add_argument("--json-out", help="also write the report JSON here")
    e.add_argument("--keep-hydrogens", action="store_true", help="score all atoms, not heavy atoms only")
    e.set_defaults(func=cmd_eval)

    st = sub.add_parser("selftest", help="run the built-in correctness suites")
    st.set_defaults(func=cmd_selftest)

    o = sub.add_parser("ot-plan", help="print the coupling plan for one molecule")
    o.add_argument("--data", required=True)
    o.add_argument("--id", required=True)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--max-conformers", type=int, default=20)
    o.set_defaults(func=cmd_ot_plan)

    d = sub.add_parser("dataset-stats", help="summarise a molecule JSONL file")
    d.add_argument("--data", required=True)
    d.set_defaults(func=cmd_dataset_stats)

    m = sub.add_parser("make-toy", help="write the synthetic toy dataset")
    m.add_argument("--out", required=True)
    m.add_argument("--num-molecules", type=int, default=20)
    m.add_argument("--seed", type=int, default=0)
    m.set_defaults(func=cmd_make_toy)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfflowError, NonFiniteError, OSError) as exc:
        print(f"confflow {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
