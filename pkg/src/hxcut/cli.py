"""Batch command-line surface: hxcut <command> [options].

Commands wire together ingestion (hierarchy JSON, netpbm images), the
ascending-pass optimizer, the persistence sweep and the renderers.  Every
file-producing run also writes a manifest echoing the resolved
configuration, the library version, and the content hash of each input, so
identical configurations reproduce byte-identical artifacts.

Exit codes: 0 on success, 2 on validation failure or malformed input,
3 when a cut-count limit or a budget refuses the request.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .energies import (AffineEnergySpec, BudgetError, coding_cost,
                       compression_budget, direct_table, fixture_ce1,
                       fixture_ce2, from_config, lagrangian_select,
                       lasso_energy, parse_tie)
from .energy import EnergyModel, PREFER_COARSER, ScaleFamily, TiePolicy
from .hierarchy import (CutLimitExceeded, Hierarchy, load_hierarchy,
                        save_hierarchy, validate)
from .imaging import (ImagePlane, build_alpha_tree, build_bpt, load_image,
                      render_cut, render_saliency, save_image)
from .optimize import (cut_at_scale, minimum_cut, minimum_cut_oracle,
                       persistence, pyramid, saliency)


def _fmt(v: float) -> str:
    return f"{v:.9g}"


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return "sha256:" + digest.hexdigest()


def _write_manifest(primary_output: str, command: str, config: dict,
                    inputs: list[str], outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "config": config,
        "inputs": {p: _sha256(p) for p in inputs},
        "outputs": outputs,
        "version": __version__,
    }
    with open(primary_output + ".manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, sort_keys=True, indent=1)
        f.write("\n")


def _load_cfg(spec: str) -> tuple[dict, str | None]:
    if spec.lstrip().startswith("{"):
        return json.loads(spec), None
    with open(spec, "r", encoding="utf-8") as f:
        return json.load(f), os.path.dirname(os.path.abspath(spec))


def _tie_from_arg(arg: str | None, cfg: dict) -> TiePolicy:
    if arg is None:
        return parse_tie(cfg.get("tie"))
    if arg.startswith("threshold:"):
        return TiePolicy.threshold(float(arg.split(":", 1)[1]))
    return parse_tie(arg)


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------

def cmd_validate(args) -> int:
    h = load_hierarchy(args.hierarchy, canonicalize=not args.raw)
    report = validate(h)
    for line in report:
        print(line)
    if report:
        print(f"INVALID: {len(report)} violation(s)")
        return 2
    print("valid")
    return 0


def cmd_build(args) -> int:
    image = load_image(args.image)
    if args.method == "bpt":
        h = build_bpt(image, args.leaves)
    else:
        h = build_alpha_tree(image, _floats(args.alphas))
    save_hierarchy(h, args.out)
    _write_manifest(args.out, "build",
                    {"method": args.method, "leaves": args.leaves,
                     "alphas": args.alphas, "image": args.image},
                    [args.image], [args.out])
    print(f"nodes {len(h.node_ids)} leaves {len(h.leaves())}")
    return 0


def _resolve_energy(args, h: Hierarchy):
    cfg, base = _load_cfg(args.energy)
    if getattr(args, "lam", None) is not None:
        cfg["lambda"] = args.lam
    image = load_image(args.image) if getattr(args, "image", None) else None
    built = from_config(cfg, h=h, image=image, base_dir=base)
    return cfg, built, image


def cmd_optimize(args) -> int:
    h = load_hierarchy(args.hierarchy)
    cfg, model, image = _resolve_energy(args, h)
    if isinstance(model, ScaleFamily):
        raise ValueError("got a scale family; use the persistence command")
    tie = _tie_from_arg(args.tie, cfg)
    res = minimum_cut(h, model, tie)
    print(f"energy {_fmt(res.energy)}")
    if args.check_oracle:
        oracle = minimum_cut_oracle(h, model, tie, limit=args.check_oracle)
        if oracle.energy != res.energy:
            print(f"WARNING: ascending pass {_fmt(res.energy)} differs from "
                  f"exhaustive minimum {_fmt(oracle.energy)}; "
                  "the energy is not h-increasing")
    outputs = []
    if args.out:
        save_image(render_cut(h, res.cut, "labels"), args.out)
        outputs.append(args.out)
        inputs = [args.hierarchy] + ([args.image] if args.image else [])
        _write_manifest(args.out, "optimize",
                        {"energy": cfg, "tie": args.tie, "lambda": args.lam},
                        inputs, outputs)
    return 0


def cmd_persistence(args) -> int:
    h = load_hierarchy(args.hierarchy)
    cfg, base = _load_cfg(args.energy_family)
    if args.scales:
        key = "c_grid" if cfg.get("type") == "range" else "lambdas"
        cfg[key] = _floats(args.scales)
    image = load_image(args.image) if args.image else None
    family = from_config(cfg, h=h, image=image, base_dir=base)
    if isinstance(family, EnergyModel):
        raise ValueError("got a single-scale energy; use the optimize command")

    table = persistence(h, family)
    csv_path = args.out_prefix + ".csv"
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write(table.to_csv())
    outputs = [csv_path]
    for j, s in enumerate(family.scales):
        cut = cut_at_scale(table, h, s)
        print(f"scale {_fmt(s)} classes {len(cut.members)}")
        if h.is_grid_backed:
            p = f"{args.out_prefix}_scale{j:02d}.pgm"
            save_image(render_cut(h, cut, "labels"), p)
            outputs.append(p)
    sal = saliency(table, h)
    if h.is_grid_backed:
        p = args.out_prefix + "_saliency.pgm"
        save_image(render_saliency(dict(sal.pair_weights), h.leaf_labels), p)
        outputs.append(p)
    inputs = [args.hierarchy] + ([args.image] if args.image else [])
    _write_manifest(csv_path, "persistence",
                    {"energy_family": cfg, "scales": args.scales},
                    inputs, outputs)
    return 0


def _auto_lambda_grid(h: Hierarchy, spec: AffineEnergySpec) -> list[float]:
    # double the weight until the coarsest cut wins, starting from zero
    grid = [0.0]
    lam = 1.0 / 1024.0
    for _ in range(80):
        grid.append(lam)
        res = minimum_cut(h, spec.model_at(lam), PREFER_COARSER)
        if res.cut.members == frozenset((h.root,)):
            return grid
        lam *= 2.0
    raise RuntimeError("regularizer never dominates; grid capped at 2^70")


def cmd_compress(args) -> int:
    image = load_image(args.image)
    lum8 = ImagePlane(np.round(image.data.astype(np.float64).reshape(
        image.height, image.width, -1).mean(axis=2)).astype(np.uint8))
    h = build_bpt(lum8, args.leaves)
    fit, reg = coding_cost(h, image, c=args.cost, channel=args.channel)
    spec = AffineEnergySpec(fit, reg, (0.0, 1.0))
    grid = _auto_lambda_grid(h, spec)
    family = AffineEnergySpec(fit, reg, tuple(grid)).family()
    pyr = pyramid(h, family)
    budget = compression_budget(image.height * image.width, args.rate)
    choice = lagrangian_select(pyr, reg, budget)
    print(f"scale {_fmt(choice.scale)}")
    print(f"regularizer {_fmt(choice.regularizer_value)} budget {_fmt(budget)}")
    print(f"classes {len(choice.cut.members)}")
    out = args.out
    save_image(render_cut(h, choice.cut, "mean", image=image), out)
    _write_manifest(out, "compress",
                    {"rate": args.rate, "channel": args.channel,
                     "leaves": args.leaves, "cost": args.cost},
                    [args.image], [out])
    return 0


def cmd_lasso(args) -> int:
    h = load_hierarchy(args.hierarchy)
    mask = load_image(args.mask).data > 0
    model = lasso_energy(h, mask)
    res = minimum_cut(h, model, TiePolicy.threshold(0.0))
    kept = sorted(m for m in res.cut.members if model.class_cost(m) == 0.0)
    print(f"energy {_fmt(res.energy)}")
    print(f"inside classes {len(kept)}")
    outputs = []
    if args.out:
        save_image(render_cut(h, res.cut, "labels"), args.out)
        outputs.append(args.out)
        _write_manifest(args.out, "lasso", {"mask": args.mask},
                        [args.hierarchy, args.mask], outputs)
    return 0


def cmd_oracle(args) -> int:
    h = load_hierarchy(args.hierarchy)
    cfg, model, _ = _resolve_energy(args, h)
    if isinstance(model, ScaleFamily):
        raise ValueError("the oracle takes a single-scale energy")
    tie = _tie_from_arg(args.tie, cfg)
    res = minimum_cut_oracle(h, model, tie, limit=args.limit)
    print(f"energy {_fmt(res.energy)}")
    print("members " + ",".join(str(m) for m in res.cut.sorted_members()))
    return 0


def cmd_fixture(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    hier_path = os.path.join(args.out_dir, "hierarchy.json")
    if args.name == "ce1":
        h, model = fixture_ce1()
        save_hierarchy(h, hier_path)
        energy_path = os.path.join(args.out_dir, "energy.json")
        obj = {"type": "table", "name": "ce1", "tie": "coarser",
               "per_partition": direct_table(h, model)}
        with open(energy_path, "w", encoding="utf-8") as f:
            json.dump(obj, f, sort_keys=True, indent=1)
            f.write("\n")
    else:
        h, family = fixture_ce2()
        save_hierarchy(h, hier_path)
        energy_path = os.path.join(args.out_dir, "family.json")
        tables = {
            str(s): {str(n): family.model_at(s).class_cost(n) for n in h.node_ids}
            for s in family.scales
        }
        obj = {"type": "table-family", "name": "ce2", "tie": "coarser",
               "composition": "sum",
               "scales": list(family.scales), "tables": tables}
        with open(energy_path, "w", encoding="utf-8") as f:
            json.dump(obj, f, sort_keys=True, indent=1)
            f.write("\n")
    _write_manifest(hier_path, "fixture", {"name": args.name}, [],
                    [hier_path, energy_path])
    print(f"wrote {hier_path} and {energy_path}")
    return 0


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hxcut", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("validate", help="check hierarchy invariants")
    q.add_argument("hierarchy")
    q.add_argument("--raw", action="store_true",
                   help="skip unary-chain canonicalization before checking")
    q.set_defaults(func=cmd_validate)

    q = sub.add_parser("build", help="build a hierarchy from an image")
    q.add_argument("image")
    q.add_argument("--method", choices=("bpt", "alpha"), default="bpt")
    q.add_argument("--leaves", type=int, default=256)
    q.add_argument("--alphas", default="0,1,2,4,8,16,32,64,128")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_build)

    q = sub.add_parser("optimize", help="minimum cut for one energy")
    q.add_argument("hierarchy")
    q.add_argument("--energy", required=True, help="JSON file or inline JSON")
    q.add_argument("--lambda", dest="lam", type=float, default=None)
    q.add_argument("--tie", default=None,
                   help="coarser | finer | threshold:W")
    q.add_argument("--image", default=None)
    q.add_argument("--out", default=None, help="label map output (PGM)")
    q.add_argument("--check-oracle", type=int, default=0, metavar="LIMIT",
                   help="cross-check against exhaustive enumeration")
    q.set_defaults(func=cmd_optimize)

    q = sub.add_parser("persistence", help="two-pass sweep over a scale family")
    q.add_argument("hierarchy")
    q.add_argument("--energy-family", required=True)
    q.add_argument("--scales", default=None, help="comma-separated grid override")
    q.add_argument("--image", default=None)
    q.add_argument("--out-prefix", required=True)
    q.set_defaults(func=cmd_persistence)

    q = sub.add_parser("compress", help="budgeted simplification of an image")
    q.add_argument("image")
    q.add_argument("--rate", type=float, required=True)
    q.add_argument("--channel", choices=("luminance", "chrominance"),
                   default="luminance")
    q.add_argument("--leaves", type=int, default=256)
    q.add_argument("--cost", type=float, default=2.0,
                   help="bits per boundary edge unit")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_compress)

    q = sub.add_parser("lasso", help="largest classes inside a mask")
    q.add_argument("hierarchy")
    q.add_argument("--mask", required=True, help="binary PGM, nonzero = inside")
    q.add_argument("--out", default=None)
    q.set_defaults(func=cmd_lasso)

    q = sub.add_parser("oracle", help="exhaustive minimum cut (desk scale)")
    q.add_argument("hierarchy")
    q.add_argument("--energy", required=True)
    q.add_argument("--lambda", dest="lam", type=float, default=None)
    q.add_argument("--tie", default=None)
    q.add_argument("--image", default=None)
    q.add_argument("--limit", type=int, default=1_000_000)
    q.set_defaults(func=cmd_oracle)

    q = sub.add_parser("fixture", help="write a reference fixture to files")
    q.add_argument("name", choices=("ce1", "ce2"))
    q.add_argument("--out-dir", default=".")
    q.set_defaults(func=cmd_fixture)

    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CutLimitExceeded, BudgetError) as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
