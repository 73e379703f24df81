"""Command-line pipeline: generate, encode, fit, reconstruct, refine, evaluate.

One executable with subcommands; every run is deterministic given the
config and seeds.  Exit codes: 0 success, 1 usage error, 2 data/format
error, 3 numerical failure.  ``--threads`` (or the SLORD_THREADS
environment variable) caps worker parallelism; all current operations
run sequentially for reproducibility, so the cap is recorded but has no
further effect.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import basis as basis_mod
from . import codec, metrics, recon, refine, synth, volume
from .centroid import DEFAULT_LAMBDA, spherical_centroid
from .errors import NumericalError, ParityError, SphContourError

DEFAULT_S_DEG = 5
DEFAULT_K = 200

thread_cap: int | None = None


# ---------------------------------------------------------------------------
# helpers


def _grid_from(s_deg: int, axis: str) -> codec.AngleGrid:
    return codec.AngleGrid(int(s_deg), axis)


def _load_manifest(path: Path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _manifest_instances(manifest: dict, base: Path):
    """Yield (mask, label) for every labeled instance in a manifest."""
    for name in manifest["volumes"]:
        vol = volume.read_volume(base / name)
        for lab in vol.labels():
            yield vol.label_mask(lab), lab


def _decode_asd(desc: codec.ContourDescriptor, mask: volume.VoxelVolume) -> float:
    points, _ = codec.decode(desc)
    return metrics.contour_loss(points, volume.surface(mask), mask.spacing)


def _instance_descriptor(mask, grid, lam):
    sol = spherical_centroid(mask, lam)
    center_mm = np.asarray(sol.point, dtype=np.float64) * mask.spacing_array()
    return codec.encode(volume.surface(mask), center_mm, grid, mask.spacing), sol


def _write_csv(path, rows: list[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as fh:
        spec = json.load(fh)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    kind = spec.get("kind", "corpus")
    seed = int(spec.get("seed", 0))
    spacing = tuple(spec.get("spacing", [1.0, 1.0, 1.0]))
    grid = _grid_from(spec.get("s_deg", DEFAULT_S_DEG), spec.get("axis", "z_up"))

    if kind == "corpus":
        cspec = synth.CorpusSpec(int(spec["count"]), seed, spacing,
                                 spec.get("family", "mixed"))
        masks, records = synth.make_corpus(cspec, grid)
        names = []
        for i, mask in enumerate(masks):
            name = f"vol_{i:03d}.svol"
            relabeled = volume.VoxelVolume(
                (mask.data != 0).astype(np.int32), mask.spacing)
            volume.write_volume(relabeled, out_dir / name)
            names.append(name)
        rec_entries = [dict(label=r.label, volume=i, descriptor_row=i,
                            center_mm=r.coarse_center_mm.tolist(),
                            size_mm=r.size_mm.tolist())
                       for i, r in enumerate(records)]
    elif kind == "spine":
        rng = synth.SplitMix64(seed)
        params = tuple(synth.sample_vertebra_params(
            rng, "round" if i % 2 == 0 else "boxy") for i in range(int(spec["count"])))
        sspec = synth.SpineSpec(params, int(spec.get("gap", 3)), spacing, seed)
        spine, records = synth.make_spine(sspec, grid)
        volume.write_volume(spine, out_dir / "spine.svol")
        names = ["spine.svol"]
        if args.corrupt:
            corrupted = synth.corrupt(spine, args.corrupt, args.corrupt_seed)
            volume.write_volume(corrupted, out_dir / "spine_coarse.svol")
        rec_entries = [dict(label=r.label, volume=0, descriptor_row=i,
                            center_mm=r.coarse_center_mm.tolist(),
                            size_mm=r.size_mm.tolist())
                       for i, r in enumerate(records)]
    else:
        raise SphContourError(f"unknown gen kind {kind!r}")

    codec.write_descriptors([r.descriptor for r in records], out_dir / "contours.sdesc")
    manifest = {
        "kind": kind,
        "seed": seed,
        "spacing": list(spacing),
        "grid": {"s_deg": grid.interval_deg, "axis": grid.axis_convention},
        "volumes": names,
        "descriptors": "contours.sdesc",
        "m_bar_mm": synth.mean_instance_size(records).tolist(),
        "records": rec_entries,
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    print(f"wrote {len(names)} volume(s), {len(rec_entries)} instance(s) to {out_dir}")
    return 0


def cmd_encode(args) -> int:
    vol = volume.read_volume(args.volume)
    grid = _grid_from(args.s, args.axis)
    descriptors = []
    for lab in vol.labels():
        desc, _ = _instance_descriptor(vol.label_mask(lab), grid, args.lam)
        descriptors.append(desc)
    if not descriptors:
        raise SphContourError(f"{args.volume}: no labels to encode")
    codec.write_descriptors(descriptors, args.out)
    print(f"encoded {len(descriptors)} instance(s) -> {args.out}")
    return 0


def cmd_centroid(args) -> int:
    vol = volume.read_volume(args.volume)
    for lab in vol.labels():
        sol = spherical_centroid(vol.label_mask(lab), args.lam)
        print(json.dumps({"label": lab, "point": list(sol.point),
                          "objective": sol.objective, "delta": list(sol.delta)}))
    return 0


def cmd_basis(args) -> int:
    descriptors = codec.read_descriptors(args.desc)
    matrix = basis_mod.build_matrix(descriptors)
    k = min(args.k, min(matrix.data.shape))
    fit = basis_mod.fit_svd if args.method == "svd" else basis_mod.fit_pca
    b = fit(matrix, k)
    basis_mod.write_basis(b, args.out)
    print(f"{args.method} basis k={k} from {matrix.count} descriptors -> {args.out}")
    return 0


def cmd_reconstruct(args) -> int:
    descriptors = codec.read_descriptors(args.desc)
    b = basis_mod.read_basis(args.basis)
    vol = volume.read_volume(args.volume)
    labels = vol.labels()
    if len(labels) != len(descriptors):
        raise SphContourError(
            f"{len(descriptors)} descriptors vs {len(labels)} labels in {args.volume}")
    ks = sorted(set(int(k) for k in args.k.split(","))) if args.k else [b.k]
    for k in ks:
        if not 1 <= k <= b.k:
            raise SphContourError(f"k={k} outside basis rank {b.k}")
    rows = ["k,label,asd_mm"]
    out_dir = Path(args.out_dir) if args.out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    for k in ks:
        bk = b.truncated(k)
        for desc, lab in zip(descriptors, labels):
            mask = vol.label_mask(lab)
            coeffs = basis_mod.project(bk, desc)
            rec = basis_mod.reconstruct(bk, coeffs, desc.center)
            rows.append(f"{k},{lab},{_decode_asd(rec, mask):.6f}")
            if out_dir and k == ks[-1]:
                fill = recon.radial_fill(rec, mask.dims, mask.spacing)
                volume.write_volume(fill, out_dir / f"recon_k{k}_label{lab}.svol")
                if args.emit_mesh:
                    mesh_dir = Path(args.emit_mesh)
                    mesh_dir.mkdir(parents=True, exist_ok=True)
                    fld = recon.radial_field(rec, mask.dims, mask.spacing)
                    mesh = recon.marching_cubes(fld)
                    recon.write_stl(mesh, mesh_dir / f"recon_k{k}_label{lab}.stl")
    if args.csv:
        _write_csv(args.csv, rows)
    else:
        print("\n".join(rows))
    return 0


def _refine_config(args, truth_records) -> refine.RefineConfig:
    cfg: dict = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    grid = _grid_from(cfg.get("s_deg", DEFAULT_S_DEG), cfg.get("axis", "z_up"))
    m_bar = cfg.get("m_bar_mm")
    if args.manifest:
        m_bar = _load_manifest(Path(args.manifest)).get("m_bar_mm", m_bar)
    if m_bar is None:
        m_bar = synth.mean_instance_size(truth_records).tolist()
    jitter = (tuple(int(v) for v in args.jitter.split(","))
              if args.jitter else tuple(cfg.get("jitter_voxels", (0, 0, 0))))
    patch = (tuple(int(v) for v in args.patch.split(","))
             if args.patch else tuple(cfg.get("patch_size", (64, 64, 64))))
    return refine.RefineConfig(
        grid=grid,
        patch_size=patch,
        window=int(cfg.get("window", 3)),
        lam=float(cfg.get("lambda", DEFAULT_LAMBDA)),
        m_bar_mm=tuple(float(v) for v in m_bar),
        jitter_voxels=jitter,
        jitter_seed=args.jitter_seed if args.jitter_seed is not None
        else int(cfg.get("jitter_seed", 0)),
        fill_method=args.fill or cfg.get("fill_method", "radial"),
        emit_mesh_dir=args.emit_mesh,
    )


def cmd_refine(args) -> int:
    coarse = volume.read_volume(args.coarse)
    b = basis_mod.read_basis(args.basis)
    if args.predictor != "oracle":
        raise SphContourError(f"unknown predictor {args.predictor!r}")
    truth = volume.read_volume(args.truth)
    records = refine.records_from_volume(truth, b.grid)
    config = _refine_config(args, records)
    if args.emit_mesh:
        Path(args.emit_mesh).mkdir(parents=True, exist_ok=True)
    predictor = refine.OraclePredictor(records)
    refined = refine.refine_volume(coarse, predictor, b, config)
    volume.write_volume(refined, args.out)
    print(f"refined {len(coarse.labels())} label(s) -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    pred = volume.read_volume(args.pred)
    truth = volume.read_volume(args.truth)
    report = metrics.evaluate_labels(pred, truth)
    print(json.dumps(report.to_dict(), indent=2))
    if args.csv:
        _write_csv(args.csv, report.to_csv_rows())
    return 0


def cmd_ablate(args) -> int:
    manifest = _load_manifest(Path(args.manifest))
    base = Path(args.manifest).parent
    lam = DEFAULT_LAMBDA
    instances = list(_manifest_instances(manifest, base))
    rows: list[str]

    if args.which == "axis":
        rows = ["axis,mean_asd_mm"]
        for axis in codec.AXIS_CONVENTIONS:
            grid = _grid_from(DEFAULT_S_DEG, axis)
            asd = [_decode_asd(_instance_descriptor(m, grid, lam)[0], m)
                   for m, _ in instances]
            rows.append(f"{axis},{np.mean(asd):.6f}")
    elif args.which == "interval":
        rows = ["s_deg,mean_asd_mm"]
        for s in (3, 5, 10):
            grid = _grid_from(s, "z_up")
            asd = [_decode_asd(_instance_descriptor(m, grid, lam)[0], m)
                   for m, _ in instances]
            rows.append(f"{s},{np.mean(asd):.6f}")
    elif args.which == "rank":
        grid = _grid_from(manifest["grid"]["s_deg"], manifest["grid"]["axis"])
        descriptors = codec.read_descriptors(base / manifest["descriptors"])
        matrix = basis_mod.build_matrix(descriptors)
        full = min(matrix.data.shape)
        b = basis_mod.fit_svd(matrix, full)
        rows = ["k,mean_asd_mm"]
        for k in [k for k in (100, 200, 500) if k <= full] + [full]:
            bk = b.truncated(k)
            asd = [_decode_asd(
                basis_mod.reconstruct(bk, basis_mod.project(bk, d), d.center), m)
                for d, (m, _) in zip(descriptors, instances)]
            rows.append(f"{k},{np.mean(asd):.6f}")
    elif args.which == "centroid":
        grid = _grid_from(DEFAULT_S_DEG, "z_up")
        rows = ["center_type,mean_asd_mm"]
        for kind in ("spherical", "plain"):
            asd = []
            for m, _ in instances:
                if kind == "spherical":
                    desc, _ = _instance_descriptor(m, grid, lam)
                else:
                    center = np.round(volume.mask_centroid(m) / m.spacing_array())
                    center_mm = center * m.spacing_array()
                    desc = codec.encode(volume.surface(m), center_mm, grid, m.spacing)
                asd.append(_decode_asd(desc, m))
            rows.append(f"{kind},{np.mean(asd):.6f}")
    elif args.which == "method":
        descriptors = codec.read_descriptors(base / manifest["descriptors"])
        matrix = basis_mod.build_matrix(descriptors)
        k = min(DEFAULT_K, min(matrix.data.shape))
        rows = ["method,k,mean_asd_mm"]
        for name, fit in (("svd", basis_mod.fit_svd), ("pca", basis_mod.fit_pca)):
            b = fit(matrix, k)
            asd = [_decode_asd(
                basis_mod.reconstruct(b, basis_mod.project(b, d), d.center), m)
                for d, (m, _) in zip(descriptors, instances)]
            rows.append(f"{name},{k},{np.mean(asd):.6f}")
    else:
        raise SphContourError(f"unknown ablation {args.which!r}")

    if args.out:
        _write_csv(args.out, rows)
    else:
        print("\n".join(rows))
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sphcontour",
        description="Spherical contour descriptors and refinement for voxel masks")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap worker parallelism (default: all cores)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic corpus or spine")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--corrupt", choices=synth.CORRUPT_MODES, default=None,
                   help="also write a corrupted coarse volume (spine only)")
    p.add_argument("--corrupt-seed", type=int, default=7)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("encode", help="encode per-label contour descriptors")
    p.add_argument("--volume", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--s", type=int, default=DEFAULT_S_DEG)
    p.add_argument("--axis", choices=codec.AXIS_CONVENTIONS, default="z_up")
    p.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("centroid", help="print spherical centroids per label")
    p.add_argument("--volume", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    p.set_defaults(func=cmd_centroid)

    p = sub.add_parser("basis", help="fit a low-rank contour basis")
    p.add_argument("--desc", required=True)
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--method", choices=("svd", "pca"), default="svd")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_basis)

    p = sub.add_parser("reconstruct", help="reconstruct descriptors and report ASD")
    p.add_argument("--desc", required=True)
    p.add_argument("--basis", required=True)
    p.add_argument("--volume", required=True,
                   help="labeled volume supplying the reference boundaries")
    p.add_argument("--k", default=None, help="comma-separated rank sweep")
    p.add_argument("--csv", default=None)
    p.add_argument("--out-dir", default=None, help="write filled masks here")
    p.add_argument("--emit-mesh", default=None, help="write STL meshes here")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("refine", help="refine a coarse labeled volume")
    p.add_argument("--coarse", required=True)
    p.add_argument("--basis", required=True)
    p.add_argument("--predictor", default="oracle")
    p.add_argument("--truth", required=True,
                   help="ground-truth volume backing the oracle predictor")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--manifest", default=None, help="manifest supplying m_bar")
    p.add_argument("--patch", default=None, help="patch size px,py,pz")
    p.add_argument("--jitter", default=None, help="coarse-center jitter jx,jy,jz")
    p.add_argument("--jitter-seed", type=int, default=None)
    p.add_argument("--fill", choices=("radial", "mesh"), default=None)
    p.add_argument("--emit-mesh", default=None)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", help="per-label dice/hd/asd report")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--csv", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation sweep, emit CSV")
    p.add_argument("--which", required=True,
                   choices=("axis", "interval", "rank", "centroid", "method"))
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    global thread_cap
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    env_threads = os.environ.get("SLORD_THREADS")
    thread_cap = args.threads or (int(env_threads) if env_threads else None)
    try:
        return args.func(args)
    except (NumericalError, ParityError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except (SphContourError, OSError, json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
