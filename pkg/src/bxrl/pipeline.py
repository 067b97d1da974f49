"""Stage implementations behind the CLI.

Every stage embeds the hash of its own parameters plus the hashes of its
input files into its outputs, and ``run_evaluate`` refuses to combine
artifacts whose recorded input hashes no longer match the files on disk.
Stages compute everything first and write files last, so failures do not
leave partial outputs.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .attribution import attribute_dataset
from .bc import train_cluster_models
from .checkpoint import load_bc, load_vqvae, save_bc, save_vqvae
from .config import bc_config_from, config_hash, file_sha256, load_toml, train_config_from
from .data import load_dataset, save_dataset
from .errors import InvalidConfig, IoError, ParseError, StaleArtifact
from .graph import segment_tokens
from .metrics import (
    MetricsReport,
    average_fidelity_score,
    cluster_structure_scores,
)
from .plots import label_strip_svg, line_plot_svg
from .synthetic import generate_gridlava, generate_pointmass
from .vqvae import TokenSequence, normalized_recon_loss, tokenize, train_vqvae


def _write_text(path, text: str) -> None:
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(f"cannot write {path!r}: {exc}") from exc


def _write_json(path, obj) -> None:
    _write_text(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _read_json(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise IoError(f"cannot read {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: bad JSON: {exc}") from exc


def _write_csv(path, header: list[str], rows: list[list], chash: str) -> None:
    lines = [f"# config_hash={chash}"]
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(str(v) for v in row))
    _write_text(path, "\n".join(lines) + "\n")


def run_gen_data(env: str, seed: int, episodes: int, out, grid_size: int = 8,
                 episode_len: int = 60, image_obs: bool = False) -> dict:
    params = {
        "command": "gen-data",
        "env": env,
        "seed": seed,
        "episodes": episodes,
        "grid_size": grid_size,
        "episode_len": episode_len,
        "image_obs": image_obs,
    }
    if env == "gridlava":
        ds = generate_gridlava(seed, episodes, grid_size=grid_size, image_obs=image_obs)
    elif env == "pointmass":
        ds = generate_pointmass(seed, episodes, episode_len=episode_len)
    else:
        raise InvalidConfig(f"unknown environment {env!r}")
    ds.config_hash = config_hash(params)
    save_dataset(ds, out)
    return {
        "command": "gen-data",
        "out": str(out),
        "episodes": len(ds),
        "timesteps": ds.num_timesteps,
        "config_hash": ds.config_hash,
    }


def run_train_vqvae(data, config, out_ckpt) -> dict:
    cfg_sections = load_toml(config) if config else {}
    cfg = train_config_from(cfg_sections.get("vqvae", {}))
    ds = load_dataset(data)
    data_hash = file_sha256(data)
    model, curve = train_vqvae(ds, cfg)
    chash = config_hash(
        {"command": "train-vqvae", "config": cfg.to_json(), "data": data_hash}
    )
    save_vqvae(
        model,
        out_ckpt,
        extra_metadata={
            "config_hash": chash,
            "inputs": {"data": data_hash},
            "curve": {
                "recon": curve.recon,
                "vq": curve.vq,
                "occupancy": curve.occupancy,
                "final_occupancy": curve.final_occupancy,
            },
        },
    )
    return {
        "command": "train-vqvae",
        "out": str(out_ckpt),
        "final_recon": curve.recon[-1],
        "final_vq": curve.vq[-1],
        "occupancy": curve.final_occupancy,
        "config_hash": chash,
    }


def run_tokenize(ckpt, data, out) -> dict:
    model, _ = load_vqvae(ckpt)
    ds = load_dataset(data)
    sequences = tokenize(model, ds)
    hashes = {"ckpt": file_sha256(ckpt), "data": file_sha256(data)}
    chash = config_hash({"command": "tokenize", **hashes})
    _write_json(
        out,
        {
            "config_hash": chash,
            "inputs": hashes,
            "num_codes": model.cfg.num_codes,
            "sequences": [[int(t) for t in seq.tokens] for seq in sequences],
        },
    )
    used = len({int(t) for seq in sequences for t in seq.tokens})
    return {
        "command": "tokenize",
        "out": str(out),
        "episodes": len(sequences),
        "tokens_used": used,
        "config_hash": chash,
    }


def _load_tokens(path) -> tuple[dict, list[TokenSequence]]:
    obj = _read_json(path)
    if "sequences" not in obj:
        raise ParseError(f"{path}: missing 'sequences'")
    seqs = [
        TokenSequence(traj_index=i, tokens=np.asarray(toks, dtype=np.int64))
        for i, toks in enumerate(obj["sequences"])
    ]
    return obj, seqs


def run_segment(tokens, ckpt, similarity_weight: float, out, num_clusters=None,
                smoothing_window: int = 5, seed: int = 0,
                gaussian_similarity: bool = True, bandwidth: str = "nn_median") -> dict:
    token_obj, seqs = _load_tokens(tokens)
    model, _ = load_vqvae(ckpt)
    assignment, graph, decomp = segment_tokens(
        seqs,
        model.codebook.data,
        similarity_weight=similarity_weight,
        num_clusters=num_clusters,
        smoothing_window=smoothing_window,
        seed=seed,
        gaussian_similarity=gaussian_similarity,
        bandwidth=bandwidth,
    )
    hashes = {"tokens": file_sha256(tokens), "ckpt": file_sha256(ckpt)}
    params = {
        "command": "segment",
        "lambda": similarity_weight,
        "k": num_clusters,
        "smoothing_window": smoothing_window,
        "seed": seed,
        "gaussian_similarity": gaussian_similarity,
        "bandwidth": bandwidth,
        **hashes,
    }
    chash = config_hash(params)
    _write_json(
        out,
        {
            "config_hash": chash,
            "inputs": hashes,
            "k": assignment.num_clusters,
            "lambda": similarity_weight,
            "token_to_cluster": {
                str(tok): int(c) for tok, c in sorted(assignment.token_to_cluster.items())
            },
            "episodes": [[int(v) for v in lab] for lab in assignment.labels],
            "eigenvalues": [float(v) for v in decomp.eigenvalues],
            "smoothing_window": smoothing_window,
            "seed": seed,
        },
    )
    return {
        "command": "segment",
        "out": str(out),
        "k": assignment.num_clusters,
        "nodes": graph.num_nodes,
        "config_hash": chash,
    }


def run_train_bc(data, labels, out_dir, config=None) -> dict:
    cfg_sections = load_toml(config) if config else {}
    cfg = bc_config_from(cfg_sections.get("bc", {}))
    ds = load_dataset(data)
    seg_obj = _read_json(labels)
    label_arrays = [np.asarray(lab, dtype=np.int64) for lab in seg_obj["episodes"]]
    policy, models = train_cluster_models(ds, label_arrays, cfg)
    hashes = {"data": file_sha256(data), "labels": file_sha256(labels)}
    chash = config_hash({"command": "train-bc", "config": cfg.to_json(), **hashes})
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out_dir}: {exc}") from exc
    save_bc(policy, out_dir / "policy.bxrl", extra_metadata={"config_hash": chash})
    for cid, model in models.items():
        save_bc(
            model,
            out_dir / f"cluster_{cid}.bxrl",
            extra_metadata={"config_hash": chash, "cluster": cid},
        )
    _write_json(
        out_dir / "manifest.json",
        {
            "config_hash": chash,
            "inputs": hashes,
            "clusters": sorted(models),
            "bc_config": cfg.to_json(),
        },
    )
    return {
        "command": "train-bc",
        "out": str(out_dir),
        "clusters": sorted(models),
        "config_hash": chash,
    }


def _load_bc_dir(bc_dir):
    bc_dir = Path(bc_dir)
    manifest = _read_json(bc_dir / "manifest.json")
    policy, _ = load_bc(bc_dir / "policy.bxrl")
    models = {}
    for cid in manifest["clusters"]:
        models[int(cid)], _ = load_bc(bc_dir / f"cluster_{cid}.bxrl")
    return manifest, policy, models


def run_attribute(policy, bc_dir, data, out, episodes: int = 20,
                  actions: int = 200, seed: int = 0) -> dict:
    ds = load_dataset(data)
    manifest, _, models = _load_bc_dir(bc_dir)
    policy_model, _ = load_bc(policy)
    result = attribute_dataset(
        policy_model, models, ds, n_episodes=episodes, n_actions=actions, seed=seed
    )
    chash = config_hash(
        {
            "command": "attribute",
            "episodes": episodes,
            "actions": actions,
            "seed": seed,
            "policy": file_sha256(policy),
            "data": file_sha256(data),
            "bc_manifest": manifest["config_hash"],
        }
    )
    result.to_csv(out, config_hash=chash)
    counts = np.bincount(
        [r.k_star for r in result.records], minlength=max(result.cluster_ids) + 1
    )
    return {
        "command": "attribute",
        "out": str(out),
        "n_records": len(result.records),
        "attribution_counts": {str(c): int(counts[c]) for c in result.cluster_ids},
        "config_hash": chash,
    }


def _check_fresh(name: str, recorded: str, actual: str) -> None:
    if recorded != actual:
        raise StaleArtifact(
            f"{name} was produced from a different input (recorded hash "
            f"{recorded[:12]}..., file is now {actual[:12]}...); regenerate it"
        )


def run_evaluate(data, ckpt, tokens, segments, bc_dir, out_dir,
                 episodes: int = 20, actions: int = 200, seed: int = 0) -> dict:
    ds = load_dataset(data)
    model, model_meta = load_vqvae(ckpt)
    token_obj, seqs = _load_tokens(tokens)
    seg_obj = _read_json(segments)
    manifest, policy, models = _load_bc_dir(bc_dir)

    data_hash = file_sha256(data)
    ckpt_hash = file_sha256(ckpt)
    _check_fresh("checkpoint", model_meta["inputs"]["data"], data_hash)
    _check_fresh("token file", token_obj["inputs"]["data"], data_hash)
    _check_fresh("token file", token_obj["inputs"]["ckpt"], ckpt_hash)
    _check_fresh("segment file", seg_obj["inputs"]["tokens"], file_sha256(tokens))
    _check_fresh("segment file", seg_obj["inputs"]["ckpt"], ckpt_hash)
    _check_fresh("bc directory", manifest["inputs"]["data"], data_hash)
    _check_fresh("bc directory", manifest["inputs"]["labels"], file_sha256(segments))

    labels = [np.asarray(lab, dtype=np.int64) for lab in seg_obj["episodes"]]
    afs = average_fidelity_score(
        policy, models, labels, ds, n_episodes=episodes, n_actions=actions, seed=seed
    )
    token_to_cluster = {int(t): int(c) for t, c in seg_obj["token_to_cluster"].items()}
    sil, db = cluster_structure_scores(model.codebook.data, seqs, token_to_cluster)
    ari = None
    if ds.has_mode_labels:
        from .metrics import adjusted_rand

        ari = adjusted_rand(
            np.concatenate(labels),
            np.concatenate([t.mode_labels for t in ds.trajectories]),
        )
    report = MetricsReport(
        afs_attributed=afs.attributed,
        afs_random=afs.randomized,
        silhouette=sil,
        davies_bouldin=db,
        occupancy=model_meta["curve"]["final_occupancy"],
        normalized_recon=normalized_recon_loss(model, ds),
        ari_vs_planted=ari,
        config={
            "lambda": seg_obj["lambda"],
            "num_codes": model.cfg.num_codes,
            "k": seg_obj["k"],
            "vqvae_seed": model.cfg.seed,
            "segment_seed": seg_obj["seed"],
            "eval_seed": seed,
            "n_episodes": afs.n_episodes,
            "n_actions": afs.n_actions,
        },
    )
    chash = config_hash(
        {
            "command": "evaluate",
            "episodes": episodes,
            "actions": actions,
            "seed": seed,
            "data": data_hash,
            "ckpt": ckpt_hash,
            "tokens": file_sha256(tokens),
            "segments": file_sha256(segments),
            "bc": manifest["config_hash"],
        }
    )
    out_dir = Path(out_dir)
    _write_json(out_dir / "metrics.json", {"config_hash": chash, "report": report.to_json()})
    header = [
        "afs_attributed", "afs_random", "silhouette", "davies_bouldin",
        "occupancy", "normalized_recon", "ari_vs_planted", "k", "lambda",
        "num_codes", "n_episodes", "n_actions",
    ]
    row = [
        repr(report.afs_attributed), repr(report.afs_random), repr(report.silhouette),
        repr(report.davies_bouldin), repr(report.occupancy), repr(report.normalized_recon),
        "" if ari is None else repr(ari), seg_obj["k"], seg_obj["lambda"],
        model.cfg.num_codes, afs.n_episodes, afs.n_actions,
    ]
    _write_csv(out_dir / "metrics.csv", header, [row], chash)
    return {
        "command": "evaluate",
        "out": str(out_dir),
        "afs_attributed": report.afs_attributed,
        "afs_random": report.afs_random,
        "silhouette": report.silhouette,
        "ari_vs_planted": report.ari_vs_planted,
        "config_hash": chash,
    }


def _sweep_workers() -> int:
    raw = os.environ.get("BXRL_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise InvalidConfig(f"BXRL_THREADS must be an integer, got {raw!r}") from None


def _parallel_map(fn, payloads: list):
    workers = _sweep_workers()
    if workers <= 1 or len(payloads) <= 1:
        return [fn(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, payloads))


def _lambda_job(payload):
    seqs_tokens, codebook, lam, window, seed = payload
    seqs = [
        TokenSequence(traj_index=i, tokens=t) for i, t in enumerate(seqs_tokens)
    ]
    assignment, _, _ = segment_tokens(
        seqs, codebook, similarity_weight=lam, smoothing_window=window, seed=seed
    )
    sil, db = cluster_structure_scores(codebook, seqs, assignment.token_to_cluster)
    return lam, assignment.num_clusters, sil, db


def run_sweep_lambda(data, ckpt, grid: str, out_dir, smoothing_window: int = 5,
                     seed: int = 0) -> dict:
    try:
        lams = [float(v) for v in grid.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise InvalidConfig(f"bad lambda grid {grid!r}: {exc}") from exc
    if not lams:
        raise InvalidConfig("lambda grid is empty")
    model, _ = load_vqvae(ckpt)
    ds = load_dataset(data)
    seqs = tokenize(model, ds)
    payloads = [
        ([s.tokens for s in seqs], model.codebook.data, lam, smoothing_window, seed)
        for lam in lams
    ]
    results = _parallel_map(_lambda_job, payloads)
    chash = config_hash(
        {
            "command": "sweep-lambda",
            "grid": lams,
            "smoothing_window": smoothing_window,
            "seed": seed,
            "data": file_sha256(data),
            "ckpt": file_sha256(ckpt),
        }
    )
    out_dir = Path(out_dir)
    rows = [
        [repr(lam), k, repr(sil), repr(db)] for lam, k, sil, db in results
    ]
    _write_csv(out_dir / "lambda_sweep.csv", ["lambda", "k", "silhouette", "davies_bouldin"], rows, chash)
    svg = line_plot_svg(
        [r[0] for r in results],
        {
            "silhouette": [r[2] for r in results],
            "davies_bouldin": [r[3] for r in results],
        },
        x_label="lambda",
        y_label="score",
        title="Clustering quality vs blend weight",
    )
    _write_text(out_dir / "lambda_sweep.svg", f"<!-- config_hash={chash} -->\n" + svg)
    return {
        "command": "sweep-lambda",
        "out": str(out_dir),
        "rows": len(results),
        "config_hash": chash,
    }


def _codebook_job(payload):
    ds, cfg_json = payload
    cfg = train_config_from(cfg_json)
    model, curve = train_vqvae(ds, cfg)
    return cfg.num_codes, cfg.seed, normalized_recon_loss(model, ds), curve.final_occupancy


def run_sweep_codebook(data, sizes: str, out_dir, config=None, seeds: str = "0") -> dict:
    try:
        size_list = [int(v) for v in sizes.split(",") if v.strip() != ""]
        seed_list = [int(v) for v in seeds.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise InvalidConfig(f"bad sizes/seeds: {exc}") from exc
    if not size_list or not seed_list:
        raise InvalidConfig("sizes and seeds must be non-empty")
    cfg_sections = load_toml(config) if config else {}
    base = cfg_sections.get("vqvae", {})
    ds = load_dataset(data)
    payloads = []
    for size in size_list:
        for seed in seed_list:
            cfg_json = dict(base)
            cfg_json["num_codes"] = size
            cfg_json["seed"] = seed
            payloads.append((ds, cfg_json))
    results = _parallel_map(_codebook_job, payloads)
    chash = config_hash(
        {
            "command": "sweep-codebook",
            "sizes": size_list,
            "seeds": seed_list,
            "config": base,
            "data": file_sha256(data),
        }
    )
    out_dir = Path(out_dir)
    rows = [[n, seed, repr(recon), repr(occ)] for n, seed, recon, occ in results]
    _write_csv(
        out_dir / "codebook_sweep.csv",
        ["num_codes", "seed", "normalized_recon", "occupancy"],
        rows,
        chash,
    )
    mean_recon = [
        float(np.mean([r[2] for r in results if r[0] == n])) for n in size_list
    ]
    mean_occ = [
        float(np.mean([r[3] for r in results if r[0] == n])) for n in size_list
    ]
    svg = line_plot_svg(
        size_list,
        {"normalized_recon": mean_recon, "occupancy": mean_occ},
        x_label="codebook size",
        y_label="score",
        title="Reconstruction and occupancy vs codebook size",
    )
    _write_text(out_dir / "codebook_sweep.svg", f"<!-- config_hash={chash} -->\n" + svg)
    return {
        "command": "sweep-codebook",
        "out": str(out_dir),
        "rows": len(results),
        "config_hash": chash,
    }


def run_report(run_dir, out_dir) -> dict:
    run_dir = Path(run_dir)
    if not run_dir.is_dir():
        raise IoError(f"run directory {str(run_dir)!r} does not exist")
    out_dir = Path(out_dir)
    collected = []
    for pattern in ("**/*.csv", "**/*.svg"):
        for src in sorted(run_dir.glob(pattern)):
            rel = src.relative_to(run_dir)
            dst = out_dir / "tables" / rel.name if src.suffix == ".csv" else out_dir / "plots" / rel.name
            try:
                dst.parent.mkdir(parents=True, exist_ok=True)
                dst.write_bytes(src.read_bytes())
            except OSError as exc:
                raise IoError(f"cannot copy {src}: {exc}") from exc
            collected.append(str(rel))
    strips = []
    for src in sorted(run_dir.glob("**/segments*.json")):
        seg_obj = _read_json(src)
        if "episodes" in seg_obj:
            svg = label_strip_svg(seg_obj["episodes"])
            dst = out_dir / "plots" / f"{src.stem}_strips.svg"
            _write_text(dst, f"<!-- config_hash={seg_obj.get('config_hash', '')} -->\n" + svg)
            strips.append(str(dst.relative_to(out_dir)))
            collected.append(str(src.relative_to(run_dir)))
    if not collected:
        raise IoError(f"no report inputs found under {str(run_dir)!r}")
    index = "\n".join(sorted(collected)) + "\n"
    _write_text(out_dir / "collected.txt", index)
    return {
        "command": "report",
        "out": str(out_dir),
        "collected": len(collected),
        "label_strips": strips,
    }
