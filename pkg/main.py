#!/usr/bin/env python3
"""pairnms CLI - paired-box NMS, detection evaluation and crowd simulation."""

import json
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np
import typer
from rich.console import Console

from config import (
    BENCH_REPEAT,
    BENCH_SIZES,
    EVAL_CONFIG,
    EXIT_DATA,
    EXIT_IO,
    LOG_LEVEL,
    NMS_CONFIG,
    NOISE_CONFIG,
    ORACLE_THRESHOLDS,
    WORKERS,
    setup_logging,
)
from feedback import display_bench, display_config, display_nms_summary, display_report, display_survival
from ingest import ImageRecord, IngestError, format_header, read_odgt, read_predictions, write_odgt, write_predictions
from metrics import EvalConfig, evaluate, write_curve
from suppression import NmsConfig, canonical_method, suppress
from synthcrowd import (
    CrowdSceneSpec,
    NoiseModel,
    generate_dataset,
    oracle_survival_table,
    random_detections,
    simulate_detector,
)

app = typer.Typer(
    name="pairnms",
    help="Paired full/visible box NMS (R2NMS and baselines), pedestrian detection metrics and crowd simulation.",
    add_completion=False,
)
console = Console()


@contextmanager
def _exit_codes():
    """Map failures to exit codes: 3 for I/O, 4 for bad data."""
    try:
        yield
    except IngestError as e:
        console.print(f"\n[red]Data error: {e}[/red]")
        raise typer.Exit(EXIT_DATA)
    except OSError as e:
        console.print(f"\n[red]I/O error: {e}[/red]")
        raise typer.Exit(EXIT_IO)
    except ValueError as e:
        console.print(f"\n[red]Error: {e}[/red]")
        raise typer.Exit(EXIT_DATA)


def _parse_list(text: str, kind, name: str) -> list:
    try:
        return [kind(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise typer.BadParameter(f"'{text}' is not a comma-separated list of {kind.__name__}", param_hint=name)


def _nms_config(method: str, threshold: float, sigma: float, score_floor: float, shuffle_seed: Optional[int]) -> NmsConfig:
    try:
        return NmsConfig(
            threshold=threshold,
            method=canonical_method(method),
            soft_sigma=sigma,
            score_floor=score_floor,
            shuffle_seed=shuffle_seed,
        )
    except ValueError as e:
        raise typer.BadParameter(str(e))


def _densities(rec: ImageRecord) -> dict:
    out = {}
    for d in rec.dets:
        if "density" not in d.extra:
            raise ValueError(f"Image '{rec.image_id}': detection {d.id} has no 'density' for adaptive NMS")
        out[d.id] = float(d.extra["density"])
    return out


@app.callback()
def main(
    verbose: bool = typer.Option(
        False,
        "--verbose", "-v",
        help="Show debug logging.",
    ),
):
    """
    Paired-box suppression and evaluation toolkit.

    R2NMS suppresses on visible boxes and reports full boxes, keeping heavily
    overlapped pedestrians that full-box NMS would remove.
    """
    setup_logging("DEBUG" if verbose else LOG_LEVEL)


@app.command()
def nms(
    in_preds: Path = typer.Argument(..., help="Prediction file to suppress."),
    out_preds: Path = typer.Argument(..., help="Where to write surviving detections."),
    method: str = typer.Option(
        NMS_CONFIG["method"],
        "--method", "-m",
        help="greedy-full, r2 (greedy-visible), soft-linear, soft-gaussian or adaptive.",
    ),
    threshold: float = typer.Option(
        NMS_CONFIG["threshold"],
        "--threshold", "-t",
        help="IoU threshold Omega (suppress when overlap > threshold).",
    ),
    sigma: float = typer.Option(NMS_CONFIG["soft_sigma"], "--sigma", help="Gaussian soft-NMS sigma."),
    score_floor: float = typer.Option(NMS_CONFIG["score_floor"], "--score-floor", help="Soft-NMS pruning cutoff."),
    shuffle_seed: Optional[int] = typer.Option(
        None,
        "--shuffle-seed",
        help="Break score ties in a seeded random order instead of by id.",
    ),
    workers: int = typer.Option(WORKERS, "--workers", "-w", help="Worker threads."),
    quiet: bool = typer.Option(False, "--quiet", "-q", help="Skip the per-image table."),
):
    """
    Apply suppression to every image of a prediction file.

    Densities for adaptive NMS are read from a 'density' field on each box.
    """
    cfg = _nms_config(method, threshold, sigma, score_floor, shuffle_seed)
    echo = {"command": "nms", "input": str(in_preds), "output": str(out_preds), **cfg.to_dict()}

    with _exit_codes():
        records = sorted(read_predictions(in_preds), key=lambda r: r.image_id)

        def run(rec: ImageRecord):
            densities = _densities(rec) if cfg.method == "adaptive" else None
            return suppress(rec.dets, cfg, densities)

        with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
            results = list(pool.map(run, records))

        out = [replace(rec, dets=res.kept) for rec, res in zip(records, results)]
        write_predictions(out_preds, out, header=echo)

    if not quiet:
        display_config("NMS", echo)
        rows = [(rec.image_id, len(rec.dets), len(res.kept), len(res.suppressed))
                for rec, res in zip(records, results)]
        display_nms_summary(rows, cfg.method, cfg.threshold)


@app.command("eval")
def eval_cmd(
    gt_path: Path = typer.Argument(..., help="ODGT ground-truth file."),
    pred_path: Path = typer.Argument(..., help="Prediction file."),
    match_iou: float = typer.Option(EVAL_CONFIG["match_iou"], "--iou", help="Matching IoU threshold."),
    subset: str = typer.Option(
        "all",
        "--subset", "-s",
        help="Visibility subset: all, reasonable, heavy, partial, bare.",
    ),
    min_height: Optional[float] = typer.Option(None, "--min-height", help="Override the subset's minimum height."),
    fppi_points: int = typer.Option(EVAL_CONFIG["fppi_points"], "--fppi-points", help="Reference FPPI samples."),
    visible: bool = typer.Option(True, "--visible/--no-visible", help="Also report MR-V on visible boxes."),
    curves: Optional[Path] = typer.Option(None, "--curves", help="Directory for 'x y' curve files."),
    as_json: bool = typer.Option(False, "--json", help="Print the report as JSON."),
    workers: int = typer.Option(WORKERS, "--workers", "-w", help="Worker threads."),
):
    """
    Evaluate predictions: MR over FPPI [1e-2, 1], AP, recall, and MR-V.
    """
    overrides = {"match_iou": match_iou, "fppi_points": fppi_points}
    if min_height is not None:
        overrides["min_height"] = min_height
    try:
        cfg = EvalConfig.for_subset(subset, **overrides)
    except ValueError as e:
        raise typer.BadParameter(str(e))

    with _exit_codes():
        gts = {rec.image_id: rec.gts for rec in read_odgt(gt_path)}
        dets = {rec.image_id: rec.dets for rec in read_predictions(pred_path)}

        missing_preds = sorted(set(gts) - set(dets))
        missing_gts = sorted(set(dets) - set(gts))
        if missing_preds or missing_gts:
            if missing_preds:
                console.print(f"[red]No predictions for images: {', '.join(missing_preds)}[/red]")
            if missing_gts:
                console.print(f"[red]No ground truth for images: {', '.join(missing_gts)}[/red]")
            raise typer.Exit(EXIT_DATA)

        report = evaluate(dets, gts, cfg, workers)
        report_v = None
        has_visible = any(not (g.visible_missing or g.ignore) for entries in gts.values() for g in entries)
        if visible and has_visible:
            report_v = evaluate(dets, gts, replace(cfg, box_selector="visible"), workers)

        echo = {"command": "eval", "gt": str(gt_path), "pred": str(pred_path), "subset": subset, **cfg.to_dict()}
        if curves is not None:
            curves.mkdir(parents=True, exist_ok=True)
            header = format_header(echo)
            write_curve(curves / "fppi_full.txt", report.fppi_curve, header)
            write_curve(curves / "pr_full.txt", report.pr_curve, header)
            if report_v is not None:
                write_curve(curves / "fppi_visible.txt", report_v.fppi_curve, header)
                write_curve(curves / "pr_visible.txt", report_v.pr_curve, header)

    if as_json:
        payload = {"config": echo, "full": report.to_dict()}
        if report_v is not None:
            payload["visible"] = report_v.to_dict()
        typer.echo(json.dumps(payload, sort_keys=True))
        return

    display_config("EVAL", echo)
    display_report(report, report_v)


@app.command()
def simulate(
    preset: str = typer.Option("crowded", "--preset", "-p", help="Scene preset: sparse or crowded."),
    scenes: int = typer.Option(1, "--scenes", "-n", help="Number of scenes; scene i uses seed + i."),
    seed: int = typer.Option(0, "--seed", help="Base seed for scenes and noise."),
    num_people: Optional[int] = typer.Option(None, "--people", help="Persons per scene."),
    person_height: Optional[float] = typer.Option(None, "--height", help="Mean person height (px)."),
    clusters: Optional[int] = typer.Option(None, "--clusters", help="Cluster count."),
    cluster_spread: Optional[float] = typer.Option(None, "--spread", help="Cluster spread (px)."),
    keep_occluded: bool = typer.Option(False, "--keep-occluded", help="Keep hidden persons as ignored entries."),
    center_jitter: float = typer.Option(NOISE_CONFIG["center_jitter_sigma"], "--center-jitter"),
    size_jitter: float = typer.Option(NOISE_CONFIG["size_jitter_sigma"], "--size-jitter"),
    duplicates: float = typer.Option(NOISE_CONFIG["duplicates_per_gt"], "--duplicates", help="Mean duplicates per person."),
    fp_per_image: float = typer.Option(NOISE_CONFIG["fp_per_image"], "--fp", help="Mean false positives per image."),
    gt_out: Optional[Path] = typer.Option(None, "--gt-out", help="Write ground truth (ODGT)."),
    pred_out: Optional[Path] = typer.Option(None, "--pred-out", help="Write simulated detections."),
    oracle: bool = typer.Option(False, "--oracle", help="Report perfect-detector survival instead."),
    gt_in: Optional[Path] = typer.Option(None, "--gt", help="Run the oracle on an ODGT file instead of scenes."),
    thresholds: str = typer.Option(",".join(f"{t:g}" for t in ORACLE_THRESHOLDS), "--thresholds"),
    methods: str = typer.Option("greedy-full,r2", "--methods", help="Methods for the oracle sweep."),
    table_out: Optional[Path] = typer.Option(None, "--table-out", help="Write the survival table (TSV)."),
    as_json: bool = typer.Option(False, "--json", help="Print the survival table as JSON."),
    workers: int = typer.Option(WORKERS, "--workers", "-w", help="Worker threads."),
):
    """
    Generate synthetic crowd scenes with a noisy paired detector.

    With --oracle, every ground truth becomes an exact score-1.0 detection and
    the table shows how many survive each method and threshold.
    """
    try:
        spec = CrowdSceneSpec.from_preset(
            preset,
            num_people=num_people,
            clusters=clusters,
            cluster_spread=cluster_spread,
            keep_fully_occluded=keep_occluded,
            seed=seed,
        )
        if person_height is not None:
            spec = replace(spec, person_size=(person_height, spec.person_size[1]))
        noise = NoiseModel(
            center_jitter_sigma=center_jitter,
            size_jitter_sigma=size_jitter,
            duplicates_per_gt=duplicates,
            fp_per_image=fp_per_image,
            seed=seed,
        )
        method_names = [canonical_method(m) for m in methods.split(",") if m.strip()]
    except ValueError as e:
        raise typer.BadParameter(str(e))
    if scenes < 0:
        raise typer.BadParameter("--scenes must be non-negative")
    levels = _parse_list(thresholds, float, "--thresholds")
    if any(not 0.0 <= t <= 1.0 for t in levels):
        raise typer.BadParameter("thresholds must lie in [0, 1]", param_hint="--thresholds")
    if not oracle and gt_out is None:
        raise typer.BadParameter("--gt-out is required unless --oracle is given")
    if gt_in is not None and not oracle:
        raise typer.BadParameter("--gt only applies together with --oracle")

    echo = {"command": "simulate", "preset": preset, "scenes": scenes, "oracle": oracle,
            "spec": spec.to_dict(), "noise": noise.to_dict()}

    with _exit_codes():
        if gt_in is not None:
            records = read_odgt(gt_in)
            echo["gt"] = str(gt_in)
        else:
            scene_list = generate_dataset(spec, scenes, workers)
            records = [ImageRecord(image_id=s.image_id, gts=s.gts) for s in scene_list]

        if oracle:
            echo.update({"methods": method_names, "thresholds": levels})
            rows = oracle_survival_table([r.gts for r in records], method_names, levels, seed, workers)
            if table_out is not None:
                with open(table_out, "w", encoding="utf-8") as f:
                    f.write(format_header(echo))
                    f.write("method\tthreshold\tkept\ttotal\tfraction\n")
                    for row in rows:
                        f.write(f"{row.method}\t{row.threshold:g}\t{row.kept}\t{row.total}\t{row.fraction:.9g}\n")
        else:
            write_odgt(gt_out, records, header=echo)
            if pred_out is not None:
                preds = []
                for k, scene in enumerate(scene_list):
                    dets = simulate_detector(scene, replace(noise, seed=seed + k))
                    preds.append(ImageRecord(image_id=scene.image_id, dets=dets))
                write_predictions(pred_out, preds, header=echo)

    if oracle:
        if as_json:
            typer.echo(json.dumps({
                "config": echo,
                "rows": [{"method": r.method, "threshold": r.threshold, "kept": r.kept,
                          "total": r.total, "fraction": r.fraction} for r in rows],
            }, sort_keys=True))
            return
        display_config("SIMULATE", echo)
        display_survival(rows)
    else:
        total = sum(len(r.gts) for r in records)
        console.print(f"[green]Wrote {len(records)} scenes ({total} persons) to {gt_out}[/green]")
        if pred_out is not None:
            console.print(f"[green]Wrote detections to {pred_out}[/green]")


@app.command()
def bench(
    sizes: str = typer.Option(",".join(str(n) for n in BENCH_SIZES), "--sizes", help="Comma-separated detection counts."),
    method: str = typer.Option("greedy-full", "--method", "-m", help="Suppression method."),
    threshold: float = typer.Option(NMS_CONFIG["threshold"], "--threshold", "-t"),
    repeat: int = typer.Option(BENCH_REPEAT, "--repeat", "-r", help="Timed runs per size."),
    seed: int = typer.Option(0, "--seed"),
    plain: bool = typer.Option(False, "--plain", help="Tab-separated output."),
):
    """
    Time one suppression call per size on random paired detections.
    """
    cfg = _nms_config(method, threshold, NMS_CONFIG["soft_sigma"], NMS_CONFIG["score_floor"], None)
    counts = _parse_list(sizes, int, "--sizes")
    if any(n < 0 for n in counts) or repeat < 1:
        raise typer.BadParameter("sizes must be non-negative and --repeat at least 1")

    rows = []
    for n in counts:
        dets = random_detections(n, seed)
        densities = None
        if cfg.method == "adaptive":
            rng = np.random.default_rng(seed)
            densities = {d.id: float(rng.random()) for d in dets}
        elapsed = []
        kept = 0
        for _ in range(repeat):
            start = time.perf_counter()
            result = suppress(dets, cfg, densities)
            elapsed.append(time.perf_counter() - start)
            kept = len(result.kept)
        rows.append((n, repeat, float(np.mean(elapsed)), kept))

    if plain:
        echo = {"command": "bench", "sizes": counts, "repeat": repeat, "seed": seed, **cfg.to_dict()}
        typer.echo(format_header(echo).rstrip("\n"))
        typer.echo("n\trepeat\tmean_seconds\tkept")
        for n, rep, seconds, kept in rows:
            typer.echo(f"{n}\t{rep}\t{seconds:.9f}\t{kept}")
        return
    display_bench(rows, cfg.method)


if __name__ == "__main__":
    app()
