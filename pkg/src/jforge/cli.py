"""Command-line front end: training, attacks, campaign metrics, demos.

Every command validates its flags, runs deterministically under a fixed
seed, writes its outputs atomically, and finishes by writing a
manifest.json echoing the effective configuration. Exit codes: 0 success,
1 internal error, 2 usage or input error.
"""

import argparse
import json
import os
import sys
import traceback

import numpy as np

from . import dataio
from .craft import CraftParams, craft, craft_general, run_campaign
from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    IdxFormatError,
    ModelFormatError,
    ValidationError,
)
from .jacobian import forward_derivative
from .metrics import (
    campaign_stats,
    distance_matrix,
    hardness_campaign,
    regularity_score,
    robustness,
)
from .network import (
    cnn_architecture,
    load_model,
    mlp_architecture,
    save_model,
    toy_and_architecture,
)
from .train import (
    LabeledDataset,
    TrainConfig,
    accuracy,
    and_dataset,
    augment_retrain,
    init_params,
    round_half_up,
    sgd_train,
)

PAPER_GRID = [0.3, 1.3, 2.6, 5.1, 7.7, 10.2, 12.8, 25.5, 38.3]

USAGE_ERRORS = (
    ConfigError,
    DataError,
    IdxFormatError,
    ModelFormatError,
    ValidationError,
    OSError,
)


def _write_manifest(args: argparse.Namespace) -> None:
    payload = {k: v for k, v in vars(args).items() if k != "handler"}
    path = os.path.join(args.out, "manifest.json")
    dataio._atomic_write(path, (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode())


def _ensure_out(args) -> None:
    os.makedirs(args.out, exist_ok=True)


def _load_dataset(images_path, labels_path, count=None, seed=None) -> LabeledDataset:
    images = dataio.load_idx_images(images_path)
    labels = dataio.load_idx_labels(labels_path)
    ds = dataio.to_dataset(images, labels)
    if count is not None:
        ds = dataio.subset(ds, count, seed)
    return ds


def _parse_arch(spec: str, input_side: int, activation: str):
    if spec == "cnn":
        return cnn_architecture(side=input_side)
    if spec.startswith("mlp:"):
        hidden = [int(h) for h in spec[4:].split(",") if h]
        return mlp_architecture(input_side * input_side, hidden, 10, activation)
    raise ConfigError(f"unknown architecture {spec!r} (use mlp:h1,h2,... or cnn)")


def _craft_params(args) -> CraftParams:
    return CraftParams(
        upsilon=args.upsilon,
        theta=args.theta,
        variant=args.variant,
        tap="probabilities" if args.tap == "probs" else args.tap,
    )


def _campaign_rows(rows):
    for sample_id, r in rows:
        yield [
            sample_id,
            r.source,
            r.target,
            int(r.success),
            r.iterations,
            repr(r.distortion_pct),
            r.failure_reason or "",
        ]


CAMPAIGN_HEADER = [
    "sample_id", "source", "target", "success",
    "iterations", "distortion_pct", "failure_reason",
]


def cmd_train(args) -> int:
    _ensure_out(args)
    train_ds = _load_dataset(args.images, args.labels, args.samples)
    test_ds = None
    if args.test_images and args.test_labels:
        test_ds = _load_dataset(args.test_images, args.test_labels, args.test_samples)
    images = dataio.load_idx_images(args.images)
    arch = _parse_arch(args.arch, images.rows, args.activation)
    config = TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch,
        seed=args.seed,
        loss=args.loss,
    )
    net, history = sgd_train(init_params(arch, args.seed), train_ds, config, test_ds)
    save_model(net, os.path.join(args.out, "model.txt"))
    dataio.write_csv(
        os.path.join(args.out, "history.csv"),
        ["epoch", "loss", "train_acc", "test_acc"],
        [
            [h.epoch, repr(h.loss), repr(h.train_accuracy),
             "" if h.test_accuracy is None else repr(h.test_accuracy)]
            for h in history
        ],
    )
    final_train = history[-1].train_accuracy if history else accuracy(net, train_ds)
    print(f"train accuracy: {final_train:.4f}")
    if history and history[-1].test_accuracy is not None:
        print(f"test accuracy:  {history[-1].test_accuracy:.4f}")
    _write_manifest(args)
    return 0


def cmd_attack(args) -> int:
    _ensure_out(args)
    net = load_model(args.model)
    ds = _load_dataset(args.images, args.labels, args.samples)
    params = _craft_params(args)
    rows = []
    skipped = 0
    for i in range(len(ds)):
        x = ds.sample(i, net.input_shape)
        source = int(ds.labels[i])
        targets = range(ds.class_count) if args.target is None else [args.target]
        for t in targets:
            if t == source:
                if args.target is not None:
                    rows.append([i, source, t, "", 0, repr(0.0), "source_equals_target"])
                    skipped += 1
                continue
            r = craft(net, x, t, params)
            rows.append([i, r.source, r.target, int(r.success), r.iterations,
                         repr(r.distortion_pct), r.failure_reason or ""])
            if args.save_pgm and r.success:
                side = int(round(np.sqrt(net.input_size)))
                dataio.write_pgm(
                    r.x_star.reshape(side, side),
                    os.path.join(args.out, f"adv_{i}_{r.source}to{r.target}.pgm"),
                )
    dataio.write_csv(os.path.join(args.out, "attack.csv"), CAMPAIGN_HEADER, rows)
    crafted = [r for r in rows if r[3] != ""]
    wins = sum(r[3] for r in crafted)
    print(f"crafted {len(crafted)} samples, {wins} successful, {skipped} skipped")
    _write_manifest(args)
    return 0


def cmd_evaluate(args) -> int:
    _ensure_out(args)
    net = load_model(args.model)
    if args.samples is not None and args.samples < 1:
        raise DataError("evaluate needs at least one sample")
    ds = _load_dataset(args.images, args.labels, args.samples)
    params = _craft_params(args)
    rows = run_campaign(net, ds.features, ds.labels, params, ds.class_count)
    summary = campaign_stats([r for _, r in rows])
    classes = ds.class_count
    tau = np.zeros((classes, classes))
    eps = np.full((classes, classes), np.nan)
    for (s, t), stats in summary.pairs.items():
        tau[s, t] = stats.success_rate
        if stats.mean_distortion is not None:
            eps[s, t] = stats.mean_distortion
    dataio.write_csv(os.path.join(args.out, "campaign.csv"), CAMPAIGN_HEADER,
                     _campaign_rows(rows))
    dataio.write_matrix_csv(os.path.join(args.out, "tau_matrix.csv"), tau)
    dataio.write_matrix_csv(os.path.join(args.out, "eps_matrix.csv"), eps)
    dataio.write_report(
        os.path.join(args.out, "summary.txt"),
        {
            "success_rate": summary.success_rate,
            "mean_distortion_all": summary.mean_distortion_all,
            "mean_distortion_successful": summary.mean_distortion_successful,
            "total": summary.total,
        },
    )
    print(f"success rate {summary.success_rate:.4f} over {summary.total} crafts")
    _write_manifest(args)
    return 0


def cmd_hardness(args) -> int:
    _ensure_out(args)
    net = load_model(args.model)
    ds = _load_dataset(args.images, args.labels, args.samples)
    grid = [float(v) for v in args.grid.split(",")]
    params = _craft_params(args)
    matrix = hardness_campaign(net, ds, grid, params)
    dataio.write_matrix_csv(os.path.join(args.out, "hardness_matrix.csv"), matrix)
    print(f"hardness matrix over grid {grid}")
    _write_manifest(args)
    return 0


def cmd_distance(args) -> int:
    _ensure_out(args)
    net = load_model(args.model)
    ds = _load_dataset(args.images, args.labels, args.samples)
    tap = "probabilities" if args.tap == "probs" else args.tap
    matrix = distance_matrix(net, ds, args.mode, tap)
    r = robustness(net, ds, "min", args.mode, tap)
    dataio.write_matrix_csv(os.path.join(args.out, "distance_matrix.csv"), matrix)
    dataio.write_report(os.path.join(args.out, "robustness.txt"), {"robustness": r})
    print(f"robustness {r:.6f}")
    _write_manifest(args)
    return 0


def cmd_detect(args) -> int:
    _ensure_out(args)
    images = dataio.load_idx_images(args.images)
    labels = dataio.load_idx_labels(args.labels)
    count = images.count if args.samples is None else min(args.samples, images.count)
    rows = []
    for i in range(count):
        image = images.pixels[i].astype(float) / 255.0
        rows.append([i, int(labels[i]), repr(regularity_score(image))])
    dataio.write_csv(os.path.join(args.out, "regularity.csv"),
                     ["sample_id", "label", "score"], rows)
    print(f"scored {count} samples")
    _write_manifest(args)
    return 0


def cmd_retrain(args) -> int:
    _ensure_out(args)
    net = load_model(args.model)
    train_ds = _load_dataset(args.images, args.labels, args.samples)
    test_ds = _load_dataset(args.test_images, args.test_labels, args.attack_samples)
    params = _craft_params(args)

    before = [r for _, r in run_campaign(net, test_ds.features, test_ds.labels,
                                         params, test_ds.class_count)]
    before_stats = campaign_stats(before)

    per_sample = max(1, args.adv_count // (train_ds.class_count - 1))
    adv_features, adv_labels = [], []
    for i in range(min(per_sample, len(train_ds))):
        x = train_ds.sample(i, net.input_shape)
        for t in range(train_ds.class_count):
            if t == int(train_ds.labels[i]):
                continue
            r = craft(net, x, t, params)
            if r.success:
                adv_features.append(r.x_star.reshape(-1))
                adv_labels.append(int(train_ds.labels[i]))
    adversarial = LabeledDataset(
        np.array(adv_features).reshape(len(adv_features), -1),
        np.array(adv_labels, dtype=int),
        train_ds.class_count,
    )
    config = TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch,
        seed=args.seed,
        loss=args.loss,
    )
    hardened, _ = augment_retrain(net, train_ds, adversarial, config)
    save_model(hardened, os.path.join(args.out, "hardened_model.txt"))

    after = [r for _, r in run_campaign(hardened, test_ds.features, test_ds.labels,
                                        params, test_ds.class_count)]
    after_stats = campaign_stats(after)

    dataio.write_csv(os.path.join(args.out, "before.csv"), CAMPAIGN_HEADER,
                     _campaign_rows(list(enumerate(before))))
    dataio.write_csv(os.path.join(args.out, "after.csv"), CAMPAIGN_HEADER,
                     _campaign_rows(list(enumerate(after))))
    dataio.write_report(
        os.path.join(args.out, "comparison.txt"),
        {
            "adversarial_added": len(adversarial),
            "success_rate_before": before_stats.success_rate,
            "success_rate_after": after_stats.success_rate,
            "mean_distortion_successful_before": before_stats.mean_distortion_successful,
            "mean_distortion_successful_after": after_stats.mean_distortion_successful,
        },
    )
    print(
        f"success rate {before_stats.success_rate:.4f} -> {after_stats.success_rate:.4f}"
    )
    _write_manifest(args)
    return 0


def cmd_demo_and(args) -> int:
    _ensure_out(args)
    dataset = and_dataset(args.samples)
    config = TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch,
        seed=args.seed,
        loss="mean_squared_error",
    )
    net, _ = sgd_train(init_params(toy_and_architecture(), args.seed), dataset, config)
    save_model(net, os.path.join(args.out, "and_model.txt"))

    corners = {}
    for x1, x2 in [(0, 0), (0, 1), (1, 0), (1, 1)]:
        out = float(net.forward(np.array([x1, x2], dtype=float))[-1][0])
        corners[f"corner_{x1}{x2}"] = round_half_up(out)

    steps = np.round(np.arange(0, 101) * 0.01, 2)
    surface_rows, derivative_rows = [], []
    for x1 in steps:
        for x2 in steps:
            x = np.array([x1, x2])
            value = float(net.forward(x)[-1][0])
            d_x2 = float(forward_derivative(net, x, "probabilities").values[0, 1])
            surface_rows.append([f"{x1:.2f}", f"{x2:.2f}", repr(value)])
            derivative_rows.append([f"{x1:.2f}", f"{x2:.2f}", repr(d_x2)])
    dataio.write_csv(os.path.join(args.out, "and_surface.csv"),
                     ["x1", "x2", "f"], surface_rows)
    dataio.write_csv(os.path.join(args.out, "and_derivative.csv"),
                     ["x1", "x2", "df_dx2"], derivative_rows)

    x = np.array([1.0, 0.37])
    params = CraftParams(upsilon=100.0, theta=0.05, variant="increase",
                         tap="probabilities", max_iter=8)
    result = craft_general(net, x, np.array([1.0]), params, 0.5)
    f_x = float(net.forward(x)[-1][0])
    f_star = float(net.forward(result.x_star)[-1][0])
    dataio.write_report(
        os.path.join(args.out, "adversarial.txt"),
        {
            "x": f"({x[0]},{x[1]})",
            "x_star": f"({result.x_star[0]},{result.x_star[1]})",
            "delta_x2": result.x_star[1] - x[1],
            "f_x": f_x,
            "f_x_star": f_star,
            "rounded_f_x": round_half_up(f_x),
            "rounded_f_x_star": round_half_up(f_star),
            "success": result.success,
            **corners,
        },
    )
    print(
        f"corners {[corners[f'corner_{a}{b}'] for a, b in ['00', '01', '10', '11']]}, "
        f"F(x)={f_x:.3f} -> F(x*)={f_star:.3f}"
    )
    _write_manifest(args)
    return 0


def _add_craft_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--upsilon", type=float, default=14.5,
                   help="max distortion, percent of features")
    p.add_argument("--theta", type=float, default=1.0,
                   help="feature change per selected feature")
    p.add_argument("--variant", choices=["increase", "decrease"], default="increase")
    p.add_argument("--tap", choices=["logits", "probs"], default="logits")


def _add_data_flags(p: argparse.ArgumentParser, require_model=True) -> None:
    if require_model:
        p.add_argument("--model", required=True, help="model file")
    p.add_argument("--images", required=True, help="IDX image file")
    p.add_argument("--labels", required=True, help="IDX label file")
    p.add_argument("--samples", type=int, default=None,
                   help="use only the first N samples")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jforge",
        description="Train small feedforward nets and craft targeted "
                    "adversarial samples from their Jacobians.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a classifier on IDX data")
    _add_data_flags(p, require_model=False)
    p.add_argument("--test-images", default=None)
    p.add_argument("--test-labels", default=None)
    p.add_argument("--test-samples", type=int, default=None)
    p.add_argument("--arch", default="mlp:200,200")
    p.add_argument("--activation", choices=["sigmoid", "relu", "tanh"], default="relu")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch", type=int, default=500)
    p.add_argument("--loss", choices=["cross_entropy", "mean_squared_error"],
                   default="cross_entropy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("attack", help="craft adversarial samples per target")
    _add_data_flags(p)
    _add_craft_flags(p)
    p.add_argument("--target", type=int, default=None,
                   help="single target class (default: all foreign classes)")
    p.add_argument("--save-pgm", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_attack)

    p = sub.add_parser("evaluate", help="campaign with per-class-pair matrices")
    _add_data_flags(p)
    _add_craft_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("hardness", help="hardness matrix over a budget grid")
    _add_data_flags(p)
    _add_craft_flags(p)
    p.add_argument("--grid", default=",".join(str(v) for v in PAPER_GRID))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_hardness)

    p = sub.add_parser("distance", help="adversarial distance matrix + robustness")
    _add_data_flags(p)
    p.add_argument("--mode", choices=["single", "pairwise"], default="pairwise")
    p.add_argument("--tap", choices=["logits", "probs"], default="logits")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_distance)

    p = sub.add_parser("detect", help="regularity scores for a sample set")
    p.add_argument("--images", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_detect)

    p = sub.add_parser("retrain", help="augment with adversarial samples and re-attack")
    _add_data_flags(p)
    _add_craft_flags(p)
    p.add_argument("--test-images", required=True)
    p.add_argument("--test-labels", required=True)
    p.add_argument("--attack-samples", type=int, default=100)
    p.add_argument("--adv-count", type=int, default=1800)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch", type=int, default=500)
    p.add_argument("--loss", choices=["cross_entropy", "mean_squared_error"],
                   default="cross_entropy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_retrain)

    p = sub.add_parser("demo-and", help="train the toy AND net and dump its surfaces")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.0663)
    p.add_argument("--batch", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_demo_and)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
