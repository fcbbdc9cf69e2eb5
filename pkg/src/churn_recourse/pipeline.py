"""Pipeline stages shared by the CLI and the test suite.

Each stage reads/writes files under a run directory and is deterministic
given its inputs and seed, with one deliberate exception: wall-clock timing
files.  Those are listed in the manifest's volatile section so that a rerun
with the same seed reproduces every hash in `outputs` exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import audit as audit_mod
from . import metrics as metrics_mod
from .countergan import (
    CounterGanModel,
    RecourseAction,
    TrainConfig,
    distill_surrogate,
    generate_recourse_batch,
    load_bundle,
    save_bundle,
    train,
)
from .data import Dataset, SynthConfig, load_csv, save_csv, save_meta, split, synthesize
from .errors import ArtifactError, ConfigError
from .nn import Mlp
from .rgd import RgdConfig, rgd_batch
from .survival import ChurnClassifier, ForestConfig, fit

MANIFEST_NAME = "manifest.json"


def derive_seed(master_seed: int, stage: str) -> int:
    """Stable per-stage seed from the master seed and the stage name."""
    digest = hashlib.sha256(f"{master_seed}:{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def require_artifact(path: str, producing_stage: str) -> str:
    if not os.path.exists(path):
        raise ArtifactError(
            f"missing artifact {path!r}; produce it with the {producing_stage!r} stage first"
        )
    return path


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def stage_generate_data(
    out_dir: str,
    config: SynthConfig,
    train_fraction: float = 0.5,
    split_seed: Optional[int] = None,
) -> dict[str, str]:
    """Synthesize a panel, split it, and write train/test CSVs plus metadata."""
    os.makedirs(out_dir, exist_ok=True)
    dataset = synthesize(config)
    train_ds, test_ds = split(
        dataset, train_fraction, seed=config.seed + 1 if split_seed is None else split_seed
    )
    paths = {
        "train": os.path.join(out_dir, "train.csv"),
        "test": os.path.join(out_dir, "test.csv"),
        "meta": os.path.join(out_dir, "meta.json"),
    }
    save_csv(train_ds, paths["train"])
    save_csv(test_ds, paths["test"])
    save_meta(dataset.meta, paths["meta"])
    return paths


def stage_train_forest(
    train_csv: str, meta_path: str, out_path: str, config: ForestConfig,
    threshold_days: float = 90.0,
) -> ChurnClassifier:
    data = load_csv(require_artifact(train_csv, "generate-data"),
                    require_artifact(meta_path, "generate-data"), threshold_days)
    classifier = fit(data, config)
    classifier.save(out_path)
    return classifier


def stage_distill(
    forest_path: str, train_csv: str, meta_path: str, out_path: str, seed: int,
    threshold_days: float = 90.0,
) -> tuple[Mlp, float]:
    classifier = ChurnClassifier.load(require_artifact(forest_path, "train-forest"))
    data = load_csv(require_artifact(train_csv, "generate-data"),
                    require_artifact(meta_path, "generate-data"), threshold_days)
    surrogate, agreement = distill_surrogate(classifier, data, seed=seed)
    doc = surrogate.to_json()
    doc["agreement"] = agreement
    with open(out_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    return surrogate, agreement


def load_surrogate(path: str) -> tuple[Mlp, Optional[float]]:
    with open(require_artifact(path, "distill"), encoding="utf-8") as fh:
        doc = json.load(fh)
    return Mlp.from_json(doc), doc.get("agreement")


def stage_train_gan(
    forest_path: str,
    surrogate_path: str,
    train_csv: str,
    meta_path: str,
    out_dir: str,
    config: TrainConfig,
    threshold_days: float = 90.0,
) -> CounterGanModel:
    classifier = ChurnClassifier.load(require_artifact(forest_path, "train-forest"))
    surrogate, agreement = load_surrogate(surrogate_path)
    data = load_csv(require_artifact(train_csv, "generate-data"),
                    require_artifact(meta_path, "generate-data"), threshold_days)
    model = train(data, classifier, config, surrogate=surrogate, surrogate_agreement=agreement)
    save_bundle(model, out_dir)
    return model


# ---------------------------------------------------------------------------
# Recourse generation and its file formats
# ---------------------------------------------------------------------------


def write_actions_csv(actions: Sequence[RecourseAction], feature_names: Sequence[str], path: str) -> None:
    header = ["user_id", "method", "pre_class", "post_class", "cost_sq"] + [
        f"delta__{name}" for name in feature_names
    ]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for a in actions:
            writer.writerow(
                [a.user_id, a.method, a.pre_class, a.post_class, repr(a.cost_sq)]
                + [repr(float(d)) for d in a.delta]
            )


def load_actions_csv(path: str, dataset: Dataset) -> list[RecourseAction]:
    by_id = {r.user_id: r for r in dataset.records}
    actions = []
    with open(require_artifact(path, "recourse"), encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            record = by_id.get(row["user_id"])
            if record is None:
                raise ConfigError(f"action references unknown user {row['user_id']!r}")
            delta = np.array(
                [float(row[f"delta__{m.name}"]) for m in dataset.meta], dtype=float
            )
            actions.append(
                RecourseAction(
                    user_id=row["user_id"],
                    delta=delta,
                    counterfactual=record.features + delta,
                    pre_class=int(row["pre_class"]),
                    post_class=int(row["post_class"]),
                    cost_sq=float(row["cost_sq"]),
                    method=row["method"],
                )
            )
    return actions


def write_timings_csv(user_ids: Sequence[str], timings: Sequence[tuple[float, float]], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user_id", "start", "end", "seconds"])
        for uid, (start, end) in zip(user_ids, timings):
            writer.writerow([uid, repr(start), repr(end), repr(end - start)])


def load_timings_csv(path: str) -> list[tuple[float, float]]:
    out = []
    with open(require_artifact(path, "recourse"), encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.append((float(row["start"]), float(row["end"])))
    return out


def stage_recourse(
    method: str,
    forest_path: str,
    data_csv: str,
    meta_path: str,
    out_dir: str,
    gan_dir: Optional[str] = None,
    rgd_config: Optional[RgdConfig] = None,
    max_users: Optional[int] = None,
    threshold_days: float = 90.0,
) -> dict:
    """Generate actions for every denied user in the given panel.

    Writes actions.csv (deterministic), timings.csv (wall clock, volatile)
    and actions_meta.json.  RGD against forests other than 20 trees is
    permitted but flagged, since the reference comparison pairs RGD with the
    20-tree model only.
    """
    if method not in ("gan", "rgd"):
        raise ConfigError(f"unknown recourse method {method!r}")
    classifier = ChurnClassifier.load(require_artifact(forest_path, "train-forest"))
    data = load_csv(require_artifact(data_csv, "generate-data"),
                    require_artifact(meta_path, "generate-data"), threshold_days)
    x = data.feature_matrix()
    denied_idx = np.nonzero(classifier.classify_batch(x) == 0)[0]
    if max_users is not None:
        denied_idx = denied_idx[:max_users]
    user_ids = [data.records[i].user_id for i in denied_idx]

    flags = []
    if method == "gan":
        if gan_dir is None:
            raise ConfigError("gan recourse needs --gan pointing at a model bundle")
        require_artifact(os.path.join(gan_dir, "bundle.json"), "train-gan")
        model = load_bundle(gan_dir, classifier)
        actions, timings = generate_recourse_batch(model, x[denied_idx], user_ids)
        if model.no_qualifying_checkpoint:
            flags.append("no_qualifying_checkpoint")
    else:
        cfg = rgd_config or RgdConfig()
        actions, timings = rgd_batch(classifier, x[denied_idx], user_ids, data.meta, cfg)
        if classifier.config.n_trees != 20:
            flags.append("rgd_on_nonreference_forest")

    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "actions": os.path.join(out_dir, "actions.csv"),
        "timings": os.path.join(out_dir, "timings.csv"),
        "meta": os.path.join(out_dir, "actions_meta.json"),
    }
    write_actions_csv(actions, [m.name for m in data.meta], paths["actions"])
    write_timings_csv(user_ids, timings, paths["timings"])
    meta = {
        "method": method,
        "forest": os.path.basename(forest_path),
        "n_trees": classifier.config.n_trees,
        "n_denied": int(denied_idx.size),
        "flags": flags,
    }
    with open(paths["meta"], "w", encoding="utf-8", newline="\n") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if flags:
        import sys

        print(f"warning: {', '.join(flags)}", file=sys.stderr)
    return {"paths": paths, "actions": actions, "timings": timings, "flags": flags}


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def build_report(
    classifier: ChurnClassifier,
    test_data: Dataset,
    actions: Sequence[RecourseAction],
    timings: Optional[Sequence[tuple[float, float]]] = None,
    gan_model: Optional[CounterGanModel] = None,
    method: str = "gan",
    flags: Optional[Sequence[str]] = None,
) -> metrics_mod.EvaluationReport:
    """Assemble every metric for one (classifier, recourse-method) pair."""
    det = test_data.determinate()
    x_det = det.feature_matrix()
    y_det = np.array([r.label for r in det.records])
    pred_det = classifier.classify_batch(x_det)

    y0_mask = y_det == 0
    x_all = test_data.feature_matrix()
    pred_all = classifier.classify_batch(x_all)

    labels = {r.user_id: r.label for r in test_data.records}
    post_pairs = [
        (a.post_class, labels[a.user_id]) for a in actions if labels.get(a.user_id) is not None
    ]
    post_acc = (
        metrics_mod.accuracy([p for p, _ in post_pairs], [t for _, t in post_pairs])
        if post_pairs
        else None
    )

    disc_real = disc_fake = None
    if gan_model is not None:
        real = np.array([r.features for r in det.records if r.label == 1])
        if real.size:
            disc_real = float(np.mean(gan_model.discriminator.forward(real)[:, 0] >= 0.5))
        if actions:
            cfs = np.array([a.counterfactual for a in actions])
            disc_fake = float(np.mean(gan_model.discriminator.forward(cfs)[:, 0] < 0.5))

    succ_dists = [np.sqrt(a.cost_sq) for a in actions if a.post_class == 1]
    report = metrics_mod.EvaluationReport(
        method=method,
        n_trees=classifier.config.n_trees,
        model_accuracy_all=metrics_mod.accuracy(pred_det.tolist(), y_det.tolist()),
        model_accuracy_y0=(
            metrics_mod.accuracy(pred_det[y0_mask].tolist(), y_det[y0_mask].tolist())
            if y0_mask.any()
            else None
        ),
        discriminator_accuracy_real=disc_real,
        discriminator_accuracy_fake=disc_fake,
        post_recourse_classifier_accuracy=post_acc,
        percent_denied=metrics_mod.percent_denied(pred_all.tolist()),
        percent_successful_recourse=metrics_mod.percent_successful_recourse(actions),
        mean_cost_successful=metrics_mod.mean_cost_successful(actions),
        mean_distance_successful=float(np.mean(succ_dists)) if succ_dists else None,
        cumulative_cost_denied=metrics_mod.cumulative_cost_denied(actions),
        mean_clock_time_seconds=(
            metrics_mod.mean_clock_time(timings) if timings else None
        ),
        n={
            "test_users": len(test_data.records),
            "determinate_test_users": len(det.records),
            "true_churners": int(y0_mask.sum()),
            "denied": len(actions),
            "successful": int(sum(a.post_class for a in actions)),
            "post_recourse_labelled": len(post_pairs),
        },
        flags=list(flags or []),
    )
    return report


def stage_evaluate(
    forest_path: str,
    test_csv: str,
    meta_path: str,
    actions_dir: str,
    out_dir: str,
    gan_dir: Optional[str] = None,
    threshold_days: float = 90.0,
) -> metrics_mod.EvaluationReport:
    """Write metrics.json (deterministic, no clock) and report.json (full)."""
    classifier = ChurnClassifier.load(require_artifact(forest_path, "train-forest"))
    data = load_csv(require_artifact(test_csv, "generate-data"),
                    require_artifact(meta_path, "generate-data"), threshold_days)
    actions = load_actions_csv(os.path.join(actions_dir, "actions.csv"), data)
    timings = load_timings_csv(os.path.join(actions_dir, "timings.csv"))
    with open(require_artifact(os.path.join(actions_dir, "actions_meta.json"), "recourse"),
              encoding="utf-8") as fh:
        actions_meta = json.load(fh)
    gan_model = load_bundle(gan_dir, classifier) if gan_dir else None
    report = build_report(
        classifier, data, actions, timings, gan_model,
        method=actions_meta["method"], flags=actions_meta.get("flags"),
    )
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "metrics.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_json(include_timing=False))
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_json(include_timing=True))
    return report


def stage_audit(
    train_csv: str,
    test_csv: str,
    meta_path: str,
    actions_dir: str,
    out_dir: str,
    feature_name: Optional[str] = None,
    threshold_days: float = 90.0,
) -> dict[str, str]:
    """Export pca.json, scatter.csv and the cost histogram tables."""
    train_data = load_csv(require_artifact(train_csv, "generate-data"),
                          require_artifact(meta_path, "generate-data"), threshold_days)
    test_data = load_csv(require_artifact(test_csv, "generate-data"), meta_path, threshold_days)
    actions = load_actions_csv(os.path.join(actions_dir, "actions.csv"), test_data)
    if not actions:
        raise ConfigError("no actions to audit")
    truths = {r.user_id: r.label for r in test_data.records}

    pca = audit_mod.fit_pca(train_data.feature_matrix(), n_components=2)
    scatter = audit_mod.build_scatter(actions, pca, truths)

    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "pca": os.path.join(out_dir, "pca.json"),
        "scatter": os.path.join(out_dir, "scatter.csv"),
        "hist_efficacy": os.path.join(out_dir, "hist_cost_by_efficacy.csv"),
        "hist_true_outcome": os.path.join(out_dir, "hist_cost_by_true_outcome.csv"),
    }
    audit_mod.write_pca_json(pca, paths["pca"])
    audit_mod.write_scatter_csv(scatter, paths["scatter"])
    audit_mod.write_histogram_csv(
        audit_mod.cost_histograms(actions, "efficacy"), paths["hist_efficacy"]
    )
    audit_mod.write_histogram_csv(
        audit_mod.cost_histograms(actions, "true_outcome", truths=truths),
        paths["hist_true_outcome"],
    )
    if feature_name is not None:
        names = [m.name for m in test_data.meta]
        if feature_name not in names:
            raise ConfigError(f"unknown feature {feature_name!r}")
        j = names.index(feature_name)
        for split_by, key in (("efficacy", "feat_efficacy"), ("true_outcome", "feat_true_outcome")):
            path = os.path.join(out_dir, f"hist_{feature_name}_by_{split_by}.csv")
            audit_mod.write_histogram_csv(
                audit_mod.cost_histograms(actions, split_by, feature_index=j, truths=truths),
                path,
            )
            paths[key] = path
    return paths


# ---------------------------------------------------------------------------
# Manifest and the full reproduction run
# ---------------------------------------------------------------------------


@dataclass
class RunManifest:
    master_seed: int
    config: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)           # path -> sha256, deterministic
    volatile_outputs: dict = field(default_factory=dict)  # wall-clock-bearing files

    def add_output(self, root: str, path: str) -> None:
        self.outputs[os.path.relpath(path, root)] = sha256_file(path)

    def add_volatile(self, root: str, path: str) -> None:
        self.volatile_outputs[os.path.relpath(path, root)] = sha256_file(path)

    def save(self, root: str) -> str:
        path = os.path.join(root, MANIFEST_NAME)
        doc = {
            "master_seed": self.master_seed,
            "config": self.config,
            "outputs": dict(sorted(self.outputs.items())),
            "volatile_outputs": dict(sorted(self.volatile_outputs.items())),
        }
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return path

    @classmethod
    def load(cls, root: str) -> "RunManifest":
        with open(os.path.join(root, MANIFEST_NAME), encoding="utf-8") as fh:
            doc = json.load(fh)
        return cls(
            master_seed=doc["master_seed"],
            config=doc.get("config", {}),
            outputs=doc.get("outputs", {}),
            volatile_outputs=doc.get("volatile_outputs", {}),
        )


REPRO_DEFAULTS = {
    "n_users": 1500,
    "n_features": 24,
    "censor_rate": 0.15,
    "train_fraction": 0.5,
    "forest_sizes": [1, 5, 20],
    "min_leaf_size": 10,
    "gan_iterations": 600,
    "rgd_max_users": 150,
    "rgd_max_steps": 150,
    "audit_feature": "action_count_last15_norm_max",
}


def run_repro(out_dir: str, master_seed: int, overrides: Optional[dict] = None) -> RunManifest:
    """Full experiment grid: forests of 1/5/20 trees with GAN recourse, plus
    the RGD baseline on the 20-tree forest, with reports and audit exports.
    """
    cfg = dict(REPRO_DEFAULTS)
    if overrides:
        unknown = set(overrides) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown repro config keys: {sorted(unknown)}")
        cfg.update(overrides)

    os.makedirs(out_dir, exist_ok=True)
    manifest = RunManifest(master_seed=master_seed, config=cfg)

    data_paths = stage_generate_data(
        os.path.join(out_dir, "data"),
        SynthConfig(
            n_users=int(cfg["n_users"]),
            n_features=int(cfg["n_features"]),
            seed=derive_seed(master_seed, "data"),
            censor_rate=float(cfg["censor_rate"]),
        ),
        train_fraction=float(cfg["train_fraction"]),
        split_seed=derive_seed(master_seed, "split"),
    )
    for p in data_paths.values():
        manifest.add_output(out_dir, p)

    reports = []
    gan_dirs = {}
    for n_trees in cfg["forest_sizes"]:
        tag = f"{n_trees}"
        forest_path = os.path.join(out_dir, f"forest_{tag}.json")
        stage_train_forest(
            data_paths["train"], data_paths["meta"], forest_path,
            ForestConfig(
                n_trees=int(n_trees),
                min_leaf_size=int(cfg["min_leaf_size"]),
                seed=derive_seed(master_seed, f"forest-{tag}"),
            ),
        )
        manifest.add_output(out_dir, forest_path)

        surrogate_path = os.path.join(out_dir, f"surrogate_{tag}.json")
        stage_distill(forest_path, data_paths["train"], data_paths["meta"], surrogate_path,
                      seed=derive_seed(master_seed, f"distill-{tag}"))
        manifest.add_output(out_dir, surrogate_path)

        gan_dir = os.path.join(out_dir, f"gan_{tag}")
        stage_train_gan(
            forest_path, surrogate_path, data_paths["train"], data_paths["meta"], gan_dir,
            TrainConfig(
                max_iterations=int(cfg["gan_iterations"]),
                seed=derive_seed(master_seed, f"gan-{tag}"),
            ),
        )
        gan_dirs[n_trees] = gan_dir
        for name in ("generator.json", "discriminator.json", "surrogate.json",
                     "constraints.json", "training_log.csv", "bundle.json"):
            manifest.add_output(out_dir, os.path.join(gan_dir, name))

        rec_dir = os.path.join(out_dir, f"recourse_gan_{tag}")
        stage_recourse("gan", forest_path, data_paths["test"], data_paths["meta"], rec_dir,
                       gan_dir=gan_dir)
        manifest.add_output(out_dir, os.path.join(rec_dir, "actions.csv"))
        manifest.add_output(out_dir, os.path.join(rec_dir, "actions_meta.json"))
        manifest.add_volatile(out_dir, os.path.join(rec_dir, "timings.csv"))

        eval_dir = os.path.join(out_dir, f"eval_gan_{tag}")
        reports.append(
            stage_evaluate(forest_path, data_paths["test"], data_paths["meta"], rec_dir,
                           eval_dir, gan_dir=gan_dir)
        )
        manifest.add_output(out_dir, os.path.join(eval_dir, "metrics.json"))
        manifest.add_volatile(out_dir, os.path.join(eval_dir, "report.json"))

    # RGD baseline against the largest forest.
    ref = max(cfg["forest_sizes"])
    forest_path = os.path.join(out_dir, f"forest_{ref}.json")
    rgd_dir = os.path.join(out_dir, f"recourse_rgd_{ref}")
    stage_recourse(
        "rgd", forest_path, data_paths["test"], data_paths["meta"], rgd_dir,
        rgd_config=RgdConfig(
            max_steps=int(cfg["rgd_max_steps"]), seed=derive_seed(master_seed, "rgd"),
        ),
        max_users=int(cfg["rgd_max_users"]),
    )
    manifest.add_output(out_dir, os.path.join(rgd_dir, "actions.csv"))
    manifest.add_output(out_dir, os.path.join(rgd_dir, "actions_meta.json"))
    manifest.add_volatile(out_dir, os.path.join(rgd_dir, "timings.csv"))
    eval_dir = os.path.join(out_dir, f"eval_rgd_{ref}")
    reports.append(
        stage_evaluate(forest_path, data_paths["test"], data_paths["meta"], rgd_dir, eval_dir)
    )
    manifest.add_output(out_dir, os.path.join(eval_dir, "metrics.json"))
    manifest.add_volatile(out_dir, os.path.join(eval_dir, "report.json"))

    audit_paths = stage_audit(
        data_paths["train"], data_paths["test"], data_paths["meta"],
        os.path.join(out_dir, f"recourse_gan_{ref}"), os.path.join(out_dir, "audit"),
        feature_name=str(cfg["audit_feature"]),
    )
    for p in audit_paths.values():
        manifest.add_output(out_dir, p)

    tables = (
        metrics_mod.render_accuracy_table(reports)
        + "\n"
        + metrics_mod.render_recourse_table(reports)
    )
    report_txt = os.path.join(out_dir, "report.txt")
    with open(report_txt, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(tables)
    manifest.add_volatile(out_dir, report_txt)

    manifest.save(out_dir)
    return manifest
