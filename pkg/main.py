import argparse
import logging
import sys
import time
from collections.abc import Callable
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from tqdm import tqdm

from tactile.config_schema import ExperimentConfig, TankMode, config_hash, load_config
from tactile.dataset import NormStats, build_dataset
from tactile.evaluation import (
    MetricsReport,
    build_heatmap,
    expert_baseline,
    metrics,
    percentage_error,
    run_safety_experiment,
    run_tank_comparison,
    run_transfer_experiment,
    safety_skill,
)
from tactile.exceptions import (
    ArtifactError,
    CheckpointVersionError,
    ConfigError,
    DivergenceError,
    SimulationFault,
    TactileError,
)
from tactile.load import (
    MANIFEST_NAME,
    file_sha256,
    load_dataset,
    read_json,
    save_dataframe_to_file,
    save_json_report,
    save_power_trace,
)
from tactile.logging_config import setup_logging
from tactile.power import PowerTrace
from tactile.seeding import derive_seed, rng_for
from tactile.simulation import run_skill
from tactile.skills import SkillProfile, csv_to_skill, generate_pattern, sample_skill, skill_to_csv
from tactile.surface import SurfaceModel
from tactile.tcn import TcnModel
from tactile.training import load_checkpoint, predict_power, save_checkpoint, train

COMMANDS = ("collect", "train", "estimate", "heatmap", "eval", "safety", "compare")
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_SIMULATION = 3
EXIT_DIVERGENCE = 4
# Architecture keys that must agree between a checkpoint and the experiment config
_ARCHITECTURE_KEYS = ("window", "kernel_size", "filters", "dilations", "decoder_hidden")


class ExperimentPipeline:
    """Orchestrates collection, training, estimation and the experiments from one configuration."""

    def __init__(self, config: ExperimentConfig, out_dir: Path):
        self.config = config
        self.out_dir = out_dir
        self.config_hash = config_hash(config)

    @property
    def dataset_dir(self) -> Path:
        return self.out_dir / "dataset"

    @property
    def model_dir(self) -> Path:
        return self.out_dir / "model"

    @property
    def checkpoint_path(self) -> Path:
        return self.model_dir / "checkpoint.npz"

    @property
    def reports_dir(self) -> Path:
        return self.out_dir / "reports"

    def _surface(self, name: str) -> SurfaceModel:
        return SurfaceModel(self.config.surface(name), name=name)

    def _desired_force(self) -> np.ndarray:
        return np.array(self.config.skills.desired_force)

    def _load_model(self) -> tuple[TcnModel, NormStats]:
        """Loads the trained checkpoint and checks it was built for the configured architecture."""
        if not self.checkpoint_path.exists():
            raise ArtifactError(f"No checkpoint at {self.checkpoint_path}; run 'train' first")
        model, norm_stats, metadata = load_checkpoint(self.checkpoint_path)
        expected = self.config.model.model_dump(mode="json")
        recorded = metadata["architecture"]
        mismatched = [key for key in _ARCHITECTURE_KEYS if recorded.get(key) != expected[key]]
        if mismatched:
            raise CheckpointVersionError(
                f"{self.checkpoint_path} was trained with a different {', '.join(mismatched)} than configured"
            )
        if metadata.get("config_hash") != self.config_hash:
            logging.warning("Checkpoint was trained under a different configuration")
        return model, norm_stats

    def _test_split(self) -> list[tuple[str, SkillProfile, PowerTrace]]:
        """Held-out trajectories recorded at training time."""
        splits = read_json(self.model_dir / "splits.json")
        pairs, names, _ = load_dataset(self.dataset_dir)
        by_name = dict(zip(names, pairs, strict=True))
        missing = [name for name in splits.get("test", []) if name not in by_name]
        if missing:
            raise ArtifactError(f"Test trajectories missing from the dataset: {', '.join(missing)}")
        return [(name, *by_name[name]) for name in splits.get("test", [])]

    def _collect_one(self, surface: SurfaceModel, index: int) -> dict[str, Any]:
        seed = self.config.seed
        name = f"skill_{index:03d}"
        entry: dict[str, Any] = {
            "name": name,
            "index": index,
            "seed": derive_seed(seed, "collect", index),
            "pattern": None,
            "skill_file": f"skills/{name}.csv",
            "trace_file": f"traces/{name}.csv",
            "skill_sha256": None,
            "trace_sha256": None,
            "status": "ok",
            "error": None,
            "truncated": False,
        }
        try:
            skill = sample_skill(surface, self.config.skills, rng_for(seed, "collect", index), self.config.dynamics.dt)
            entry["pattern"] = skill.pattern.value if skill.pattern else None
            entry["truncated"] = skill.truncated
            trace = run_skill(
                self.config, surface, skill, TankMode.SCALAR_HIGH, seed=derive_seed(seed, "collect/noise", index)
            )
        except SimulationFault as e:
            logging.warning(f"Simulation of {name} failed: {e} {e.payload}")
            entry["status"] = "failed"
            entry["error"] = str(e)
            return entry

        skill_path = self.dataset_dir / entry["skill_file"]
        trace_path = self.dataset_dir / entry["trace_file"]
        skill_to_csv(skill, skill_path)
        save_power_trace(trace.power_trace(), trace_path, epsilon=self.config.tank.epsilon)
        entry["skill_sha256"] = file_sha256(skill_path)
        entry["trace_sha256"] = file_sha256(trace_path)
        return entry

    def cmd_collect(self) -> Path:
        """Generates skills, records their ground-truth power with an unconstrained tank and writes the manifest."""
        surface = self._surface(self.config.skills.surface)
        count = self.config.skills.count
        entries = [self._collect_one(surface, index) for index in tqdm(range(count), desc="Collecting skills")]
        failed = sum(entry["status"] != "ok" for entry in entries)
        manifest = {"seed": self.config.seed, "surface": surface.name, "entries": entries}
        save_json_report(manifest, self.dataset_dir / MANIFEST_NAME, self.config_hash)
        if failed:
            logging.warning(f"{failed} of {count} skills failed to simulate; see {MANIFEST_NAME}")
        if count and failed == count:
            raise SimulationFault("every skill failed to simulate", {"count": count})
        return self.dataset_dir

    def cmd_train(self) -> Path:
        """Trains the estimator on the collected dataset, or fine-tunes the decoder of the existing checkpoint."""
        pairs, names, manifest = load_dataset(self.dataset_dir)
        training = self.config.training
        base_model: TcnModel | None = None
        base_stats: NormStats | None = None
        if training.trainable == "decoder":
            base_model, base_stats = self._load_model()
            logging.info(f"Fine-tuning the decoder of {self.checkpoint_path}")

        dataset = build_dataset(
            pairs,
            window=self.config.model.window,
            fractions=training.split,
            seed=derive_seed(self.config.seed, "split"),
            stats_stride=training.stats_stride,
            names=names,
            norm_stats=base_stats,
        )
        self.model_dir.mkdir(parents=True, exist_ok=True)
        save_json_report(
            {split: dataset.trajectory_names(split) for split in dataset.splits},
            self.model_dir / "splits.json",
            self.config_hash,
        )
        try:
            model, history = train(dataset, self.config.model, training, model=base_model)
        except DivergenceError as e:
            save_dataframe_to_file(e.history, self.model_dir / "history.csv")
            raise

        save_dataframe_to_file(history, self.model_dir / "history.csv")
        provenance = {"config_hash": self.config_hash, "dataset_config_hash": manifest.get("config_hash")}
        save_checkpoint(model, dataset.norm_stats, self.checkpoint_path, provenance)
        return self.checkpoint_path

    def cmd_estimate(self) -> Path:
        """Writes predicted power traces for the configured skill files, or for the test split."""
        model, norm_stats = self._load_model()
        if self.config.estimate.skill_files:
            skills = [(path.stem, csv_to_skill(path)) for path in self.config.estimate.skill_files]
        else:
            skills = [(name, skill) for name, skill, _ in self._test_split()]

        estimates_dir = self.out_dir / "estimates"
        summary = {}
        for name, skill in tqdm(skills, desc="Estimating power"):
            predicted = predict_power(model, skill, norm_stats)
            save_power_trace(predicted, estimates_dir / f"{name}.csv", epsilon=self.config.tank.epsilon)
            summary[name] = predicted.total_energy()
        save_json_report({"predicted_energy_J": summary}, self.reports_dir / "estimate.json", self.config_hash)
        return estimates_dir

    def cmd_heatmap(self) -> Path:
        """Predicted task energy of the template skill started from every grid node."""
        model, norm_stats = self._load_model()
        heatmap = self.config.heatmap
        grid = build_heatmap(
            model,
            norm_stats,
            self._surface(heatmap.surface),
            heatmap,
            self._desired_force(),
            self.config.tank.epsilon,
            shape=self.config.skills.shape,
            dt=self.config.dynamics.dt,
            seed=derive_seed(self.config.seed, "heatmap"),
            scheduler=self.config.scheduler,
        )
        output_path = self.out_dir / "heatmap" / "heatmap.csv"
        save_dataframe_to_file(pd.DataFrame(grid.to_rows(), columns=["u", "v", "energy_J"]), output_path)
        valid = grid.energy[grid.valid]
        summary = {
            "surface": heatmap.surface,
            "nodes": int(grid.energy.size),
            "invalid_nodes": int(grid.energy.size - valid.size),
            "min_energy_J": float(valid.min()) if valid.size else None,
            "max_energy_J": float(valid.max()) if valid.size else None,
        }
        save_json_report(summary, self.reports_dir / "heatmap.json", self.config_hash)
        return output_path

    def cmd_eval(self) -> Path:
        """Test-split metrics, the friction-work baseline and zero-shot transfer to the other surfaces."""
        model, norm_stats = self._load_model()
        mu = self.config.surface(self.config.skills.surface).mu
        in_domain = []
        expert = {}
        for name, skill, truth in tqdm(self._test_split(), desc="Evaluating test split"):
            in_domain.append(metrics(predict_power(model, skill, norm_stats), truth, name, norm_stats))
            expert[name] = percentage_error(expert_baseline(skill, mu), truth.total_energy())
        report = MetricsReport.combine(in_domain) if in_domain else None
        if report is not None:
            logging.info(f"Test split: MAPE {report.mape:.2f}%, MAPE_sum {report.mape_sum:.2f}%")

        surface_names = [self.config.skills.surface] + [
            name for name in self.config.transfer.surfaces if name != self.config.skills.surface
        ]
        transfer = run_transfer_experiment(
            model, norm_stats, self.config, [self._surface(name) for name in surface_names], seed=self.config.seed
        )
        expert_values = np.array([v for v in expert.values() if np.isfinite(v)], dtype=float)
        payload = {
            "in_domain": report.to_dict() if report is not None else None,
            "expert_baseline": {
                "mape_sum": {name: (v if np.isfinite(v) else None) for name, v in expert.items()},
                "mape_sum_mean": float(expert_values.mean()) if expert_values.size else None,
            },
            "transfer": {name: transfer[name].to_dict() for name in surface_names},
        }
        output_path = self.reports_dir / "eval.json"
        save_json_report(payload, output_path, self.config_hash)
        return output_path

    def cmd_safety(self) -> Path:
        """Contact-loss run over the gap with every configured tank mode."""
        surface = self._surface(self.config.safety.surface)
        skill = safety_skill(self.config, surface)
        planned = None
        if TankMode.SCHEDULED in self.config.safety.modes:
            model, norm_stats = self._load_model()
            planned = predict_power(model, skill, norm_stats)
        reports = run_safety_experiment(
            self.config, surface, skill, planned, seed=derive_seed(self.config.seed, "safety")
        )
        output_path = self.reports_dir / "safety.json"
        payload = {"surface": surface.name, "modes": [r.to_dict() for r in reports]}
        save_json_report(payload, output_path, self.config_hash)
        return output_path

    def cmd_compare(self) -> Path:
        """Force tracking of one skill under a low, a high and, with a checkpoint, a scheduled tank."""
        compare = self.config.compare
        surface = self._surface(compare.surface)
        skill = generate_pattern(
            surface,
            compare.pattern,
            (compare.start_uv[0], compare.start_uv[1]),
            compare.speed,
            compare.length,
            self._desired_force(),
            derive_seed(self.config.seed, "compare"),
            heading=compare.heading,
            dt=self.config.dynamics.dt,
            shape=self.config.skills.shape,
        )
        planned = None
        if self.checkpoint_path.exists():
            model, norm_stats = self._load_model()
            planned = predict_power(model, skill, norm_stats)
        else:
            logging.warning(f"No checkpoint at {self.checkpoint_path}; comparing the scalar tanks only")
        reports = run_tank_comparison(
            self.config, surface, skill, planned, seed=derive_seed(self.config.seed, "compare/noise")
        )
        output_path = self.reports_dir / "compare.json"
        payload = {"surface": surface.name, "modes": [r.to_dict() for r in reports]}
        save_json_report(payload, output_path, self.config_hash)
        return output_path

    def run(self, command: str) -> None:
        """Executes one subcommand and exits with the code matching any failure."""
        commands: dict[str, Callable[[], Path]] = {
            "collect": self.cmd_collect,
            "train": self.cmd_train,
            "estimate": self.cmd_estimate,
            "heatmap": self.cmd_heatmap,
            "eval": self.cmd_eval,
            "safety": self.cmd_safety,
            "compare": self.cmd_compare,
        }
        start_time = time.time()
        try:
            output = commands[command]()
        except ConfigError as e:
            logging.error(f"Configuration error: {e}")
            sys.exit(EXIT_CONFIG)
        except SimulationFault as e:
            logging.error(f"Simulation fault: {e} {e.payload}")
            sys.exit(EXIT_SIMULATION)
        except DivergenceError as e:
            logging.error(f"Training diverged: {e}")
            sys.exit(EXIT_DIVERGENCE)
        except TactileError as e:
            logging.error(f"'{command}' failed: {e}")
            sys.exit(EXIT_ERROR)
        except Exception as e:
            logging.critical(f"An unexpected error occurred: {e}")
            sys.exit(EXIT_ERROR)
        logging.info(f"'{command}' completed in {time.time() - start_time:.2f} seconds. Output in {output}")


def main(argv: list[str] | None = None) -> None:
    """CLI entry point for the experiment pipeline."""
    parser = argparse.ArgumentParser(description="Tactile energy laboratory: energy-tank control and power estimation")
    parser.add_argument("command", choices=COMMANDS, help="Pipeline stage to run")
    parser.add_argument("--config", required=True, help="Path to the YAML experiment configuration")
    parser.add_argument("--out", default="out", help="Output directory shared by all stages")
    args = parser.parse_args(argv)

    try:
        config = load_config(Path(args.config))
    except ConfigError as e:
        print(f"Failed to load configuration: {e}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)

    setup_logging(log_format=config.log_format)

    pipeline = ExperimentPipeline(config, Path(args.out))
    pipeline.run(args.command)


if __name__ == "__main__":
    main()
