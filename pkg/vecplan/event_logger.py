import hashlib
import json
import time
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Union

from loguru import logger

MANIFEST_FILE: str = "{command}.manifest.json"


def file_sha256(path: Union[str, Path]) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


class RunLogger:
    """
    Records pipeline stages of one run.

    Each stage snapshot holds the stage name, its wall time and whatever
    metrics the stage reports. Snapshots are exported to JSON next to the
    run's artifacts, and the manifest ties the config and seeds to the
    hashes of every file the run wrote.
    """

    def __init__(self, output_dir: Union[str, Path], command: str = "run"):
        """
        Parameters
        ----------
        output_dir : str or Path
            Directory for the exported logs and the manifest; created if missing.
        command : str
            Name of the CLI command being recorded.
        """
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.command = command

        self.session_id = datetime.now().strftime("%Y%m%d_%H%M%S")
        self.stage_logs: List[Dict[str, Any]] = []
        self.artifacts: List[Path] = []
        self._open: Dict[str, float] = {}

    def start_stage(self, stage: str) -> None:
        self._open[stage] = time.perf_counter()
        logger.bind(stage=stage).debug(f"{stage} started")

    def end_stage(self, stage: str, **metrics: Any) -> Dict[str, Any]:
        """
        Close a stage and store its snapshot.

        Parameters
        ----------
        stage : str
            Name given to ``start_stage``.
        **metrics
            JSON-serializable values describing the stage result.

        Returns
        -------
        Dict[str, Any]
            The stored snapshot.
        """
        started = self._open.pop(stage, None)
        snapshot = {
            "stage": stage,
            "timestamp": datetime.now().isoformat(),
            "seconds": None if started is None else round(time.perf_counter() - started, 3),
            "metrics": metrics,
        }
        self.stage_logs.append(snapshot)
        logger.bind(stage=stage).info(f"{stage} done" + "".join(f" {k}={v}" for k, v in metrics.items()))
        return snapshot

    def add_artifact(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        if path not in self.artifacts:
            self.artifacts.append(path)
        return path

    def add_artifacts(self, paths: Iterable[Union[str, Path]]) -> None:
        for path in paths:
            self.add_artifact(path)

    def export_to_json(self, filename: Optional[str] = None) -> str:
        """
        Write every stage snapshot to a JSON file in the output directory.

        Returns
        -------
        str
            Path to the exported file
        """
        if filename is None:
            filename = f"stages_{self.session_id}.json"
        output_path = self.output_dir / filename
        export_data = {
            "session_id": self.session_id,
            "command": self.command,
            "export_timestamp": datetime.now().isoformat(),
            "total_stages": len(self.stage_logs),
            "stages": self.stage_logs,
            "summary": self.get_summary_stats(),
        }
        with open(output_path, "w", encoding="utf-8") as f:
            json.dump(export_data, f, indent=2, ensure_ascii=False)
        return str(output_path)

    def write_manifest(
        self, config: Dict[str, Any], seeds: Dict[str, int], extra: Optional[Dict[str, Any]] = None
    ) -> Path:
        """
        Write `<command>.manifest.json`: config, seeds and the SHA-256 of each artifact.

        Artifacts are keyed by their path relative to the output directory
        when they live inside it.
        """
        hashes = {}
        for path in self.artifacts:
            if not path.is_file():
                continue
            try:
                key = str(path.resolve().relative_to(self.output_dir.resolve()))
            except ValueError:
                key = str(path)
            hashes[key] = file_sha256(path)
        manifest = {
            "command": self.command,
            "config": config,
            "seeds": seeds,
            "artifacts": dict(sorted(hashes.items())),
        }
        if extra:
            manifest.update(extra)
        manifest_path = self.output_dir / MANIFEST_FILE.format(command=self.command)
        with open(manifest_path, "w", encoding="utf-8") as f:
            json.dump(manifest, f, indent=2, sort_keys=True, ensure_ascii=False)
            f.write("\n")
        return manifest_path

    def get_summary_stats(self) -> Dict[str, Any]:
        if not self.stage_logs:
            return {"total_stages": 0}
        timed = [s["seconds"] for s in self.stage_logs if s["seconds"] is not None]
        return {
            "total_stages": len(self.stage_logs),
            "latest_stage": self.stage_logs[-1]["stage"],
            "total_seconds": round(sum(timed), 3),
            "total_artifacts": len(self.artifacts),
        }
