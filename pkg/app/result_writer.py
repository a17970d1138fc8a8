import logging
import os
import threading
from pathlib import Path
from typing import Dict, List, Union

import pandas as pd

from app.config import CSV_FLOAT_FORMAT

logger = logging.getLogger(__name__)


class ResultWriter:
    """Serialized, atomic writer for everything a run puts on disk.

    Every file goes to a temporary sibling first and is renamed into place, so
    a reader never sees a partial file. All writes share one lock.
    """

    def __init__(self, output_dir: Union[str, Path], float_format: str = CSV_FLOAT_FORMAT):
        """Initialize the writer.

        Args:
            output_dir: Directory receiving the files; created if missing
            float_format: printf-style format for CSV floats
        """
        self.output_dir = Path(output_dir)
        self.float_format = float_format
        self.files: List[str] = []
        self._lock = threading.Lock()
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def write_csv(self, name: str, table: pd.DataFrame, units: Dict[str, str]) -> Path:
        """Write a table with a single ``#`` header line naming each column's unit.

        Args:
            name: File name inside the output directory
            table: Data to write; the index is dropped
            units: Unit per column; columns without an entry are marked [1]

        Returns:
            Path of the written file.
        """
        header = "# " + ", ".join(
            f"{column} [{units.get(column, '1')}]" for column in table.columns
        )
        body = table.to_csv(index=False, float_format=self.float_format, lineterminator="\n")
        return self.write_text(name, f"{header}\n{body}")

    def write_text(self, name: str, text: str) -> Path:
        """Write text with LF line endings.

        Raises:
            OSError: If the file cannot be written
        """
        path = self.output_dir / name
        temporary = path.with_name(f".{path.name}.tmp")
        with self._lock:
            with open(temporary, "w", encoding="utf-8", newline="\n") as handle:
                handle.write(text)
            os.replace(temporary, path)
            if name not in self.files:
                self.files.append(name)
        logger.info("Wrote %s", path)
        return path

    def register(self, name: str) -> None:
        """Record a file produced by another library inside the output directory."""
        with self._lock:
            if name not in self.files:
                self.files.append(name)
