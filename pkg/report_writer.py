# Report Writer
# CSV tables (pyarrow), JSON summaries, waveform export/import and eye-diagram images

import os
import json
import logging

import numpy as np
import pyarrow as pa
import pyarrow.csv as pacsv
from PIL import Image, ImageDraw

from config import LOG_LEVEL
from codec import Scheme, codebook_rows
from waveform import EdgeWaveform, EyeHistogram
from pll import PllState

# Setup logging
logging.basicConfig(level=LOG_LEVEL, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

HISTOGRAM_BINS = 64
EYE_IMAGE_HEIGHT = 160
EYE_COLUMN_WIDTH = 6


def get_codebook_schema() -> pa.Schema:
    return pa.schema([
        pa.field("scheme", pa.string()),
        pa.field("symbol", pa.string()),
        pa.field("word", pa.string()),
        pa.field("duty", pa.float64()),
    ])


def get_efficiency_schema() -> pa.Schema:
    return pa.schema([
        pa.field("n", pa.int64()),
        pa.field("q_max", pa.float64()),
        pa.field("e_max", pa.float64()),
    ])


def get_histogram_schema() -> pa.Schema:
    return pa.schema([
        pa.field("bin_start_s", pa.float64()),
        pa.field("bin_end_s", pa.float64()),
        pa.field("count", pa.int64()),
    ])


def get_waveform_schema() -> pa.Schema:
    return pa.schema([
        pa.field("time_ticks", pa.int64()),
        pa.field("new_level", pa.int8()),
    ])


def get_phase_error_schema() -> pa.Schema:
    return pa.schema([
        pa.field("update_index", pa.int64()),
        pa.field("error_ticks", pa.int64()),
    ])


def get_eye_schema() -> pa.Schema:
    return pa.schema([
        pa.field("bin", pa.int64()),
        pa.field("phase_s", pa.float64()),
        pa.field("rising", pa.int64()),
        pa.field("falling", pa.int64()),
    ])


def get_bathtub_schema() -> pa.Schema:
    return pa.schema([
        pa.field("phase_s", pa.float64()),
        pa.field("ber", pa.float64()),
    ])


def _write_options() -> pacsv.WriteOptions:
    return pacsv.WriteOptions(include_header=True, quoting_style="none")


def _table(columns: dict, schema: pa.Schema) -> pa.Table:
    return pa.Table.from_pydict({name: columns[name] for name in schema.names}, schema=schema)


def write_csv(path: str, columns: dict, schema: pa.Schema) -> str:
    """Write columns as CSV with the given schema; returns the path."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    pacsv.write_csv(_table(columns, schema), path, write_options=_write_options())
    logger.debug(f"wrote {path}")
    return path


def csv_text(columns: dict, schema: pa.Schema) -> str:
    sink = pa.BufferOutputStream()
    pacsv.write_csv(_table(columns, schema), sink, write_options=_write_options())
    return sink.getvalue().to_pybytes().decode("utf-8")


def _rows_to_columns(rows: list[dict], schema: pa.Schema) -> dict:
    return {name: [row[name] for row in rows] for name in schema.names}


def codebook_columns(scheme: Scheme) -> dict:
    return _rows_to_columns(codebook_rows(scheme), get_codebook_schema())


def write_codebook(scheme: Scheme, path: str) -> str:
    return write_csv(path, codebook_columns(scheme), get_codebook_schema())


def efficiency_columns(rows: list[tuple[int, float, float]]) -> dict:
    return {"n": [r[0] for r in rows], "q_max": [r[1] for r in rows], "e_max": [r[2] for r in rows]}


def write_efficiency(rows: list[tuple[int, float, float]], path: str) -> str:
    return write_csv(path, efficiency_columns(rows), get_efficiency_schema())


def histogram_columns(values: np.ndarray, bins: int = HISTOGRAM_BINS) -> dict:
    values = np.asarray(values, dtype=np.float64)
    values = values[np.isfinite(values)]
    if values.size == 0:
        return {"bin_start_s": [], "bin_end_s": [], "count": []}
    counts, edges = np.histogram(values, bins=bins)
    return {"bin_start_s": edges[:-1].tolist(), "bin_end_s": edges[1:].tolist(), "count": counts.tolist()}


def write_histogram(values: np.ndarray, path: str, bins: int = HISTOGRAM_BINS) -> str:
    return write_csv(path, histogram_columns(values, bins), get_histogram_schema())


def write_phase_error(state: PllState, path: str) -> str:
    schema = get_phase_error_schema()
    return write_csv(path, _rows_to_columns(state.trace_rows(), schema), schema)


def write_eye_csv(hist: EyeHistogram, path: str) -> str:
    columns = {
        "bin": list(range(hist.bins)),
        "phase_s": [(k + 0.5) * hist.bin_width for k in range(hist.bins)],
        "rising": hist.counts[0].tolist(),
        "falling": hist.counts[1].tolist(),
    }
    return write_csv(path, columns, get_eye_schema())


def write_bathtub(phases: np.ndarray, ber: np.ndarray, path: str) -> str:
    return write_csv(path, {"phase_s": phases.tolist(), "ber": ber.tolist()}, get_bathtub_schema())


def write_eye_png(hist: EyeHistogram, path: str) -> str:
    """
    Render transition density per phase bin: rising transitions grow up from the
    centre line, falling transitions down from it.
    """
    width = hist.bins * EYE_COLUMN_WIDTH
    height = EYE_IMAGE_HEIGHT
    middle = height // 2
    image = Image.new("RGB", (width, height), (255, 255, 255))
    draw = ImageDraw.Draw(image)
    peak = max(int(hist.counts.max()), 1)
    for k in range(hist.bins):
        x0 = k * EYE_COLUMN_WIDTH
        x1 = x0 + EYE_COLUMN_WIDTH - 2
        up = int(round(hist.counts[0, k] / peak * (middle - 2)))
        down = int(round(hist.counts[1, k] / peak * (middle - 2)))
        if up:
            draw.rectangle([x0, middle - up, x1, middle - 1], fill=(200, 40, 40))
        if down:
            draw.rectangle([x0, middle, x1, middle + down - 1], fill=(40, 40, 200))
    draw.line([0, middle, width - 1, middle], fill=(0, 0, 0))
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    image.save(path, format="PNG")
    logger.debug(f"wrote {path}")
    return path


def _sidecar(path: str) -> str:
    return os.path.splitext(path)[0] + ".json"


def export_waveform(w: EdgeWaveform, path: str) -> str:
    """CSV `time_ticks,new_level` plus a JSON sidecar with the time base."""
    write_csv(path, {"time_ticks": w.times.tolist(), "new_level": w.levels.tolist()}, get_waveform_schema())
    with open(_sidecar(path), "w") as f:
        json.dump({"resolution_fs": w.resolution_fs, "initial_level": w.initial_level,
                   "duration_ticks": w.duration}, f, indent=2, sort_keys=True)
    return path


def import_waveform(path: str) -> EdgeWaveform:
    with open(_sidecar(path), "r") as f:
        meta = json.load(f)
    convert = pacsv.ConvertOptions(column_types=get_waveform_schema())
    table = pacsv.read_csv(path, convert_options=convert)
    times = table.column("time_ticks").to_numpy()
    return EdgeWaveform(int(meta["initial_level"]), times, int(meta["duration_ticks"]), int(meta["resolution_fs"]))


def _to_json(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"{type(value).__name__} is not JSON serialisable")


def write_json(report: dict, path: str) -> str:
    """Deterministic JSON: sorted keys, no timestamps."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        json.dump(report, f, indent=2, sort_keys=True, default=_to_json)
        f.write("\n")
    logger.debug(f"wrote {path}")
    return path
