"""Records, manifests, synthetic floor plans and SVG rendering."""

from .records import (
    BLOCK_SIZE,
    DatasetManifest,
    DrawingRecord,
    RecordConverter,
    identity_converter,
    load_manifest,
    load_prediction,
    load_record,
    record_from_json,
    record_to_json,
    records_equal,
    save_manifest,
    save_prediction,
    save_record,
    tile_record,
)
from .render import RenderOptions, render_svg
from .synth import SyntheticSpec, generate_synthetic, synthesize_records, tiny_record
