"""Generate a small seeded dataset, write it, and read one record back."""
import sys
import tempfile
from pathlib import Path

from clasp import dataforge

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp()) / "demo.jsonl"
records = dataforge.generate(20, seed=42)
manifest = dataforge.write_dataset(records, out, seed=42)
print("wrote", out, manifest)

rec = dataforge.read_dataset(out)[0]
raster, depth, aff = dataforge.decode_record(rec)
print(f"record 0: {rec['source']} sample, raster {raster.shape}, depth range "
      f"{depth.min():.3f}-{depth.max():.3f} m")
for label, mask in aff.items():
    print(f"  affordance {label}: {int(mask.sum())} px")
for t in rec["templates"]:
    print(f"  y={t['y']:+d}  {t['tau']}")
