"""End-to-end command-line run on a synthetic ring-buffer cohort.

Exposure is measured in nine rings from 90 m to 2100 m. The simulated
effect lives within 510 m and is calibrated so that a 0.1-unit rise across
that region has hazard ratio 0.946. The ``fit`` subcommand tunes the
sparse model, reports the buffer distance and the cumulative hazard ratio.
"""
import json
import tempfile
from pathlib import Path

from funbuffer.cli import main
from funbuffer.simulate import RingStudyConfig, generate_rings
from funbuffer.survdata import write_csv

cfg = RingStudyConfig()
work = Path(tempfile.mkdtemp(prefix="rings-"))
write_csv(generate_rings(cfg), work / "cohort.csv")
rc = main(["fit", "--data", str(work / "cohort.csv"), "--out", str(work / "fit"),
           "--domain", "90:2100", "--knots", "150,270,510,990,1500", "--increment", "0.1",
           "--log-level", "WARNING"])
regions = json.loads((work / "fit" / "regions.json").read_text())
cum = json.loads((work / "fit" / "cumulative.json").read_text())
print("exit code", rc)
print("selected region:", regions["intervals"], "buffer distance", regions["buffer_distance"], "m")
print(f"HR per 0.1 unit: {cum['hazard_ratio']:.3f} "
      f"(95% CI {cum['hazard_ratio_ci'][0]:.3f} to {cum['hazard_ratio_ci'][1]:.3f}); "
      f"simulated value {cfg.target_hr}")
print("artifacts in", work / "fit")
