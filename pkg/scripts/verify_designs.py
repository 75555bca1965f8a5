"""Check that every simulated design's truth columns solve its moment condition."""
import os
import sys

import numpy as np

# Add src to path
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from src.core.dataset import ROLE_TRUTH_THETA
from src.core.estimators import evaluate_psi
from src.core.moments import catalog_model
from src.simulation.designs import (
    design_constants,
    gen_att_did,
    gen_late,
    gen_plm,
    gen_plm_iv,
    gen_selection,
)

DRAWS = 200_000
SEED = 7

CHECKS = [
    ("ATT_DID", lambda: gen_att_did(DRAWS, SEED)),
    ("LATE", lambda: gen_late(DRAWS, SEED)),
    ("ATE", lambda: gen_selection(DRAWS, SEED, "ATE")),
    ("WATE", lambda: gen_selection(DRAWS, SEED, "WATE")),
    ("ATT", lambda: gen_selection(DRAWS, SEED, "ATT")),
    ("PLM", lambda: gen_plm(DRAWS, SEED)),
    ("PLM_IV", lambda: gen_plm_iv(DRAWS, SEED)),
]


def verify() -> bool:
    ok = True
    for model_id, generate in CHECKS:
        print(f"🎲 Drawing {DRAWS} rows for {model_id}...")
        dataset = generate()
        model = catalog_model(model_id)
        theta0 = float(dataset.role_values(ROLE_TRUTH_THETA)[0])
        psi_a, psi_b = evaluate_psi(dataset, model, dataset.truth_eta(model.p))
        m = psi_b - psi_a * theta0
        mean = float(np.mean(m))
        se = float(np.std(m, ddof=1)) / np.sqrt(m.size)
        if abs(mean) <= 4.0 * se:
            print(f"✅ {model_id}: mean moment {mean:+.5f} (se {se:.5f}) at theta0 = {theta0:.6g}")
        else:
            print(f"❌ {model_id}: mean moment {mean:+.5f} (se {se:.5f}) at theta0 = {theta0:.6g}")
            ok = False

    for name in ("ATT_DID", "LATE"):
        constants = design_constants(name)
        print(
            f"📐 {name}: sigma2={constants.sigma2:.5g}, Lambda={constants.Lambda:.5g}, "
            f"Lambda1={constants.Lambda1:.5g} ({constants.draws} draws)"
        )

    print("✨ Verification complete!" if ok else "⚠️ Some designs failed the check")
    return ok


if __name__ == "__main__":
    sys.exit(0 if verify() else 1)
