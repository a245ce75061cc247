"""Train both subject models, attack the cohort, replay on the second model, build maps.

    python scripts/run_desk_study.py --out runs/desk
"""

import argparse
import json
from pathlib import Path

from advbias.experiments import PipelineConfig, desk_pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/desk"))
    ap.add_argument("--cohort", type=int, default=100)
    ap.add_argument("--no-maps", action="store_true")
    args = ap.parse_args()

    cfg = PipelineConfig(cohort_size=args.cohort, interpret=not args.no_maps)
    res = desk_pipeline(args.out, cfg)

    print("\nattack   whitebox   transfer(m42->m43)   mean TV")
    for name, wb in res.whitebox.items():
        e = res.transfer[name].entry("m43")
        print(f"{name:8s} {wb.whitebox_success_rate:8.3f}   {e.success_rate:8.3f} ({e.n_fooled}/{e.n_source_success})"
              f"   {wb.mean_bias_tv:10.2f}")
    summary = {"test_accuracy": res.test_accuracy, "timings": res.timings, "n_maps": len(res.maps)}
    (args.out / "summary.json").write_text(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
