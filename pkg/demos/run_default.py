"""Run the default pipeline (eps = 0.05, N = 3) and print the headline numbers.

    python3 demos/run_default.py [out_dir]
"""
import json
import sys

from artifact import shock_cli as cli


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else "demo_out"
    cfg = cli.load_config(overrides={"out": out, "cache": f"{out}/tensor_n3.npz"})
    manifest, res, timings = cli.run_pipeline(cfg)
    cli.emit_results(manifest, res, timings, out)
    st = manifest["stages"]
    print("status      ", manifest["status"])
    print("speed       ", st["rh"]["report"]["speed"])
    print("dims        ", st["lift"]["report"]["dims"], "margin", st["lift"]["report"]["margin"])
    print("contraction ", st["fixedpoint"]["report"]["contraction"])
    print("residual    ", st["residuals"]["report"]["travelling_residual"])
    print("flags       ", json.dumps(manifest["acceptance"]))


if __name__ == "__main__":
    main()
