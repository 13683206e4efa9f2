"""
The whole pipeline as one call, plus the determinism manifest.

run_pipeline chains scene simulation, unmixing, resolution adaptation,
label synthesis, fold construction, training, classification and
evaluation, then writes manifest.json with a sha256 for every artifact.
This demo runs it twice at a small scale into two directories and
verifies the manifests agree hash for hash, which is the property the
benchmark relies on.

Run:  python3 demos/pipeline_manifest.py   (takes a minute or two)
"""

import json
import os
import tempfile

from specgt.cli import run_pipeline

CONFIG = {
    "seed": 5,
    "scenes": 3,
    "rows": 110,
    "cols": 110,
    "smoothness": 5.0,
    "noise_sigma": 0.0,
    "epochs": 2,
    "per_label": 200,
    "folds": [0],
}


def main():
    with tempfile.TemporaryDirectory() as tmp:
        runs = []
        for tag in ("first", "second"):
            outdir = os.path.join(tmp, tag)
            manifest = run_pipeline(dict(CONFIG), outdir, echo=print)
            runs.append(manifest)
            print(f"{tag} run: {len(manifest['artifacts'])} artifacts, "
                  f"fold accuracies {manifest['fold_accuracy']}")

        same = runs[0] == runs[1]
        print(f"manifests byte-identical: {same}")
        if not same:
            a, b = runs
            for key in sorted(set(a["artifacts"]) | set(b["artifacts"])):
                if a["artifacts"].get(key) != b["artifacts"].get(key):
                    print(f"  differs: {key}")
        sample = dict(list(runs[0]["artifacts"].items())[:4])
        print("sample of the manifest:")
        print(json.dumps(sample, indent=1))


if __name__ == "__main__":
    main()
