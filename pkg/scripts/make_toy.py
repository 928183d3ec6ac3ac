"""Regenerate the bundled toy CSV triple (src/jstn/toy/).

120 SN rows, 60 SI rows and 120 target rows drawn from the synthetic
generator, written with intrusion-style column names, raw label aliases
resolved through the manifest's label_map, and a semicolon-delimited SI file.
"""

import csv
import json
from dataclasses import replace
from pathlib import Path

from jstn.data import SHARED_CATEGORIES, SynthSpec, synth_domains

OUT = Path(__file__).resolve().parents[1] / "src" / "jstn" / "toy"
RAW = {"benign": "normal", "dos": "DoS", "ddos": "DDoS", "reconnaissance": "scanning", "password": "brute_force"}
COLUMNS = {
    "SN": ["duration", "src_bytes", "dst_bytes", "count", "srv_count", "serror_rate", "rerror_rate",
           "same_srv_rate", "diff_srv_rate", "dst_host_count", "dst_host_srv_count", "flag_rate"],
    "SI": ["pkt_len_mean", "pkt_len_std", "flow_iat_mean", "flow_iat_std", "fwd_pkts", "bwd_pkts", "syn_cnt", "ack_cnt"],
    "T": ["dur", "sbytes", "dbytes", "spkts", "dpkts", "rate", "sload", "dload", "sinpkt", "dinpkt"],
}
DELIM = {"SN": ",", "SI": ";", "T": ","}


def main():
    spec = replace(SynthSpec(seed=2024), per_class={"SN": 24, "SI": 12, "T": 24}, separation=5.0)
    OUT.mkdir(parents=True, exist_ok=True)
    entries = []
    for role, ds in synth_domains(spec).domains.items():
        cols = COLUMNS[role]
        with open(OUT / f"{role}.csv", "w", newline="") as fh:
            w = csv.writer(fh, delimiter=DELIM[role])
            w.writerow(cols + ["attack_cat"])
            for x, y in zip(ds.X, ds.y):
                w.writerow([repr(float(v)) for v in x] + [RAW[SHARED_CATEGORIES[y]]])
        entries.append({"role": role, "path": f"{role}.csv", "label_column": "attack_cat",
                        "feature_columns": cols, "delimiter": DELIM[role], "name": f"toy_{role}"})
    manifest = {"classes": list(SHARED_CATEGORIES), "label_map": {v: k for k, v in RAW.items()}, "domains": entries}
    (OUT / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


if __name__ == "__main__":
    main()
