"""JSON-lines dataset files: one header line, then one row per instance.

Row schema:
    {"id": int, "n": int, "gain_up": [f64], "gain_dn": [f64], "dist_m": [f64],
     "label": {"tau0": f64, "tau": [f64], "p": [f64], "length": f64} | null}

The header records the generator seed and the system parameters so a file is
self-describing. Floats go through repr, so a write/read cycle is bit-exact.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .params import SystemParams, NetworkInstance
from .core import Schedule, schedule_length

HEADER_KIND = "wpcnsched-dataset"
FORMAT_VERSION = 1


@dataclass
class Dataset:
    params: SystemParams
    seed: int
    n_users: int
    instances: list[NetworkInstance]
    labels: list[Schedule | None] = field(default_factory=list)

    def __post_init__(self):
        if not self.labels:
            self.labels = [None] * len(self.instances)
        if len(self.labels) != len(self.instances):
            raise ValueError("labels must align with instances")

    def __len__(self) -> int:
        return len(self.instances)

    @property
    def labeled(self) -> bool:
        return all(lbl is not None for lbl in self.labels)

    def lengths(self) -> np.ndarray:
        if not self.labeled:
            raise ValueError("dataset is not fully labeled")
        return np.array([schedule_length(lbl) for lbl in self.labels])


def _label_dict(sched: Schedule) -> dict:
    return {
        "tau0": sched.eh_s,
        "tau": sched.it_s.tolist(),
        "p": sched.power_w.tolist(),
        "length": schedule_length(sched),
    }


def _label_from_dict(d: dict) -> Schedule:
    return Schedule(eh_s=d["tau0"], it_s=np.array(d["tau"]), power_w=np.array(d["p"]))


def write_dataset(path, ds: Dataset):
    header = {
        "kind": HEADER_KIND,
        "version": FORMAT_VERSION,
        "n": ds.n_users,
        "count": len(ds),
        "seed": ds.seed,
        "params": ds.params.to_dict(),
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i, (inst, label) in enumerate(zip(ds.instances, ds.labels)):
            row = {
                "id": i,
                "n": inst.n_users,
                "gain_up": inst.gain_up.tolist(),
                "gain_dn": inst.gain_down.tolist(),
                "dist_m": inst.dist_m.tolist() if inst.dist_m is not None else None,
                "label": _label_dict(label) if label is not None else None,
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_dataset(path) -> Dataset:
    with open(path) as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: line 1: invalid header: {exc}") from exc
        if header.get("kind") != HEADER_KIND:
            raise ValueError(f"{path}: not a {HEADER_KIND} file")
        if header.get("version") != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported version {header.get('version')}")
        params = SystemParams.from_dict(header["params"])
        instances, labels = [], []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                inst = NetworkInstance(
                    gain_up=np.array(row["gain_up"]),
                    gain_down=np.array(row["gain_dn"]),
                    dist_m=np.array(row["dist_m"]) if row.get("dist_m") is not None else None,
                )
                label = _label_from_dict(row["label"]) if row.get("label") else None
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
            instances.append(inst)
            labels.append(label)
    if len(instances) != header["count"]:
        raise ValueError(f"{path}: header says {header['count']} rows, found {len(instances)}")
    return Dataset(
        params=params,
        seed=header["seed"],
        n_users=header["n"],
        instances=instances,
        labels=labels,
    )
