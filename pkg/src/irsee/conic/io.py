"""Plain-text dump/load of cone programs for debugging and replay.

Format (JSON document):
    {"c": [...], "b": [...],
     "A": {"shape": [m, n], "rows": [...], "cols": [...], "vals": [...]},
     "cones": [["nonneg", 4], ["hpsd", 5], ...],
     "obj_offset": 0.0}
Variable-layout metadata is not serialized; a reloaded program solves to the
same flat solution vector.
"""

import json

import numpy as np
import scipy.sparse as sp

from .cones import Cone
from .program import ConicProgram


def dump_program(prog: ConicProgram, path):
    coo = prog.A.tocoo()
    doc = {
        "c": prog.c.tolist(),
        "b": prog.b.tolist(),
        "A": {"shape": [prog.m, prog.n],
              "rows": coo.row.tolist(),
              "cols": coo.col.tolist(),
              "vals": coo.data.tolist()},
        "cones": [[c.kind, c.dim] for c in prog.cones],
        "obj_offset": prog.obj_offset,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_program(path) -> ConicProgram:
    with open(path) as fh:
        doc = json.load(fh)
    m, n = doc["A"]["shape"]
    A = sp.csr_matrix((doc["A"]["vals"], (doc["A"]["rows"], doc["A"]["cols"])),
                      shape=(m, n))
    return ConicProgram(c=np.asarray(doc["c"], dtype=float), A=A,
                        b=np.asarray(doc["b"], dtype=float),
                        cones=[Cone(k, d) for k, d in doc["cones"]],
                        obj_offset=float(doc.get("obj_offset", 0.0)))
