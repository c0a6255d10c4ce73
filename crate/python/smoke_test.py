"""Smoke test for the stablept_py extension.

Build and install first, e.g. `pip install ./crates/py`, then run
`python python/smoke_test.py`.
"""

import json
import math

import stablept_py as sp


def main():
    task = sp.Task(num_classes=2, noise=0.0, seed=1)
    train = task.split("train")
    assert len(train) == 64 and len(task.split("test")) == 512
    assert all(label in (0, 1) for _, label in train)

    templates = sp.build_templates(6)
    assert len(templates) == 6 and all(t.count(1) == 1 for t in templates)

    z = [[1.0, 0.0], [0.9, 0.1], [0.0, 1.0], [0.1, 0.9]]
    labels = [0, 0, 1, 1]
    assert sp.supcon_loss(z, labels, 0.1) >= 0.0
    uniform = sp.mlm_loss([[0.0] * 8, [0.0] * 8], [0, 1], [2, 3])
    assert math.isclose(uniform, math.log(8), rel_tol=1e-12)
    assert sp.silhouette(z, labels) > 0.5
    assert sp.kl_gaussian(z * 3, labels * 3) > 0.0
    assert sp.mmd_rbf(z[:2], z[2:]) > 0.0

    result = sp.train(variant="full", noise=0.0, seed=0, epochs=3)
    history = json.loads(result.history_json())
    assert len(history["epochs"]) == 3 == len(result.epochs())
    assert 0.0 <= result.test_accuracy <= 1.0
    emb, y = result.embeddings(after=True)
    assert len(emb) == len(y) == 512
    assert len(result.predict()) == 512

    try:
        sp.train(variant="nope")
    except ValueError as err:
        assert "contract" in str(err)
    else:
        raise AssertionError("bad variant accepted")

    plan = json.loads(sp.default_plan_json())
    plan["seeds"] = [0]
    plan["train"]["epochs"] = 1
    plan["prompt_lengths"] = [2, 4]
    rows = sp.run_protocol("length_sweep", json.dumps(plan))
    assert [r["prompt_len"] for r in rows] == [2, 4]

    print(f"smoke test ok: test_accuracy={result.test_accuracy:.4f} version={sp.__version__}")


if __name__ == "__main__":
    main()
