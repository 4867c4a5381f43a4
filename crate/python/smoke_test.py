"""Smoke test for the sg3d Python module.

Build and install first:  pip install --no-build-isolation ./crates/python
Then run:                 python python/smoke_test.py
"""

import json
import pathlib
import sys
import tempfile

import sg3d

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "crates/core/tests/fixtures/synth"


def main() -> int:
    with tempfile.TemporaryDirectory() as tmp:
        tmp = pathlib.Path(tmp)
        bundle = tmp / "bundle"
        truth = sg3d.synthesize(
            str(FIXTURES / "world.json"),
            str(FIXTURES / "orbit.json"),
            str(bundle),
            str(FIXTURES / "intrinsics.json"),
            noise=str(FIXTURES / "noise_zero.json"),
        )
        assert len(truth["objects"]) == 10, truth["objects"]

        graph, report = sg3d.build(str(bundle), overrides=["threads=1"])
        assert report["frames_total"] == 300
        assert report["frames_processed"] < 300
        print(graph, f"{report['timings']['total_ms']:.0f} ms")

        metrics = graph.evaluate(str(bundle / "ground_truth.json"))
        assert metrics["node_precision"] == 1.0 and metrics["node_recall"] == 1.0, metrics

        out = tmp / "graph.json"
        graph.save(str(out))
        again = sg3d.SceneGraph.load(str(out))
        assert again.to_json() == graph.to_json()
        assert sg3d.SceneGraph.from_json(graph.to_json()).num_nodes == len(graph)

        tax = tmp / "taxonomy.json"
        tax.write_text(json.dumps(truth["taxonomy"]))
        assert again.query("COUNT cup")["count"] == 2
        assert again.query("COUNT dish HIER", taxonomy=str(tax))["count"] == 4
        biggest = again.query("SHOW biggest *")
        assert biggest["kind"] == "show", biggest

        assert again.to_dot().startswith("digraph")
        problem = again.export_pddl("(on cup_1 table_0)", name="tidy")
        sg3d.check_pddl(problem)
        try:
            sg3d.check_pddl("(define (problem p)")
        except ValueError as e:
            print("checker rejects truncated input:", e)
        else:
            raise AssertionError("truncated PDDL accepted")

        try:
            again.query("COUNT cup WHERE color =")
        except ValueError:
            pass
        else:
            raise AssertionError("malformed query accepted")

    print("python smoke test passed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
