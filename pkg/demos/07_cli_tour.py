"""Quick tour of the command-line surface using the bundled test fixtures.

Each command writes a JSON report; the same invocations work from a shell:

    humanparse gradcheck --targets conv2d,roi_align
    humanparse eval-parsing PRED.json GT.json --classes 4
    humanparse params
    humanparse scale-cdf GT.json --grid 0.1,0.25,0.5,1.0
"""

import json
from pathlib import Path
from tempfile import TemporaryDirectory

from humanparse.cli import main

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def run(*argv):
    print(f"\n$ humanparse {' '.join(argv)}")
    with TemporaryDirectory() as tmp:
        out = Path(tmp) / "report.json"
        rc = main([*argv, "--out", str(out)])
        report = json.loads(out.read_text())
    print(f"(exit code {rc})")
    return report


rep = run("gradcheck", "--targets", "conv2d,relu,roi_align", "--seed", "0")
for r in rep["results"]:
    print(f"  {r['target']:12s} max rel error {r['max_rel_error']:.2e}  pass={r['pass']}")

rep = run("eval-parsing", str(FIXTURES / "parsing_pred.json"),
          str(FIXTURES / "parsing_gt.json"), "--classes", "4")
print(f"  aggregate: { {k: round(v, 4) for k, v in rep['aggregate'].items() if k != 'mIoU_per_class'} }")

rep = run("eval-densepose", str(FIXTURES / "densepose_pred.json"),
          str(FIXTURES / "densepose_gt.json"))
print(f"  aggregate: { {k: round(v, 4) for k, v in rep['aggregate'].items()} }")

rep = run("params")
for row in rep["rows"]:
    print(f"  {row['variant']:18s} body {row['body']:>12,}  tail {row['tail']:>10,}")
print(f"  verdict: the encoder block body is {rep['comparison']['verdict']} "
      f"than the eight-conv baseline body")

rep = run("scale-cdf", str(FIXTURES / "parsing_gt.json"), "--grid", "0.05,0.1,0.25,1.0")
for row in rep["rows"]:
    print(f"  scale <= {row['scale']:.2f}: {row['fraction']:.2f}")
