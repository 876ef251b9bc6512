"""Two days of data for every setting, then the full detector matrix."""
import sys
import tempfile

from pvids.cli import main

out = sys.argv[1] if len(sys.argv) > 1 else tempfile.mkdtemp(prefix="pvids_")
common = ["--out", out, "--seed", "1"]
main(["gen", "--days", "2", *common])
main(["matrix", "--algos", "lr,knn,rf", *common])
main(["baseline", *common])
print("results in", out)
