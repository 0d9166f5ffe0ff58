import pathlib
import sys

# Prefer an in-tree build (FUNDUS_BUILD_PYTHON=ON drops _core next to the package); otherwise the
# installed wheel is used.
_pkg = pathlib.Path(__file__).resolve().parents[2] / "python"
if any((_pkg / "fundus_mtl").glob("_core*")):
    sys.path.insert(0, str(_pkg))
