# Lets the flat helper modules (sim_utils, data_utils, ...) import from tests.
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))
