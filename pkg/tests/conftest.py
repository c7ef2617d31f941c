import sys
from pathlib import Path

# Make the in-tree test helpers (reference_bc1, etc.) importable.
sys.path.insert(0, str(Path(__file__).parent))
