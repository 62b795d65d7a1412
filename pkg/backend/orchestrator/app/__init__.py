import sys
from pathlib import Path

# Add backend directory to path so the fitting library imports as `face`
backend_dir = Path(__file__).parent.parent.parent
if str(backend_dir) not in sys.path:
    sys.path.insert(0, str(backend_dir))
