"""
Nakagami QUS Test Suite

Unit tests per module, format fuzzing, and slow end-to-end acceptance runs
(select or skip them with ``-m slow`` / ``-m "not slow"``).
"""

import os
import sys
from pathlib import Path

# Add the src directory to the Python path for testing
src_path = Path(__file__).parent.parent / "src"
sys.path.insert(0, str(src_path))

# Disable logging during tests unless explicitly enabled
import logging
if not os.getenv("ENABLE_TEST_LOGGING"):
    logging.disable(logging.CRITICAL)
