#!/usr/bin/env python3
"""gridglass command-line entry point (see src/cli.py)."""

import sys

sys.path.append('src')

from cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
