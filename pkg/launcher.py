# ============================
# Porovem — launcher (entry point, executed from repository)
# ============================
# Thin wrapper: all logic lives in the porovem package.

import sys

from porovem.cli import main

if __name__ == "__main__":
    sys.exit(main())
