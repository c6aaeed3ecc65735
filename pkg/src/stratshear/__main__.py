"""Allow `python -m stratshear` as an alias for the console script."""
import sys

from stratshear.cli import main

sys.exit(main())
