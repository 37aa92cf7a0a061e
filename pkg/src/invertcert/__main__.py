"""Allow `python -m invertcert` to behave like the console script."""

import sys

from .cli import main

sys.exit(main())
