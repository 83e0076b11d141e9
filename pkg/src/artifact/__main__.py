import sys

from .shock_cli import main

sys.exit(main())
