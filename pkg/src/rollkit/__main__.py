import sys

from rollkit.cli import main

sys.exit(main())
