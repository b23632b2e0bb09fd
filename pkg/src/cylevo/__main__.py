import sys

from cylevo.cli import main

sys.exit(main())
