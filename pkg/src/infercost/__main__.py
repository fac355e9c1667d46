import sys

from infercost.cli import main

sys.exit(main())
