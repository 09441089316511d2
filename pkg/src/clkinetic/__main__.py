import sys

from clkinetic.cli import main

sys.exit(main())
