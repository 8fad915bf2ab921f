import sys

from cvrpsd.cli import main

sys.exit(main())
