import sys

from pkdp.cli import main

sys.exit(main())
