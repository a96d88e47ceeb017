import sys

from patchdelta.cli import main

sys.exit(main())
