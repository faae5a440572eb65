import sys

from vlsero.cli import main

sys.exit(main())
