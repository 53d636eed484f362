import sys

from riva.cli import main

sys.exit(main())
