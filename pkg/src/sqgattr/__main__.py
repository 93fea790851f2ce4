import sys

from sqgattr.cli import main

sys.exit(main())
