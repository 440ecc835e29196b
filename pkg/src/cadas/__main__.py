import sys

from cadas.cli import main

sys.exit(main())
