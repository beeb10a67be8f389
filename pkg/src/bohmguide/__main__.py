import sys

from bohmguide.cliio.cli import main

sys.exit(main())
