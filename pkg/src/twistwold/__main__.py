import sys

from twistwold.cli import main

sys.exit(main())
