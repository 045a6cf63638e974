import sys

from refcolor.cli import main

sys.exit(main())
