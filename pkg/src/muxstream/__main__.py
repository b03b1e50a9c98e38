import sys

from muxstream.cli import main

sys.exit(main())
