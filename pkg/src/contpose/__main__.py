import sys

from contpose.cli import main

sys.exit(main())
