import sys

from dcvrt.cli import main

sys.exit(main())
