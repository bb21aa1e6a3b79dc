import sys

from treevade.cli import main

sys.exit(main())
