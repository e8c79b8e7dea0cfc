import sys

from micon.main import main

sys.exit(main())
