import sys

from actseg.main import main

sys.exit(main())
