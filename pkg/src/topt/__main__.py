import sys

from topt.main import main

sys.exit(main())
