import sys

from tddip.cli import main

sys.exit(main())
