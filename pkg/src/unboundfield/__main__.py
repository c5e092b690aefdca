import sys

from unboundfield.cli import main

sys.exit(main())
