import sys

from bucketmirror.cli import main

sys.exit(main())
