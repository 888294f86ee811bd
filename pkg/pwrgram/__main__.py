import sys

from pwrgram.app import main

sys.exit(main())
