from hdnn.cli import main
import sys
sys.exit(main())
