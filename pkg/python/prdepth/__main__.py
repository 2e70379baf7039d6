from prdepth._cli import main

raise SystemExit(main())
