from deprivity.cli import main

raise SystemExit(main())
