from fedskip.cli import main

main()
