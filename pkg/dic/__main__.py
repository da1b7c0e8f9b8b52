from dic.main import main

main()
