from react_sg import main

main()
