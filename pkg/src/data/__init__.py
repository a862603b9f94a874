# Config and CSV contracts
