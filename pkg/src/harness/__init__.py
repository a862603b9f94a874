# Command-line harness, experiments and reporting
