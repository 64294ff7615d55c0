# Core verification and control algorithms
