# Config loading and result I/O helpers
