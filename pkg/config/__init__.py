# Config package: runtime settings and pipeline profiles
