APP_VERSION = "1.0.0"
CONFIG_VERSION = 1
TABLE_VERSION = 1
