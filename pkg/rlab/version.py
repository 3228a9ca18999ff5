from app_config import APP_VERSION

VERSION = APP_VERSION
