from decouple import config
from pytest_socket import disable_socket

# Run the slow acceptance grids (large n, long eps-schedules).
RUN_SLOW = config('RUN_SLOW', False, cast=bool)

# Everything here is offline.
disable_socket()
