# Schemas package
from .network_file import dump_network, loads_network, parse_network
