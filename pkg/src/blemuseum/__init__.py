"""Indoor positioning and visit analytics from BLE beacon RSSI."""

__version__ = "0.1.0"
