"""mobcal: mobility profiles and calendars from CDR event streams.

A batch pipeline that turns anonymized call-detail-record events plus
geography, gridded rainfall and agricultural calendars into per-user
mobility vectors, per-zone mobility classes, population-movement alerts
and profile/calendar correlation reports, with a deterministic synthetic
world generator for end-to-end validation.
"""

__version__ = "0.1.0"
