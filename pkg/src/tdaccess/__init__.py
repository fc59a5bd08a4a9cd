"""Time-of-day car accessibility over road networks with speed profiles,
rendered as time cartograms and extrusion-map frame sequences."""

__version__ = "0.1.0"
