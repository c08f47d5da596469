"""LSTM encoder-decoder script inference over sentences and events."""

__version__ = "0.1.0"
