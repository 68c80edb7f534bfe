"""Classical channel: frames, payload codecs, transports and the session loops."""
