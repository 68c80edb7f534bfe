"""Exception hierarchy shared by all layers of the stack."""


class QKDError(Exception):
    """Base class for errors raised by this package."""


class IntegrityError(QKDError):
    """Two views of the same data disagree (alignment, counts, lengths)."""


class FrameError(QKDError):
    """A wire frame could not be decoded."""


class ProtocolError(QKDError):
    """A peer violated the session protocol."""


class AuthError(ProtocolError):
    """A frame failed authentication or carried a stale pool offset."""


class PoolExhausted(QKDError):
    """The authentication key pool has too few unused bits."""


class KeyUnavailable(QKDError):
    """The key store could not satisfy a request."""


class KeyReuseError(QKDError):
    """A one-time key handle was used more than once."""
