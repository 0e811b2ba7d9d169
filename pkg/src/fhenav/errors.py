"""Exception hierarchy shared by every backend and layer."""


class FheError(Exception):
    """Base class for all errors raised by fhenav."""


class PackingError(FheError, ValueError):
    """A plaintext cannot be packed into power-of-two slots."""


class ShapeError(FheError, ValueError):
    """Operand shapes, slot counts or weight layouts disagree."""


class ScaleError(FheError, ValueError):
    """Operands carry different fixed-point scales."""


class DepthExhausted(FheError):
    """The circuit needs more multiplicative levels than remain.

    ``block`` is filled in by the pipeline so that the harness can name the
    offending block.
    """

    def __init__(self, message: str, block: str | None = None):
        super().__init__(message)
        self.block = block


class MissingKeyError(FheError, KeyError):
    """No rotation key was generated for the requested amount."""


class KeyMismatchError(FheError, KeyError):
    """A ciphertext is decrypted or combined under foreign keys."""


class PlanError(FheError, ValueError):
    """A DFT plan was requested for an unsupported size."""


class EncodingError(FheError, ValueError):
    """A CKKS encoding overflows the coefficient modulus."""


class ParameterError(FheError, ValueError):
    """An insecure or inconsistent CKKS parameter set."""
