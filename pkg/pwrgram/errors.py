"""Exception hierarchy shared by the engine, file formats and CLI."""


class PwrgramError(Exception):
    pass


# Geometry


class GeometryError(PwrgramError):
    pass


class CoincidentSites(GeometryError):
    def __init__(self, i: int, j: int):
        super().__init__(f"sites {i} and {j} are coincident")
        self.i = i
        self.j = j


class SiteOutsideBox(GeometryError):
    def __init__(self, site_id: int):
        super().__init__(f"site {site_id} is not strictly inside the initial box")
        self.site_id = site_id


class TopologyCorruption(GeometryError):
    """Hole boundary of a clip did not close into a single cycle."""


# Input


class InputError(PwrgramError):
    pass


class EmptyInput(InputError):
    def __init__(self, msg: str = "at least one site is required"):
        super().__init__(msg)


class NonFiniteInput(InputError):
    def __init__(self, index: int):
        super().__init__(f"site {index} has a non-finite position or weight")
        self.index = index


class TooFewSites(InputError):
    pass


class SizeMismatch(InputError):
    pass


class MissingGeometry(InputError):
    def __init__(self):
        super().__init__("diagram was built without keep_geometry")


class FormatError(InputError):
    pass


class BadMagic(FormatError):
    def __init__(self, found: bytes, expected: bytes):
        super().__init__(f"bad magic at byte 0: expected {expected!r}, found {found!r}")
        self.found = found


class BadHeader(FormatError):
    def __init__(self, offset: int, msg: str):
        super().__init__(f"bad header at byte {offset}: {msg}")
        self.offset = offset


class TruncatedPayload(FormatError):
    def __init__(self, expected: int, found: int):
        super().__init__(f"payload is {found} bytes, header declares {expected}")
        self.expected = expected
        self.found = found


class NonFiniteValue(FormatError):
    def __init__(self, index: int):
        super().__init__(f"site record {index} contains a non-finite value")
        self.index = index


class IoFailure(PwrgramError):
    def __init__(self, path, cause: OSError):
        super().__init__(f"{path}: {cause}")
        self.path = path


class BuildTimeout(PwrgramError):
    def __init__(self, seconds: float):
        super().__init__(f"build exceeded {seconds:g}s")
        self.seconds = seconds
