"""Exception hierarchy. Every error raised on purpose derives from SelftrainError."""


class SelftrainError(Exception):
    pass


class MalformedLine(SelftrainError):
    def __init__(self, line_no, reason=""):
        self.line_no = line_no
        super().__init__(f"malformed line {line_no}" + (f": {reason}" if reason else ""))


class UnknownLabel(SelftrainError):
    def __init__(self, value):
        self.value = value
        super().__init__(f"unknown label {value!r}")


class EmptyText(SelftrainError):
    def __init__(self, line_no):
        self.line_no = line_no
        super().__init__(f"document at line {line_no} has no tokens")


class InsufficientClass(SelftrainError):
    def __init__(self, label, available, needed):
        self.label = label
        super().__init__(f"class {label} has {available} examples, {needed} needed")


class EmptyDataset(SelftrainError):
    pass


class EmptyPool(SelftrainError):
    pass


class EmptyDPrime(SelftrainError):
    pass


class VocabMismatch(SelftrainError):
    pass


class VocabHashMismatch(SelftrainError):
    pass


class ShapeMismatch(SelftrainError):
    pass


class NonFiniteLoss(SelftrainError):
    def __init__(self, step):
        self.step = step
        super().__init__(f"non-finite loss at step {step}")


class VersionMismatch(SelftrainError):
    pass


class CorruptFile(SelftrainError):
    pass


class IdCollision(SelftrainError):
    def __init__(self, ids):
        self.ids = sorted(ids)
        super().__init__(f"ids present in both datasets: {self.ids[:5]}")


class ConfigInvalid(SelftrainError):
    def __init__(self, field, reason):
        self.field = field
        super().__init__(f"{field}: {reason}")


class AxisDegenerate(SelftrainError):
    pass
