"""Exception hierarchy shared by every module."""


class CrowdError(Exception):
    """Base class for all errors raised by crowdconsensus."""

    code = "error"

    def __init__(self, message, detail=None):
        super().__init__(message)
        self.message = message
        self.detail = detail if detail is not None else {}

    def to_dict(self):
        return {"code": self.code, "message": self.message, "detail": self.detail}


class ValidationError(CrowdError):
    code = "validation_error"


class UnknownTask(ValidationError):
    code = "unknown_task"

    def __init__(self, task_id, annotation_id=None):
        super().__init__(
            f"annotation {annotation_id!r} references unknown task {task_id!r}",
            {"task_id": task_id, "annotation_id": annotation_id},
        )
        self.task_id = task_id


class UnknownQuestion(ValidationError):
    code = "unknown_question"

    def __init__(self, question_id, annotation_id=None):
        super().__init__(
            f"question {question_id!r} has no declared label space",
            {"question_id": question_id, "annotation_id": annotation_id},
        )
        self.question_id = question_id


class UnknownReportedLabel(ValidationError):
    code = "unknown_reported_label"

    def __init__(self, label, question_id, annotation_id=None):
        super().__init__(
            f"annotation {annotation_id!r}: label {label!r} is not declared for question {question_id!r}",
            {"label": label, "question_id": question_id, "annotation_id": annotation_id},
        )
        self.label = label


class DuplicateId(ValidationError):
    code = "duplicate_id"

    def __init__(self, kind, identifier):
        super().__init__(f"duplicate {kind} id {identifier!r}", {"kind": kind, "id": identifier})
        self.identifier = identifier


class InvalidLabelSpace(ValidationError):
    code = "invalid_label_space"


class InvalidConfig(ValidationError):
    code = "invalid_config"


class FormatError(CrowdError):
    """Input bytes could not be parsed at all."""

    code = "format_error"


class MissingColumn(FormatError):
    code = "missing_column"

    def __init__(self, name):
        super().__init__(f"missing required column {name!r}", {"column": name})
        self.name = name


class MalformedRow(FormatError):
    code = "malformed_row"

    def __init__(self, line, reason="malformed row"):
        super().__init__(f"line {line}: {reason}", {"line": line})
        self.line = line


class EncodingError(FormatError):
    code = "encoding_error"


class ModelError(CrowdError):
    code = "model_error"


class DegenerateModel(ModelError):
    code = "degenerate_model"


class NoAnnotations(ModelError):
    code = "no_annotations"


class NonFiniteObjective(ModelError):
    code = "non_finite_objective"


class DegenerateAgreement(ModelError):
    code = "degenerate_agreement"


class NoRatableItems(ModelError):
    code = "no_ratable_items"


class MissingReference(ValidationError):
    code = "missing_reference"


class TaskMismatch(ValidationError):
    code = "task_mismatch"


class InvalidDistribution(ValidationError):
    code = "invalid_distribution"
