import sys
from src.logger import logging


def error_message_detail(error, error_detail: sys):
    _, _, exc_tb = error_detail.exc_info()
    if exc_tb is None:
        return "Error occured: {0}".format(str(error))
    while exc_tb.tb_next is not None:
        exc_tb = exc_tb.tb_next
    file_name = exc_tb.tb_frame.f_code.co_filename
    error_message = "Error occured in python script name [{0}] line number [{1}] error message[{2}]".format(
        file_name, exc_tb.tb_lineno, str(error))

    return error_message


class CustomException(Exception):
    def __init__(self, error_message, error_detail: sys = sys):
        super().__init__(error_message)
        self.error_message = error_message_detail(error_message, error_detail=error_detail)

    def __str__(self):
        return self.error_message


class ContractError(CustomException, ValueError):
    """A precondition on shapes, lengths or value ranges was violated."""


class NumericOverflowError(CustomException, ArithmeticError):
    """
    A primitive produced NaN/Inf. ``node`` names the offending operation;
    ``serial`` is the node's creation index within the process, ``position``
    the first non-finite element and ``inputs`` the ops feeding the node.
    """

    def __init__(self, node: str, serial: int = -1, position=None, shape=None, inputs=(),
                 error_detail: sys = sys):
        where = f" #{serial}" if serial >= 0 else ""
        if position is not None:
            where += f" at {position} of shape {shape}"
        if inputs:
            where += f" from [{', '.join(inputs)}]"
        super().__init__(f"non-finite value produced by node '{node}'{where}", error_detail)
        self.node = node
        self.serial = serial
        self.position = position
        self.shape = shape
        self.inputs = list(inputs)


class DegenerateParameterError(ContractError):
    """A model parameter left its valid domain (for example NIG alpha <= 1)."""


class DataValidationError(CustomException, ValueError):
    """Input rows failed validation; ``rows`` holds 1-based file line numbers."""

    def __init__(self, message: str, rows=(), error_detail: sys = sys):
        super().__init__(message, error_detail)
        self.rows = list(rows)


class ConfigurationError(CustomException, ValueError):
    pass


class TrainingDivergedError(CustomException, ArithmeticError):
    def __init__(self, epoch: int, batch: int, terms: dict, error_detail: sys = sys):
        super().__init__(
            f"non-finite training loss at epoch {epoch}, batch {batch}: {terms}", error_detail
        )
        self.epoch = epoch
        self.batch = batch
        self.terms = dict(terms)
        logging.error(str(self))
