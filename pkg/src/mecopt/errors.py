"""Exception hierarchy shared by every solver stage."""


class MecError(Exception):
    """Base class for solver errors."""


class InfeasibleOffload(MecError, ValueError):
    """A user offloads data but has no uplink rate or no MEC cycles."""


class DivisionGuard(MecError, ZeroDivisionError):
    """A formula would divide by a zero rate, zero CPU share or zero multiplier."""


class InfeasibleDeadline(MecError):
    """No offloading ratio / rate can meet the slot deadline."""


class DeadlineExhausted(InfeasibleDeadline):
    """MEC execution alone already uses up the whole slot."""


class NoSubcarriers(InfeasibleOffload):
    """An offloading user owns no subcarrier."""


class InfeasibleWindow(MecError):
    """Equal-power window [2**nbar, p_max/|N_k|] is empty."""


class StalledLineSearch(MecError):
    """No damped-Newton step decreased the fixed-point residual."""


class MaxIterations(MecError):
    """An iteration cap was hit before convergence."""


class InfeasibleScenario(MecError):
    """The scenario admits no allocation meeting every deadline."""
