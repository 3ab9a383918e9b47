"""
Fehlerhierarchie der Uplift Engine

Jede Fehlerklasse trägt einen Exit-Code, den die Management-Commands
an die Shell weiterreichen (0 ok, 1 Usage, 2 Daten, 3 Numerik).
"""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class UpliftError(Exception):
    """Basisklasse aller fachlichen Fehler"""

    exit_code = EXIT_DATA


class DimensionError(UpliftError, ValueError):
    """Shape- oder Längenkonflikt, leere Eingaben"""


class GraphStateError(UpliftError, RuntimeError):
    """backward() ohne aufgezeichneten Forward-Graph"""

    exit_code = EXIT_NUMERICAL


class NumericalError(UpliftError, ArithmeticError):
    """Nicht-endliche Gradienten oder Losses"""

    exit_code = EXIT_NUMERICAL

    def __init__(self, message, parameter=None, diagnostics=None):
        super().__init__(message)
        self.parameter = parameter
        self.diagnostics = diagnostics or {}


class ContractError(UpliftError, ValueError):
    """Verletzte Vorbedingung einer Operation"""


class DataError(UpliftError, ValueError):
    """Parse- und Datenfehler, optional mit Zeilennummer"""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"Zeile {row}: {message}"
        super().__init__(message)
        self.row = row


class FeatureIndexError(DataError, IndexError):
    """Feature-ID außerhalb der deklarierten Kardinalität"""

    def __init__(self, feature, value, cardinality):
        super().__init__(
            f"Feature '{feature}': ID {value} außerhalb [0, {cardinality})")
        self.feature = feature


class CheckpointVersionError(DataError):
    """Checkpoint passt nicht zu Version oder Schema"""


class MetricError(UpliftError, ValueError):
    """Degenerierte Eingaben für QINI/AUUC"""


class DenominatorError(UpliftError, ZeroDivisionError):
    """Kontrollschätzung zu nah an 0 für relativen Uplift"""

    def __init__(self, user_id, value):
        super().__init__(
            f"Nutzer {user_id}: Kontrollschätzung {value:.3g} unter Nenner-Schwelle")
        self.user_id = user_id
        self.value = value


class ConfigError(UpliftError):
    """Ungültige Konfiguration oder Aufrufparameter"""

    exit_code = EXIT_USAGE
