"""
Exceptions personnalisées du framework SegCLR.
"""


class SegClrError(Exception):
    """Exception de base du framework."""
    pass


class ConfigurationError(SegClrError):
    """Erreur de configuration (le message contient le chemin du champ)."""
    pass


class DataValidationError(SegClrError):
    """Erreur de validation des données ou des paramètres."""
    pass


class DatasetIOError(SegClrError):
    """Erreur de lecture/écriture d'un jeu de données sur disque."""
    pass


class ModelError(SegClrError):
    """Erreur d'architecture ou d'entrée du modèle."""
    pass


class LossError(SegClrError):
    """Entrées invalides pour une fonction de perte."""
    pass


class TrainingError(SegClrError):
    """Erreur lors de l'entraînement."""
    pass


class TrainingDivergenceError(TrainingError):
    """Perte non finie pendant l'entraînement."""

    def __init__(self, step: int, terms: dict):
        self.step = step
        self.terms = dict(terms)
        details = ", ".join(f"{name}={value}" for name, value in self.terms.items())
        super().__init__(f"Perte non finie à l'étape {step}: {details}")

    def __reduce__(self):
        return self.__class__, (self.step, self.terms)


class ReplicateError(TrainingError):
    """Échec d'un réplicat (graine) d'entraînement."""

    def __init__(self, seed: int, cause: Exception):
        self.seed = seed
        self.cause = cause
        super().__init__(f"Échec de l'entraînement pour la graine {seed}: {cause}")

    def __reduce__(self):
        return self.__class__, (self.seed, self.cause)


class EvaluationError(SegClrError):
    """Erreur lors de l'évaluation des modèles."""
    pass


class RankingError(EvaluationError):
    """Erreur lors du classement des modèles."""
    pass


class VisualizationError(SegClrError):
    """Erreur lors de la création de visualisations."""
    pass


class ReportError(SegClrError):
    """Erreur lors de la génération du rapport."""
    pass


# Codes de sortie de la ligne de commande
VALIDATION_ERRORS = (ConfigurationError, DataValidationError)


def exit_code_for(error: Exception) -> int:
    """Retourne le code de sortie associé à une erreur (1 validation, 2 exécution)."""
    return 1 if isinstance(error, VALIDATION_ERRORS) else 2
