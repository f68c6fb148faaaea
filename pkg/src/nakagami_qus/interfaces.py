from abc import ABC, abstractmethod
from typing import TYPE_CHECKING, ClassVar, Optional

from .models import EnvelopeImage, ParamMap
from .registry import registry

if TYPE_CHECKING:
    from .config import EstimateSection
    from .score_model import ScoreNetwork


class EstimatorInterface(ABC):
    """Abstract base class for Nakagami parameter-map estimators."""

    registration_key: ClassVar[Optional[str]] = None

    def __init__(self, settings: "EstimateSection", network: Optional["ScoreNetwork"] = None):
        self.settings = settings
        self.network = network

    def __init_subclass__(cls, **kwargs):
        """Automatically register estimator subclasses."""
        super().__init_subclass__(**kwargs)

        # Use a specific registration key if provided, otherwise generate one
        method = cls.registration_key
        if not method:
            method = cls.__name__.replace("Estimator", "").lower()

        # Abstract intermediates do not register
        if "interface" not in method:
            registry.register(method, cls)

    @abstractmethod
    def estimate(self, image: EnvelopeImage) -> ParamMap:
        """Produce a full-resolution m map for one envelope image."""
        pass

    @abstractmethod
    def describe(self) -> str:
        """Window or configuration text for report tables."""
        pass
