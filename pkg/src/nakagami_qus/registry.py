from typing import Dict, List, Type


class EstimatorRegistry:
    """A registry for Nakagami estimator classes keyed by method name."""
    def __init__(self):
        self._registry: Dict[str, Type] = {}

    def register(self, method: str, estimator_class: Type):
        """Register an estimator class."""
        if method in self._registry:
            raise ValueError(f"Estimator '{method}' is already registered.")
        self._registry[method] = estimator_class

    def get_estimator_class(self, method: str) -> Type:
        """Get an estimator class by its method name."""
        estimator_class = self._registry.get(method)
        if not estimator_class:
            raise ValueError(f"No estimator registered for method '{method}'.")
        return estimator_class

    def methods(self) -> List[str]:
        return sorted(self._registry)

# Global instance of the registry
registry = EstimatorRegistry()
