"""Human review loop: REST service, verdict log, regeneration queue."""

from .service import create_app
from .store import (
    AlreadyReviewed,
    Decision,
    ItemKind,
    ReviewSessionStats,
    ReviewStore,
    ReviewVerdict,
    SessionClosed,
    UnknownItems,
    UnknownSession,
    item_kind_for,
    review_population,
)

__all__ = [
    "create_app", "AlreadyReviewed", "Decision", "ItemKind", "ReviewSessionStats",
    "ReviewStore", "ReviewVerdict", "SessionClosed", "UnknownItems", "UnknownSession",
    "item_kind_for", "review_population",
]
