from django.test.runner import DiscoverRunner


class LabTestRunner(DiscoverRunner):
    """Skip 'benchmark' tests unless tags are requested explicitly"""

    def __init__(self, tags=None, exclude_tags=None, **kwargs):
        if not tags:
            exclude_tags = set(exclude_tags or ()) | {'benchmark'}
        super().__init__(tags=tags, exclude_tags=exclude_tags, **kwargs)
