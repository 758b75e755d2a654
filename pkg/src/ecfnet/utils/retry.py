"""
Retry policy for artifact writes
"""
from tenacity import retry, retry_if_exception, stop_after_attempt, wait_exponential

from ..errors import EcfError


def _transient_os_error(exc: BaseException) -> bool:
    return isinstance(exc, OSError) and not isinstance(exc, EcfError)


durable_write = retry(
    retry=retry_if_exception(_transient_os_error),
    stop=stop_after_attempt(3),
    wait=wait_exponential(multiplier=0.05, max=1),
    reraise=True,
)
