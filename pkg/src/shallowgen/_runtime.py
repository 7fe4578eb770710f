"""Process-level performance settings for long experiment runs."""

import ctypes
import ctypes.util

_M_TRIM_THRESHOLD = -1
_M_TOP_PAD = -2
_M_MMAP_THRESHOLD = -3


def keep_heap_warm(megabytes: int = 64) -> bool:
    """Ask glibc to serve large arrays from the heap instead of fresh mmaps.

    The training loops allocate the same few megabyte-sized temporaries on every
    step; returning them to the kernel and faulting them back in doubles the
    step time.  Returns False (and does nothing) where glibc is unavailable.
    """
    name = ctypes.util.find_library("c")
    if not name:
        return False
    try:
        libc = ctypes.CDLL(name)
        size = megabytes << 20
        ok = libc.mallopt(_M_MMAP_THRESHOLD, size)
        ok &= libc.mallopt(_M_TRIM_THRESHOLD, 4 * size)
        ok &= libc.mallopt(_M_TOP_PAD, size)
    except (OSError, AttributeError):
        return False
    return bool(ok)
