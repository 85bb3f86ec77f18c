import os

NUMPY_REQUIREMENT = ">=1.26"
SCIPY_REQUIREMENT = ">=1.11"
SACREBLEU_REQUIREMENT = "~=2.4"


def _tightened(name: str, requirement: str) -> str:
    """Append the specifier in SZO_<NAME>_REQUIREMENT, if set."""
    extra = os.environ.get(f"SZO_{name}_REQUIREMENT", None)
    if extra:
        return f"{requirement},{extra}"
    return requirement


def get_runtime_dependencies() -> list[str]:
    return [
        f"numpy{_tightened('NUMPY', NUMPY_REQUIREMENT)}",
        f"scipy{_tightened('SCIPY', SCIPY_REQUIREMENT)}",
        f"sacrebleu{_tightened('SACREBLEU', SACREBLEU_REQUIREMENT)}",
    ]
