"""
Result persistence: CSV tables and versioned certificate files.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd

from ..core.errors import CertificateFormatError
from ..core.global_certifier import GlobalCertificate
from ..core.scenario_engine import SensitivityProfile
from ..core.systems import ReductionMap

logger = logging.getLogger(__name__)

CERTIFICATE_FORMAT_VERSION = 1
CSV_FLOAT_FORMAT = "%.17g"

PathLike = Union[str, Path]


def _to_frame(table: Union[pd.DataFrame, Sequence[Mapping[str, Any]], Mapping[str, Sequence[Any]]],
              columns: Optional[Sequence[str]]) -> pd.DataFrame:
    if isinstance(table, pd.DataFrame):
        frame = table.copy()
    elif isinstance(table, Mapping):
        frame = pd.DataFrame(dict(table))
    else:
        frame = pd.DataFrame(list(table))
    if columns is not None:
        frame = frame.reindex(columns=list(columns))
    return frame


def emit_csv(table, path: PathLike, columns: Optional[Sequence[str]] = None) -> Path:
    """
    Write a result table as CSV.

    Args:
        table: DataFrame, list of row dicts, or dict of columns
        path: Output file; parent directories are created
        columns: Column order; defaults to the order of the first row

    Returns:
        Path written. Identical inputs give byte-identical files; an empty table
        with known columns gives a header-only file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = _to_frame(table, columns)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    logger.debug(f"Wrote {len(frame)} rows to {path}")
    return path


def read_csv(path: PathLike) -> pd.DataFrame:
    """Read a table written by emit_csv or emit_profile_csv; '#' lines are metadata."""
    return pd.read_csv(path, comment="#", float_precision="round_trip")


def certificate_records(cert: GlobalCertificate) -> pd.DataFrame:
    """One row per nominal: reduced coordinates, V_check, certified and boundary flags."""
    labels = list(cert.reduction.labels) or [f"z{i}" for i in range(cert.points.shape[1])]
    frame = pd.DataFrame(cert.points, columns=labels)
    frame["value"] = cert.values
    frame["certified"] = cert.certified
    frame["boundary"] = cert.boundary
    return frame


def _profile_to_dict(profile: SensitivityProfile) -> Dict[str, Any]:
    return {
        "horizon": profile.horizon,
        "bounds": profile.bounds.tolist(),
        "eps_x": profile.eps_x,
        "sample_count": profile.sample_count,
        "seed": profile.seed,
        "domain": profile.domain,
        "weighted": profile.weighted,
        "epsilon": profile.epsilon,
        "beta": profile.beta,
    }


def _optional_float(value: Any) -> Optional[float]:
    return None if value is None else float(value)


def _profile_from_dict(data: Mapping[str, Any]) -> SensitivityProfile:
    return SensitivityProfile(
        horizon=int(data["horizon"]),
        bounds=np.asarray(data["bounds"], dtype=np.float64),
        eps_x=float(data["eps_x"]),
        sample_count=int(data["sample_count"]),
        seed=int(data["seed"]),
        domain=str(data.get("domain", "")),
        weighted=bool(data.get("weighted", False)),
        epsilon=_optional_float(data.get("epsilon")),
        beta=_optional_float(data.get("beta")),
    )


def profile_metadata(profile: SensitivityProfile) -> Dict[str, Any]:
    """Provenance of a deviation profile: seed, pair count N, risk level, confidence and eps_x."""
    return {
        "seed": profile.seed,
        "samples": profile.sample_count,
        "epsilon": profile.epsilon,
        "beta": profile.beta,
        "eps_x": profile.eps_x,
        "horizon": profile.horizon,
    }


def emit_profile_csv(profile: SensitivityProfile, path: PathLike) -> Path:
    """
    Write the per-step bounds as a (t, bound) table preceded by '# key=value'
    metadata lines; read it back with read_csv.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame({"t": np.arange(profile.horizon + 1), "bound": profile.bounds})
    with open(path, "w", encoding="utf-8", newline="") as f:
        for key, value in profile_metadata(profile).items():
            f.write(f"# {key}={value!r}\n")
        frame.to_csv(f, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return path


def save_profile(profile: SensitivityProfile, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump({"format_version": CERTIFICATE_FORMAT_VERSION, "profile": _profile_to_dict(profile)}, f, indent=2)
    return path


def load_profile(path: PathLike) -> SensitivityProfile:
    with open(path, "r", encoding="utf-8") as f:
        data = json.load(f)
    if data.get("format_version") != CERTIFICATE_FORMAT_VERSION:
        raise CertificateFormatError(f"Unsupported profile format version: {data.get('format_version')}")
    return _profile_from_dict(data["profile"])


def save_certificate(cert: GlobalCertificate, path: PathLike) -> Path:
    """Versioned JSON document: header, sensitivity profile and columnar records."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {
        "format_version": CERTIFICATE_FORMAT_VERSION,
        "header": {
            "gamma": cert.gamma,
            "horizon": cert.horizon,
            "eps_x": cert.eps_x,
            "spacing": cert.spacing,
            "policy_id": cert.policy_id,
            "profile_hash": cert.profile.digest(),
            "domain_low": cert.domain_low.tolist(),
            "domain_high": cert.domain_high.tolist(),
            "reduction": {
                "matrix": cert.reduction.matrix.tolist(),
                "free": list(cert.reduction.free),
                "reference": cert.reduction.reference.tolist(),
                "labels": list(cert.reduction.labels),
            },
        },
        "profile": _profile_to_dict(cert.profile),
        "records": {
            "points": cert.points.tolist(),
            "values": cert.values.tolist(),
            "certified": cert.certified.astype(int).tolist(),
            "boundary": cert.boundary.astype(int).tolist(),
        },
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f)
    logger.info(f"Saved certificate with {cert.points.shape[0]} nominals to {path}")
    return path


def load_certificate(path: PathLike) -> GlobalCertificate:
    """Rebuild a certificate (and its spatial index) from a file written by save_certificate."""
    with open(path, "r", encoding="utf-8") as f:
        document = json.load(f)

    version = document.get("format_version")
    if version != CERTIFICATE_FORMAT_VERSION:
        raise CertificateFormatError(f"Unsupported certificate format version: {version}")
    try:
        header = document["header"]
        profile = _profile_from_dict(document["profile"])
        records = document["records"]
        reduction_data = header["reduction"]
    except KeyError as e:
        raise CertificateFormatError(f"Certificate file is missing {e}") from e

    if profile.digest() != header["profile_hash"]:
        raise CertificateFormatError("Stored profile does not match the certificate's profile hash")

    values = np.asarray(records["values"], dtype=np.float64)
    certified = np.asarray(records["certified"], dtype=bool)
    if not np.array_equal(certified, values >= 0.0):
        raise CertificateFormatError("Certified flags disagree with the stored values")

    reduction = ReductionMap(
        matrix=np.asarray(reduction_data["matrix"], dtype=np.float64),
        free=tuple(reduction_data["free"]),
        reference=np.asarray(reduction_data["reference"], dtype=np.float64),
        labels=tuple(reduction_data.get("labels", ())),
    )
    points = np.asarray(records["points"], dtype=np.float64).reshape(values.size, reduction.reduced_dim)
    return GlobalCertificate(
        points=points,
        values=values,
        boundary=np.asarray(records["boundary"], dtype=bool),
        eps_x=float(header["eps_x"]),
        spacing=float(header["spacing"]),
        gamma=float(header["gamma"]),
        horizon=int(header["horizon"]),
        policy_id=str(header["policy_id"]),
        profile=profile,
        domain_low=np.asarray(header["domain_low"], dtype=np.float64),
        domain_high=np.asarray(header["domain_high"], dtype=np.float64),
        reduction=reduction,
    )


def episode_rows(logs: Iterable, method: str) -> List[Dict[str, Any]]:
    """One summary row per episode."""
    rows = []
    for trial, log in enumerate(logs):
        histogram = log.tier_histogram()
        rows.append({
            "method": method,
            "trial": trial,
            "outcome": log.outcome,
            "steps": log.steps,
            **{f"tier_{k}": histogram.get(k, 0) for k in ("0", "1", "2", "3", "none")},
        })
    return rows
