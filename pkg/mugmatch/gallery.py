"""Persistent enrolment database of faces, SIFT features and eigen projections."""

import hashlib
import io
import json
import re
import struct
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field, ValidationError
from rich.console import Console

from .eigenfaces import default_k, project, train
from .errors import (
    DuplicateIdentity,
    FormatError,
    GalleryIoError,
    ParamsMismatch,
    StaleEigenModel,
)
from .image_ops import load_image, preprocess, resize_bilinear, to_grayscale
from .models import (
    DESCRIPTOR_LENGTH,
    ArrayModel,
    ColorImage,
    EigenModel,
    EigenProjection,
    FeatureSet,
    GrayImage,
    Keypoint,
    PyramidParams,
)
from .sift import extract_features, scale_index_from_sigma

console = Console(stderr=True)

MANIFEST_NAME = "manifest.txt"
MANIFEST_HEADER = "MUGMATCH-GALLERY v1"
SIDECAR_NAME = "gallery.json"
EIGEN_NAME = "eigenfaces.mmpc"

FEATURE_MAGIC = b"MMFT"
EIGEN_MAGIC = b"MMPC"
FORMAT_VERSION = 1
KEYPOINT_FIELDS = 6

IMAGE_SUFFIXES = {".png", ".pgm", ".ppm", ".pnm", ".pbm"}

_FEATURE_HEADER = struct.Struct("<4sBQI")
_EIGEN_HEADER = struct.Struct("<4sBII")


class IdentityRecord(ArrayModel):
    """One enrolled person."""

    identity_id: str = Field(description="Unique identity key")
    label: str = Field(description="Display name")
    image_path: str = Field(default="", description="Source image the face was enrolled from")
    face: GrayImage = Field(description="Preprocessed canonical face")
    feature_set: FeatureSet = Field(description="SIFT features of the canonical face")
    eigen_coeffs: EigenProjection | None = Field(default=None, description="Eigenspace projection, once trained")


class GalleryIndex(ArrayModel):
    """Enrolled identities in enrolment order."""

    records: list[IdentityRecord] = Field(default_factory=list)
    canonical_size: tuple[int, int] = Field(default=(300, 300), description="(width, height) of every face")
    params: PyramidParams = Field(default_factory=PyramidParams, description="Feature extraction parameters")
    eigen_model: EigenModel | None = Field(default=None)
    eigen_stale: bool = Field(default=True, description="True when the eigen model predates the last enrolment")

    @property
    def params_fingerprint(self) -> int:
        return params_fingerprint(self.params, self.canonical_size)

    def __len__(self) -> int:
        return len(self.records)

    def identity_ids(self) -> list[str]:
        return [record.identity_id for record in self.records]

    def record(self, identity_id: str) -> IdentityRecord:
        for record in self.records:
            if record.identity_id == identity_id:
                return record
        raise KeyError(identity_id)

    def feature_gallery(self) -> list[tuple[str, FeatureSet]]:
        """(identity_id, features) pairs in enrolment order."""
        return [(record.identity_id, record.feature_set) for record in self.records]


class _SidecarRecord(BaseModel):
    identity_id: str
    image_path: str = ""
    face_file: str


class _Sidecar(BaseModel):
    """Contents of gallery.json."""

    params: PyramidParams
    canonical_size: tuple[int, int]
    eigen_stale: bool = True
    has_eigen_model: bool = False
    records: list[_SidecarRecord] = Field(default_factory=list)


def params_fingerprint(params: PyramidParams, canonical_size: tuple[int, int]) -> int:
    """8-byte hash identifying the parameters features were extracted with."""
    payload = json.dumps(
        {"params": params.model_dump(mode="json"), "canonical_size": list(canonical_size)},
        sort_keys=True,
    )
    digest = hashlib.blake2b(payload.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def create_gallery(params: PyramidParams | None = None, canonical_size: int | tuple[int, int] = 300) -> GalleryIndex:
    """Empty gallery with fixed extraction parameters."""
    if isinstance(canonical_size, int):
        canonical_size = (canonical_size, canonical_size)
    return GalleryIndex(params=params or PyramidParams(), canonical_size=canonical_size)


def _check_text_field(name: str, value: str) -> None:
    if not value or any(ch in value for ch in "\t\r\n"):
        raise ValueError(f"{name} must be non-empty and free of tabs and newlines: {value!r}")


def canonical_face(gallery: GalleryIndex, img: ColorImage) -> GrayImage:
    """Grayscale and resize an image to the gallery's canonical size."""
    width, height = gallery.canonical_size
    if width == height:
        return preprocess(img, width)
    return resize_bilinear(to_grayscale(img), width, height)


def enroll(
    gallery: GalleryIndex,
    identity_id: str,
    label: str,
    img: ColorImage,
    image_path: str = "",
) -> GalleryIndex:
    """
    Preprocess a face, extract its features and append it to the gallery.

    Args:
        gallery: Gallery to extend
        identity_id: Unique identity key
        label: Display name
        img: Decoded source image
        image_path: Source file reference

    Returns:
        New GalleryIndex with the record appended and the eigen model marked stale
    """
    _check_text_field("identity id", identity_id)
    _check_text_field("label", label)
    if identity_id in gallery.identity_ids():
        raise DuplicateIdentity(f"identity {identity_id!r} is already enrolled")

    face = canonical_face(gallery, img)
    features = extract_features(face, gallery.params)
    record = IdentityRecord(
        identity_id=identity_id,
        label=label,
        image_path=image_path,
        face=face,
        feature_set=features,
    )
    return gallery.model_copy(update={"records": [*gallery.records, record], "eigen_stale": True})


def enroll_directory(gallery: GalleryIndex, directory: Path) -> GalleryIndex:
    """
    Enrol every PNG / portable anymap file in a directory, keyed by file stem.

    Args:
        gallery: Gallery to extend
        directory: Directory containing face images

    Returns:
        Updated gallery
    """
    if not directory.is_dir():
        raise GalleryIoError(f"Directory not found: {directory}")

    image_files = sorted(path for path in directory.iterdir() if path.suffix.lower() in IMAGE_SUFFIXES)
    if not image_files:
        console.print(f"[yellow]⚠[/yellow] No face images found in {directory}")
        return gallery

    console.print(f"[cyan]→[/cyan] Found {len(image_files)} face image(s)")
    for path in image_files:
        gallery = enroll(gallery, path.stem, path.stem, load_image(path), image_path=str(path))
        count = len(gallery.records[-1].feature_set)
        console.print(f"[green]✓[/green] Enrolled {path.stem} ({count} keypoints)")
    return gallery


def train_eigenfaces(gallery: GalleryIndex, k: int | None = None) -> GalleryIndex:
    """Train eigenfaces on the gallery faces and project every record."""
    faces = [record.face for record in gallery.records]
    k = k if k is not None else default_k(len(faces))
    model = train(faces, k).quantized()
    records = [
        record.model_copy(update={"eigen_coeffs": project(record.face, model, record.identity_id)})
        for record in gallery.records
    ]
    return gallery.model_copy(update={"records": records, "eigen_model": model, "eigen_stale": False})


def require_eigen_model(gallery: GalleryIndex) -> EigenModel:
    """Return the eigen model, or raise StaleEigenModel when it is missing or out of date."""
    if gallery.eigen_model is None:
        raise StaleEigenModel("no eigenface model trained; run `mugmatch train` first")
    if gallery.eigen_stale:
        raise StaleEigenModel("eigenface model is older than the latest enrolment; run `mugmatch train` again")
    return gallery.eigen_model


def encode_feature_file(features: FeatureSet, fingerprint: int) -> bytes:
    """Serialise a FeatureSet in the MMFT binary layout."""
    header = _FEATURE_HEADER.pack(FEATURE_MAGIC, FORMAT_VERSION, fingerprint, len(features))
    rows = np.zeros((len(features), KEYPOINT_FIELDS + DESCRIPTOR_LENGTH), dtype="<f4")
    for row, kp in enumerate(features.keypoints):
        rows[row, :KEYPOINT_FIELDS] = (kp.x, kp.y, kp.sigma, kp.orientation, kp.response, float(kp.octave))
    rows[:, KEYPOINT_FIELDS:] = features.descriptors
    return header + rows.tobytes()


def decode_feature_file(
    data: bytes,
    params: PyramidParams,
    source_dims: tuple[int, int],
) -> tuple[int, FeatureSet]:
    """
    Parse an MMFT feature file.

    Returns:
        (stored params fingerprint, FeatureSet)
    """
    if len(data) < _FEATURE_HEADER.size:
        raise FormatError("feature file is shorter than its header")
    magic, version, fingerprint, count = _FEATURE_HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"bad feature file magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported feature file version {version}")
    width = KEYPOINT_FIELDS + DESCRIPTOR_LENGTH
    expected = _FEATURE_HEADER.size + count * width * 4
    if len(data) != expected:
        raise FormatError(f"feature file holds {len(data)} bytes, expected {expected}")

    rows = np.frombuffer(data, dtype="<f4", offset=_FEATURE_HEADER.size).reshape(count, width)
    keypoints = []
    for x, y, sigma, orientation, response, octave in rows[:, :KEYPOINT_FIELDS].tolist():
        octave = int(round(octave))
        keypoints.append(
            Keypoint(
                x=x,
                y=y,
                octave=octave,
                scale_index=scale_index_from_sigma(sigma, octave, params),
                sigma=sigma,
                orientation=orientation,
                response=response,
            )
        )
    descriptors = rows[:, KEYPOINT_FIELDS:].astype(np.float32)
    return fingerprint, FeatureSet(keypoints=keypoints, descriptors=descriptors, source_dims=source_dims)


def encode_eigen_file(model: EigenModel) -> bytes:
    """Serialise an eigen model in the MMPC binary layout."""
    header = _EIGEN_HEADER.pack(EIGEN_MAGIC, FORMAT_VERSION, model.dimension, model.k)
    return (
        header
        + model.mean.astype("<f4").tobytes()
        + model.components.astype("<f4").tobytes()
        + model.eigenvalues.astype("<f4").tobytes()
    )


def decode_eigen_file(data: bytes, image_shape: tuple[int, int]) -> EigenModel:
    """Parse an MMPC eigen model file."""
    if len(data) < _EIGEN_HEADER.size:
        raise FormatError("eigen model file is shorter than its header")
    magic, version, dimension, k = _EIGEN_HEADER.unpack_from(data)
    if magic != EIGEN_MAGIC:
        raise FormatError(f"bad eigen model magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported eigen model version {version}")
    if dimension != image_shape[0] * image_shape[1]:
        raise FormatError(f"eigen model dimension {dimension} does not match faces of shape {image_shape}")
    expected = _EIGEN_HEADER.size + 4 * (dimension + k * dimension + k)
    if len(data) != expected:
        raise FormatError(f"eigen model file holds {len(data)} bytes, expected {expected}")

    values = np.frombuffer(data, dtype="<f4", offset=_EIGEN_HEADER.size).astype(np.float64)
    mean = values[:dimension]
    components = values[dimension : dimension + k * dimension].reshape(k, dimension)
    eigenvalues = values[dimension + k * dimension :]
    return EigenModel(mean=mean, components=components, eigenvalues=eigenvalues, image_shape=image_shape)


def _file_stem(index: int, identity_id: str) -> str:
    return f"{index:04d}_{re.sub(r'[^A-Za-z0-9_.-]', '_', identity_id)}"


def save(gallery: GalleryIndex, directory: Path) -> None:
    """
    Write the manifest, per-identity feature files, faces and eigen model.

    Args:
        gallery: Gallery to persist
        directory: Target directory (created if missing)
    """
    directory = Path(directory)
    fingerprint = gallery.params_fingerprint
    lines = [MANIFEST_HEADER]
    sidecar_records: list[_SidecarRecord] = []
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for index, record in enumerate(gallery.records):
            stem = _file_stem(index, record.identity_id)
            feature_name = f"{stem}.mmft"
            face_name = f"{stem}.npy"
            (directory / feature_name).write_bytes(encode_feature_file(record.feature_set, fingerprint))
            buffer = io.BytesIO()
            np.save(buffer, record.face.pixels, allow_pickle=False)
            (directory / face_name).write_bytes(buffer.getvalue())
            lines.append("\t".join([record.identity_id, record.label, feature_name]))
            sidecar_records.append(
                _SidecarRecord(identity_id=record.identity_id, image_path=record.image_path, face_file=face_name)
            )

        eigen_path = directory / EIGEN_NAME
        if gallery.eigen_model is not None:
            eigen_path.write_bytes(encode_eigen_file(gallery.eigen_model))
        else:
            eigen_path.unlink(missing_ok=True)

        sidecar = _Sidecar(
            params=gallery.params,
            canonical_size=gallery.canonical_size,
            eigen_stale=gallery.eigen_stale,
            has_eigen_model=gallery.eigen_model is not None,
            records=sidecar_records,
        )
        (directory / SIDECAR_NAME).write_text(sidecar.model_dump_json(indent=2), encoding="utf-8")
        (directory / MANIFEST_NAME).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise GalleryIoError(f"cannot write gallery to {directory}: {e}") from e


def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as e:
        raise GalleryIoError(f"cannot read {path}: {e.strerror or e}") from e


def load(directory: Path, expected_params: PyramidParams | None = None) -> GalleryIndex:
    """
    Reconstruct a gallery written by save().

    Args:
        directory: Gallery directory
        expected_params: When given, the stored parameters must produce the same fingerprint

    Returns:
        The stored GalleryIndex
    """
    directory = Path(directory)
    manifest = _read_bytes(directory / MANIFEST_NAME).decode("utf-8", errors="strict").splitlines()
    if not manifest or manifest[0] != MANIFEST_HEADER:
        raise FormatError(f"{directory / MANIFEST_NAME} does not start with {MANIFEST_HEADER!r}")

    try:
        sidecar = _Sidecar.model_validate_json(_read_bytes(directory / SIDECAR_NAME))
    except ValidationError as e:
        raise FormatError(f"invalid {SIDECAR_NAME}: {e}") from e

    fingerprint = params_fingerprint(sidecar.params, sidecar.canonical_size)
    if expected_params is not None and params_fingerprint(expected_params, sidecar.canonical_size) != fingerprint:
        raise ParamsMismatch("gallery was built with different extraction parameters")

    entries = [line for line in manifest[1:] if line]
    if len(entries) != len(sidecar.records):
        raise FormatError("manifest and gallery.json list different numbers of records")

    width, height = sidecar.canonical_size
    records: list[IdentityRecord] = []
    for line, meta in zip(entries, sidecar.records):
        fields = line.split("\t")
        if len(fields) != 3:
            raise FormatError(f"malformed manifest line: {line!r}")
        identity_id, label, feature_name = fields
        if identity_id != meta.identity_id:
            raise FormatError(f"manifest and gallery.json disagree at {identity_id!r}")

        stored_fingerprint, features = decode_feature_file(
            _read_bytes(directory / feature_name), sidecar.params, (width, height)
        )
        if stored_fingerprint != fingerprint:
            raise ParamsMismatch(f"{feature_name} was extracted with different parameters")

        try:
            pixels = np.load(io.BytesIO(_read_bytes(directory / meta.face_file)), allow_pickle=False)
        except ValueError as e:
            raise FormatError(f"cannot parse {meta.face_file}: {e}") from e
        records.append(
            IdentityRecord(
                identity_id=identity_id,
                label=label,
                image_path=meta.image_path,
                face=GrayImage(pixels=pixels),
                feature_set=features,
            )
        )

    eigen_model = None
    if sidecar.has_eigen_model:
        eigen_model = decode_eigen_file(_read_bytes(directory / EIGEN_NAME), (height, width))
        if not sidecar.eigen_stale:
            records = [
                record.model_copy(update={"eigen_coeffs": project(record.face, eigen_model, record.identity_id)})
                for record in records
            ]

    return GalleryIndex(
        records=records,
        canonical_size=sidecar.canonical_size,
        params=sidecar.params,
        eigen_model=eigen_model,
        eigen_stale=sidecar.eigen_stale,
    )
