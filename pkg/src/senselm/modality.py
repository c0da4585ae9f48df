"""Modality taxonomy and raw-sample containers."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class ModalityKind(str, Enum):
    VIDEO = "video"
    DEPTH = "depth"
    INFRARED = "infrared"
    LIDAR = "lidar"
    MMWAVE = "mmwave"
    WIFI_CSI = "wifi_csi"
    RFID = "rfid"


IMAGE_KINDS = frozenset({ModalityKind.VIDEO, ModalityKind.DEPTH, ModalityKind.INFRARED})
POINT_KINDS = frozenset({ModalityKind.LIDAR, ModalityKind.MMWAVE})
SEQUENCE_KINDS = frozenset({ModalityKind.WIFI_CSI, ModalityKind.RFID})


def family_of(kind: ModalityKind) -> str:
    if kind in IMAGE_KINDS:
        return "image"
    if kind in POINT_KINDS:
        return "point"
    return "sequence"


@dataclass
class PayloadGeometry:
    """Static payload shape for one (dataset, modality) pair.

    image: [frames, height, width, channels]; point: [frames, points, point_dim];
    sequence: [time_steps, sensors].
    """

    frames: int = 5
    height: int = 32
    width: int = 32
    channels: int = 1
    points: int = 96
    point_dim: int = 3
    time_steps: int = 100
    sensors: int = 30

    def shape(self, kind: ModalityKind) -> tuple:
        fam = family_of(kind)
        if fam == "image":
            return (self.frames, self.height, self.width, self.channels)
        if fam == "point":
            return (self.frames, self.points, self.point_dim)
        return (self.time_steps, self.sensors)


@dataclass
class ModalitySample:
    """One raw observation with its action/subject/environment labels."""

    kind: ModalityKind
    payload: np.ndarray
    action_id: int
    subject_id: int
    environment_id: int
    sequence_id: str = ""

    def validate(self, geom: PayloadGeometry) -> "ModalitySample":
        """Check the payload against the dataset's geometry (frame count
        included); point counts may vary per sample."""
        expected = geom.shape(self.kind)
        actual = tuple(self.payload.shape)
        if family_of(self.kind) == "point":
            ok = len(actual) == 3 and actual[0] == expected[0] and \
                actual[2] == expected[2]
        else:
            ok = actual == expected
        if not ok:
            raise ValueError(
                f"{self.sequence_id or '<sample>'}: {self.kind.value} payload "
                f"{actual} does not match dataset geometry {expected}")
        return self
