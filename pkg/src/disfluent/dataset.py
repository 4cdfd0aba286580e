"""Annotation ingest, per-clip binary labels, corpus manifest, and
leave-one-subject-out partitioning.

Six stutter classes are recognized: sound repetition (S), word repetition
(W), phrase repetition (PH), revision (R), interjection (I), and
prolongation (PR). A clip is positive for a class when some event of that
class overlaps the clip window by at least half of the event's own duration,
so boundary-straddling events label the clip holding most of them.
"""

import csv
import json
from dataclasses import dataclass, field

from .errors import ParseError, TooFewSubjects, UnknownClass
from .model import STUTTER_CLASSES

EVENT_OVERLAP_THRESHOLD = 0.5
MANIFEST_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class DisfluencyEvent:
    subject_id: str
    start_s: float
    end_s: float
    stutter_class: str

    def __post_init__(self):
        if not 0 <= self.start_s < self.end_s:
            raise ValueError(
                f"event needs 0 <= start < end, got [{self.start_s}, {self.end_s})"
            )
        if self.stutter_class not in STUTTER_CLASSES:
            raise ValueError(f"unknown stutter class {self.stutter_class!r}")

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s


@dataclass
class LabeledClip:
    """One 4-second clip with a full binary label map."""

    wav_path: str
    subject_id: str
    clip_index: int
    labels: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        for cls in STUTTER_CLASSES:
            self.labels.setdefault(cls, 0)

    @property
    def key(self) -> str:
        return f"{self.subject_id}_{self.clip_index:04d}"


@dataclass
class CorpusManifest:
    subjects: list[str]
    clips: list[LabeledClip]
    provenance: str = ""

    def __post_init__(self):
        known = set(self.subjects)
        for clip in self.clips:
            if clip.subject_id not in known:
                raise ValueError(
                    f"clip subject {clip.subject_id!r} missing from subjects"
                )

    def clips_for(self, subject_id: str) -> list[LabeledClip]:
        return [c for c in self.clips if c.subject_id == subject_id]

    def save(self, path) -> None:
        doc = {
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "subjects": list(self.subjects),
            "provenance": self.provenance,
            "clips": [
                {
                    "wav_path": c.wav_path,
                    "subject_id": c.subject_id,
                    "clip_index": c.clip_index,
                    "labels": {cls: int(c.labels[cls]) for cls in STUTTER_CLASSES},
                }
                for c in self.clips
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "CorpusManifest":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        clips = [
            LabeledClip(
                wav_path=c["wav_path"],
                subject_id=c["subject_id"],
                clip_index=int(c["clip_index"]),
                labels={k: int(v) for k, v in c["labels"].items()},
            )
            for c in doc["clips"]
        ]
        return cls(subjects=list(doc["subjects"]), clips=clips,
                   provenance=doc.get("provenance", ""))


def parse_annotations(path) -> list[DisfluencyEvent]:
    """Read the annotation CSV (subject_id,start_s,end_s,class).

    Malformed rows raise ParseError with their line number; a class outside
    the six recognized labels (e.g. part-word repetition) raises UnknownClass.
    Events come back sorted by (subject_id, start_s).
    """
    events = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["subject_id", "start_s", "end_s", "class"]:
            raise ParseError(1, f"unexpected header {header}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ParseError(line_no, f"expected 4 fields, got {len(row)}")
            subject, start_raw, end_raw, cls = (f.strip() for f in row)
            try:
                start_s = float(start_raw)
                end_s = float(end_raw)
            except ValueError:
                raise ParseError(line_no, f"bad timestamp in {row}") from None
            if cls not in STUTTER_CLASSES:
                raise UnknownClass(line_no, cls)
            if not 0 <= start_s < end_s:
                raise ParseError(
                    line_no, f"need 0 <= start < end, got [{start_s}, {end_s})"
                )
            events.append(DisfluencyEvent(subject, start_s, end_s, cls))
    events.sort(key=lambda e: (e.subject_id, e.start_s))
    return events


def label_clips(clips, events, clip_seconds: float = 4.0) -> list[LabeledClip]:
    """Assign binary labels to clips from time-stamped events.

    clips: LabeledClip sequence (labels get overwritten); events are matched
    by subject. A class label goes to 1 when an event of that class overlaps
    the clip window by >= half the event duration.
    """
    by_subject: dict[str, list[DisfluencyEvent]] = {}
    for ev in events:
        by_subject.setdefault(ev.subject_id, []).append(ev)

    out = []
    for clip in clips:
        labels = {cls: 0 for cls in STUTTER_CLASSES}
        lo = clip.clip_index * clip_seconds
        hi = lo + clip_seconds
        for ev in by_subject.get(clip.subject_id, ()):
            overlap = min(hi, ev.end_s) - max(lo, ev.start_s)
            if overlap / ev.duration_s >= EVENT_OVERLAP_THRESHOLD:
                labels[ev.stutter_class] = 1
        out.append(LabeledClip(wav_path=clip.wav_path,
                               subject_id=clip.subject_id,
                               clip_index=clip.clip_index,
                               labels=labels))
    return out


def loso_splits(manifest: CorpusManifest):
    """One (train_subjects, test_subject) fold per subject, ordered by id."""
    subjects = sorted(manifest.subjects)
    if len(subjects) < 2:
        raise TooFewSubjects(f"LOSO needs >= 2 subjects, got {len(subjects)}")
    folds = []
    for test_subject in subjects:
        train = [s for s in subjects if s != test_subject]
        folds.append((train, test_subject))
    return folds
