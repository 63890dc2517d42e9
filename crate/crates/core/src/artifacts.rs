//! Artifact writers: JSONL streams and CSV aggregates.
