//! Shared helpers for integration tests.
// Each test target compiles this module separately and uses a subset.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use examiner_core::domain::{EssayItem, ImageRef, ImageSource, Score, Trait, TraitScoreVector};

/// A valid 1x1 PNG, enough for image-bytes fingerprinting and data-URL
/// encoding.
pub const TINY_PNG: &[u8] = &[
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44,
    0x52, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x06, 0x00, 0x00, 0x00, 0x1f,
    0x15, 0xc4, 0x89, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x44, 0x41, 0x54, 0x78, 0xda, 0x63, 0xfc,
    0xcf, 0xc0, 0x50, 0x0f, 0x00, 0x04, 0x85, 0x01, 0x80, 0x84, 0xa9, 0x8c, 0x21, 0x00, 0x00,
    0x00, 0x00, 0x49, 0x45, 0x4e, 0x44, 0xae, 0x42, 0x60, 0x82,
];

pub fn write_png(dir: &Path, name: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, TINY_PNG).expect("write png");
    path
}

pub fn png_image(path: &Path) -> ImageRef {
    ImageRef {
        source: ImageSource::Path { path: path.to_path_buf() },
        media_type: "image/png".into(),
    }
}

pub fn url_image(tag: &str) -> ImageRef {
    ImageRef {
        source: ImageSource::Url { url: format!("https://example.invalid/{tag}.png") },
        media_type: "image/png".into(),
    }
}

pub fn essay_item(id: &str, images: Vec<ImageRef>) -> EssayItem {
    EssayItem::new(
        id,
        format!("Topic for {id}: describe the chart."),
        images,
        format!("Essay body for {id}. The chart shows a steady trend."),
    )
    .expect("valid item")
}

pub fn score(v: i64) -> Score {
    Score::new(v).expect("score in range")
}

/// Builds a total vector from per-trait values in canonical order.
pub fn vector_of(values: [i64; 10]) -> TraitScoreVector {
    let mut v = TraitScoreVector::uniform(score(values[0]));
    for (t, value) in Trait::ALL.into_iter().zip(values) {
        v.set(t, score(value));
    }
    v
}
