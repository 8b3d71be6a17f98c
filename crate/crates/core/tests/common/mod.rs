#![allow(dead_code)]

use std::path::{Path, PathBuf};

use discourse::corpus::{write_dataset, DiscourseLabel, MultimediaPost};
use image::{Rgb, RgbImage};

const WORDS: &[&str] = &[
    "sun", "rain", "city", "coffee", "train", "dog", "match", "goal", "flower", "beach", "night", "team",
    "music", "street", "snow", "bread", "river", "tower", "garden", "window",
];

/// Writes `n` labelled posts cycling through the five labels, one PNG per
/// post, and returns the dataset file path. Image colour and the first
/// text word carry label signal.
pub fn write_corpus(dir: &Path, n: usize, inline_captions: bool) -> PathBuf {
    write_corpus_with(dir, n, inline_captions, true)
}

/// As [`write_corpus`]; without `label_word` the text is label-agnostic.
pub fn write_corpus_with(dir: &Path, n: usize, inline_captions: bool, label_word: bool) -> PathBuf {
    let img_dir = dir.join("images");
    std::fs::create_dir_all(&img_dir).unwrap();
    let mut posts = Vec::new();
    for i in 0..n {
        let label = DiscourseLabel::from_code(i % 5).unwrap();
        let base = [(200, 40, 40), (40, 180, 60), (50, 60, 200), (220, 200, 60), (120, 120, 120)][label.code()];
        let shade = (i * 7 % 40) as u8;
        let img = RgbImage::from_fn(40, 32, |x, y| {
            let stripe = if (x / 5 + y / 7 + i as u32).is_multiple_of(3) { 30 } else { 0 };
            Rgb([
                (base.0 as u8).saturating_add(shade).saturating_sub(stripe),
                (base.1 as u8).saturating_add(stripe),
                (base.2 as u8).saturating_sub(shade / 2),
            ])
        });
        let name = format!("images/p{i:03}.png");
        img.save(dir.join(&name)).unwrap();
        let text = format!(
            "{} {} {} {}",
            if label_word { label.name() } else { WORDS[(i * 11 + 5) % WORDS.len()] },
            WORDS[i % WORDS.len()],
            WORDS[(i * 3 + 1) % WORDS.len()],
            WORDS[(i * 7 + 2) % WORDS.len()]
        );
        posts.push(MultimediaPost {
            id: format!("p{i:03}"),
            text,
            image: name,
            caption: inline_captions.then(|| format!("a photo of {}", WORDS[(i * 5) % WORDS.len()])),
            label: Some(label),
        });
    }
    let path = dir.join("posts.jsonl");
    write_dataset(&path, &posts).unwrap();
    path
}

/// Settings small enough for desk-scale runs.
pub fn small_config() -> discourse::RunConfig {
    let mut cfg = discourse::RunConfig::default();
    cfg.apply_str(
        "hidden = 12\nheads = 3\ngrid-size = 3\nimage-channels = 8\nepochs = 4\nbatch-size = 8\nlr = 0.01\ncaption-source = stub:2\n",
    )
    .unwrap();
    cfg
}
