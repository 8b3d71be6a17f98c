//! Dataset schema, loading, splitting, descriptive statistics and quality
//! screening for image-text posts.

mod quality;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub(crate) use quality::laplacian_variance;
pub use quality::{quality_screen, screen_image, QualityFlag, QualityThresholds, QualityVerdict};

/// The five cross-modality discourse relations. Integer codes follow
/// declaration order and are stable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscourseLabel {
    Insertion,
    Concretization,
    Projection,
    Restatement,
    Extension,
}

impl DiscourseLabel {
    pub const COUNT: usize = 5;
    pub const ALL: [DiscourseLabel; 5] = [
        DiscourseLabel::Insertion,
        DiscourseLabel::Concretization,
        DiscourseLabel::Projection,
        DiscourseLabel::Restatement,
        DiscourseLabel::Extension,
    ];

    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Option<Self> {
        Self::ALL.get(code).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            DiscourseLabel::Insertion => "insertion",
            DiscourseLabel::Concretization => "concretization",
            DiscourseLabel::Projection => "projection",
            DiscourseLabel::Restatement => "restatement",
            DiscourseLabel::Extension => "extension",
        }
    }

    pub fn abbrev(self) -> &'static str {
        match self {
            DiscourseLabel::Insertion => "Ins",
            DiscourseLabel::Concretization => "Con",
            DiscourseLabel::Projection => "Pro",
            DiscourseLabel::Restatement => "Res",
            DiscourseLabel::Extension => "Ext",
        }
    }
}

impl fmt::Display for DiscourseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DiscourseLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| s.to_string())
    }
}

/// One image-text pair. `image` is kept exactly as written in the dataset
/// file; resolve it against the dataset directory with [`Dataset::image_path`].
#[derive(Debug, Clone, PartialEq)]
pub struct MultimediaPost {
    pub id: String,
    pub text: String,
    pub image: String,
    pub caption: Option<String>,
    pub label: Option<DiscourseLabel>,
}

impl MultimediaPost {
    /// Whitespace-token count, the length measure used for corpus statistics.
    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

// Field order is the canonical on-disk order.
#[derive(Serialize, Deserialize)]
struct PostRecord {
    id: String,
    text: String,
    image: String,
    caption: Option<String>,
    label: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// Directory that relative image paths are resolved against.
    pub root: PathBuf,
    pub posts: Vec<MultimediaPost>,
}

impl Dataset {
    pub fn new(root: impl Into<PathBuf>, posts: Vec<MultimediaPost>) -> Self {
        Dataset {
            root: root.into(),
            posts,
        }
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&MultimediaPost> {
        self.posts.iter().find(|p| p.id == id)
    }

    pub fn image_path(&self, post: &MultimediaPost) -> PathBuf {
        let p = Path::new(&post.image);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn index(&self) -> HashMap<&str, &MultimediaPost> {
        self.posts.iter().map(|p| (p.id.as_str(), p)).collect()
    }
}

/// Reads a line-delimited dataset file. Blank lines are skipped.
pub fn load_dataset(path: &Path, require_labels: bool) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let root = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut posts = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let post = parse_record(&line, line_no)?;
        if require_labels && post.label.is_none() {
            return Err(Error::MalformedLine {
                line: line_no,
                message: format!("post '{}' has no label", post.id),
            });
        }
        if !seen.insert(post.id.clone()) {
            return Err(Error::DuplicateId(post.id));
        }
        posts.push(post);
    }
    Ok(Dataset { root, posts })
}

fn parse_record(line: &str, line_no: usize) -> Result<MultimediaPost> {
    let rec: PostRecord = serde_json::from_str(line).map_err(|e| Error::MalformedLine {
        line: line_no,
        message: e.to_string(),
    })?;
    if rec.text.split_whitespace().next().is_none() {
        return Err(Error::MalformedLine {
            line: line_no,
            message: format!("post '{}' has empty text", rec.id),
        });
    }
    let label = match rec.label {
        None => None,
        Some(s) => Some(
            s.parse::<DiscourseLabel>()
                .map_err(|label| Error::UnknownLabel {
                    label,
                    line: line_no,
                })?,
        ),
    };
    Ok(MultimediaPost {
        id: rec.id,
        text: rec.text,
        image: rec.image,
        caption: rec.caption,
        label,
    })
}

pub fn format_post(post: &MultimediaPost) -> String {
    let rec = PostRecord {
        id: post.id.clone(),
        text: post.text.clone(),
        image: post.image.clone(),
        caption: post.caption.clone(),
        label: post.label.map(|l| l.name().to_string()),
    };
    serde_json::to_string(&rec).expect("record serialization is infallible")
}

/// Writes posts in canonical form, one compact record per line.
pub fn write_dataset(path: &Path, posts: &[MultimediaPost]) -> Result<()> {
    let mut out = String::new();
    for post in posts {
        out.push_str(&format_post(post));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Train/validation/test partition by post id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub seed: u64,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub const MIN_SPLIT_POSTS: usize = 10;

/// 80/10/10 split. Validation and test each get `floor(n / 10)` posts and
/// the remainder goes to train. The shuffle runs over the sorted id list,
/// so the result depends only on the id set and the seed.
pub fn make_split(posts: &[MultimediaPost], seed: u64) -> Result<DatasetSplit> {
    if posts.len() < MIN_SPLIT_POSTS {
        return Err(Error::TooFewPosts {
            required: MIN_SPLIT_POSTS,
            actual: posts.len(),
        });
    }
    let mut ids: Vec<String> = posts.iter().map(|p| p.id.clone()).collect();
    ids.sort();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::DuplicateId(w[0].clone()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ids.shuffle(&mut rng);

    let n_holdout = ids.len() / 10;
    let train = ids.split_off(2 * n_holdout);
    let test = ids.split_off(n_holdout);
    Ok(DatasetSplit {
        seed,
        train,
        validation: ids,
        test,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub count: usize,
    pub mean_length: f64,
    /// Set when no post carries this label; `mean_length` is then 0.
    pub empty: bool,
    pub length_histogram: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total_count: usize,
    pub total_mean_length: f64,
    pub per_label: BTreeMap<DiscourseLabel, LabelStats>,
}

pub fn compute_stats(posts: &[MultimediaPost]) -> Result<CorpusStats> {
    let mut lengths: BTreeMap<DiscourseLabel, Vec<usize>> =
        DiscourseLabel::ALL.iter().map(|&l| (l, Vec::new())).collect();
    for post in posts {
        let label = post
            .label
            .ok_or_else(|| Error::MissingLabel(post.id.clone()))?;
        lengths.get_mut(&label).unwrap().push(post.word_count());
    }

    let mean = |xs: &[usize]| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<usize>() as f64 / xs.len() as f64
        }
    };
    let all: Vec<usize> = lengths.values().flatten().copied().collect();
    let per_label = lengths
        .iter()
        .map(|(&label, xs)| {
            let mut hist = BTreeMap::new();
            for &n in xs {
                *hist.entry(n).or_insert(0) += 1;
            }
            let stats = LabelStats {
                count: xs.len(),
                mean_length: mean(xs),
                empty: xs.is_empty(),
                length_histogram: hist,
            };
            (label, stats)
        })
        .collect();
    Ok(CorpusStats {
        total_count: posts.len(),
        total_mean_length: mean(&all),
        per_label,
    })
}

fn thousands(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

impl CorpusStats {
    /// Two-row table: counts and mean word lengths, Total column first.
    pub fn table(&self) -> String {
        let mut header = format!("{:<6}{:>10}", "", "Total");
        let mut num = format!("{:<6}{:>10}", "Num", thousands(self.total_count));
        let mut len = format!("{:<6}{:>10.2}", "Len", self.total_mean_length);
        for label in DiscourseLabel::ALL {
            let s = &self.per_label[&label];
            header.push_str(&format!("{:>10}", label.abbrev()));
            num.push_str(&format!("{:>10}", thousands(s.count)));
            if s.empty {
                len.push_str(&format!("{:>10}", "0.00*"));
            } else {
                len.push_str(&format!("{:>10.2}", s.mean_length));
            }
        }
        let mut out = format!("{header}\n{num}\n{len}\n");
        if self.per_label.values().any(|s| s.empty) {
            out.push_str("* empty bucket\n");
        }
        out
    }

    pub fn write_histograms(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "label\tlength\tposts")?;
        for (label, s) in &self.per_label {
            for (len, n) in &s.length_histogram {
                writeln!(w, "{label}\t{len}\t{n}")?;
            }
        }
        Ok(())
    }
}

/// Raw percent agreement between two annotations of the same id set.
pub fn agreement(
    labels_a: &HashMap<String, DiscourseLabel>,
    labels_b: &HashMap<String, DiscourseLabel>,
) -> Result<f64> {
    let ka: BTreeSet<&String> = labels_a.keys().collect();
    let kb: BTreeSet<&String> = labels_b.keys().collect();
    if ka != kb {
        let diff = ka
            .symmetric_difference(&kb)
            .map(|s| s.to_string())
            .collect();
        return Err(Error::IdSetMismatch(diff));
    }
    if labels_a.is_empty() {
        return Err(Error::EmptyInput("agreement over an empty id set"));
    }
    let same = labels_a
        .iter()
        .filter(|(id, l)| labels_b[*id] == **l)
        .count();
    Ok(same as f64 / labels_a.len() as f64)
}
