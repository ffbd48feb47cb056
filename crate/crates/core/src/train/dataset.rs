//! File manifests, 65/10/25 splits, clip slicing and teacher logits.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audio::AudioClip;
use crate::class::Class;
use crate::error::{Error, Result};

pub const SPLIT_FRACTIONS: [f64; 3] = [0.65, 0.10, 0.25];
pub const MIN_FILES_PER_CLASS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::data(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRecord {
    pub path: PathBuf,
    pub class: Class,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DatasetManifest {
    pub records: Vec<ManifestRecord>,
}

/// Largest-remainder apportionment of `n` files to train/val/test.
pub fn split_counts(n: usize) -> [usize; 3] {
    let exact = SPLIT_FRACTIONS.map(|f| f * n as f64);
    let mut counts = exact.map(|e| e.floor() as usize);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Shuffles each class's files and assigns 65/10/25 per class.
pub fn split_dataset(files: &BTreeMap<Class, Vec<PathBuf>>, seed: u64) -> Result<DatasetManifest> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for (&class, paths) in files {
        if paths.len() < MIN_FILES_PER_CLASS {
            return Err(Error::config(format!(
                "class {class} has {} files; at least {MIN_FILES_PER_CLASS} are needed",
                paths.len()
            )));
        }
        let mut paths = paths.clone();
        paths.sort();
        paths.shuffle(&mut rng);
        let [train, val, _] = split_counts(paths.len());
        for (i, path) in paths.into_iter().enumerate() {
            let split = if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            };
            records.push(ManifestRecord { path, class, split });
        }
    }
    let manifest = DatasetManifest { records };
    manifest.check_disjoint()?;
    Ok(manifest)
}

impl DatasetManifest {
    pub fn files(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    /// Errors if a path appears in more than one split.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen: HashMap<&Path, Split> = HashMap::new();
        for r in &self.records {
            if let Some(prev) = seen.insert(&r.path, r.split) {
                if prev != r.split {
                    return Err(Error::data(format!(
                        "{} is in both the {prev} and {} splits",
                        r.path.display(),
                        r.split
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        self.records
            .iter()
            .map(|r| format!("{}\t{}\t{}\n", r.path.display(), r.class, r.split))
            .collect()
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let [path, class, split] = fields[..] else {
                return Err(Error::data(format!("manifest line {}: expected 3 tab-separated fields", n + 1)));
            };
            records.push(ManifestRecord {
                path: PathBuf::from(path),
                class: class.parse()?,
                split: split.parse()?,
            });
        }
        let manifest = Self { records };
        manifest.check_disjoint()?;
        Ok(manifest)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_tsv(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_tsv())?;
        Ok(())
    }
}

/// Clips of `clip_len_s` with 50% overlap; a trailing partial clip is dropped.
pub fn make_clips(clip: &AudioClip, clip_len_s: f64) -> Vec<AudioClip> {
    let len = (clip_len_s * clip.sample_rate() as f64).round() as usize;
    let hop = (len / 2).max(1);
    if len == 0 || clip.len() < len {
        return Vec::new();
    }
    (0..=(clip.len() - len) / hop)
        .map(|k| clip.slice(k * hop, k * hop + len))
        .collect()
}

/// Identifier of the `index`-th clip cut from `path`.
pub fn clip_id(path: &Path, index: usize) -> String {
    format!("{}:{index}", path.display())
}

/// Teacher logits keyed by clip id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TeacherLogits {
    map: HashMap<String, Vec<f64>>,
}

impl TeacherLogits {
    pub fn insert(&mut self, id: impl Into<String>, logits: Vec<f64>) {
        self.map.insert(id.into(), logits);
    }

    pub fn get(&self, id: &str) -> Option<&[f64]> {
        self.map.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn from_tsv(text: &str, n_classes: usize) -> Result<Self> {
        let mut out = Self::default();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let id = fields.next().unwrap_or_default();
            let logits = fields
                .map(|f| f.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .filter(|v| v.len() == n_classes)
                .ok_or_else(|| {
                    Error::data(format!("teacher logits line {}: expected an id and {n_classes} numbers", n + 1))
                })?;
            out.insert(id, logits);
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>, n_classes: usize) -> Result<Self> {
        Self::from_tsv(&std::fs::read_to_string(path)?, n_classes)
    }

    pub fn to_tsv(&self) -> String {
        let mut ids: Vec<&String> = self.map.keys().collect();
        ids.sort();
        ids.iter()
            .map(|id| {
                let vals: Vec<String> = self.map[*id].iter().map(|v| v.to_string()).collect();
                format!("{id}\t{}\n", vals.join("\t"))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn files(n: usize) -> BTreeMap<Class, Vec<PathBuf>> {
        crate::class::CLASSES
            .iter()
            .map(|&c| (c, (0..n).map(|i| PathBuf::from(format!("{c}/{i}.wav"))).collect()))
            .collect()
    }

    #[test]
    fn split_count_examples() {
        assert_eq!(split_counts(40), [26, 4, 10]);
        assert_eq!(split_counts(100), [65, 10, 25]);
        assert_eq!(split_counts(7), [4, 1, 2]);
        for n in 4..300 {
            let c = split_counts(n);
            assert_eq!(c.iter().sum::<usize>(), n);
            for (k, f) in c.iter().zip(SPLIT_FRACTIONS) {
                assert!((*k as f64 - f * n as f64).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let a = split_dataset(&files(40), 3).unwrap();
        assert_eq!(a, split_dataset(&files(40), 3).unwrap());
        assert_ne!(a, split_dataset(&files(40), 4).unwrap());
        assert_eq!(a.files(Split::Train).count(), 78);
        assert_eq!(a.files(Split::Val).count(), 12);
        assert_eq!(a.files(Split::Test).count(), 30);
        assert_eq!(DatasetManifest::from_tsv(&a.to_tsv()).unwrap(), a);
    }

    #[test]
    fn too_few_files() {
        assert!(matches!(split_dataset(&files(3), 0), Err(Error::Config(_))));
    }

    #[test]
    fn leakage_is_rejected() {
        let text = "a.wav\tnoise\ttrain\na.wav\tnoise\ttest\n";
        assert!(matches!(DatasetManifest::from_tsv(text), Err(Error::Data(_))));
        assert!(DatasetManifest::from_tsv("a.wav\tnoise\n").is_err());
        assert!(DatasetManifest::from_tsv("a.wav\tbird\ttrain\n").is_err());
    }

    #[test]
    fn clip_counts() {
        let c = |s: f64| AudioClip::new(vec![0.0; (s * 16_000.0) as usize], 16_000).unwrap();
        let clips = make_clips(&c(2.0), 0.5);
        assert_eq!(clips.len(), 7);
        assert!(clips.iter().all(|k| k.len() == 8_000));
        assert_eq!(make_clips(&c(1.0), 1.0).len(), 1);
        assert!(make_clips(&c(0.9), 1.0).is_empty());
    }

    #[test]
    fn clip_starts_follow_half_length_hop() {
        let samples: Vec<f64> = (0..32_000).map(|i| i as f64 / 32_000.0).collect();
        let clip = AudioClip::new(samples, 16_000).unwrap();
        for (k, c) in make_clips(&clip, 0.5).iter().enumerate() {
            assert_eq!(c.samples()[0], (k * 4_000) as f64 / 32_000.0);
        }
    }

    #[test]
    fn teacher_file() {
        let t = TeacherLogits::from_tsv("a.wav:0\t1\t-2\t0.5\nb.wav:3\t0\t0\t0\n", 3).unwrap();
        assert_eq!(t.get("a.wav:0"), Some(&[1.0, -2.0, 0.5][..]));
        assert_eq!(TeacherLogits::from_tsv(&t.to_tsv(), 3).unwrap(), t);
        assert!(TeacherLogits::from_tsv("a\t1\t2\n", 3).is_err());
        assert!(TeacherLogits::from_tsv("a\t1\tx\t2\n", 3).is_err());
    }
}
