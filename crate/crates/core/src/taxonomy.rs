//! Categorical emotion labels and their word-embedding vectors.
//!
//! Each label maps to one embedding row. Labels made of several words
//! (`"Doubt/Confusion"`, `"Self Esteem"`) are embedded as the mean of their
//! lowercase constituent tokens.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::NUM_CATEGORIES;

/// Default embedding width (GloVe 300-d).
pub const DEFAULT_EMBEDDING_DIM: usize = 300;

pub const VAD_NAMES: [&str; 3] = ["valence", "arousal", "dominance"];

/// The 26 categorical emotions of the EMOTIC / BoLD annotation scheme, in index order.
pub const DEFAULT_LABELS: [&str; NUM_CATEGORIES] = [
    "Peace",
    "Affection",
    "Esteem",
    "Anticipation",
    "Engagement",
    "Confidence",
    "Happiness",
    "Pleasure",
    "Excitement",
    "Surprise",
    "Sympathy",
    "Doubt/Confusion",
    "Disconnection",
    "Fatigue",
    "Embarrassment",
    "Yearning",
    "Disapproval",
    "Aversion",
    "Annoyance",
    "Anger",
    "Sensitivity",
    "Sadness",
    "Disquietment",
    "Fear",
    "Pain",
    "Suffering",
];

/// Splits a label into the lowercase tokens used for embedding lookup.
pub fn label_tokens(label: &str) -> Vec<String> {
    label
        .split(|c: char| c == '/' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmotionTaxonomy {
    labels: Vec<String>,
    /// Row-major `labels.len() × dim`.
    embeddings: Vec<f64>,
    dim: usize,
}

impl EmotionTaxonomy {
    /// Builds a taxonomy from labels and one embedding row per label.
    pub fn new(labels: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if labels.len() != NUM_CATEGORIES {
            return Err(Error::invalid(format!(
                "expected {NUM_CATEGORIES} labels, found {}",
                labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(Error::invalid(format!("duplicate label {l:?}")));
            }
        }
        if rows.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} embedding rows for {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(Error::invalid("embedding dimension is zero"));
        }
        let mut embeddings = Vec::with_capacity(dim * rows.len());
        for (label, row) in labels.iter().zip(&rows) {
            if row.len() != dim {
                return Err(Error::invalid(format!(
                    "inconsistent embedding dimension for {label:?}: {} vs {dim}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "non-finite embedding for {label:?}"
                )));
            }
            if row.iter().all(|&v| v == 0.0) {
                return Err(Error::invalid(format!("all-zero embedding for {label:?}")));
            }
            embeddings.extend_from_slice(row);
        }
        Ok(Self {
            labels,
            embeddings,
            dim,
        })
    }

    /// Loads labels (one per line) and resolves them against a text word-vector file.
    pub fn load(labels_file: &Path, embeddings_file: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(labels_file).map_err(|e| Error::io(labels_file, e))?;
        let labels: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        if labels.len() != NUM_CATEGORIES {
            return Err(Error::invalid(format!(
                "{}: expected {NUM_CATEGORIES} labels, found {}",
                labels_file.display(),
                labels.len()
            )));
        }

        let wanted: HashSet<String> = labels.iter().flat_map(|l| label_tokens(l)).collect();
        let vectors = read_word_vectors(embeddings_file, &wanted)?;

        let mut rows = Vec::with_capacity(labels.len());
        for label in &labels {
            let tokens = label_tokens(label);
            if tokens.is_empty() {
                return Err(Error::invalid(format!("empty label {label:?}")));
            }
            let mut sum: Option<Vec<f64>> = None;
            for tok in &tokens {
                let v = vectors.get(tok).ok_or_else(|| {
                    Error::invalid(format!(
                        "{}: no embedding for token {tok:?} of label {label:?}",
                        embeddings_file.display()
                    ))
                })?;
                match &mut sum {
                    None => sum = Some(v.clone()),
                    Some(acc) => acc.iter_mut().zip(v).for_each(|(a, b)| *a += b),
                }
            }
            let n = tokens.len() as f64;
            rows.push(sum.unwrap().into_iter().map(|v| v / n).collect());
        }
        Self::new(labels, rows)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Embedding width D.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vad_names(&self) -> [&'static str; 3] {
        VAD_NAMES
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn embedding(&self, index: usize) -> &[f64] {
        &self.embeddings[index * self.dim..(index + 1) * self.dim]
    }

    /// Arithmetic mean of the embeddings of the positive labels.
    ///
    /// `positives` has set semantics: order and duplicates do not matter.
    pub fn mean_positive_embedding(&self, positives: &[usize]) -> Result<Vec<f64>> {
        let mut set: Vec<usize> = positives.to_vec();
        set.sort_unstable();
        set.dedup();
        if set.is_empty() {
            return Err(Error::invalid("no positive labels"));
        }
        if let Some(&bad) = set.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!("label index {bad} out of range")));
        }
        let mut mean = vec![0.0; self.dim];
        for &i in &set {
            mean.iter_mut()
                .zip(self.embedding(i))
                .for_each(|(m, v)| *m += v);
        }
        let n = set.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        Ok(mean)
    }

    /// Projects the centred label embeddings onto their top-`k` principal directions.
    ///
    /// Directions are ordered by decreasing eigenvalue and signed so that each
    /// direction's largest-magnitude component is nonnegative.
    pub fn pca_project(&self, k: usize) -> Result<Vec<Vec<f64>>> {
        let n = self.len();
        let d = self.dim;
        if k == 0 || k > n.min(d) {
            return Err(Error::invalid(format!(
                "k must lie in [1, {}], got {k}",
                n.min(d)
            )));
        }
        let data = DMatrix::from_row_slice(n, d, &self.embeddings);
        let mean = data.row_mean();
        let mut centred = data;
        for mut row in centred.row_iter_mut() {
            row -= &mean;
        }
        let scale = self.embeddings.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if centred.iter().all(|v| v.abs() <= 1e-12 * scale) {
            return Err(Error::invalid("zero variance"));
        }

        let cov = centred.transpose() * &centred / (n as f64 - 1.0).max(1.0);
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        // Stable sort keeps the eigen-solver's order for exactly equal eigenvalues.
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let mut directions = Vec::with_capacity(k);
        for &j in order.iter().take(k) {
            let mut v: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
            let lead = v
                .iter()
                .enumerate()
                .fold((0, 0.0f64), |(bi, bv), (i, &x)| {
                    if x.abs() > bv {
                        (i, x.abs())
                    } else {
                        (bi, bv)
                    }
                })
                .0;
            if v[lead] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            directions.push(v);
        }

        Ok(centred
            .row_iter()
            .map(|row| {
                directions
                    .iter()
                    .map(|dir| row.iter().zip(dir).map(|(a, b)| a * b).sum())
                    .collect()
            })
            .collect())
    }
}

/// Reads `word v1 … vD` lines, keeping only the requested words.
///
/// Every line is checked for a consistent dimension, including lines that are not kept.
fn read_word_vectors(
    path: &Path,
    wanted: &HashSet<String>,
) -> Result<HashMap<String, Vec<f64>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    let mut dim = None;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let values: Vec<&str> = parts.collect();
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(Error::Annotation {
                    path: path.to_path_buf(),
                    line: lineno + 1,
                    msg: format!(
                        "inconsistent embedding dimension: {} values, expected {d}",
                        values.len()
                    ),
                })
            }
            Some(_) => {}
        }
        if !wanted.contains(word) || out.contains_key(word) {
            continue;
        }
        let parsed = values
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Annotation {
                path: path.to_path_buf(),
                line: lineno + 1,
                msg: format!("bad embedding value: {e}"),
            })?;
        out.insert(word.to_string(), parsed);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn toy(dim: usize) -> EmotionTaxonomy {
        let labels = DEFAULT_LABELS.iter().map(|s| s.to_string()).collect();
        let rows = (0..NUM_CATEGORIES)
            .map(|i| (0..dim).map(|j| ((i * 7 + j * 3) % 11) as f64 - 4.5).collect())
            .collect();
        EmotionTaxonomy::new(labels, rows).unwrap()
    }

    fn write_files(dir: &Path, labels: &[&str], vectors: &[(&str, Vec<f64>)]) -> (std::path::PathBuf, std::path::PathBuf) {
        let lp = dir.join("labels.txt");
        let ep = dir.join("vectors.txt");
        std::fs::write(&lp, labels.join("\n")).unwrap();
        let mut f = File::create(&ep).unwrap();
        for (w, v) in vectors {
            let vals: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            writeln!(f, "{w} {}", vals.join(" ")).unwrap();
        }
        (lp, ep)
    }

    fn default_vectors(dim: usize) -> Vec<(String, Vec<f64>)> {
        let mut toks: Vec<String> = DEFAULT_LABELS.iter().flat_map(|l| label_tokens(l)).collect();
        toks.sort();
        toks.dedup();
        toks.into_iter()
            .enumerate()
            .map(|(i, t)| (t, (0..dim).map(|j| (i + 1) as f64 * 0.1 + j as f64).collect()))
            .collect()
    }

    #[test]
    fn tokens_split_on_slash_and_space() {
        assert_eq!(label_tokens("Doubt/Confusion"), vec!["doubt", "confusion"]);
        assert_eq!(label_tokens("Self Esteem"), vec!["self", "esteem"]);
        assert_eq!(label_tokens("Anger"), vec!["anger"]);
    }

    #[test]
    fn load_direct_and_composite_labels() {
        let dir = tempfile::tempdir().unwrap();
        let mut vecs = default_vectors(3);
        for (w, v) in vecs.iter_mut() {
            match w.as_str() {
                "anger" => *v = vec![0.1, -0.2, 0.3],
                "doubt" => *v = vec![1.0, 2.0, 3.0],
                "confusion" => *v = vec![3.0, 0.0, -1.0],
                _ => {}
            }
        }
        let vr: Vec<(&str, Vec<f64>)> = vecs.iter().map(|(w, v)| (w.as_str(), v.clone())).collect();
        let (lp, ep) = write_files(dir.path(), &DEFAULT_LABELS, &vr);
        let tax = EmotionTaxonomy::load(&lp, &ep).unwrap();
        assert_eq!(tax.dim(), 3);
        let anger = tax.index_of("Anger").unwrap();
        assert_eq!(tax.embedding(anger), &[0.1, -0.2, 0.3]);
        // (1,2,3) and (3,0,-1) averaged by hand.
        let doubt = tax.index_of("Doubt/Confusion").unwrap();
        assert_eq!(tax.embedding(doubt), &[2.0, 1.0, 1.0]);
    }

    #[test]
    fn load_rejects_wrong_label_count() {
        let dir = tempfile::tempdir().unwrap();
        let vecs = default_vectors(2);
        let vr: Vec<(&str, Vec<f64>)> = vecs.iter().map(|(w, v)| (w.as_str(), v.clone())).collect();
        let (lp, ep) = write_files(dir.path(), &DEFAULT_LABELS[..25], &vr);
        let err = EmotionTaxonomy::load(&lp, &ep).unwrap_err().to_string();
        assert!(err.contains("expected 26 labels"), "{err}");
    }

    #[test]
    fn load_names_missing_label() {
        let dir = tempfile::tempdir().unwrap();
        let vecs = default_vectors(2);
        let vr: Vec<(&str, Vec<f64>)> = vecs
            .iter()
            .filter(|(w, _)| w != "fatigue")
            .map(|(w, v)| (w.as_str(), v.clone()))
            .collect();
        let (lp, ep) = write_files(dir.path(), &DEFAULT_LABELS, &vr);
        let err = EmotionTaxonomy::load(&lp, &ep).unwrap_err().to_string();
        assert!(err.contains("Fatigue"), "{err}");
    }

    #[test]
    fn load_rejects_inconsistent_dimension() {
        let dir = tempfile::tempdir().unwrap();
        let mut vecs = default_vectors(3);
        vecs.push(("unused".into(), vec![1.0, 2.0]));
        let vr: Vec<(&str, Vec<f64>)> = vecs.iter().map(|(w, v)| (w.as_str(), v.clone())).collect();
        let (lp, ep) = write_files(dir.path(), &DEFAULT_LABELS, &vr);
        let err = EmotionTaxonomy::load(&lp, &ep).unwrap_err().to_string();
        assert!(err.contains("inconsistent embedding dimension"), "{err}");
    }

    #[test]
    fn rejects_zero_row_and_duplicates() {
        let labels: Vec<String> = DEFAULT_LABELS.iter().map(|s| s.to_string()).collect();
        let mut rows = vec![vec![1.0, 2.0]; NUM_CATEGORIES];
        rows[4] = vec![0.0, 0.0];
        assert!(EmotionTaxonomy::new(labels.clone(), rows).is_err());
        let mut dup = labels;
        dup[1] = dup[0].clone();
        assert!(EmotionTaxonomy::new(dup, vec![vec![1.0, 2.0]; NUM_CATEGORIES]).is_err());
    }

    #[test]
    fn mean_of_singleton_and_pair() {
        let labels: Vec<String> = DEFAULT_LABELS.iter().map(|s| s.to_string()).collect();
        let mut rows = vec![vec![1.0, 1.0]; NUM_CATEGORIES];
        rows[0] = vec![1.0, 0.0];
        rows[1] = vec![0.0, 1.0];
        let tax = EmotionTaxonomy::new(labels, rows).unwrap();
        assert_eq!(tax.mean_positive_embedding(&[0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(tax.mean_positive_embedding(&[0, 1]).unwrap(), vec![0.5, 0.5]);
        assert_eq!(tax.mean_positive_embedding(&[1, 0, 1]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn mean_of_all_labels_is_column_mean() {
        let tax = toy(4);
        let all: Vec<usize> = (0..NUM_CATEGORIES).collect();
        let mean = tax.mean_positive_embedding(&all).unwrap();
        for j in 0..4 {
            let mut s = 0.0;
            for i in 0..NUM_CATEGORIES {
                s += ((i * 7 + j * 3) % 11) as f64 - 4.5;
            }
            assert!((mean[j] - s / NUM_CATEGORIES as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_errors() {
        let tax = toy(2);
        assert_eq!(
            tax.mean_positive_embedding(&[]).unwrap_err().to_string(),
            "no positive labels"
        );
        assert!(tax.mean_positive_embedding(&[26]).is_err());
    }

    #[test]
    fn pca_on_collinear_points() {
        // Three labels at t = -1, 0, 2 along direction (3,4)/5; the rest at the centroid t = 1/3.
        let labels: Vec<String> = DEFAULT_LABELS.iter().map(|s| s.to_string()).collect();
        let base = [10.0, 10.0];
        let dir = [0.6, 0.8];
        let ts: Vec<f64> = (0..NUM_CATEGORIES)
            .map(|i| match i {
                0 => -1.0,
                1 => 0.0,
                2 => 2.0,
                _ => 1.0 / 3.0,
            })
            .collect();
        let rows = ts
            .iter()
            .map(|t| vec![base[0] + t * dir[0], base[1] + t * dir[1]])
            .collect();
        let tax = EmotionTaxonomy::new(labels, rows).unwrap();
        let p = tax.pca_project(1).unwrap();
        let mean_t = ts.iter().sum::<f64>() / ts.len() as f64;
        // Largest component of (0.6, 0.8) is positive, so projection = t - mean(t).
        for (row, t) in p.iter().zip(&ts) {
            assert!((row[0] - (t - mean_t)).abs() < 1e-9, "{} vs {}", row[0], t - mean_t);
        }
        assert!(((p[2][0] - p[0][0]) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn pca_full_rank_preserves_distances() {
        let tax = toy(4);
        let p = tax.pca_project(4).unwrap();
        for i in 0..NUM_CATEGORIES {
            for j in 0..NUM_CATEGORIES {
                let d0: f64 = tax
                    .embedding(i)
                    .iter()
                    .zip(tax.embedding(j))
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let d1: f64 = p[i].iter().zip(&p[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                assert!((d0 - d1).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pca_zero_variance_and_bad_k() {
        let labels: Vec<String> = DEFAULT_LABELS.iter().map(|s| s.to_string()).collect();
        let tax = EmotionTaxonomy::new(labels, vec![vec![0.5, -1.0, 2.0]; NUM_CATEGORIES]).unwrap();
        assert_eq!(tax.pca_project(2).unwrap_err().to_string(), "zero variance");
        assert!(toy(3).pca_project(0).is_err());
        assert!(toy(3).pca_project(4).is_err());
    }

    #[test]
    fn pca_is_reproducible() {
        let tax = toy(6);
        assert_eq!(tax.pca_project(2).unwrap(), tax.pca_project(2).unwrap());
    }
}
