//! Debugging read-outs: positional OOV statistics and top OOV words from
//! generative LMs, user accuracy histograms and generated-image grids.
//!
//! Every writer takes the run manifest hash and embeds it as a leading
//! `# run=<hash>` comment.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::datasets::overall_oov_rate;
use crate::datasets::{ImagePopulation, END, OOV};
use crate::error::{Error, Result};
use crate::models::{CharLm, WordLm};
use crate::rng::{self, purpose};
use crate::selection::{user_accuracies, Predictor};

fn sample_seed(seed: u64, i: usize) -> u64 {
    rng::derive_seed(seed, &[purpose::SAMPLING, i as u64])
}

/// Share of sampled tokens that are the OOV id, by sentence position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionalOovProfile {
    /// OOV fraction among samples that have a content token at each position.
    pub fractions: Vec<f64>,
    /// Number of samples with a content token at each position.
    pub reached: Vec<usize>,
    pub oov: Vec<usize>,
    pub samples: usize,
}

impl PositionalOovProfile {
    /// `fractions[0]` over the mean of `fractions[1..=upto]`.
    pub fn head_ratio(&self, upto: usize) -> f64 {
        let tail = &self.fractions[1..=upto.min(self.fractions.len() - 1)];
        self.fractions[0] / (tail.iter().sum::<f64>() / tail.len() as f64)
    }

    pub fn to_csv(&self, run: &str) -> String {
        let mut s = format!("# run={run}\nposition,samples,oov,fraction\n");
        for (i, f) in self.fractions.iter().enumerate() {
            writeln!(s, "{i},{},{},{f:.6}", self.reached[i], self.oov[i]).unwrap();
        }
        s
    }
}

/// Draws `num_samples` sentences of at most `max_len` tokens and counts the
/// OOV id at each position. End markers are not counted.
pub fn oov_rate_by_position(lm: &WordLm, num_samples: usize, max_len: usize, seed: u64) -> Result<PositionalOovProfile> {
    if num_samples == 0 || max_len == 0 {
        return Err(Error::invalid("need at least one sample and one position"));
    }
    let (reached, oov) = (0..num_samples)
        .into_par_iter()
        .fold(
            || (vec![0usize; max_len], vec![0usize; max_len]),
            |(mut r, mut o), i| {
                for (p, &t) in lm.lm.sample(sample_seed(seed, i), max_len).iter().enumerate() {
                    if t == END {
                        break;
                    }
                    r[p] += 1;
                    o[p] += (t == OOV) as usize;
                }
                (r, o)
            },
        )
        .reduce(
            || (vec![0; max_len], vec![0; max_len]),
            |(mut r, mut o), (r2, o2)| {
                r.iter_mut().zip(r2).for_each(|(a, b)| *a += b);
                o.iter_mut().zip(o2).for_each(|(a, b)| *a += b);
                (r, o)
            },
        );
    let fractions = reached
        .iter()
        .zip(&oov)
        .map(|(&r, &o)| if r == 0 { 0.0 } else { o as f64 / r as f64 })
        .collect();
    Ok(PositionalOovProfile {
        fractions,
        reached,
        oov,
        samples: num_samples,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OovWord {
    pub word: String,
    pub joint_prob: f64,
}

/// Generated words ranked by joint character probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OovWordList {
    pub entries: Vec<OovWord>,
}

impl OovWordList {
    pub fn with_space(&self) -> usize {
        self.entries.iter().filter(|e| e.word.contains(' ')).count()
    }

    pub fn to_csv(&self, run: &str) -> String {
        let mut s = format!("# run={run}\nrank,word,joint_prob\n");
        for (i, e) in self.entries.iter().enumerate() {
            writeln!(s, "{},\"{}\",{:.6e}", i + 1, e.word, e.joint_prob).unwrap();
        }
        s
    }
}

/// Monte Carlo sampling of `num_samples` words, deduplicated and scored by
/// exact joint probability; the `k` most probable are returned. Samples cut
/// off at `max_len` before the end marker and empty words are dropped.
pub fn top_oov_words(lm: &CharLm, k: usize, num_samples: usize, max_len: usize, seed: u64) -> Result<OovWordList> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    let samples: Vec<Vec<usize>> = (0..num_samples)
        .into_par_iter()
        .map(|i| lm.lm.sample(sample_seed(seed, i), max_len))
        .filter(|s| s.last() == Some(&END) && s.len() > 1)
        .collect();
    let unique: BTreeSet<Vec<usize>> = samples.into_iter().collect();
    let mut entries = unique
        .into_par_iter()
        .map(|s| {
            Ok(OovWord {
                word: lm.vocab.decode(&s)?,
                joint_prob: lm.lm.joint_prob(&s)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| b.joint_prob.total_cmp(&a.joint_prob).then_with(|| a.word.cmp(&b.word)));
    entries.truncate(k);
    Ok(OovWordList { entries })
}

/// Users per accuracy bin over `[0, 1]`; bins are left-closed and the last
/// one is closed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyHistogram {
    pub counts: Vec<usize>,
}

impl AccuracyHistogram {
    pub fn from_accuracies(acc: &[f64], num_bins: usize) -> Result<Self> {
        if num_bins == 0 {
            return Err(Error::invalid("num_bins must be >= 1"));
        }
        let mut counts = vec![0; num_bins];
        for &a in acc {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::invalid(format!("accuracy {a} outside [0, 1]")));
            }
            counts[((a * num_bins as f64) as usize).min(num_bins - 1)] += 1;
        }
        Ok(AccuracyHistogram { counts })
    }

    /// Share of users whose bin lies entirely below `x`.
    pub fn mass_below(&self, x: f64) -> f64 {
        let n = self.counts.len();
        let total: usize = self.counts.iter().sum();
        let below: usize = (0..n).filter(|&i| (i + 1) as f64 / n as f64 <= x).map(|i| self.counts[i]).sum();
        below as f64 / total.max(1) as f64
    }

    pub fn to_csv(&self, run: &str) -> String {
        let n = self.counts.len();
        let mut s = format!("# run={run}\nbin_low,bin_high,users\n");
        for (i, c) in self.counts.iter().enumerate() {
            writeln!(s, "{:.4},{:.4},{c}", i as f64 / n as f64, (i + 1) as f64 / n as f64).unwrap();
        }
        s
    }
}

pub fn accuracy_histogram<P: Predictor + ?Sized>(
    pop: &ImagePopulation,
    model: &P,
    num_bins: usize,
) -> Result<AccuracyHistogram> {
    let acc: Vec<f64> = user_accuracies(model, pop)?.into_iter().map(|(_, a)| a).collect();
    AccuracyHistogram::from_accuracies(&acc, num_bins)
}

/// Separator intensity between grid cells.
pub const GRID_SEPARATOR: u8 = 128;

/// Binary PGM of square `side`×`side` images laid out row-major on a
/// `rows`×`cols` grid, one separator pixel between cells. Unused cells are black.
pub fn image_grid_pgm(images: &[Vec<u8>], side: usize, rows: usize, cols: usize, run: &str) -> Result<Vec<u8>> {
    if rows * cols < images.len() {
        return Err(Error::invalid(format!("{} images do not fit a {rows}x{cols} grid", images.len())));
    }
    if let Some(bad) = images.iter().find(|im| im.len() != side * side) {
        return Err(Error::invalid(format!("image has {} pixels, expected {}", bad.len(), side * side)));
    }
    let w = cols * side + cols.saturating_sub(1);
    let h = rows * side + rows.saturating_sub(1);
    let mut px = vec![GRID_SEPARATOR; w * h];
    for r in 0..rows {
        for c in 0..cols {
            let im = images.get(r * cols + c);
            for y in 0..side {
                for x in 0..side {
                    px[(r * (side + 1) + y) * w + c * (side + 1) + x] = im.map_or(0, |im| im[y * side + x]);
                }
            }
        }
    }
    let mut out = format!("P5\n# run={run}\n{w} {h}\n255\n").into_bytes();
    out.extend(px);
    Ok(out)
}

pub fn emit_image_grid(images: &[Vec<u8>], side: usize, rows: usize, cols: usize, run: &str, path: &Path) -> Result<()> {
    fs::write(path, image_grid_pgm(images, side, rows, cols, run)?)?;
    Ok(())
}

/// Converts `[0, 1]` generator output to 8-bit pixels.
pub fn quantize(values: &[f64]) -> Vec<u8> {
    values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

/// Fraction of pixels brighter than one half.
pub fn bright_fraction(images: &[Vec<u8>]) -> f64 {
    let (bright, total) = images.iter().flatten().fold((0usize, 0usize), |(b, t), &p| (b + (p > 127) as usize, t + 1));
    bright as f64 / total.max(1) as f64
}

/// Mean intensity in `[0, 1]`.
pub fn mean_intensity(images: &[Vec<u8>]) -> f64 {
    let (sum, total) = images.iter().flatten().fold((0u64, 0usize), |(s, t), &p| (s + p as u64, t + 1));
    sum as f64 / 255.0 / total.max(1) as f64
}

/// Width, height and pixels of a PGM produced by [`image_grid_pgm`].
pub fn read_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |detail: &str| Error::Parse {
        offset: 0,
        detail: detail.into(),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        let end = bytes[pos..].iter().position(|&b| b == b'\n').ok_or_else(|| bad("truncated header"))? + pos;
        let line = std::str::from_utf8(&bytes[pos..end]).map_err(|_| bad("header is not text"))?;
        if !line.starts_with('#') {
            fields.extend(line.split_whitespace().map(str::to_owned));
        }
        pos = end + 1;
    }
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(bad("not an 8-bit P5 image"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("height"))?;
    if bytes.len() - pos != w * h {
        return Err(Error::Parse {
            offset: pos as u64,
            detail: format!("expected {} pixel bytes, found {}", w * h, bytes.len() - pos),
        });
    }
    Ok((w, h, bytes[pos..].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{CharVocab, Vocabulary};
    use crate::models::{LmArch, RecurrentLm};

    /// LM whose logits ignore the state: one fixed distribution everywhere.
    fn fixed_lm(logits: &[f64]) -> RecurrentLm {
        let v = logits.len();
        let arch = LmArch {
            vocab: v,
            embed: 2,
            hidden: 2,
        };
        let mut lm = RecurrentLm::zeros(arch);
        let layout = arch.layout();
        layout.block_mut(&mut lm.params, "lm.bo").copy_from_slice(logits);
        lm
    }

    fn word_lm(logits: &[f64]) -> WordLm {
        let words: Vec<String> = (0..logits.len() - 2).map(|i| format!("w{i}")).collect();
        WordLm {
            vocab: Vocabulary::new(words).unwrap(),
            lm: fixed_lm(logits),
        }
    }

    #[test]
    fn never_oov_gives_zero_profile() {
        let lm = word_lm(&[0.0, -1e3, 1.0, 1.0]);
        let p = oov_rate_by_position(&lm, 500, 8, 1).unwrap();
        assert!(p.fractions.iter().all(|f| *f == 0.0));
        assert_eq!(p.samples, 500);
        assert!(p.oov.iter().all(|o| *o == 0));
    }

    #[test]
    fn constant_oov_probability_within_binomial_ci() {
        // p(END) = 0.1, p(OOV) = 0.3, p(w0) = 0.6
        let logits = [0.1f64.ln(), 0.3f64.ln(), 0.6f64.ln()];
        let lm = word_lm(&logits);
        let n = 20_000;
        let p = oov_rate_by_position(&lm, n, 10, 4).unwrap();
        let cond = 0.3 / 0.9;
        for (f, r) in p.fractions.iter().zip(&p.reached).take(6) {
            let sd = (cond * (1.0 - cond) / *r as f64).sqrt();
            assert!((f - cond).abs() < 4.0 * sd, "{f} vs {cond}");
        }
        assert!((p.reached[0] as f64 / n as f64 - 0.9).abs() < 0.01);
        assert!(p.head_ratio(5) < 1.2);
        let again = oov_rate_by_position(&lm, n, 10, 4).unwrap();
        assert_eq!(p, again);
        assert!(p.to_csv("abc").starts_with("# run=abc\nposition,samples,oov,fraction\n0,"));
    }

    #[test]
    fn deterministic_word_gets_its_joint_probability() {
        // "ab" then END, nearly surely; alphabet {a, b}
        let vocab = CharVocab::new(['a', 'b']).unwrap();
        let arch = LmArch {
            vocab: 3,
            embed: 3,
            hidden: 2,
        };
        let mut lm = RecurrentLm::zeros(arch);
        let layout = arch.layout();
        // embed: a -> e0, b -> e1, start -> e2; output reads the hidden state
        let e = layout.block_mut(&mut lm.params, "lm.embed");
        e.copy_from_slice(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let wx = layout.block_mut(&mut lm.params, "lm.wx");
        // update gates saturate open; candidate columns 4, 5 encode the last token
        for r in 0..3 {
            wx[r * 6] = 50.0;
            wx[r * 6 + 1] = 50.0;
        }
        for (r, (h0, h1)) in [(50.0, -50.0), (-50.0, 50.0), (-50.0, -50.0)].into_iter().enumerate() {
            wx[r * 6 + 4] = h0;
            wx[r * 6 + 5] = h1;
        }
        // h = (-1,-1) after start emits a, (1,-1) after a emits b, (-1,1) after b emits END
        let wo = layout.block_mut(&mut lm.params, "lm.wo");
        wo.copy_from_slice(&[-10.0, -10.0, 10.0, 10.0, -10.0, -10.0]);
        let bo = layout.block_mut(&mut lm.params, "lm.bo");
        bo.copy_from_slice(&[0.0, 0.0, 0.0]);
        let clm = CharLm { vocab, lm };
        let list = top_oov_words(&clm, 5, 200, 10, 3).unwrap();
        assert_eq!(list.entries.len(), 1, "{list:?}");
        assert_eq!(list.entries[0].word, "ab");
        let direct = clm.lm.joint_prob(&clm.vocab.encode("ab").unwrap()).unwrap();
        assert!((list.entries[0].joint_prob - direct).abs() < 1e-12);
        assert!(direct > 0.99);
    }

    #[test]
    fn word_lists_are_sorted_and_scored_exactly() {
        let vocab = CharVocab::ascii_lower();
        let clm = CharLm::new(vocab, 4, 6, 9);
        let list = top_oov_words(&clm, 10, 2000, 12, 1).unwrap();
        assert_eq!(list.entries.len(), 10);
        for w in list.entries.windows(2) {
            assert!(w[0].joint_prob >= w[1].joint_prob);
        }
        for e in &list.entries {
            assert!(e.joint_prob > 0.0 && e.joint_prob <= 1.0);
            let direct = clm.lm.joint_prob(&clm.vocab.encode(&e.word).unwrap()).unwrap();
            assert!((e.joint_prob - direct).abs() < 1e-12);
        }
        assert!(top_oov_words(&clm, 0, 10, 5, 1).is_err());
        assert!(list.to_csv("r").contains("rank,word,joint_prob"));
    }

    #[test]
    fn histogram_bins() {
        let h = AccuracyHistogram::from_accuracies(&[1.0; 7], 10).unwrap();
        assert_eq!(h.counts[9], 7);
        let acc = [0.0, 0.1, 0.15, 0.5, 0.99, 1.0];
        let h = AccuracyHistogram::from_accuracies(&acc, 10).unwrap();
        assert_eq!(h.counts.iter().sum::<usize>(), acc.len());
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[1], 2);
        assert_eq!(h.counts[5], 1);
        assert_eq!(h.counts[9], 2);
        assert!((h.mass_below(0.5) - 0.5).abs() < 1e-12);
        assert!(AccuracyHistogram::from_accuracies(&acc, 0).is_err());
        assert!(AccuracyHistogram::from_accuracies(&[1.5], 2).is_err());
    }

    #[test]
    fn oov_rate_fixture() {
        use crate::datasets::{ClientDataset, Style, TextPopulation};
        let words = |n: usize, w: &str| vec![w.to_string(); n];
        let mut s1 = words(43, "in");
        s1.extend(words(7, "out"));
        let pop = TextPopulation {
            clients: vec![ClientDataset {
                id: 0,
                style: Style::None,
                examples: vec![s1, words(50, "in")],
            }],
        };
        let vocab = Vocabulary::new(vec!["in".into()]).unwrap();
        assert!((overall_oov_rate(&pop, &vocab).unwrap() - 0.07).abs() < 1e-15);
    }

    #[test]
    fn pgm_layout_and_determinism() {
        let black = vec![0u8; 64];
        let bytes = image_grid_pgm(std::slice::from_ref(&black), 8, 1, 1, "x").unwrap();
        let (w, h, px) = read_pgm(&bytes).unwrap();
        assert_eq!((w, h), (8, 8));
        assert_eq!(px, vec![0u8; 64]);

        let imgs: Vec<Vec<u8>> = (0..3).map(|i| vec![200 + i as u8; 4]).collect();
        let bytes = image_grid_pgm(&imgs, 2, 2, 2, "x").unwrap();
        let (w, h, px) = read_pgm(&bytes).unwrap();
        assert_eq!((w, h), (5, 5));
        #[rustfmt::skip]
        let want = vec![
            200, 200, 128, 201, 201,
            200, 200, 128, 201, 201,
            128, 128, 128, 128, 128,
            202, 202, 128, 0, 0,
            202, 202, 128, 0, 0,
        ];
        assert_eq!(px, want);
        assert_eq!(bytes, image_grid_pgm(&imgs, 2, 2, 2, "x").unwrap());
        assert!(image_grid_pgm(&imgs, 2, 1, 2, "x").is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.pgm");
        emit_image_grid(&imgs, 2, 2, 2, "x", &path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), bytes);
        assert!(emit_image_grid(&imgs, 2, 2, 2, "x", &dir.path().join("no/such/dir.pgm")).is_err());
    }

    #[test]
    fn intensity_statistics() {
        assert_eq!(quantize(&[-1.0, 0.5, 2.0]), vec![0, 128, 255]);
        let imgs = vec![vec![0, 255], vec![255, 255]];
        assert_eq!(bright_fraction(&imgs), 0.75);
        assert_eq!(mean_intensity(&imgs), 0.75);
    }
}
