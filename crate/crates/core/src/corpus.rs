//! Corpus data model, on-disk formats, splits, and the synthetic
//! ROI-sequence generator.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::lexicon::{Lexicon, UnitKind};
use crate::transforms::Stage;

/// Per-utterance T x D feature sequence, tagged with its position in the
/// transform pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    pub data: Array2<f64>,
    pub stage: Stage,
}

impl FrameMatrix {
    pub fn raw(data: Array2<f64>) -> Self {
        FrameMatrix { data, stage: Stage::Raw }
    }

    pub fn with_stage(data: Array2<f64>, stage: Stage) -> Self {
        FrameMatrix { data, stage }
    }

    pub fn num_frames(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoiSequence {
    /// Grayscale images, intensities in [0,1]; all share H x W.
    pub images: Vec<Array2<f64>>,
    pub frame_rate: f64,
}

impl RoiSequence {
    /// Flattens each image row-major into one row of a T x (H*W) matrix.
    pub fn flatten(&self) -> Array2<f64> {
        let t = self.images.len();
        let d = self.images[0].len();
        let mut out = Array2::zeros((t, d));
        for (i, img) in self.images.iter().enumerate() {
            for (j, &v) in img.iter().enumerate() {
                out[[i, j]] = v;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Frames {
    Roi(RoiSequence),
    Feat(FrameMatrix),
}

impl Frames {
    pub fn len(&self) -> usize {
        match self {
            Frames::Roi(r) => r.images.len(),
            Frames::Feat(f) => f.num_frames(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub speaker: String,
    pub frames: Frames,
    pub transcript: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Speaker-dependent: split stratified by speaker at the utterance level.
    Sd,
    /// Speaker-independent: train and test speaker sets are disjoint.
    Si,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub scenario: Scenario,
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub utterances: Vec<Utterance>,
    pub split: Option<Split>,
}

impl Corpus {
    pub fn new(utterances: Vec<Utterance>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for u in &utterances {
            if u.frames.is_empty() {
                return Err(Error::invalid(format!("utterance {} has no frames", u.id)));
            }
            if u.transcript.is_empty() {
                return Err(Error::invalid(format!("utterance {} has empty transcript", u.id)));
            }
            if !seen.insert(u.id.clone()) {
                return Err(Error::invalid(format!("duplicate utterance id {}", u.id)));
            }
        }
        Ok(Corpus { utterances, split: None })
    }

    pub fn speakers(&self) -> BTreeSet<&str> {
        self.utterances.iter().map(|u| u.speaker.as_str()).collect()
    }

    pub fn utterance(&self, id: &str) -> Option<&Utterance> {
        self.utterances.iter().find(|u| u.id == id)
    }

    pub fn train_utterances(&self) -> Vec<&Utterance> {
        match &self.split {
            Some(s) => self
                .utterances
                .iter()
                .filter(|u| s.train_ids.contains(&u.id))
                .collect(),
            None => self.utterances.iter().collect(),
        }
    }

    pub fn test_utterances(&self) -> Vec<&Utterance> {
        match &self.split {
            Some(s) => self
                .utterances
                .iter()
                .filter(|u| s.test_ids.contains(&u.id))
                .collect(),
            None => Vec::new(),
        }
    }
}

/// Parameters for the synthetic ROI corpus generator.
#[derive(Debug, Clone)]
pub struct GeneratorConfig {
    /// Unit symbols; each gets a visual prototype (possibly shared, see
    /// `prototype_of`).
    pub units: Vec<String>,
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub words_per_utt: usize,
    pub image_h: usize,
    pub image_w: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Number of lexicon words to synthesize (each word is 1-4 units).
    pub n_words: usize,
    /// Optional unit -> prototype-key map; units sharing a key render
    /// identically, emulating visual ambiguity between units.
    pub prototype_of: Option<BTreeMap<String, String>>,
    pub frame_rate: f64,
}

impl GeneratorConfig {
    pub fn new(units: Vec<String>, n_speakers: usize, utts_per_speaker: usize, words_per_utt: usize) -> Self {
        GeneratorConfig {
            units,
            n_speakers,
            utts_per_speaker,
            words_per_utt,
            image_h: 32,
            image_w: 32,
            noise_sigma: 0.05,
            seed: 0,
            n_words: 20,
            prototype_of: None,
            frame_rate: 100.0,
        }
    }
}

/// Renders a deterministic prototype image for prototype index `idx`:
/// a bright block in a grid cell plus an orientation-coded gradient.
fn render_prototype(idx: usize, n_protos: usize, h: usize, w: usize) -> Result<Array2<f64>> {
    let grid = (n_protos as f64).sqrt().ceil() as usize;
    let cell_h = h / grid;
    let cell_w = w / grid;
    if cell_h < 2 || cell_w < 2 {
        return Err(Error::invalid(format!(
            "image size {h}x{w} too small to render {n_protos} distinct prototypes"
        )));
    }
    let gy = idx / grid;
    let gx = idx % grid;
    let mut img = Array2::zeros((h, w));
    // gradient background, orientation varies with the prototype index
    let angle = idx as f64 * std::f64::consts::PI / n_protos.max(1) as f64;
    let (ca, sa) = (angle.cos(), angle.sin());
    for r in 0..h {
        for c in 0..w {
            let x = c as f64 / (w - 1).max(1) as f64 - 0.5;
            let y = r as f64 / (h - 1).max(1) as f64 - 0.5;
            img[[r, c]] = 0.25 + 0.2 * (x * ca + y * sa);
        }
    }
    // bright block in this prototype's grid cell
    for r in gy * cell_h..((gy + 1) * cell_h).min(h) {
        for c in gx * cell_w..((gx + 1) * cell_w).min(w) {
            img[[r, c]] = 0.9;
        }
    }
    Ok(img)
}

fn synth_lexicon(units: &[String], n_words: usize, rng: &mut ChaCha8Rng) -> Result<Lexicon> {
    let mut entries: Vec<(String, Vec<String>)> = Vec::new();
    let mut seen: BTreeSet<Vec<String>> = BTreeSet::new();
    for i in 0..n_words {
        let word = format!("W{i:02}");
        let mut pron = Vec::new();
        for attempt in 0.. {
            let len = rng.gen_range(1..=4usize).min(units.len().max(1));
            pron = (0..len)
                .map(|_| units[rng.gen_range(0..units.len())].clone())
                .collect();
            if seen.insert(pron.clone()) {
                break;
            }
            if attempt > 200 {
                return Err(Error::invalid(
                    "cannot synthesize enough distinct pronunciations",
                ));
            }
        }
        entries.push((word, pron));
    }
    let mut lex = Lexicon::new(UnitKind::Phoneme);
    for (w, p) in entries {
        lex.add(&w, p);
    }
    Ok(lex)
}

/// Generates a reproducible synthetic ROI corpus plus the lexicon used
/// to compose its transcripts.
pub fn generate_synthetic_corpus(cfg: &GeneratorConfig) -> Result<(Corpus, Lexicon)> {
    if cfg.units.is_empty() {
        return Err(Error::invalid("unit set is empty"));
    }
    // prototype index per unit
    let proto_keys: Vec<String> = match &cfg.prototype_of {
        Some(map) => {
            let mut keys: Vec<String> = map.values().cloned().collect::<BTreeSet<_>>().into_iter().collect();
            keys.sort();
            for u in &cfg.units {
                if !map.contains_key(u) {
                    return Err(Error::invalid(format!("prototype map misses unit {u}")));
                }
            }
            keys
        }
        None => cfg.units.clone(),
    };
    let n_protos = proto_keys.len();
    let proto_index = |u: &str| -> usize {
        match &cfg.prototype_of {
            Some(map) => proto_keys.iter().position(|k| k == &map[u]).unwrap(),
            None => cfg.units.iter().position(|x| x == u).unwrap(),
        }
    };
    let prototypes: Vec<Array2<f64>> = (0..n_protos)
        .map(|i| render_prototype(i, n_protos, cfg.image_h, cfg.image_w))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lexicon = synth_lexicon(&cfg.units, cfg.n_words, &mut rng)?;
    let words: Vec<String> = lexicon.words().map(|w| w.to_string()).collect();

    let mut utterances = Vec::new();
    for s in 0..cfg.n_speakers {
        let speaker = format!("spk{s:02}");
        let mut spk_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1).wrapping_mul(0x9E37_79B9).wrapping_add(s as u64));
        let gain: f64 = spk_rng.gen_range(0.9..1.1);
        let offset: f64 = spk_rng.gen_range(-0.08..0.08);
        // per-speaker, per-unit hold duration in 4..=12 frames
        let durations: Vec<usize> = (0..cfg.units.len())
            .map(|_| spk_rng.gen_range(4..=12usize))
            .collect();
        for ui in 0..cfg.utts_per_speaker {
            let mut utt_rng = ChaCha8Rng::seed_from_u64(
                cfg.seed
                    .wrapping_mul(0x51_7C_C1B7_2722_0A95)
                    .wrapping_add((s * 10_000 + ui) as u64),
            );
            let transcript: Vec<String> = (0..cfg.words_per_utt)
                .map(|_| words[utt_rng.gen_range(0..words.len())].clone())
                .collect();
            let mut images = Vec::new();
            for w in &transcript {
                let pron = &lexicon.pronunciations(w).unwrap()[0];
                for unit in pron {
                    let uidx = cfg.units.iter().position(|x| x == unit).unwrap();
                    let proto = &prototypes[proto_index(unit)];
                    for _ in 0..durations[uidx] {
                        let mut img = proto.clone();
                        for v in img.iter_mut() {
                            let noise = if cfg.noise_sigma > 0.0 {
                                gaussian(&mut utt_rng) * cfg.noise_sigma
                            } else {
                                0.0
                            };
                            *v = (*v * gain + offset + noise).clamp(0.0, 1.0);
                        }
                        images.push(img);
                    }
                }
            }
            utterances.push(Utterance {
                id: format!("{speaker}_u{ui:03}"),
                speaker: speaker.clone(),
                frames: Frames::Roi(RoiSequence { images, frame_rate: cfg.frame_rate }),
                transcript,
            });
        }
    }
    Ok((Corpus::new(utterances)?, lexicon))
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Assigns a train/test split. SD stratifies per speaker at the utterance
/// level; SI partitions the speaker set.
pub fn split_corpus(
    corpus: &Corpus,
    scenario: Scenario,
    train_fraction: f64,
    seed: u64,
) -> Result<Corpus> {
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::invalid("train_fraction must be in [0,1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_ids = BTreeSet::new();
    let mut test_ids = BTreeSet::new();
    match scenario {
        Scenario::Si => {
            let speakers: Vec<String> = corpus.speakers().iter().map(|s| s.to_string()).collect();
            if speakers.len() < 2 {
                return Err(Error::invalid("SI split requires at least 2 speakers"));
            }
            let mut shuffled = speakers.clone();
            shuffled.shuffle(&mut rng);
            let n_train = ((speakers.len() as f64 * train_fraction).round() as usize)
                .clamp(1, speakers.len() - 1);
            let train_spk: BTreeSet<&String> = shuffled.iter().take(n_train).collect();
            for u in &corpus.utterances {
                if train_spk.contains(&u.speaker) {
                    train_ids.insert(u.id.clone());
                } else {
                    test_ids.insert(u.id.clone());
                }
            }
        }
        Scenario::Sd => {
            let mut by_speaker: BTreeMap<&str, Vec<&Utterance>> = BTreeMap::new();
            for u in &corpus.utterances {
                by_speaker.entry(u.speaker.as_str()).or_default().push(u);
            }
            for (_, mut utts) in by_speaker {
                utts.shuffle(&mut rng);
                let n_train = ((utts.len() as f64 * train_fraction).round() as usize).min(utts.len());
                for (i, u) in utts.iter().enumerate() {
                    if i < n_train {
                        train_ids.insert(u.id.clone());
                    } else {
                        test_ids.insert(u.id.clone());
                    }
                }
            }
        }
    }
    let mut out = corpus.clone();
    out.split = Some(Split { scenario, train_ids, test_ids });
    Ok(out)
}

/// Feature archive read/write in the binary container format, with
/// matrices carried as raw-stage `FrameMatrix` values.
pub fn write_feature_archive(map: &BTreeMap<String, Array2<f64>>, path: &Path) -> Result<()> {
    crate::io::write_archive(path, map)
}

pub fn read_feature_archive(path: &Path) -> Result<BTreeMap<String, Array2<f64>>> {
    crate::io::read_archive(path)
}

/// One line per utterance: `<utt-id> <word> <word> ...`.
pub fn write_transcripts(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut out = String::new();
    for u in &corpus.utterances {
        out.push_str(&u.id);
        for w in &u.transcript {
            out.push(' ');
            out.push_str(w);
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_transcripts(path: &Path) -> Result<BTreeMap<String, Vec<String>>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (ln, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        let id = match it.next() {
            Some(id) => id.to_string(),
            None => continue,
        };
        let words: Vec<String> = it.map(|s| s.to_string()).collect();
        if words.is_empty() {
            return Err(Error::Parse(format!("transcript line {} has no words", ln + 1)));
        }
        if out.insert(id.clone(), words).is_some() {
            return Err(Error::Parse(format!("duplicate utterance id {id}")));
        }
    }
    Ok(out)
}

/// Writes each utterance's ROI sequence as one file in `dir`.
pub fn write_roi_dir(corpus: &Corpus, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for u in &corpus.utterances {
        if let Frames::Roi(roi) = &u.frames {
            let h = roi.images[0].nrows();
            let w = roi.images[0].ncols();
            let flat = roi.flatten();
            crate::io::write_roi_file(&dir.join(format!("{}.roi", u.id)), &u.id, h, w, &flat)?;
        }
    }
    Ok(())
}

pub fn read_roi_dir(dir: &Path) -> Result<BTreeMap<String, RoiSequence>> {
    let mut out = BTreeMap::new();
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "roi").unwrap_or(false))
        .collect();
    paths.sort();
    for p in paths {
        let (id, h, w, mat) = crate::io::read_roi_file(&p)?;
        let images = mat
            .rows()
            .into_iter()
            .map(|r| {
                Array2::from_shape_vec((h, w), r.to_vec()).expect("row length checked on read")
            })
            .collect();
        out.insert(id, RoiSequence { images, frame_rate: 100.0 });
    }
    Ok(out)
}

/// Flattens ROI sequences to raw pixel feature rows (one image per row).
pub fn roi_to_pixel_features(roi: &RoiSequence) -> FrameMatrix {
    FrameMatrix::raw(roi.flatten())
}

#[allow(dead_code)]
fn unused(_: Array1<f64>) {}
