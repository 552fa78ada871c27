//! Word bigram language model with add-k smoothing and backoff to
//! unigrams, plus a textual ARPA-style serialization.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

/// Backoff bigram LM. Probabilities are stored as log10, ARPA-style.
///
/// For a history h, P(w|h) = explicit bigram prob if (h,w) was seen,
/// otherwise backoff(h) * P1(w). Both sides together normalize to 1 for
/// every history.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramLm {
    /// Prediction vocabulary: corpus words plus `</s>`, sorted.
    pub vocab: Vec<String>,
    /// log10 unigram probabilities over the prediction vocabulary.
    pub uni_log10: BTreeMap<String, f64>,
    /// log10 backoff weight per history (`<s>` and every word).
    pub backoff_log10: BTreeMap<String, f64>,
    /// log10 probabilities for seen bigrams.
    pub bi_log10: BTreeMap<(String, String), f64>,
    pub add_k: f64,
}

impl BigramLm {
    /// log10 P(w | h); h may be `<s>`.
    pub fn log10_prob(&self, h: &str, w: &str) -> Result<f64> {
        if !self.uni_log10.contains_key(w) {
            return Err(Error::invalid(format!("word {w} not in LM vocabulary")));
        }
        if let Some(&p) = self.bi_log10.get(&(h.to_string(), w.to_string())) {
            return Ok(p);
        }
        let bo = self.backoff_log10.get(h).copied().unwrap_or(0.0);
        Ok(bo + self.uni_log10[w])
    }

    /// Natural-log probability, for decoders working in nats.
    pub fn ln_prob(&self, h: &str, w: &str) -> Result<f64> {
        Ok(self.log10_prob(h, w)? * std::f64::consts::LN_10)
    }

    /// Words the LM can predict, excluding `</s>`.
    pub fn words(&self) -> Vec<&str> {
        self.vocab.iter().map(|s| s.as_str()).filter(|w| *w != EOS).collect()
    }

    /// Per-token perplexity over utterances, predicting each word and the
    /// end-of-sentence marker.
    pub fn perplexity(&self, transcripts: &[Vec<String>]) -> Result<f64> {
        let mut log10_sum = 0.0;
        let mut tokens = 0usize;
        for utt in transcripts {
            let mut h = BOS.to_string();
            for w in utt {
                log10_sum += self.log10_prob(&h, w)?;
                tokens += 1;
                h = w.clone();
            }
            log10_sum += self.log10_prob(&h, EOS)?;
            tokens += 1;
        }
        if tokens == 0 {
            return Err(Error::invalid("no tokens"));
        }
        Ok(10f64.powf(-log10_sum / tokens as f64))
    }
}

/// Trains the LM from word transcripts. `add_k` is the smoothing constant
/// (0.5 by default at call sites); sentence markers are added internally.
pub fn train_bigram_lm(transcripts: &[Vec<String>], add_k: f64) -> Result<BigramLm> {
    if transcripts.is_empty() || transcripts.iter().all(|t| t.is_empty()) {
        return Err(Error::invalid("empty transcripts"));
    }
    let mut uni: BTreeMap<String, usize> = BTreeMap::new();
    let mut bi: BTreeMap<(String, String), usize> = BTreeMap::new();
    let mut hist_total: BTreeMap<String, usize> = BTreeMap::new();
    for utt in transcripts {
        let mut h = BOS.to_string();
        for w in utt.iter().chain(std::iter::once(&EOS.to_string())) {
            *uni.entry(w.clone()).or_default() += 1;
            *bi.entry((h.clone(), w.clone())).or_default() += 1;
            *hist_total.entry(h.clone()).or_default() += 1;
            h = w.clone();
        }
    }
    let vocab: Vec<String> = uni.keys().cloned().collect();
    let v = vocab.len() as f64;
    let n: usize = uni.values().sum();

    let mut uni_log10 = BTreeMap::new();
    for w in &vocab {
        let p = (uni[w] as f64 + add_k) / (n as f64 + add_k * v);
        uni_log10.insert(w.clone(), p.log10());
    }
    // every history (BOS and every word) gets a backoff weight; seen
    // bigrams get explicit probabilities
    let mut backoff_log10 = BTreeMap::new();
    let mut bi_log10 = BTreeMap::new();
    let mut histories: Vec<String> = vec![BOS.to_string()];
    histories.extend(vocab.iter().filter(|w| *w != EOS).cloned());
    for h in &histories {
        let total = *hist_total.get(h).unwrap_or(&0) as f64;
        let denom = total + add_k * v;
        backoff_log10.insert(h.clone(), ((add_k * v) / denom).log10());
        for w in &vocab {
            if let Some(&c) = bi.get(&(h.clone(), w.clone())) {
                let p1 = 10f64.powf(uni_log10[w]);
                let p = (c as f64 + add_k * v * p1) / denom;
                bi_log10.insert((h.clone(), w.clone()), p.log10());
            }
        }
    }
    Ok(BigramLm { vocab, uni_log10, backoff_log10, bi_log10, add_k })
}

/// Writes the textual ARPA-like format with log10 probabilities.
pub fn write_arpa(lm: &BigramLm, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("\\data\\\n");
    out.push_str(&format!("ngram 1={}\n", lm.vocab.len() + 1));
    out.push_str(&format!("ngram 2={}\n\n", lm.bi_log10.len()));
    out.push_str("\\1-grams:\n");
    out.push_str(&format!("-99.0\t{BOS}\t{:.6}\n", lm.backoff_log10.get(BOS).copied().unwrap_or(0.0)));
    for w in &lm.vocab {
        let bo = lm.backoff_log10.get(w).copied().unwrap_or(0.0);
        out.push_str(&format!("{:.6}\t{w}\t{bo:.6}\n", lm.uni_log10[w]));
    }
    out.push_str("\n\\2-grams:\n");
    for ((h, w), p) in &lm.bi_log10 {
        out.push_str(&format!("{p:.6}\t{h} {w}\n"));
    }
    out.push_str("\n\\end\\\n");
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_arpa(path: &Path) -> Result<BigramLm> {
    let text = std::fs::read_to_string(path)?;
    let mut uni_log10 = BTreeMap::new();
    let mut backoff_log10 = BTreeMap::new();
    let mut bi_log10 = BTreeMap::new();
    let mut section = 0;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match line {
            "\\data\\" => section = 0,
            "\\1-grams:" => section = 1,
            "\\2-grams:" => section = 2,
            "\\end\\" => break,
            _ => match section {
                1 => {
                    let parts: Vec<&str> = line.split_whitespace().collect();
                    if parts.len() < 2 {
                        return Err(Error::Parse(format!("bad 1-gram line: {line}")));
                    }
                    let p: f64 = parts[0].parse().map_err(|_| Error::Parse(line.into()))?;
                    let w = parts[1].to_string();
                    let bo: f64 = if parts.len() > 2 {
                        parts[2].parse().map_err(|_| Error::Parse(line.into()))?
                    } else {
                        0.0
                    };
                    if w != BOS {
                        uni_log10.insert(w.clone(), p);
                    }
                    backoff_log10.insert(w, bo);
                }
                2 => {
                    let parts: Vec<&str> = line.split_whitespace().collect();
                    if parts.len() != 3 {
                        return Err(Error::Parse(format!("bad 2-gram line: {line}")));
                    }
                    let p: f64 = parts[0].parse().map_err(|_| Error::Parse(line.into()))?;
                    bi_log10.insert((parts[1].to_string(), parts[2].to_string()), p);
                }
                _ => {}
            },
        }
    }
    if uni_log10.is_empty() {
        return Err(Error::Parse("no unigrams in LM file".into()));
    }
    let vocab: Vec<String> = uni_log10.keys().cloned().collect();
    Ok(BigramLm { vocab, uni_log10, backoff_log10, bi_log10, add_k: f64::NAN })
}
