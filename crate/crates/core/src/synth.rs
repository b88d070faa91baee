//! Synthetic data with known ground truth.
//!
//! The score world draws Gaussian class-conditional scores per domain, so
//! the optimal LLR map is available in closed form. Each utterance also gets
//! a small condition-feature vector (a per-domain signature plus noise) and
//! a duration, so condition-aware calibrators have something to read. The
//! embedding world draws speakers on the unit sphere and applies a
//! per-domain distortion; it exercises the full scoring pipeline.
//!
//! Named presets:
//!
//! | preset | domain | μ_tgt | σ_tgt | μ_non | σ_non |
//! |--------|--------|-------|-------|-------|-------|
//! | `s1`   | A      | 1.0   | 1.0   | −1.0  | 1.0   |
//! | `s2`   | A      | 0.6   | 0.15  | 0.0   | 0.15  |
//! | `s2`   | B      | 0.6   | 0.15  | 0.15  | 0.225 |
//!
//! `s1` has 10⁴ trials per class and seed 7; `s2` has 5000 trials per class
//! and domain and seed 11.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::data::{
    write_embeddings, write_scores, write_trials, EmbeddingFormat, EmbeddingRecord, EmbeddingSet, Label, ScoreSet,
    Trial, TrialList,
};
use crate::error::{Error, Result};
use crate::linear::OperatingPoint;
use crate::snorm::{normalize_score, stats_from_scores, NormStats};
use crate::text::KeyValues;

pub const DEFAULT_DURATION_RANGE: (f64, f64) = (2.0, 60.0);

#[derive(Debug, Clone, PartialEq)]
pub struct DomainParams {
    pub name: String,
    pub mu_tgt: f64,
    pub sigma_tgt: f64,
    pub mu_non: f64,
    pub sigma_non: f64,
}

impl DomainParams {
    pub fn new(name: impl Into<String>, mu_tgt: f64, sigma_tgt: f64, mu_non: f64, sigma_non: f64) -> Self {
        Self {
            name: name.into(),
            mu_tgt,
            sigma_tgt,
            mu_non,
            sigma_non,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |x: f64| x.is_finite();
        if !(ok(self.mu_tgt) && ok(self.mu_non) && self.sigma_tgt > 0.0 && self.sigma_non > 0.0)
            || !ok(self.sigma_tgt)
            || !ok(self.sigma_non)
        {
            return Err(Error::config(format!(
                "domain {:?}: means must be finite and standard deviations positive",
                self.name
            )));
        }
        if self.name.is_empty() || self.name.contains(char::is_whitespace) || self.name.contains(',') {
            return Err(Error::config(format!("invalid domain name {:?}", self.name)));
        }
        Ok(())
    }

    /// Exact log-likelihood ratio of `s` under the two class Gaussians.
    pub fn llr(&self, s: f64) -> f64 {
        let log_pdf = |x: f64, mu: f64, sd: f64| -0.5 * ((x - mu) / sd).powi(2) - sd.ln();
        log_pdf(s, self.mu_tgt, self.sigma_tgt) - log_pdf(s, self.mu_non, self.sigma_non)
    }

    /// `(α*, β*)` such that `α*·s + β*` is the exact LLR. Only defined for
    /// equal class variances.
    pub fn optimal_affine(&self) -> Option<(f64, f64)> {
        if self.sigma_tgt != self.sigma_non {
            return None;
        }
        let var = self.sigma_tgt * self.sigma_tgt;
        Some((
            (self.mu_tgt - self.mu_non) / var,
            (self.mu_non * self.mu_non - self.mu_tgt * self.mu_tgt) / (2.0 * var),
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreWorldConfig {
    pub domains: Vec<DomainParams>,
    /// Per domain and per class.
    pub trials_per_class: usize,
    pub seed: u64,
    /// Length of the per-utterance condition-feature vectors.
    pub feature_dim: usize,
    /// Standard deviation of each domain's feature signature.
    pub domain_separation: f64,
    pub duration_range: (f64, f64),
}

impl ScoreWorldConfig {
    pub fn s1() -> Self {
        Self {
            domains: vec![DomainParams::new("A", 1.0, 1.0, -1.0, 1.0)],
            trials_per_class: 10_000,
            seed: 7,
            feature_dim: 8,
            domain_separation: 2.0,
            duration_range: DEFAULT_DURATION_RANGE,
        }
    }

    /// Domain B nontargets are shifted by +0.15 and widened ×1.5.
    pub fn s2() -> Self {
        Self {
            domains: vec![
                DomainParams::new("A", 0.6, 0.15, 0.0, 0.15),
                DomainParams::new("B", 0.6, 0.15, 0.15, 0.225),
            ],
            trials_per_class: 5000,
            seed: 11,
            feature_dim: 8,
            domain_separation: 2.0,
            duration_range: DEFAULT_DURATION_RANGE,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "s1" => Ok(Self::s1()),
            "s2" => Ok(Self::s2()),
            _ => Err(Error::config(format!("unknown score preset {name:?} (s1|s2)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.domains.is_empty() {
            return Err(Error::config("score world needs at least one domain"));
        }
        let mut names = HashSet::new();
        for d in &self.domains {
            d.validate()?;
            if !names.insert(&d.name) {
                return Err(Error::config(format!("duplicate domain {:?}", d.name)));
            }
        }
        if self.trials_per_class == 0 {
            return Err(Error::config("trials_per_class must be positive"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("feature_dim must be positive"));
        }
        if !(self.domain_separation >= 0.0 && self.domain_separation.is_finite()) {
            return Err(Error::config("domain_separation must be >= 0"));
        }
        check_duration_range(self.duration_range)
    }
}

fn check_duration_range((lo, hi): (f64, f64)) -> Result<()> {
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::config(format!("duration range [{lo}, {hi}] must be positive and ordered")));
    }
    Ok(())
}

fn log_uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        return lo;
    }
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

fn gauss(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Reference values from the generating distributions, per domain.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainOracle {
    pub domain: String,
    /// Optimal affine map; `None` when the class variances differ.
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    /// Cllr (bits) of the exact LLR on the generated trials.
    pub cllr: f64,
    /// Normalized minDCF of the generated trials at the oracle's operating point.
    pub min_dcf: f64,
}

#[derive(Debug, Clone)]
pub struct ScoreWorld {
    pub config: ScoreWorldConfig,
    /// Condition features, one record per utterance.
    pub embeddings: EmbeddingSet,
    pub trials: TrialList,
    pub scores: ScoreSet,
    pub oracle: Vec<DomainOracle>,
}

/// Labeled, domain-tagged Gaussian scores with their analytic oracle.
///
/// Every trial has its own enrollment and test utterance (`<D>-e<k>`,
/// `<D>-t<k>`). Trials are ordered by domain, then targets before
/// nontargets.
pub fn gen_scores(config: &ScoreWorldConfig) -> Result<ScoreWorld> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let signatures: Vec<Vec<f64>> = config
        .domains
        .iter()
        .map(|_| (0..config.feature_dim).map(|_| config.domain_separation * gauss(&mut rng)).collect())
        .collect();
    let mut embeddings = EmbeddingSet::new(config.feature_dim);
    let mut trials = Vec::new();
    let mut scores = Vec::new();
    let mut oracle = Vec::new();
    for (d, sig) in config.domains.iter().zip(&signatures) {
        let mut utterance = |id: String, rng: &mut ChaCha8Rng| -> Result<String> {
            let v = sig.iter().map(|&m| f32_round(m + gauss(rng))).collect();
            let dur = f32_round(log_uniform(rng, config.duration_range));
            embeddings.push(EmbeddingRecord::new(id.clone(), v, dur).with_domain(&d.name))?;
            Ok(id)
        };
        let mut dom_t = Vec::with_capacity(config.trials_per_class);
        let mut dom_n = Vec::with_capacity(config.trials_per_class);
        let mut k = 0;
        for (label, mu, sd) in [
            (Label::Target, d.mu_tgt, d.sigma_tgt),
            (Label::Nontarget, d.mu_non, d.sigma_non),
        ] {
            let dist = Normal::new(mu, sd).expect("validated");
            for _ in 0..config.trials_per_class {
                let e = utterance(format!("{}-e{k}", d.name), &mut rng)?;
                let t = utterance(format!("{}-t{k}", d.name), &mut rng)?;
                let s = dist.sample(&mut rng);
                scores.push(s);
                if label == Label::Target {
                    dom_t.push(s);
                } else {
                    dom_n.push(s);
                }
                trials.push(Trial::new(e, t, label).with_domain(&d.name));
                k += 1;
            }
        }
        let llr_t: Vec<f64> = dom_t.iter().map(|&s| d.llr(s)).collect();
        let llr_n: Vec<f64> = dom_n.iter().map(|&s| d.llr(s)).collect();
        let affine = d.optimal_affine();
        oracle.push(DomainOracle {
            domain: d.name.clone(),
            alpha: affine.map(|a| a.0),
            beta: affine.map(|a| a.1),
            cllr: direct_cllr(&llr_t, &llr_n),
            min_dcf: direct_min_dcf(&dom_t, &dom_n, OperatingPoint::DEFAULT.pi()),
        });
    }
    Ok(ScoreWorld {
        config: config.clone(),
        embeddings,
        trials: TrialList::from_trials(trials)?,
        scores: ScoreSet::new(scores, "synthetic")?,
        oracle,
    })
}

fn f32_round(x: f64) -> f64 {
    x as f32 as f64
}

/// Straightforward Cllr: mean over each class of `log2(1 + e^{∓l})`.
pub fn direct_cllr(llr_t: &[f64], llr_n: &[f64]) -> f64 {
    let term = |x: f64| if x > 30.0 { x } else { x.exp().ln_1p() };
    let ct: f64 = llr_t.iter().map(|&l| term(-l)).sum::<f64>() / llr_t.len() as f64;
    let cn: f64 = llr_n.iter().map(|&l| term(l)).sum::<f64>() / llr_n.len() as f64;
    (ct + cn) / (2.0 * std::f64::consts::LN_2)
}

/// Normalized minDCF by sorting all scores and walking thresholds upward
/// (accept when score ≥ threshold).
pub fn direct_min_dcf(tgt: &[f64], non: &[f64], pi: f64) -> f64 {
    let mut all: Vec<(f64, bool)> = tgt.iter().map(|&s| (s, true)).chain(non.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nt, nn) = (tgt.len() as f64, non.len() as f64);
    let norm = pi.min(1.0 - pi);
    let cost = |miss: usize, fa: usize| (pi * miss as f64 / nt + (1.0 - pi) * fa as f64 / nn) / norm;
    // threshold below everything: no misses, all false alarms
    let (mut miss, mut fa) = (0usize, non.len());
    let mut best = cost(miss, fa);
    let mut i = 0;
    while i < all.len() {
        let v = all[i].0;
        while i < all.len() && all[i].0 == v {
            if all[i].1 {
                miss += 1;
            } else {
                fa -= 1;
            }
            i += 1;
        }
        best = best.min(cost(miss, fa));
    }
    best
}

impl ScoreWorld {
    /// Indices of the trials of `domain`.
    pub fn domain_indices(&self, domain: &str) -> Vec<usize> {
        self.trials.indices_in_domain(domain)
    }

    fn params(&self, domain: &str) -> Result<&DomainParams> {
        self.config
            .domains
            .iter()
            .find(|d| d.name == domain)
            .ok_or_else(|| Error::config(format!("unknown domain {domain:?}")))
    }

    /// Score-level s-norm. Each utterance is compared with `pool_size`
    /// impostors from a mixed cohort; its scores against the pool follow the
    /// nontarget distribution of the utterance's own domain. The top
    /// `top_x` of those give the utterance's statistics.
    pub fn snorm(&self, pool_size: usize, top_x: usize, seed: u64) -> Result<ScoreSet> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stats: BTreeMap<&str, NormStats> = BTreeMap::new();
        let mut pool = vec![0.0; pool_size];
        for rec in self.embeddings.iter() {
            let d = self.params(rec.domain.as_deref().unwrap_or_default())?;
            let dist = Normal::new(d.mu_non, d.sigma_non).expect("validated");
            for p in pool.iter_mut() {
                *p = dist.sample(&mut rng);
            }
            stats.insert(rec.id.as_str(), stats_from_scores(&pool, top_x)?);
        }
        let out = self
            .trials
            .iter()
            .zip(self.scores.scores())
            .map(|(t, &s)| normalize_score(s, &stats[t.enroll_id.as_str()], &stats[t.test_id.as_str()]))
            .collect();
        ScoreSet::new(out, "snorm")
    }

    pub fn oracle_text(&self) -> String {
        let mut kv = KeyValues::new();
        for o in &self.oracle {
            let p = format!("oracle.{}.", o.domain);
            if let (Some(a), Some(b)) = (o.alpha, o.beta) {
                kv.set(format!("{p}alpha"), a);
                kv.set(format!("{p}beta"), b);
            }
            kv.set(format!("{p}cllr"), o.cllr);
            kv.set(format!("{p}min_dcf"), o.min_dcf);
        }
        kv.render()
    }

    /// `features.evec`, `trials.tsv`, `scores.tsv`, `oracle.txt`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_embeddings(&self.embeddings, dir.join("features.evec"), EmbeddingFormat::Binary)?;
        write_trials(&self.trials, dir.join("trials.tsv"))?;
        write_scores(&self.trials, &self.scores, dir.join("scores.tsv"))?;
        fs::write(dir.join("oracle.txt"), self.oracle_text())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingWorldConfig {
    pub dim: usize,
    /// Split 50/20/20/10 into train, dev, eval and cohort speakers.
    pub n_speakers: usize,
    pub utterances_per_speaker: usize,
    /// Within-speaker standard deviation per dimension.
    pub spread: f64,
    pub n_domains: usize,
    /// Std of the per-domain log scale factors (diagonal distortion).
    pub distortion_tilt: f64,
    /// Std of the additive per-domain noise.
    pub distortion_noise: f64,
    pub duration_range: (f64, f64),
    pub seed: u64,
}

impl Default for EmbeddingWorldConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            n_speakers: 100,
            utterances_per_speaker: 8,
            spread: 0.15,
            n_domains: 2,
            distortion_tilt: 0.5,
            distortion_noise: 0.05,
            duration_range: DEFAULT_DURATION_RANGE,
            seed: 3,
        }
    }
}

impl EmbeddingWorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::config("embedding dimension must be at least 2"));
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) {
            return Err(Error::config("spread must be >= 0"));
        }
        if !(self.distortion_noise >= 0.0 && self.distortion_tilt >= 0.0)
            || !self.distortion_noise.is_finite()
            || !self.distortion_tilt.is_finite()
        {
            return Err(Error::config("distortion parameters must be >= 0"));
        }
        if self.n_domains == 0 {
            return Err(Error::config("n_domains must be positive"));
        }
        if self.utterances_per_speaker < 2 * self.n_domains {
            return Err(Error::config(format!(
                "target trials need at least 2 utterances per speaker and domain ({} utterances for {} domains)",
                self.utterances_per_speaker, self.n_domains
            )));
        }
        let counts = split_sizes(self.n_speakers);
        if counts[..3].iter().any(|&c| c < 2) || counts[3] < 1 {
            return Err(Error::config(format!(
                "{} speakers are too few for train/dev/eval/cohort splits",
                self.n_speakers
            )));
        }
        check_duration_range(self.duration_range)
    }
}

fn split_sizes(n: usize) -> [usize; 4] {
    let train = n / 2;
    let dev = n / 5;
    let eval = n / 5;
    [train, dev, eval, n - train - dev - eval]
}

pub const SPLITS: [&str; 3] = ["train", "dev", "eval"];

#[derive(Debug, Clone)]
pub struct EmbeddingWorld {
    pub config: EmbeddingWorldConfig,
    /// Train, dev and eval utterances.
    pub embeddings: EmbeddingSet,
    /// Utterances of the cohort speakers.
    pub cohort: EmbeddingSet,
    /// Trial lists keyed by split name.
    pub splits: BTreeMap<String, TrialList>,
    /// Speaker indices per split (including `cohort`).
    pub speakers: BTreeMap<String, Vec<usize>>,
}

fn utt_id(speaker: usize, k: usize) -> String {
    format!("spk{speaker:04}-u{k:02}")
}

/// Speaker population with per-domain distortion and balanced in-domain
/// trial lists over disjoint speaker splits.
///
/// Utterance `k` of a speaker is recorded in domain `k mod n_domains`.
/// Targets are all same-speaker in-domain pairs; an equal number of
/// different-speaker in-domain pairs are drawn as nontargets.
pub fn gen_embeddings(config: &EmbeddingWorldConfig) -> Result<EmbeddingWorld> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let d = config.dim;
    let domains: Vec<(Vec<f64>, Vec<f64>)> = (0..config.n_domains)
        .map(|_| {
            let scale = (0..d).map(|_| (config.distortion_tilt * gauss(&mut rng)).exp()).collect();
            let offset = (0..d).map(|_| config.distortion_noise * gauss(&mut rng)).collect();
            (scale, offset)
        })
        .collect();
    let mut order: Vec<usize> = (0..config.n_speakers).collect();
    order.shuffle(&mut rng);
    let sizes = split_sizes(config.n_speakers);
    let mut speakers = BTreeMap::new();
    let mut start = 0;
    for (name, &n) in SPLITS.iter().chain(["cohort"].iter()).zip(&sizes) {
        let mut s = order[start..start + n].to_vec();
        s.sort_unstable();
        speakers.insert(name.to_string(), s);
        start += n;
    }
    let cohort_speakers: HashSet<usize> = speakers["cohort"].iter().copied().collect();

    let mut embeddings = EmbeddingSet::new(d);
    let mut cohort = EmbeddingSet::new(d);
    for spk in 0..config.n_speakers {
        let mut mean: Vec<f64> = (0..d).map(|_| gauss(&mut rng)).collect();
        let norm = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        mean.iter_mut().for_each(|x| *x /= norm);
        for k in 0..config.utterances_per_speaker {
            let dom = k % config.n_domains;
            let (scale, offset) = &domains[dom];
            let v = (0..d)
                .map(|i| {
                    let clean = mean[i] + config.spread * gauss(&mut rng);
                    f32_round(scale[i] * clean + offset[i] + config.distortion_noise * gauss(&mut rng))
                })
                .collect();
            let dur = f32_round(log_uniform(&mut rng, config.duration_range));
            let rec = EmbeddingRecord::new(utt_id(spk, k), v, dur).with_domain(format!("D{dom}"));
            if cohort_speakers.contains(&spk) {
                cohort.push(rec)?;
            } else {
                embeddings.push(rec)?;
            }
        }
    }

    let mut splits = BTreeMap::new();
    for name in SPLITS {
        let list = split_trials(&speakers[name], config, &mut rng)?;
        splits.insert(name.to_string(), list);
    }
    Ok(EmbeddingWorld {
        config: config.clone(),
        embeddings,
        cohort,
        splits,
        speakers,
    })
}

fn split_trials(spk: &[usize], config: &EmbeddingWorldConfig, rng: &mut ChaCha8Rng) -> Result<TrialList> {
    let u = config.utterances_per_speaker;
    let mut trials = Vec::new();
    for dom in 0..config.n_domains {
        let utts: Vec<usize> = (dom..u).step_by(config.n_domains).collect();
        let tag = format!("D{dom}");
        let mut n_targets = 0;
        for &s in spk {
            for (a, &i) in utts.iter().enumerate() {
                for &j in &utts[a + 1..] {
                    trials.push(Trial::new(utt_id(s, i), utt_id(s, j), Label::Target).with_domain(&tag));
                    n_targets += 1;
                }
            }
        }
        let mut seen = HashSet::new();
        while seen.len() < n_targets {
            let (a, b) = (spk[rng.random_range(0..spk.len())], spk[rng.random_range(0..spk.len())]);
            if a == b {
                continue;
            }
            let (i, j) = (utts[rng.random_range(0..utts.len())], utts[rng.random_range(0..utts.len())]);
            if seen.insert((a, i, b, j)) {
                trials.push(Trial::new(utt_id(a, i), utt_id(b, j), Label::Nontarget).with_domain(&tag));
            }
        }
    }
    TrialList::from_trials(trials)
}

impl EmbeddingWorld {
    /// `embeddings.evec`, `cohort.evec` and `<split>.trials.tsv`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_embeddings(&self.embeddings, dir.join("embeddings.evec"), EmbeddingFormat::Binary)?;
        write_embeddings(&self.cohort, dir.join("cohort.evec"), EmbeddingFormat::Binary)?;
        for (name, list) in &self.splits {
            write_trials(list, dir.join(format!("{name}.trials.tsv")))?;
        }
        Ok(())
    }
}

/// A simulation request read from a `key=value` file.
#[derive(Debug, Clone, PartialEq)]
pub enum SimConfig {
    Scores(ScoreWorldConfig),
    Embeddings(EmbeddingWorldConfig),
}

impl SimConfig {
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "embed" | "embeddings" => Ok(SimConfig::Embeddings(EmbeddingWorldConfig::default())),
            other => ScoreWorldConfig::preset(other).map(SimConfig::Scores),
        }
    }

    /// Keys (all optional except `world`):
    ///
    /// ```text
    /// world=scores            # or embeddings
    /// preset=s2               # score world base; default s1
    /// seed=11
    /// trials_per_class=5000
    /// feature_dim=8
    /// domain_separation=2
    /// duration_min=2
    /// duration_max=60
    /// domains=A,B             # replaces the preset's domains
    /// domain.A.mu_tgt=0.6     # likewise sigma_tgt, mu_non, sigma_non
    ///
    /// world=embeddings
    /// dim=16
    /// speakers=100
    /// utterances_per_speaker=8
    /// spread=0.15
    /// n_domains=2
    /// distortion_tilt=0.5
    /// distortion_noise=0.05
    /// ```
    pub fn from_text(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        let cfg = match kv.require("world")? {
            "scores" => SimConfig::Scores(score_config_from_kv(&kv)?),
            "embeddings" => SimConfig::Embeddings(embedding_config_from_kv(&kv)?),
            other => return Err(Error::config(format!("unknown world {other:?} (scores|embeddings)"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SimConfig::Scores(c) => c.validate(),
            SimConfig::Embeddings(c) => c.validate(),
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            SimConfig::Scores(c) => c.seed = seed,
            SimConfig::Embeddings(c) => c.seed = seed,
        }
    }

    /// Generates the world and writes it under `dir`.
    pub fn generate_into(&self, dir: &Path) -> Result<String> {
        match self {
            SimConfig::Scores(c) => {
                let w = gen_scores(c)?;
                w.write_to_dir(dir)?;
                Ok(w.oracle_text())
            }
            SimConfig::Embeddings(c) => {
                let w = gen_embeddings(c)?;
                w.write_to_dir(dir)?;
                let mut summary = String::new();
                for (name, list) in &w.splits {
                    let _ = writeln!(
                        summary,
                        "{name}.trials={} ({} tgt, {} imp)",
                        list.len(),
                        list.n_target(),
                        list.n_nontarget()
                    );
                }
                Ok(summary)
            }
        }
    }
}

fn duration_range_from_kv(kv: &KeyValues, default: (f64, f64)) -> Result<(f64, f64)> {
    Ok((kv.parse_or("duration_min", default.0)?, kv.parse_or("duration_max", default.1)?))
}

fn score_config_from_kv(kv: &KeyValues) -> Result<ScoreWorldConfig> {
    let base = ScoreWorldConfig::preset(kv.get("preset").unwrap_or("s1"))?;
    let mut domains = base.domains.clone();
    if let Some(list) = kv.get("domains") {
        domains = list
            .split(',')
            .map(|name| {
                let name = name.trim();
                let template = base
                    .domains
                    .iter()
                    .find(|d| d.name == name)
                    .cloned()
                    .unwrap_or_else(|| DomainParams::new(name, 1.0, 1.0, -1.0, 1.0));
                DomainParams {
                    name: name.to_string(),
                    ..template
                }
            })
            .collect();
    }
    for d in &mut domains {
        let p = format!("domain.{}.", d.name);
        d.mu_tgt = kv.parse_or(&format!("{p}mu_tgt"), d.mu_tgt)?;
        d.sigma_tgt = kv.parse_or(&format!("{p}sigma_tgt"), d.sigma_tgt)?;
        d.mu_non = kv.parse_or(&format!("{p}mu_non"), d.mu_non)?;
        d.sigma_non = kv.parse_or(&format!("{p}sigma_non"), d.sigma_non)?;
    }
    Ok(ScoreWorldConfig {
        domains,
        trials_per_class: kv.parse_or("trials_per_class", base.trials_per_class)?,
        seed: kv.parse_or("seed", base.seed)?,
        feature_dim: kv.parse_or("feature_dim", base.feature_dim)?,
        domain_separation: kv.parse_or("domain_separation", base.domain_separation)?,
        duration_range: duration_range_from_kv(kv, base.duration_range)?,
    })
}

fn embedding_config_from_kv(kv: &KeyValues) -> Result<EmbeddingWorldConfig> {
    let b = EmbeddingWorldConfig::default();
    Ok(EmbeddingWorldConfig {
        dim: kv.parse_or("dim", b.dim)?,
        n_speakers: kv.parse_or("speakers", b.n_speakers)?,
        utterances_per_speaker: kv.parse_or("utterances_per_speaker", b.utterances_per_speaker)?,
        spread: kv.parse_or("spread", b.spread)?,
        n_domains: kv.parse_or("n_domains", b.n_domains)?,
        distortion_tilt: kv.parse_or("distortion_tilt", b.distortion_tilt)?,
        distortion_noise: kv.parse_or("distortion_noise", b.distortion_noise)?,
        duration_range: duration_range_from_kv(kv, b.duration_range)?,
        seed: kv.parse_or("seed", b.seed)?,
    })
}
