//! Seeded synthetic cohorts with planted latent structure.
//!
//! Every patient has a standard-normal latent `z ∈ R^D`. Modality `i` mixes it
//! with a private standard-normal latent `u_i`, `v = √s·z + √(1−s)·u_i`, so a
//! signal fraction `s` is the share of `v`'s variance that comes from `z`. The
//! observation is `A_i v / √D + σ ε` with a fixed random map `A_i`. Labels are
//! thresholded projections of `z` plus an unobserved noise latent, so a
//! modality's label information grows with its signal fraction.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Rng, Tensor};
use crate::encoders::ModalityKind;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: &str = "ovo-cohort v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub name: String,
    pub kind: ModalityKind,
    /// Feature width; per time step for sequences.
    pub obs_dim: usize,
    #[serde(default)]
    pub seq_len: usize,
    /// Share of the mixed latent's variance drawn from the shared `z`.
    pub signal_fraction: f64,
    pub noise_sigma: f64,
    pub mixing_seed: u64,
}

impl ModalitySpec {
    pub fn static_vector(name: &str, obs_dim: usize, signal_fraction: f64, mixing_seed: u64) -> Self {
        Self {
            name: name.into(),
            kind: ModalityKind::StaticVector,
            obs_dim,
            seq_len: 0,
            signal_fraction,
            noise_sigma: 0.5,
            mixing_seed,
        }
    }

    pub fn sequence(name: &str, seq_len: usize, obs_dim: usize, signal_fraction: f64, mixing_seed: u64) -> Self {
        Self {
            kind: ModalityKind::Sequence,
            seq_len,
            ..Self::static_vector(name, obs_dim, signal_fraction, mixing_seed)
        }
    }

    /// Number of values one patient contributes.
    pub fn flat_width(&self) -> usize {
        match self.kind {
            ModalityKind::StaticVector => self.obs_dim,
            ModalityKind::Sequence => self.obs_dim * self.seq_len,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupAxis {
    pub name: String,
    pub levels: Vec<String>,
    /// Extra label-noise scale per level. A larger value makes that level's
    /// labels harder to predict, planting a separability gap between levels.
    #[serde(default)]
    pub noise_offsets: Option<Vec<f64>>,
}

impl GroupAxis {
    pub fn new(name: &str, levels: &[&str]) -> Self {
        Self {
            name: name.into(),
            levels: levels.iter().map(|s| s.to_string()).collect(),
            noise_offsets: None,
        }
    }
}

pub fn default_group_axes() -> Vec<GroupAxis> {
    vec![
        GroupAxis::new("sex", &["female", "male"]),
        GroupAxis::new("ethnicity", &["asian", "black", "hispanic", "white", "other"]),
        GroupAxis::new(
            "age_band",
            &["18-29", "30-39", "40-49", "50-59", "60-69", "70-79", "80-89", "90+"],
        ),
    ]
}

/// Five modalities shaped like a clinical roster: two text-feature vectors,
/// an image-feature vector, a low-dimensional demographics vector and a
/// time series. Signal fractions are taken in that order.
pub fn default_modalities(signal_fractions: [f64; 5]) -> Vec<ModalitySpec> {
    let [a, b, c, d, e] = signal_fractions;
    vec![
        ModalitySpec::static_vector("discharge", 32, a, 11),
        ModalitySpec::static_vector("radiology", 32, b, 12),
        ModalitySpec::static_vector("image", 32, c, 13),
        ModalitySpec::static_vector("demographics", 8, d, 14),
        ModalitySpec::sequence("timeseries", 6, 8, e, 15),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortSpec {
    pub num_patients: usize,
    pub latent_dim: usize,
    pub modalities: Vec<ModalitySpec>,
    /// Fraction of positive binary labels, strictly inside (0, 1).
    pub binary_label_sparsity: f64,
    pub num_multilabels: usize,
    pub group_axes: Vec<GroupAxis>,
    /// Scale of the unobserved latent added to every label projection.
    pub label_noise: f64,
    pub seed: u64,
}

impl CohortSpec {
    pub fn new(num_patients: usize, modalities: Vec<ModalitySpec>, seed: u64) -> Self {
        Self {
            num_patients,
            latent_dim: 8,
            modalities,
            binary_label_sparsity: 0.3,
            num_multilabels: 25,
            group_axes: default_group_axes(),
            label_noise: 0.5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Contract(m));
        if self.num_patients == 0 {
            return fail("cohort needs at least one patient".into());
        }
        if self.latent_dim == 0 {
            return fail("latent_dim must be at least 1".into());
        }
        if self.modalities.len() < 2 {
            return fail(format!("cohort needs at least two modalities, got {}", self.modalities.len()));
        }
        if !(self.binary_label_sparsity > 0.0 && self.binary_label_sparsity < 1.0) {
            return fail(format!(
                "binary_label_sparsity {} must lie strictly between 0 and 1",
                self.binary_label_sparsity
            ));
        }
        if !(self.label_noise >= 0.0) {
            return fail(format!("label_noise {} must be nonnegative", self.label_noise));
        }
        let mut names = HashSet::new();
        for m in &self.modalities {
            if !names.insert(m.name.as_str()) {
                return fail(format!("duplicate modality {}", m.name));
            }
            if !(0.0..=1.0).contains(&m.signal_fraction) {
                return fail(format!("{}: signal_fraction {} outside [0, 1]", m.name, m.signal_fraction));
            }
            if !(m.noise_sigma >= 0.0) {
                return fail(format!("{}: noise_sigma {} must be nonnegative", m.name, m.noise_sigma));
            }
            if m.obs_dim == 0 || (m.kind == ModalityKind::Sequence && m.seq_len == 0) {
                return fail(format!("{}: empty observation shape", m.name));
            }
        }
        for axis in &self.group_axes {
            if axis.levels.is_empty() {
                return fail(format!("group axis {} has no levels", axis.name));
            }
            if let Some(off) = &axis.noise_offsets {
                if off.len() != axis.levels.len() || off.iter().any(|o| !(*o >= 0.0)) {
                    return fail(format!("group axis {}: bad noise offsets {off:?}", axis.name));
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn modality(&self, name: &str) -> Option<&ModalitySpec> {
        self.modalities.iter().find(|m| m.name == name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModalityData {
    pub name: String,
    pub kind: ModalityKind,
    /// `[N, d]` for static vectors, `[N, T, d]` for sequences.
    pub values: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupTags {
    pub axis: String,
    pub levels: Vec<String>,
    /// Level index per patient.
    pub tags: Vec<usize>,
}

impl GroupTags {
    pub fn labels(&self) -> Vec<String> {
        self.tags.iter().map(|&t| self.levels[t].clone()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCohort {
    pub spec: CohortSpec,
    pub patient_ids: Vec<String>,
    pub modalities: Vec<ModalityData>,
    pub binary: Vec<bool>,
    /// Row-major `[N, L]`.
    pub multilabels: Vec<bool>,
    pub groups: Vec<GroupTags>,
    /// `[N, D]`; for oracles only, never a model input.
    pub latents: Tensor,
}

// independent ChaCha streams per component
const STREAM_LATENT: u64 = 1;
const STREAM_LABELS: u64 = 2;
const STREAM_GROUPS: u64 = 3;
const STREAM_MODALITY: u64 = 100;

fn stream(seed: u64, id: u64) -> Rng {
    let mut r = Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

fn normals(r: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(r)).collect()
}

fn unit_vector(r: &mut Rng, d: usize) -> Vec<f64> {
    let v = normals(r, d);
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    v.into_iter().map(|x| x / norm).collect()
}

/// Labels the `round(rate·N)` highest scores positive (at least one, at most N − 1
/// when N > 1); ties are broken by patient index.
fn threshold_by_rate(scores: &[f64], rate: f64) -> Vec<bool> {
    let n = scores.len();
    let mut k = (rate * n as f64).round() as usize;
    if n > 1 {
        k = k.clamp(1, n - 1);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut out = vec![false; n];
    for &i in &order[..k.min(n)] {
        out[i] = true;
    }
    out
}

pub fn generate(spec: &CohortSpec) -> Result<SyntheticCohort> {
    spec.validate()?;
    let n = spec.num_patients;
    let d = spec.latent_dim;
    let latents = Tensor::matrix(n, d, normals(&mut stream(spec.seed, STREAM_LATENT), n * d))?;

    let mut group_rng = stream(spec.seed, STREAM_GROUPS);
    let groups: Vec<GroupTags> = spec
        .group_axes
        .iter()
        .map(|axis| GroupTags {
            axis: axis.name.clone(),
            levels: axis.levels.clone(),
            tags: (0..n).map(|_| group_rng.random_range(0..axis.levels.len())).collect(),
        })
        .collect();
    let mut noise_scale = vec![spec.label_noise; n];
    for (axis, tags) in spec.group_axes.iter().zip(&groups) {
        if let Some(off) = &axis.noise_offsets {
            for (s, &t) in noise_scale.iter_mut().zip(&tags.tags) {
                *s += off[t];
            }
        }
    }

    let mut label_rng = stream(spec.seed, STREAM_LABELS);
    let project = |w: &[f64], noise: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|r| {
                let s: f64 = latents.row(r).iter().zip(w).map(|(z, w)| z * w).sum();
                s + noise_scale[r] * noise[r]
            })
            .collect()
    };
    let w = unit_vector(&mut label_rng, d);
    let noise = normals(&mut label_rng, n);
    let binary = threshold_by_rate(&project(&w, &noise), spec.binary_label_sparsity);

    let l = spec.num_multilabels;
    let mut columns = Vec::with_capacity(l);
    for _ in 0..l {
        let prevalence = label_rng.random_range(0.1..0.5);
        let w = unit_vector(&mut label_rng, d);
        let noise = normals(&mut label_rng, n);
        columns.push(threshold_by_rate(&project(&w, &noise), prevalence));
    }
    let mut multilabels = vec![false; n * l];
    for (c, col) in columns.iter().enumerate() {
        for r in 0..n {
            multilabels[r * l + c] = col[r];
        }
    }

    let mut modalities = Vec::with_capacity(spec.modalities.len());
    for (i, m) in spec.modalities.iter().enumerate() {
        let width = m.flat_width();
        let mixing = normals(&mut Rng::seed_from_u64(m.mixing_seed), width * d);
        let scale = 1.0 / (d as f64).sqrt();
        let mut draws = stream(spec.seed, STREAM_MODALITY + i as u64);
        let (shared, private) = (m.signal_fraction.sqrt(), (1.0 - m.signal_fraction).sqrt());
        let mut values = Vec::with_capacity(n * width);
        let mut v = vec![0.0; d];
        for r in 0..n {
            for (x, z) in v.iter_mut().zip(latents.row(r)) {
                let u: f64 = StandardNormal.sample(&mut draws);
                *x = shared * z + private * u;
            }
            for o in 0..width {
                let row = &mixing[o * d..(o + 1) * d];
                let signal: f64 = row.iter().zip(&v).map(|(a, x)| a * x).sum::<f64>() * scale;
                let eps: f64 = StandardNormal.sample(&mut draws);
                values.push(signal + m.noise_sigma * eps);
            }
        }
        let shape = match m.kind {
            ModalityKind::StaticVector => vec![n, m.obs_dim],
            ModalityKind::Sequence => vec![n, m.seq_len, m.obs_dim],
        };
        modalities.push(ModalityData {
            name: m.name.clone(),
            kind: m.kind,
            values: Tensor::new(shape, values)?,
        });
    }

    Ok(SyntheticCohort {
        spec: spec.clone(),
        patient_ids: (0..n).map(|i| format!("p{i:05}")).collect(),
        modalities,
        binary,
        multilabels,
        groups,
        latents,
    })
}

impl SyntheticCohort {
    pub fn len(&self) -> usize {
        self.patient_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patient_ids.is_empty()
    }

    pub fn num_multilabels(&self) -> usize {
        self.spec.num_multilabels
    }

    pub fn modality(&self, name: &str) -> Option<&ModalityData> {
        self.modalities.iter().find(|m| m.name == name)
    }

    pub fn group(&self, axis: &str) -> Option<&GroupTags> {
        self.groups.iter().find(|g| g.axis == axis)
    }

    pub fn positive_rate(&self) -> f64 {
        self.binary.iter().filter(|&&b| b).count() as f64 / self.len() as f64
    }

    /// Sub-cohort of the given patients, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<SyntheticCohort> {
        let l = self.spec.num_multilabels;
        let modalities = self
            .modalities
            .iter()
            .map(|m| {
                Ok(ModalityData {
                    name: m.name.clone(),
                    kind: m.kind,
                    values: m.values.select_rows(indices)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut spec = self.spec.clone();
        spec.num_patients = indices.len();
        Ok(SyntheticCohort {
            spec,
            patient_ids: indices.iter().map(|&i| self.patient_ids[i].clone()).collect(),
            modalities,
            binary: indices.iter().map(|&i| self.binary[i]).collect(),
            multilabels: indices
                .iter()
                .flat_map(|&i| self.multilabels[i * l..(i + 1) * l].iter().copied())
                .collect(),
            groups: self
                .groups
                .iter()
                .map(|g| GroupTags {
                    axis: g.axis.clone(),
                    levels: g.levels.clone(),
                    tags: indices.iter().map(|&i| g.tags[i]).collect(),
                })
                .collect(),
            latents: self.latents.select_rows(indices)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Patient-level partition stratified on the binary label. Each part's
/// indices are sorted ascending.
pub fn split(cohort: &SyntheticCohort, fractions: (f64, f64, f64), seed: u64) -> Result<Split> {
    let all: Vec<usize> = (0..cohort.len()).collect();
    split_indices(&cohort.binary, &all, fractions, seed)
}

fn split_indices(labels: &[bool], indices: &[usize], fractions: (f64, f64, f64), seed: u64) -> Result<Split> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !(*f >= 0.0)) || ((ft + fv + fs) - 1.0).abs() > 1e-9 {
        return Err(Error::Contract(format!("split fractions {fractions:?} must be nonnegative and sum to 1")));
    }
    let mut r = stream(seed, 0);
    let mut out = Split {
        train: vec![],
        val: vec![],
        test: vec![],
    };
    for class in [false, true] {
        let mut members: Vec<usize> = indices.iter().copied().filter(|&i| labels[i] == class).collect();
        // Fisher–Yates with the crate RNG keeps this independent of rand's slice helpers
        for i in (1..members.len()).rev() {
            let j = r.random_range(0..=i);
            members.swap(i, j);
        }
        let c = members.len() as f64;
        let n_train = ((ft * c).round() as usize).min(members.len());
        let n_val = ((fv * c).round() as usize).min(members.len() - n_train);
        out.train.extend(&members[..n_train]);
        out.val.extend(&members[n_train..n_train + n_val]);
        out.test.extend(&members[n_train + n_val..]);
    }
    for (name, part, frac) in [("train", &out.train, ft), ("val", &out.val, fv), ("test", &out.test, fs)] {
        if frac > 0.0 && part.is_empty() {
            return Err(Error::Contract(format!(
                "{name} fraction {frac} leaves no patients out of {}",
                indices.len()
            )));
        }
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

/// Contrastive pool plus the downstream split of the remainder.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolSplit {
    pub pretrain: Vec<usize>,
    pub finetune: Split,
}

pub const DEFAULT_POOL_FRACTION: f64 = 0.5;

/// Sets aside a stratified `pool_fraction` of patients for contrastive
/// pre-training and splits the rest 80/10/10 for fine-tuning.
pub fn pretrain_pool(cohort: &SyntheticCohort, pool_fraction: f64, seed: u64) -> Result<ProtocolSplit> {
    if !(pool_fraction > 0.0 && pool_fraction < 1.0) {
        return Err(Error::Contract(format!("pool fraction {pool_fraction} must lie in (0, 1)")));
    }
    let all: Vec<usize> = (0..cohort.len()).collect();
    let outer = split_indices(&cohort.binary, &all, (pool_fraction, 1.0 - pool_fraction, 0.0), seed)?;
    let finetune = split_indices(&cohort.binary, &outer.val, (0.8, 0.1, 0.1), seed.wrapping_add(1))?;
    Ok(ProtocolSplit {
        pretrain: outer.train,
        finetune,
    })
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn bits(flags: &[bool]) -> String {
    flags.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

/// Columnar text encoding; see `docs/cohort-format.md`. Floats use Rust's
/// shortest round-trip representation, so parsing restores every value bitwise.
pub fn to_text(cohort: &SyntheticCohort) -> String {
    let n = cohort.len();
    let l = cohort.spec.num_multilabels;
    let mut s = String::new();
    writeln!(s, "{FORMAT_VERSION}").unwrap();
    writeln!(s, "spec_hash {}", cohort.spec.hash()).unwrap();
    writeln!(s, "seed {}", cohort.spec.seed).unwrap();
    writeln!(s, "spec {}", serde_json::to_string(&cohort.spec).expect("spec serializes")).unwrap();
    writeln!(s, "patients {n}").unwrap();
    writeln!(s, "ids {}", cohort.patient_ids.join(" ")).unwrap();
    for m in &cohort.modalities {
        writeln!(s, "modality {} {}", m.name, join(m.values.shape())).unwrap();
        for r in 0..n {
            writeln!(s, "{}", join(m.values.row(r))).unwrap();
        }
    }
    writeln!(s, "binary {}", bits(&cohort.binary)).unwrap();
    writeln!(s, "multilabel {l}").unwrap();
    if l > 0 {
        for r in 0..n {
            writeln!(s, "{}", bits(&cohort.multilabels[r * l..(r + 1) * l])).unwrap();
        }
    }
    for g in &cohort.groups {
        writeln!(s, "group {} {}", g.axis, g.levels.join(",")).unwrap();
        writeln!(s, "{}", join(&g.tags)).unwrap();
    }
    writeln!(s, "latent {}", cohort.spec.latent_dim).unwrap();
    for r in 0..n {
        writeln!(s, "{}", join(cohort.latents.row(r))).unwrap();
    }
    s.push_str("end\n");
    s
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::Parse("unexpected end of cohort file".into()))
    }

    /// Next line, which must start with `key`; returns the rest.
    fn keyed(&mut self, key: &str) -> Result<(usize, &'a str)> {
        let (no, line) = self.next()?;
        match line.strip_prefix(key) {
            Some(rest) if rest.is_empty() || rest.starts_with(' ') => Ok((no, rest.trim_start())),
            _ => Err(Error::Parse(format!("line {no}: expected `{key}`, found `{}`", truncate(line)))),
        }
    }
}

fn truncate(s: &str) -> &str {
    &s[..s.char_indices().nth(40).map_or(s.len(), |(i, _)| i)]
}

fn parse_num<T: std::str::FromStr>(no: usize, tok: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::Parse(format!("line {no}: cannot parse `{}`", truncate(tok))))
}

fn parse_row<T: std::str::FromStr>(no: usize, line: &str, expect: usize) -> Result<Vec<T>> {
    let row = line.split_whitespace().map(|t| parse_num(no, t)).collect::<Result<Vec<T>>>()?;
    if row.len() != expect {
        return Err(Error::Parse(format!("line {no}: expected {expect} values, found {}", row.len())));
    }
    Ok(row)
}

fn parse_bits(no: usize, line: &str, expect: usize) -> Result<Vec<bool>> {
    let out = line
        .chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            _ => Err(Error::Parse(format!("line {no}: bad flag `{c}`"))),
        })
        .collect::<Result<Vec<_>>>()?;
    if out.len() != expect {
        return Err(Error::Parse(format!("line {no}: expected {expect} flags, found {}", out.len())));
    }
    Ok(out)
}

pub fn from_text(text: &str) -> Result<SyntheticCohort> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let (no, header) = lines.next()?;
    if header != FORMAT_VERSION {
        return Err(Error::Parse(format!("line {no}: unsupported header `{}`", truncate(header))));
    }
    let (_, hash) = lines.keyed("spec_hash")?;
    let (no, seed) = lines.keyed("seed")?;
    let seed: u64 = parse_num(no, seed)?;
    let (no, json) = lines.keyed("spec")?;
    let spec: CohortSpec =
        serde_json::from_str(json).map_err(|e| Error::Parse(format!("line {no}: spec: {e}")))?;
    if spec.hash() != hash || spec.seed != seed {
        return Err(Error::Parse("spec hash or seed does not match the embedded spec".into()));
    }
    spec.validate()?;
    let (no, n) = lines.keyed("patients")?;
    let n: usize = parse_num(no, n)?;
    let (no, ids) = lines.keyed("ids")?;
    let patient_ids: Vec<String> = ids.split_whitespace().map(String::from).collect();
    if patient_ids.len() != n {
        return Err(Error::Parse(format!("line {no}: expected {n} ids")));
    }

    let mut modalities = Vec::new();
    for m in &spec.modalities {
        let (no, rest) = lines.keyed("modality")?;
        let mut toks = rest.split_whitespace();
        let name = toks.next().unwrap_or_default();
        if name != m.name {
            return Err(Error::Parse(format!("line {no}: expected modality {}, found `{name}`", m.name)));
        }
        let shape = toks.map(|t| parse_num(no, t)).collect::<Result<Vec<usize>>>()?;
        let width: usize = shape.iter().skip(1).product();
        let mut values = Vec::with_capacity(n * width);
        for _ in 0..n {
            let (no, line) = lines.next()?;
            values.extend(parse_row::<f64>(no, line, width)?);
        }
        modalities.push(ModalityData {
            name: m.name.clone(),
            kind: m.kind,
            values: Tensor::new(shape, values)?,
        });
    }
    let (no, flags) = lines.keyed("binary")?;
    let binary = parse_bits(no, flags, n)?;
    let (no, l) = lines.keyed("multilabel")?;
    let l: usize = parse_num(no, l)?;
    let mut multilabels = Vec::with_capacity(n * l);
    if l > 0 {
        for _ in 0..n {
            let (no, line) = lines.next()?;
            multilabels.extend(parse_bits(no, line, l)?);
        }
    }
    let mut groups = Vec::new();
    for axis in &spec.group_axes {
        let (no, rest) = lines.keyed("group")?;
        let (name, levels) = rest.split_once(' ').unwrap_or((rest, ""));
        if name != axis.name {
            return Err(Error::Parse(format!("line {no}: expected group {}", axis.name)));
        }
        let levels: Vec<String> = levels.split(',').map(String::from).collect();
        let (no, line) = lines.next()?;
        let tags: Vec<usize> = parse_row(no, line, n)?;
        if tags.iter().any(|&t| t >= levels.len()) {
            return Err(Error::Parse(format!("line {no}: group tag out of range")));
        }
        groups.push(GroupTags {
            axis: name.to_string(),
            levels,
            tags,
        });
    }
    let (no, d) = lines.keyed("latent")?;
    let d: usize = parse_num(no, d)?;
    let mut latent = Vec::with_capacity(n * d);
    for _ in 0..n {
        let (no, line) = lines.next()?;
        latent.extend(parse_row::<f64>(no, line, d)?);
    }
    lines.keyed("end")?;
    Ok(SyntheticCohort {
        spec,
        patient_ids,
        modalities,
        binary,
        multilabels,
        groups,
        latents: Tensor::matrix(n, d, latent)?,
    })
}

pub fn save(cohort: &SyntheticCohort, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, to_text(cohort)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<SyntheticCohort> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text)
}

/// Per-label positive counts, handy for class weighting and reports.
pub fn label_counts(cohort: &SyntheticCohort) -> BTreeMap<String, usize> {
    let l = cohort.spec.num_multilabels;
    let mut out = BTreeMap::new();
    out.insert("binary".to_string(), cohort.binary.iter().filter(|&&b| b).count());
    for c in 0..l {
        let k = (0..cohort.len()).filter(|&r| cohort.multilabels[r * l + c]).count();
        out.insert(format!("label_{c:02}"), k);
    }
    out
}
