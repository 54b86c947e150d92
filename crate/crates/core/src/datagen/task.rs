use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::registry::ConceptRegistry;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::rng;

/// `x = R · (s ⊙ z) + b + σ·ε` applied to a latent prototype `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainTransform {
    dim: usize,
    rotation: Vec<f64>,
    scale: Vec<f64>,
    bias: Vec<f64>,
    noise: f64,
}

/// Orthonormalizes the rows of a square matrix in place (two Gram-Schmidt passes).
fn orthonormalize_rows(m: &mut [f64], n: usize) {
    for _ in 0..2 {
        for i in 0..n {
            for j in 0..i {
                let dot: f64 = (0..n).map(|k| m[i * n + k] * m[j * n + k]).sum();
                for k in 0..n {
                    m[i * n + k] -= dot * m[j * n + k];
                }
            }
            let norm = (0..n).map(|k| m[i * n + k].powi(2)).sum::<f64>().sqrt();
            for k in 0..n {
                m[i * n + k] /= norm;
            }
        }
    }
}

impl DomainTransform {
    pub fn identity(dim: usize, noise: f64) -> Self {
        let mut rotation = vec![0.0; dim * dim];
        for i in 0..dim {
            rotation[i * dim + i] = 1.0;
        }
        Self {
            dim,
            rotation,
            scale: vec![1.0; dim],
            bias: vec![0.0; dim],
            noise,
        }
    }

    /// Random domain whose departure from the identity grows with `shift`:
    /// rotation from orthonormalizing `I + shift·G`, log-scales and bias
    /// proportional to `shift`.
    pub fn random(dim: usize, shift: f64, noise: f64, seed: u64) -> Self {
        let mut g = rng::stream(seed, &[0xD0]);
        let mut normal = || -> f64 { g.sample(StandardNormal) };
        let mut rotation: Vec<f64> = (0..dim * dim).map(|_| shift * normal()).collect();
        for i in 0..dim {
            rotation[i * dim + i] += 1.0;
        }
        orthonormalize_rows(&mut rotation, dim);
        let scale = (0..dim).map(|_| (0.3 * shift * normal()).exp()).collect();
        let bias = (0..dim).map(|_| 0.5 * shift * normal()).collect();
        Self {
            dim,
            rotation,
            scale,
            bias,
            noise,
        }
    }

    pub fn new(rotation: Vec<f64>, scale: Vec<f64>, bias: Vec<f64>, noise: f64) -> Result<Self> {
        let dim = scale.len();
        if rotation.len() != dim * dim || bias.len() != dim {
            return Err(Error::shape(
                "domain_transform",
                format!("rotation {} scale {} bias {}", rotation.len(), dim, bias.len()),
            ));
        }
        let t = Self {
            dim,
            rotation,
            scale,
            bias,
            noise,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise.is_nan() || self.noise < 0.0 {
            return Err(Error::InvalidConfig(format!("noise σ must be >= 0, got {}", self.noise)));
        }
        if self.scale.iter().any(|s| *s == 0.0 || !s.is_finite()) {
            return Err(Error::InvalidConfig("domain scaling must be finite and nonzero".into()));
        }
        let err = self.orthogonality_error();
        if err > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "rotation not orthogonal (max |RRᵀ − I| = {err:e})"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn set_noise(&mut self, noise: f64) {
        self.noise = noise;
    }

    /// Max absolute entry of `R Rᵀ − I`.
    pub fn orthogonality_error(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n)
                    .map(|k| self.rotation[i * n + k] * self.rotation[j * n + k])
                    .sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }

    /// Noiseless image of a latent vector.
    pub fn apply(&self, latent: &[f64]) -> Vec<f64> {
        let n = self.dim;
        (0..n)
            .map(|i| {
                let row = &self.rotation[i * n..(i + 1) * n];
                let acc: f64 = row.iter().zip(&self.scale).zip(latent).map(|((r, s), z)| r * (s * z)).sum();
                acc + self.bias[i]
            })
            .collect()
    }

    /// Recovers the latent vector from noiseless features.
    pub fn invert(&self, features: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let centered: Vec<f64> = features.iter().zip(&self.bias).map(|(x, b)| x - b).collect();
        (0..n)
            .map(|k| {
                let rt: f64 = (0..n).map(|i| self.rotation[i * n + k] * centered[i]).sum();
                rt / self.scale[k]
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassPriors {
    Uniform,
    /// `p_k ∝ ratio^k`.
    Geometric { ratio: f64 },
}

impl ClassPriors {
    pub fn probabilities(&self, classes: usize) -> Result<Vec<f64>> {
        match *self {
            ClassPriors::Uniform => Ok(vec![1.0 / classes as f64; classes]),
            ClassPriors::Geometric { ratio } => {
                if !(ratio > 0.0 && ratio <= 1.0) {
                    return Err(Error::InvalidConfig(format!(
                        "geometric decay ratio must be in (0, 1], got {ratio}"
                    )));
                }
                let w: Vec<f64> = (0..classes).map(|k| ratio.powi(k as i32)).collect();
                let z: f64 = w.iter().sum();
                Ok(w.into_iter().map(|v| v / z).collect())
            }
        }
    }
}

/// Per-class counts summing to `n`: largest-remainder rounding of `n·p`,
/// with every class guaranteed at least one sample.
pub fn allocate_counts(n: usize, priors: &[f64]) -> Result<Vec<usize>> {
    let c = priors.len();
    if n < c {
        return Err(Error::InsufficientSamples(format!(
            "requested {n} samples for {c} classes"
        )));
    }
    let exact: Vec<f64> = priors.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for &k in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[k] += 1;
        left -= 1;
    }
    while let Some(empty) = counts.iter().position(|&v| v == 0) {
        let donor = (0..c).max_by_key(|&k| (counts[k], std::cmp::Reverse(k))).unwrap();
        counts[donor] -= 1;
        counts[empty] += 1;
    }
    Ok(counts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTaskSpec {
    pub task_id: String,
    pub concepts: Vec<usize>,
    pub transform: DomainTransform,
    pub priors: ClassPriors,
    pub counts: SplitCounts,
}

impl SyntheticTaskSpec {
    pub fn validate(&self, registry: &ConceptRegistry) -> Result<()> {
        if self.concepts.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "task `{}` has no concepts",
                self.task_id
            )));
        }
        for &c in &self.concepts {
            registry.prototype(c)?;
        }
        let mut seen = self.concepts.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.concepts.len() {
            return Err(Error::InvalidConfig(format!(
                "task `{}` lists a concept twice",
                self.task_id
            )));
        }
        if self.transform.dim() != registry.dim() {
            return Err(Error::shape(
                "generate_task",
                format!("transform dim {} vs registry dim {}", self.transform.dim(), registry.dim()),
            ));
        }
        self.transform.validate()?;
        let p = self.priors.probabilities(self.concepts.len())?;
        let s: f64 = p.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("priors sum to {s}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub local_label: usize,
    pub concept: usize,
    pub features: Vec<f64>,
}

/// One task's splits plus its local-label → global-concept map.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub task_id: String,
    pub concepts: Vec<usize>,
    pub dim: usize,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl TaskDataset {
    pub fn classes(&self) -> usize {
        self.concepts.len()
    }

    pub fn split(&self, split: Split) -> &[Sample] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn split_mut(&mut self, split: Split) -> &mut Vec<Sample> {
        match split {
            Split::Train => &mut self.train,
            Split::Val => &mut self.val,
            Split::Test => &mut self.test,
        }
    }

    pub fn local_label_of(&self, concept: usize) -> Option<usize> {
        self.concepts.iter().position(|&c| c == concept)
    }

    /// Checks sample consistency with the concept map.
    pub fn validate(&self) -> Result<()> {
        for split in Split::ALL {
            for s in self.split(split) {
                if s.features.len() != self.dim {
                    return Err(Error::shape(
                        "task_dataset",
                        format!("feature len {} vs dim {}", s.features.len(), self.dim),
                    ));
                }
                if self.concepts.get(s.local_label) != Some(&s.concept) {
                    return Err(Error::InvalidConfig(format!(
                        "task `{}`: local label {} inconsistent with concept {}",
                        self.task_id, s.local_label, s.concept
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn features_of(samples: &[Sample]) -> Tensor {
    let dim = samples.first().map_or(0, |s| s.features.len());
    let mut data = Vec::with_capacity(samples.len() * dim);
    for s in samples {
        data.extend_from_slice(&s.features);
    }
    Tensor::matrix(samples.len(), dim, data).expect("consistent feature dims")
}

pub fn labels_of(samples: &[Sample]) -> Vec<usize> {
    samples.iter().map(|s| s.local_label).collect()
}

fn generate_split(
    registry: &ConceptRegistry,
    spec: &SyntheticTaskSpec,
    n: usize,
    seed: u64,
    split: Split,
) -> Result<Vec<Sample>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let priors = spec.priors.probabilities(spec.concepts.len())?;
    let counts = allocate_counts(n, &priors)?;
    let mut labels: Vec<usize> = counts
        .iter()
        .enumerate()
        .flat_map(|(k, &c)| std::iter::repeat_n(k, c))
        .collect();
    let mut g = rng::stream(seed, &[split as u64 + 1]);
    labels.shuffle(&mut g);
    let sigma = spec.transform.noise();
    labels
        .into_iter()
        .map(|local| {
            let concept = spec.concepts[local];
            let mut features = spec.transform.apply(registry.prototype(concept)?);
            if sigma > 0.0 {
                for f in &mut features {
                    *f += sigma * g.sample::<f64, _>(StandardNormal);
                }
            }
            Ok(Sample {
                local_label: local,
                concept,
                features,
            })
        })
        .collect()
}

/// Draws train/val/test splits for one synthetic task.
///
/// Class counts per split follow the priors exactly up to rounding; each split
/// is generated from an independent stream, so splits never share a sample.
pub fn generate_task(
    registry: &ConceptRegistry,
    spec: &SyntheticTaskSpec,
    seed: u64,
) -> Result<TaskDataset> {
    spec.validate(registry)?;
    let c = spec.concepts.len();
    let counts = spec.counts;
    if counts.train + counts.val + counts.test == 0 {
        return Err(Error::InsufficientSamples(format!(
            "task `{}` requests no samples",
            spec.task_id
        )));
    }
    for (name, n) in [
        ("train", counts.train),
        ("val", counts.val),
        ("test", counts.test),
    ] {
        if n != 0 && n < c {
            return Err(Error::InsufficientSamples(format!(
                "task `{}`: {} count {} < {} classes",
                spec.task_id, name, n, c
            )));
        }
    }
    Ok(TaskDataset {
        task_id: spec.task_id.clone(),
        concepts: spec.concepts.clone(),
        dim: registry.dim(),
        train: generate_split(registry, spec, spec.counts.train, seed, Split::Train)?,
        val: generate_split(registry, spec, spec.counts.val, seed, Split::Val)?,
        test: generate_split(registry, spec, spec.counts.test, seed, Split::Test)?,
    })
}

fn class_indices(samples: &[Sample], classes: usize) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); classes];
    for (i, s) in samples.iter().enumerate() {
        by_class[s.local_label].push(i);
    }
    by_class
}

/// Nested class-stratified subsets: each class keeps `round(f · n_c)` samples
/// taken as a prefix of one seeded per-class permutation, so smaller
/// fractions are subsets of larger ones. Original sample order is preserved.
pub fn subsample_fractions(
    samples: &[Sample],
    classes: usize,
    fractions: &[f64],
    seed: u64,
) -> Result<Vec<Vec<Sample>>> {
    let mut perms = class_indices(samples, classes);
    for (k, idx) in perms.iter_mut().enumerate() {
        idx.shuffle(&mut rng::stream(seed, &[k as u64]));
    }
    fractions
        .iter()
        .map(|&f| {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidConfig(format!("fraction {f} outside (0, 1]")));
            }
            let mut keep = Vec::new();
            for (k, idx) in perms.iter().enumerate() {
                let m = (f * idx.len() as f64).round() as usize;
                if m == 0 {
                    return Err(Error::EmptyClass { class: k, fraction: f });
                }
                keep.extend_from_slice(&idx[..m]);
            }
            keep.sort_unstable();
            Ok(keep.into_iter().map(|i| samples[i].clone()).collect())
        })
        .collect()
}

/// Exactly `k` samples per class drawn without replacement.
pub fn draw_k_per_class(
    samples: &[Sample],
    classes: usize,
    k: usize,
    seed: u64,
) -> Result<Vec<Sample>> {
    if k == 0 {
        return Err(Error::InvalidConfig("k must be >= 1".into()));
    }
    let by_class = class_indices(samples, classes);
    let mut g = rng::seeded(seed);
    let mut keep = Vec::with_capacity(k * classes);
    for (c, idx) in by_class.iter().enumerate() {
        if idx.len() < k {
            return Err(Error::InsufficientSamples(format!(
                "class {c} has {} samples, need {k}",
                idx.len()
            )));
        }
        let picked = rand::seq::index::sample(&mut g, idx.len(), k);
        let mut picked: Vec<usize> = picked.into_iter().map(|j| idx[j]).collect();
        picked.sort_unstable();
        keep.extend(picked);
    }
    Ok(keep.into_iter().map(|i| samples[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry() -> ConceptRegistry {
        ConceptRegistry::generate(6, 8, 1.0, 1.0, 1).unwrap()
    }

    fn spec(concepts: Vec<usize>, transform: DomainTransform, priors: ClassPriors) -> SyntheticTaskSpec {
        SyntheticTaskSpec {
            task_id: "t".into(),
            concepts,
            transform,
            priors,
            counts: SplitCounts {
                train: 40,
                val: 10,
                test: 10,
            },
        }
    }

    #[test]
    fn noiseless_identity_reproduces_prototype() {
        let reg = registry();
        let ds = generate_task(
            &reg,
            &spec(vec![3], DomainTransform::identity(8, 0.0), ClassPriors::Uniform),
            7,
        )
        .unwrap();
        for s in ds.train.iter().chain(&ds.test) {
            assert_eq!(s.features.as_slice(), reg.prototype(3).unwrap());
        }
    }

    #[test]
    fn priors_examples() {
        let p = ClassPriors::Geometric { ratio: 1.0 }.probabilities(4).unwrap();
        assert_eq!(p, vec![0.25; 4]);
        let p = ClassPriors::Geometric { ratio: 0.5 }.probabilities(3).unwrap();
        for (a, b) in p.iter().zip([4.0 / 7.0, 2.0 / 7.0, 1.0 / 7.0]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn long_tail_head_count() {
        let p = ClassPriors::Geometric { ratio: 0.8 }.probabilities(22).unwrap();
        let counts = allocate_counts(2000, &p).unwrap();
        let expected = 2000.0 * 0.2 / (1.0 - 0.8f64.powi(22));
        assert!((counts[0] as f64 - expected).abs() < 1.0, "{} vs {expected}", counts[0]);
        assert_eq!(counts.iter().sum::<usize>(), 2000);
        assert!(counts.iter().all(|&c| c >= 1));
    }

    #[test]
    fn errors() {
        let reg = registry();
        let mut s = spec(vec![0, 1, 2], DomainTransform::identity(8, 0.1), ClassPriors::Uniform);
        s.counts.train = 2;
        assert!(matches!(
            generate_task(&reg, &s, 1),
            Err(Error::InsufficientSamples(_))
        ));
        let s = spec(vec![0, 99], DomainTransform::identity(8, 0.1), ClassPriors::Uniform);
        assert!(matches!(generate_task(&reg, &s, 1), Err(Error::UnknownConcept(99))));
    }

    #[test]
    fn transform_is_invertible() {
        let reg = registry();
        let t = DomainTransform::random(8, 0.8, 0.0, 4);
        assert!(t.orthogonality_error() < 1e-12);
        let z = reg.prototype(2).unwrap();
        let back = t.invert(&t.apply(z));
        for (a, b) in back.iter().zip(z) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    fn balanced(n_per: usize, classes: usize) -> Vec<Sample> {
        (0..n_per * classes)
            .map(|i| Sample {
                local_label: i % classes,
                concept: i % classes,
                features: vec![i as f64],
            })
            .collect()
    }

    #[test]
    fn subsample_examples() {
        let data = balanced(100, 4);
        let subs = subsample_fractions(&data, 4, &[1.0, 0.5, 0.25], 3).unwrap();
        assert_eq!(subs[0], data);
        assert_eq!(subs[1].len(), 200);
        assert_eq!(subs[2].len(), 100);
        for c in 0..4 {
            assert_eq!(subs[1].iter().filter(|s| s.local_label == c).count(), 50);
            assert_eq!(subs[2].iter().filter(|s| s.local_label == c).count(), 25);
        }
        assert!(subs[2].iter().all(|s| subs[1].contains(s)));
        assert_eq!(subs, subsample_fractions(&data, 4, &[1.0, 0.5, 0.25], 3).unwrap());
    }

    #[test]
    fn subsample_empty_class_names_class() {
        let mut data = balanced(100, 3);
        data.retain(|s| s.local_label != 2 || s.features[0] < 6.0);
        let err = subsample_fractions(&data, 3, &[0.05], 1).unwrap_err();
        assert!(matches!(err, Error::EmptyClass { class: 2, .. }));
    }

    #[test]
    fn k_per_class_draw() {
        let data = balanced(5, 3);
        let one = draw_k_per_class(&data, 3, 1, 9).unwrap();
        assert_eq!(one.len(), 3);
        for c in 0..3 {
            assert_eq!(one.iter().filter(|s| s.local_label == c).count(), 1);
        }
        assert!(draw_k_per_class(&data, 3, 6, 9).is_err());
        let all = draw_k_per_class(&data, 3, 5, 1).unwrap();
        let all2 = draw_k_per_class(&data, 3, 5, 2).unwrap();
        assert_eq!(all, all2);
    }
}
