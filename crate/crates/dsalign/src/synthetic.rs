//! Planted-permutation fixtures.
//!
//! Source vectors are i.i.d. Gaussian rows, unit-normalised. Target word
//! `perm[i]` gets source row `i` rotated by a random orthogonal matrix, plus
//! optional Gaussian noise, re-normalised. With zero noise the target
//! covariance is exactly the permuted source covariance, so the planted
//! permutation is a global minimiser of the covariance-matching objective.

use dsalign_core::embedding::{EmbeddingMatrix, Normalization};
use dsalign_core::linalg::{svd_square, Mat};
use dsalign_core::rng::{substream, Substream};
use dsalign_core::{BilingualDictionary, Error, Result};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal, StandardNormal};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Increasing prefix sizes the permutation must map onto themselves, so a
    /// frequency-ordered prefix of the source aligns to the same prefix of the
    /// target. Empty means a fully random permutation.
    pub frequency_blocks: Vec<usize>,
}

impl SyntheticSpec {
    pub fn new(n: usize, d: usize, noise_sigma: f64, seed: u64) -> Self {
        SyntheticSpec {
            n,
            d,
            noise_sigma,
            seed,
            frequency_blocks: Vec::new(),
        }
    }

    pub fn with_blocks(mut self, blocks: Vec<usize>) -> Self {
        self.frequency_blocks = blocks;
        self
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticFixture {
    pub source: EmbeddingMatrix,
    pub target: EmbeddingMatrix,
    /// Source word `i` translates to target word `perm[i]`.
    pub perm: Vec<usize>,
    pub rotation: Mat,
}

impl SyntheticFixture {
    pub fn dictionary(&self) -> BilingualDictionary {
        BilingualDictionary::from_pairs(
            self.perm
                .iter()
                .enumerate()
                .map(|(i, &j)| (self.source.vocab()[i].clone(), self.target.vocab()[j].clone())),
        )
        .expect("fixture has at least four words")
    }

    /// The planted alignment as a 0/1 matrix.
    pub fn planted_matrix(&self) -> Mat {
        let n = self.perm.len();
        let mut m = Mat::zeros(n, n);
        for (i, &j) in self.perm.iter().enumerate() {
            m[(i, j)] = 1.0;
        }
        m
    }
}

pub fn source_word(i: usize) -> String {
    format!("src{i:05}")
}

pub fn target_word(j: usize) -> String {
    format!("tgt{j:05}")
}

/// Random orthogonal matrix: the orthogonal factor of a Gaussian matrix.
pub fn random_orthogonal(d: usize, rng: &mut impl rand::Rng) -> Mat {
    let g = Mat::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let svd = svd_square(&g);
    svd.u.matmul_nt(&svd.v).expect("square factors")
}

fn planted_permutation(n: usize, blocks: &[usize], rng: &mut impl rand::Rng) -> Result<Vec<usize>> {
    let mut bounds: Vec<usize> = blocks.iter().copied().filter(|&b| b < n).collect();
    if bounds.windows(2).any(|w| w[1] <= w[0]) || bounds.first() == Some(&0) {
        return Err(Error::InvalidArgument(format!("frequency blocks must increase: {blocks:?}")));
    }
    bounds.push(n);
    let mut perm = Vec::with_capacity(n);
    let mut start = 0;
    for end in bounds {
        let mut block: Vec<usize> = (start..end).collect();
        block.shuffle(rng);
        perm.extend(block);
        start = end;
    }
    Ok(perm)
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticFixture> {
    let SyntheticSpec { n, d, noise_sigma, seed, .. } = *spec;
    if n < 4 || d < 2 {
        return Err(Error::InvalidArgument(format!("synthetic fixtures need n >= 4 and d >= 2, got n={n}, d={d}")));
    }
    if noise_sigma.is_nan() || noise_sigma < 0.0 {
        return Err(Error::InvalidArgument(format!("noise_sigma must be >= 0, got {noise_sigma}")));
    }
    let mut rng = substream(seed, Substream::Synthetic);
    let raw = Mat::from_fn(n, d, |_, _| StandardNormal.sample(&mut rng));
    let source = EmbeddingMatrix::new((0..n).map(source_word).collect(), raw)?.normalized(Normalization::UnitNorm)?;
    let perm = planted_permutation(n, &spec.frequency_blocks, &mut rng)?;
    let rotation = random_orthogonal(d, &mut rng);
    let rotated = source.vectors().matmul(&rotation)?;

    let mut target_vectors = Mat::zeros(n, d);
    for (i, &j) in perm.iter().enumerate() {
        target_vectors.row_mut(j).copy_from_slice(rotated.row(i));
    }
    if noise_sigma > 0.0 {
        let noise = Normal::new(0.0, noise_sigma).expect("sigma validated");
        for v in target_vectors.as_mut_slice() {
            *v += noise.sample(&mut rng);
        }
    }
    let target = EmbeddingMatrix::new((0..n).map(target_word).collect(), target_vectors)?;
    let target = if noise_sigma > 0.0 {
        target.normalized(Normalization::UnitNorm)?
    } else {
        target
    };
    Ok(SyntheticFixture {
        source,
        target,
        perm,
        rotation,
    })
}
