use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ModelSpec;
use crate::classifiers::{ClassifierSpec, KernelSpec, SvmSpec};
use crate::preprocess::FeatureMap;

/// Kernel choices the GA may encode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelGene {
    Rbf,
    Polynomial,
    Sigmoid,
}

impl KernelGene {
    pub const ALL: [KernelGene; 3] = [KernelGene::Rbf, KernelGene::Polynomial, KernelGene::Sigmoid];
}

/// Closed ranges of the parameter genes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneRanges {
    pub nu: (f64, f64),
    pub degree: (u32, u32),
    pub gamma: (f64, f64),
    pub coef0: (f64, f64),
}

impl Default for GeneRanges {
    fn default() -> Self {
        Self {
            nu: (0.001, 0.4),
            degree: (1, 5),
            gamma: (0.001, 5.0),
            coef0: (0.01, 10.0),
        }
    }
}

impl GeneRanges {
    pub fn validate(&self) -> Result<(), String> {
        let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !ok(self.nu) || self.nu.0 <= 0.0 || self.nu.1 > 1.0 {
            return Err(format!("nu range {:?} must lie in (0, 1]", self.nu));
        }
        if self.degree.0 == 0 || self.degree.0 > self.degree.1 {
            return Err(format!("degree range {:?} is empty or contains 0", self.degree));
        }
        if !ok(self.gamma) || self.gamma.0 <= 0.0 {
            return Err(format!("gamma range {:?} must be positive", self.gamma));
        }
        if !ok(self.coef0) {
            return Err(format!("coef0 range {:?} is empty", self.coef0));
        }
        Ok(())
    }

    pub fn contains(&self, c: &Chromosome) -> bool {
        let within = |v: f64, (lo, hi): (f64, f64)| lo <= v && v <= hi;
        within(c.nu, self.nu)
            && (self.degree.0..=self.degree.1).contains(&c.degree)
            && within(c.gamma, self.gamma)
            && within(c.coef0, self.coef0)
    }
}

/// Number of parameter genes preceding the band genes.
pub const PARAM_GENES: usize = 5;

/// ν-SVM parameters plus a band mask.
///
/// Gene order: kernel, ν, degree, γ, c₀, then one gene per band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Chromosome {
    pub kernel: KernelGene,
    pub nu: f64,
    pub degree: u32,
    pub gamma: f64,
    pub coef0: f64,
    pub bands: Vec<bool>,
}

fn uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

impl Chromosome {
    /// Parameters uniform in range, each band selected with probability ½.
    pub fn random(ranges: &GeneRanges, n_bands: usize, rng: &mut impl Rng) -> Self {
        let mut c = Self {
            kernel: KernelGene::ALL[rng.random_range(0..3)],
            nu: uniform(rng, ranges.nu),
            degree: rng.random_range(ranges.degree.0..=ranges.degree.1),
            gamma: uniform(rng, ranges.gamma),
            coef0: uniform(rng, ranges.coef0),
            bands: (0..n_bands).map(|_| rng.random_bool(0.5)).collect(),
        };
        c.repair(rng);
        c
    }

    pub fn gene_count(&self) -> usize {
        PARAM_GENES + self.bands.len()
    }

    pub fn band_count(&self) -> usize {
        self.bands.iter().filter(|&&b| b).count()
    }

    /// Indices of selected bands in feature coordinates.
    pub fn selected(&self) -> Vec<usize> {
        self.bands
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    /// Selected bands in original cube coordinates.
    pub fn original_bands(&self, map: &FeatureMap) -> Vec<usize> {
        map.to_original(&self.selected())
    }

    /// Sets one uniformly chosen band if the mask is empty. Returns whether it did.
    pub fn repair(&mut self, rng: &mut impl Rng) -> bool {
        if self.bands.is_empty() || self.bands.iter().any(|&b| b) {
            return false;
        }
        let i = rng.random_range(0..self.bands.len());
        self.bands[i] = true;
        true
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        match self.kernel {
            KernelGene::Rbf => KernelSpec::rbf(self.gamma),
            KernelGene::Polynomial => KernelSpec::polynomial(self.gamma, self.coef0, self.degree),
            KernelGene::Sigmoid => KernelSpec::sigmoid(self.gamma, self.coef0),
        }
    }

    pub fn decode(&self) -> ModelSpec {
        ModelSpec {
            classifier: ClassifierSpec::Svm(SvmSpec::nu(self.kernel_spec(), self.nu)),
            features: Some(self.selected()),
        }
    }

    /// Redraws gene `gene` so that its value changes (band genes flip).
    pub fn mutate_gene(&mut self, gene: usize, ranges: &GeneRanges, rng: &mut impl Rng) {
        match gene {
            0 => {
                let others: Vec<KernelGene> = KernelGene::ALL.into_iter().filter(|&k| k != self.kernel).collect();
                self.kernel = others[rng.random_range(0..others.len())];
            }
            1 => self.nu = redraw(self.nu, ranges.nu, rng),
            2 => {
                let (lo, hi) = ranges.degree;
                if lo < hi {
                    // Uniform over the range minus the current value.
                    let mut d = rng.random_range(lo..hi);
                    if d >= self.degree {
                        d += 1;
                    }
                    self.degree = d;
                }
            }
            3 => self.gamma = redraw(self.gamma, ranges.gamma, rng),
            4 => self.coef0 = redraw(self.coef0, ranges.coef0, rng),
            g => {
                let b = &mut self.bands[g - PARAM_GENES];
                *b = !*b;
            }
        }
    }

    /// Alters exactly one uniformly chosen gene.
    pub fn mutate(&mut self, ranges: &GeneRanges, rng: &mut impl Rng) {
        let gene = rng.random_range(0..self.gene_count());
        self.mutate_gene(gene, ranges, rng);
    }

    /// Alters each gene independently with probability `p`.
    pub fn mutate_per_gene(&mut self, p: f64, ranges: &GeneRanges, rng: &mut impl Rng) {
        for gene in 0..self.gene_count() {
            if rng.random_bool(p) {
                self.mutate_gene(gene, ranges, rng);
            }
        }
    }

    fn swap_gene(a: &mut Self, b: &mut Self, gene: usize) {
        match gene {
            0 => std::mem::swap(&mut a.kernel, &mut b.kernel),
            1 => std::mem::swap(&mut a.nu, &mut b.nu),
            2 => std::mem::swap(&mut a.degree, &mut b.degree),
            3 => std::mem::swap(&mut a.gamma, &mut b.gamma),
            4 => std::mem::swap(&mut a.coef0, &mut b.coef0),
            g => std::mem::swap(&mut a.bands[g - PARAM_GENES], &mut b.bands[g - PARAM_GENES]),
        }
    }

    /// Swaps each gene position with probability ½.
    pub fn crossover_uniform(a: &mut Self, b: &mut Self, rng: &mut impl Rng) {
        assert_eq!(a.gene_count(), b.gene_count());
        for gene in 0..a.gene_count() {
            if rng.random_bool(0.5) {
                Self::swap_gene(a, b, gene);
            }
        }
    }

    /// Swaps every gene at position `cut` or later.
    pub fn crossover_at(a: &mut Self, b: &mut Self, cut: usize) {
        assert_eq!(a.gene_count(), b.gene_count());
        for gene in cut..a.gene_count() {
            Self::swap_gene(a, b, gene);
        }
    }

    pub fn crossover_one_point(a: &mut Self, b: &mut Self, rng: &mut impl Rng) {
        let cut = rng.random_range(0..a.gene_count());
        Self::crossover_at(a, b, cut);
    }
}

fn redraw(current: f64, range: (f64, f64), rng: &mut impl Rng) -> f64 {
    if range.0 == range.1 {
        return current;
    }
    loop {
        let v = uniform(rng, range);
        if v != current {
            return v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(n: usize, seed: u64) -> Chromosome {
        Chromosome::random(&GeneRanges::default(), n, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Position-wise gene values as comparable strings.
    fn genes(c: &Chromosome) -> Vec<String> {
        let mut g = vec![
            format!("{:?}", c.kernel),
            c.nu.to_bits().to_string(),
            c.degree.to_string(),
            c.gamma.to_bits().to_string(),
            c.coef0.to_bits().to_string(),
        ];
        g.extend(c.bands.iter().map(|b| b.to_string()));
        g
    }

    /// Number of positions where two chromosomes differ.
    fn differing(a: &Chromosome, b: &Chromosome) -> usize {
        genes(a).iter().zip(genes(b)).filter(|(x, y)| **x != *y).count()
    }

    #[test]
    fn decode_counts() {
        let mut c = sample(113, 1);
        c.bands = vec![true; 113];
        assert_eq!(c.decode().features.unwrap().len(), 113);
        c.bands = (0..113).map(|i| i % 2 == 0).collect();
        assert_eq!(c.band_count(), 57);
    }

    #[test]
    fn rbf_gene_ignores_degree_and_coef0() {
        let mut a = sample(4, 2);
        a.kernel = KernelGene::Rbf;
        let mut b = a.clone();
        b.degree = 5;
        b.coef0 = 9.0;
        let x = [0.3, -1.0];
        let y = [1.2, 0.4];
        assert_eq!(a.kernel_spec().eval(&x, &y).unwrap(), b.kernel_spec().eval(&x, &y).unwrap());
    }

    #[test]
    fn empty_mask_is_repaired() {
        let mut c = sample(10, 3);
        c.bands = vec![false; 10];
        assert!(c.repair(&mut ChaCha8Rng::seed_from_u64(0)));
        assert_eq!(c.band_count(), 1);
        assert!(!c.repair(&mut ChaCha8Rng::seed_from_u64(0)));
    }

    #[test]
    fn band_mutation_changes_popcount_by_one() {
        let mut c = sample(20, 4);
        let before = c.band_count();
        c.mutate_gene(PARAM_GENES + 7, &GeneRanges::default(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(before.abs_diff(c.band_count()), 1);
    }

    #[test]
    fn mutation_is_deterministic() {
        let mut a = sample(30, 5);
        let mut b = a.clone();
        a.mutate(&GeneRanges::default(), &mut ChaCha8Rng::seed_from_u64(11));
        b.mutate(&GeneRanges::default(), &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
    }

    #[test]
    fn parameter_mutations_stay_in_range() {
        let ranges = GeneRanges::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut c = sample(3, 6);
        for i in 0..10_000 {
            let before = c.clone();
            c.mutate_gene(i % PARAM_GENES, &ranges, &mut rng);
            assert!(ranges.contains(&c), "{c:?}");
            assert_eq!(differing(&before, &c), 1);
        }
    }

    #[test]
    fn identical_parents_give_identical_children() {
        let p = sample(25, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (mut a, mut b) = (p.clone(), p.clone());
        Chromosome::crossover_uniform(&mut a, &mut b, &mut rng);
        assert_eq!((&a, &b), (&p, &p));
        Chromosome::crossover_one_point(&mut a, &mut b, &mut rng);
        assert_eq!((&a, &b), (&p, &p));
    }

    #[test]
    fn cut_at_zero_swaps_parents() {
        let (pa, pb) = (sample(12, 8), sample(12, 9));
        let (mut a, mut b) = (pa.clone(), pb.clone());
        Chromosome::crossover_at(&mut a, &mut b, 0);
        assert_eq!((a, b), (pb, pa));
    }

    proptest! {
        #[test]
        fn crossover_conserves_positionwise_multisets(s1 in any::<u64>(), s2 in any::<u64>(), s3 in any::<u64>(), uniform_kind in any::<bool>()) {
            let (pa, pb) = (sample(40, s1), sample(40, s2));
            let (mut a, mut b) = (pa.clone(), pb.clone());
            let mut rng = ChaCha8Rng::seed_from_u64(s3);
            if uniform_kind {
                Chromosome::crossover_uniform(&mut a, &mut b, &mut rng);
            } else {
                Chromosome::crossover_one_point(&mut a, &mut b, &mut rng);
            }
            let (ga, gb, gpa, gpb) = (genes(&a), genes(&b), genes(&pa), genes(&pb));
            for i in 0..ga.len() {
                let mut kids = [ga[i].clone(), gb[i].clone()];
                let mut parents = [gpa[i].clone(), gpb[i].clone()];
                kids.sort();
                parents.sort();
                prop_assert_eq!(kids, parents);
            }
        }

        #[test]
        fn random_chromosomes_are_valid(seed in any::<u64>(), n in 1usize..60) {
            let c = sample(n, seed);
            prop_assert!(GeneRanges::default().contains(&c));
            prop_assert!(c.band_count() >= 1);
        }
    }
}
