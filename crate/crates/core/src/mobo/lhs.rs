use super::DesignSpace;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `n` points, one per equal-width stratum in every dimension, each at its
/// stratum midpoint. Strata are matched across dimensions by independent
/// random permutations.
pub fn latin_hypercube(space: &DesignSpace, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = space.dim();
    let mut unit = vec![vec![0.0; d]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for j in 0..d {
        perm.shuffle(&mut rng);
        for (i, &k) in perm.iter().enumerate() {
            unit[i][j] = (k as f64 + 0.5) / n as f64;
        }
    }
    unit.iter().map(|u| space.from_unit(u)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_point_is_the_midpoint() {
        let s = DesignSpace::new(vec![[0.0, 2.0], [10.0, 20.0]]).unwrap();
        assert_eq!(latin_hypercube(&s, 1, 3), vec![vec![1.0, 15.0]]);
    }

    #[test]
    fn deterministic_per_seed() {
        let s = DesignSpace::new(vec![[0.0, 1.0]; 4]).unwrap();
        assert_eq!(latin_hypercube(&s, 10, 5), latin_hypercube(&s, 10, 5));
        assert_ne!(latin_hypercube(&s, 10, 5), latin_hypercube(&s, 10, 6));
    }

    proptest! {
        #[test]
        fn one_point_per_stratum(n in 1usize..40, d in 1usize..6, seed in any::<u64>()) {
            let bounds: Vec<[f64; 2]> = (0..d).map(|j| [j as f64, j as f64 + 1.5 + j as f64]).collect();
            let s = DesignSpace::new(bounds.clone()).unwrap();
            let pts = latin_hypercube(&s, n, seed);
            prop_assert_eq!(pts.len(), n);
            for (j, [lo, hi]) in bounds.iter().enumerate() {
                let mut seen = vec![false; n];
                for p in &pts {
                    prop_assert!(p[j] >= *lo && p[j] <= *hi);
                    let k = (((p[j] - lo) / (hi - lo)) * n as f64).floor() as usize;
                    prop_assert!(!seen[k]);
                    seen[k] = true;
                }
            }
        }
    }
}
