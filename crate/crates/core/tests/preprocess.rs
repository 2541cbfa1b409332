use cvm_core::hsi_io::{Checkpoint, HsiCube, LabelMap};
use cvm_core::preprocess::{
    extract_patches, pca_apply, pca_fit, split, symmetric_eigen, Partition, PatchSet, SplitSpec,
};
use cvm_core::Error;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_cube(h: usize, w: usize, c: usize, seed: u64) -> HsiCube {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // correlated bands so the spectrum is not flat
    let data = (0..h * w)
        .flat_map(|_| {
            let base: f32 = rng.gen_range(0.0..1.0);
            (0..c)
                .map(|b| base * (1.0 + b as f32 * 0.3) + rng.gen_range(-0.2..0.2))
                .collect::<Vec<_>>()
        })
        .collect();
    HsiCube::new(h, w, c, data).unwrap()
}

fn covariance(cube: &HsiCube) -> DMatrix<f64> {
    let (n, c) = (cube.pixels(), cube.bands());
    let x = DMatrix::from_row_slice(n, c, &cube.data().iter().map(|&v| v as f64).collect::<Vec<_>>());
    let mean = x.row_mean();
    let mut centred = x.clone();
    for mut row in centred.row_iter_mut() {
        row -= &mean;
    }
    centred.transpose() * centred / (n as f64 - 1.0)
}

#[test]
fn collinear_pixels_give_diagonal_component() {
    let data: Vec<f32> = (0..10).flat_map(|t| [t as f32, t as f32]).collect();
    let cube = HsiCube::new(2, 5, 2, data).unwrap();
    let m = pca_fit(&cube, 2, 1).unwrap();
    let h = 0.5f64.sqrt();
    assert!((m.components[0] - h).abs() < 1e-9);
    assert!((m.components[2] - h).abs() < 1e-9);
    assert!(m.eigenvalues[1].abs() < 1e-9);
}

#[test]
fn eigenvalues_match_dense_oracle() {
    let cube = random_cube(9, 7, 6, 3);
    let m = pca_fit(&cube, 6, 1).unwrap();
    let oracle = SymmetricEigen::new(covariance(&cube));
    let mut want: Vec<f64> = oracle.eigenvalues.iter().copied().collect();
    want.sort_by(|a, b| b.total_cmp(a));
    let lmax = want[0];
    for (got, want) in m.eigenvalues.iter().zip(&want) {
        assert!((got - want).abs() / lmax < 1e-6, "{got} vs {want}");
    }
}

#[test]
fn jacobi_matches_oracle_on_random_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 8;
    let a = DMatrix::<f64>::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let s = &a + a.transpose();
    let (vals, vecs) = symmetric_eigen(s.transpose().as_slice(), n).unwrap();
    let mut want: Vec<f64> = SymmetricEigen::new(s.clone()).eigenvalues.iter().copied().collect();
    want.sort_by(|a, b| b.total_cmp(a));
    for (g, w) in vals.iter().zip(&want) {
        assert!((g - w).abs() < 1e-9);
    }
    // A·v = λ·v for every returned column
    let v = DMatrix::from_row_slice(n, n, &vecs);
    for (j, &lambda) in vals.iter().enumerate() {
        let col = v.column(j);
        let resid = &s * col - col * lambda;
        assert!(resid.norm() < 1e-8);
    }
}

#[test]
fn full_rank_round_trip() {
    let cube = random_cube(6, 5, 5, 1);
    let m = pca_fit(&cube, 5, 1).unwrap();
    let back = m.reconstruct(&pca_apply(&cube, &m).unwrap()).unwrap();
    let err = cube
        .data()
        .iter()
        .zip(back.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    assert!(err < 1e-4, "reconstruction error {err}");
}

#[test]
fn components_are_orthonormal_and_signed() {
    let cube = random_cube(8, 8, 7, 5);
    let m = pca_fit(&cube, 4, 1).unwrap();
    let (c, b) = (7, 4);
    for i in 0..b {
        for j in 0..b {
            let dot: f64 = (0..c).map(|r| m.components[r * b + i] * m.components[r * b + j]).sum();
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((dot - want).abs() < 1e-5);
        }
        let col: Vec<f64> = (0..c).map(|r| m.components[r * b + i]).collect();
        let pivot = col
            .iter()
            .copied()
            .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
        assert!(pivot > 0.0);
    }
    assert!(m.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn constant_cube_projects_to_zero() {
    let cube = HsiCube::new(3, 3, 4, vec![0.7; 36]).unwrap();
    let m = pca_fit(&cube, 2, 1).unwrap();
    assert!(pca_apply(&cube, &m).unwrap().data().iter().all(|&v| v == 0.0));
}

#[test]
fn retain_more_than_bands_is_config_error() {
    let cube = random_cube(2, 2, 3, 0);
    assert!(matches!(pca_fit(&cube, 4, 1), Err(Error::Config(_))));
}

#[test]
fn band_mismatch_is_dimension_error() {
    let m = pca_fit(&random_cube(3, 3, 4, 0), 2, 1).unwrap();
    assert!(matches!(
        pca_apply(&random_cube(3, 3, 5, 0), &m),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn pca_model_survives_checkpoint() {
    let m = pca_fit(&random_cube(5, 5, 4, 2), 3, 1).unwrap();
    let mut ck = Checkpoint::default();
    m.write_to(&mut ck).unwrap();
    let back = cvm_core::preprocess::PcaModel::read_from(&ck).unwrap();
    assert_eq!(back.retained(), 3);
    for (a, b) in back.components.iter().zip(&m.components) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn stride_subsamples_pixels() {
    let cube = random_cube(10, 10, 3, 9);
    let full = pca_fit(&cube, 3, 1).unwrap();
    let sub = pca_fit(&cube, 3, 3).unwrap();
    assert_ne!(full.mean, sub.mean);
    let manual: f64 = (0..100).step_by(3).map(|p| cube.data()[p * 3] as f64).sum::<f64>() / 34.0;
    assert!((sub.mean[0] - manual).abs() < 1e-12);
}

fn labeled_scene(h: usize, w: usize, k: u16, seed: u64) -> LabelMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LabelMap::new(h, w, k, (0..h * w).map(|_| rng.gen_range(0..=k)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn output_bands_are_uncorrelated_and_ordered(seed in 0u64..1000, c in 3usize..8) {
        let cube = random_cube(12, 12, c, seed);
        let m = pca_fit(&cube, c, 1).unwrap();
        let out = pca_apply(&cube, &m).unwrap();
        let cov = covariance(&out);
        let max_diag = (0..c).map(|i| cov[(i, i)]).fold(0.0, f64::max);
        for i in 0..c {
            for j in 0..c {
                if i != j {
                    prop_assert!(cov[(i, j)].abs() < 1e-3 * max_diag);
                }
            }
            if i + 1 < c {
                prop_assert!(cov[(i, i)] >= cov[(i + 1, i + 1)] - 1e-6 * max_diag);
            }
        }
    }

    #[test]
    fn patch_centre_equals_reduced_cube(seed in 0u64..1000, s in prop::sample::select(vec![3usize, 5, 7])) {
        let cube = random_cube(7, 6, 5, seed);
        let labels = labeled_scene(7, 6, 3, seed);
        let m = pca_fit(&cube, 3, 1).unwrap();
        let reduced = pca_apply(&cube, &m).unwrap();
        let set = extract_patches(&reduced, &labels, s).unwrap();
        prop_assert_eq!(set.len(), labels.labeled_count());
        let centre = (s / 2) * s + s / 2;
        for i in 0..set.len() {
            let (y, x) = set.coords[i];
            prop_assert!(set.labels[i] >= 1);
            prop_assert_eq!(set.labels[i], labels.get(y, x));
            prop_assert_eq!(&set.patch(i)[centre * 3..centre * 3 + 3], reduced.pixel(y, x));
        }
    }

    #[test]
    fn split_is_stratified_partition(seed in 0u64..1000, counts in prop::collection::vec(0usize..40, 1..6)) {
        let labels: Vec<u16> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c as u16 + 1, n))
            .collect();
        let n = labels.len();
        let set = PatchSet {
            patch_size: 3,
            bands: 1,
            patches: vec![0.0; n * 9],
            coords: (0..n).map(|i| (0, i)).collect(),
            labels,
        };
        let spec = SplitSpec { seed, val_fraction: 0.3, train_fraction: 0.6 };
        let a = split(&set, &spec, None).unwrap();
        prop_assert_eq!(a.tags.len(), n);
        prop_assert_eq!(
            a.count(Partition::Train) + a.count(Partition::Val) + a.count(Partition::Test),
            n
        );
        for (c, &cnt) in counts.iter().enumerate() {
            let class = c as u16 + 1;
            let of = |p| (0..n).filter(|&i| set.labels[i] == class && a.tags[i] == p).count();
            let (tr, va) = (of(Partition::Train), of(Partition::Val));
            if cnt == 0 {
                continue;
            }
            let pool = tr + va;
            prop_assert!((pool as f64 - 0.6 * cnt as f64).abs() <= 1.0);
            if pool >= 2 {
                prop_assert!((va as f64 - 0.3 * pool as f64).abs() <= 1.0);
            } else {
                prop_assert_eq!(va, 0);
            }
        }
        prop_assert_eq!(&a, &split(&set, &spec, None).unwrap());
    }
}
