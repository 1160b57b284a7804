mod common;

use std::collections::VecDeque;

use porelab::augment::{roll, roll_field, vflip, Augmentation};
use porelab::dataset::{decode, encode, RecordFile};
use porelab::geometry::{percolates, threshold_to_porosity, Axis, ScalarField};
use porelab::lbm::{init_cold, LbmParams, VelocityField};
use porelab::losses::{l_perio, total_loss, LossWeights, Translation};
use porelab::properties::summary;
use porelab::stats::{bootstrap_ci_median, median, wilcoxon_signed_rank};
use porelab::uncertainty::pchip_fit;
use porelab::StructureGrid;
use proptest::prelude::*;

use common::*;

fn grid_strategy(max: usize) -> impl Strategy<Value = StructureGrid> {
    (2..=max).prop_flat_map(|l| {
        proptest::collection::vec(proptest::bool::weighted(0.45), l * l)
            .prop_map(move |solid| StructureGrid::from_solid(l, solid).unwrap())
    })
}

fn field_for(l: usize) -> impl Strategy<Value = VelocityField> {
    proptest::collection::vec(-1.0f64..1.0, 2 * l * l).prop_map(move |v| {
        let (ux, uy) = v.split_at(l * l);
        VelocityField::new(l, ux.to_vec(), uy.to_vec()).unwrap()
    })
}

/// Pore flood fill across `copies` tiles placed along the axis (transverse
/// direction periodic, axial direction open). With more tiles than pore
/// pixels, a face-to-face path must revisit some pixel at a different lift,
/// so crossing is equivalent to a winding path on the torus.
fn crosses_tiling(grid: &StructureGrid, axis: Axis) -> bool {
    let l = grid.size();
    let copies = grid.pore_count() + 1;
    let len = l * copies;
    let pore = |a: usize, c: usize| match axis {
        Axis::X => !grid.is_solid(a % l, c),
        Axis::Y => !grid.is_solid(c, a % l),
    };
    let mut seen = vec![false; len * l];
    let mut queue = VecDeque::new();
    for c in 0..l {
        if pore(0, c) {
            seen[c] = true;
            queue.push_back((0, c));
        }
    }
    while let Some((a, c)) = queue.pop_front() {
        if a == len - 1 {
            return true;
        }
        let mut next = vec![(a + 1, c), (a, (c + 1) % l), (a, (c + l - 1) % l)];
        if a > 0 {
            next.push((a - 1, c));
        }
        for (na, nc) in next {
            if na < len && pore(na, nc) && !seen[na * l + nc] {
                seen[na * l + nc] = true;
                queue.push_back((na, nc));
            }
        }
    }
    false
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn percolation_matches_tiling(grid in grid_strategy(7)) {
        for axis in [Axis::X, Axis::Y] {
            prop_assert_eq!(percolates(&grid, axis), crosses_tiling(&grid, axis));
        }
    }

    #[test]
    fn percolation_is_roll_invariant(grid in grid_strategy(8), tx in 0usize..8, ty in 0usize..8) {
        let l = grid.size();
        let (rolled, _) = roll(&grid, &VelocityField::zeros(l), tx % l, ty % l).unwrap();
        prop_assert_eq!(percolates(&grid, Axis::X), percolates(&rolled, Axis::X));
        prop_assert_eq!(percolates(&grid, Axis::Y), percolates(&rolled, Axis::Y));
    }

    #[test]
    fn threshold_hits_porosity(
        values in proptest::collection::vec(-1e3f64..1e3, 100),
        target in 0.01f64..1.0,
    ) {
        let grid = threshold_to_porosity(&ScalarField::new(10, values.clone()).unwrap(), target).unwrap();
        prop_assert!((grid.porosity() - target).abs() <= 1.0 / 100.0 + 1e-15 || grid.pore_count() == 1);
        // every solid value is at most every pore value
        let max_solid = (0..100).filter(|i| grid.solid()[*i]).map(|i| values[i]).fold(f64::MIN, f64::max);
        let min_pore = (0..100).filter(|i| !grid.solid()[*i]).map(|i| values[i]).fold(f64::MAX, f64::min);
        prop_assert!(max_solid <= min_pore);
    }

    #[test]
    fn flip_is_an_involution(grid in grid_strategy(9), seed in any::<u64>()) {
        let l = grid.size();
        let field = VelocityField::from_fn(l, |x, y| ((seed % 97) as f64 + x as f64, y as f64 - 3.0));
        let (g1, f1) = vflip(&grid, &field).unwrap();
        let (g2, f2) = vflip(&g1, &f1).unwrap();
        prop_assert_eq!(g2, grid);
        prop_assert_eq!(f2, field);
    }

    #[test]
    fn augmentation_preserves_properties(
        grid in grid_strategy(12),
        flip in any::<bool>(),
        tx in 0usize..12,
        ty in 0usize..12,
        speed in 1e-6f64..1e-2,
    ) {
        let l = grid.size();
        let mut field = VelocityField::from_fn(l, |x, y| {
            (speed * (1.0 + ((x * 7 + y * 3) % 5) as f64), speed * (((x + 2 * y) % 3) as f64 - 1.0))
        });
        field.mask_solids(&grid);
        prop_assume!(grid.pore_count() > 0);
        let params = LbmParams::default();
        let before = summary(&field, &grid, &params).unwrap();
        let aug = Augmentation { flip, tx: tx % l, ty: ty % l };
        let (g, f) = aug.apply(&grid, &field).unwrap();
        let after = summary(&f, &g, &params).unwrap();
        prop_assert_eq!(before.porosity, after.porosity);
        prop_assert!(relative_gap(before.tortuosity, after.tortuosity) <= 1e-12);
        prop_assert!(relative_gap(before.permeability, after.permeability) <= 1e-12);
    }

    #[test]
    fn equivariant_prediction_has_zero_periodicity_loss(
        (field, tx, ty) in (2usize..10).prop_flat_map(|l| (field_for(l), 0..l, 0..l)),
    ) {
        let t = Translation::new(tx, ty, field.size()).unwrap();
        let shifted = roll_field(&field, t);
        prop_assert_eq!(l_perio(&field, &shifted, t).unwrap(), 0.0);
        prop_assert_eq!(oracle_l_perio(&field, &shifted, tx, ty), 0.0);
    }

    #[test]
    fn loss_components_are_non_negative(
        (grid, a, b, c) in (3usize..9).prop_flat_map(|l| {
            let grid = proptest::collection::vec(proptest::bool::weighted(0.3), l * l)
                .prop_map(move |s| StructureGrid::from_solid(l, s).unwrap());
            (grid, field_for(l), field_for(l), field_for(l))
        }),
    ) {
        let mut reference = c;
        reference.ux_mut().iter_mut().for_each(|v| *v = v.abs() + 0.1);
        reference.mask_solids(&grid);
        prop_assume!(grid.pore_count() > 0);
        let t = Translation::half(grid.size());
        let r = total_loss(&a, &b, &reference, &grid, t, &LossWeights::default());
        if let Ok(r) = r {
            for v in [r.l_vel, r.l_obstacle, r.l_div, r.l_perio, r.l_tort, r.total] {
                prop_assert!(v >= 0.0 && v.is_finite());
            }
        }
    }

    #[test]
    fn record_round_trip(grid in grid_strategy(20), with_field in any::<bool>(), scale in 1e-8f64..1.0) {
        let l = grid.size();
        let mut field = VelocityField::from_fn(l, |x, y| (scale * x as f64, -scale * y as f64));
        field.mask_solids(&grid);
        let record = RecordFile {
            grid,
            params: LbmParams::default(),
            field: with_field.then_some(field),
        };
        let bytes = encode(&record).unwrap();
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(encode(&back).unwrap(), bytes);
        prop_assert_eq!(back.grid, record.grid);
    }

    #[test]
    fn pchip_monotone_and_exact(steps in proptest::collection::vec((0.01f64..3.0, 0.0f64..2.0), 2..12)) {
        let mut x = vec![0.0];
        let mut y = vec![0.0];
        for (dx, dy) in &steps {
            x.push(x.last().unwrap() + dx);
            y.push(y.last().unwrap() + dy);
        }
        let p = pchip_fit(&x, &y).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            prop_assert_eq!(p.eval(*xi), *yi);
        }
        let end = *x.last().unwrap();
        let dense: Vec<f64> = (0..500).map(|k| p.eval(end * k as f64 / 499.0)).collect();
        prop_assert!(dense.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn wilcoxon_matches_enumeration(pairs in proptest::collection::vec((0i32..6, 0i32..6), 1..11)) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        let r = wilcoxon_signed_rank(&x, &y).unwrap();
        prop_assert_eq!(r.p_value, wilcoxon_exhaustive(&x, &y));
        prop_assert_eq!(r.p_value, wilcoxon_signed_rank(&y, &x).unwrap().p_value);
    }

    #[test]
    fn bootstrap_interval_is_ordered_and_seeded(xs in proptest::collection::vec(-10.0f64..10.0, 5..40), seed in any::<u64>()) {
        let (lo, hi) = bootstrap_ci_median(&xs, 1000, 0.95, seed).unwrap();
        prop_assert_eq!((lo, hi), bootstrap_ci_median(&xs, 1000, 0.95, seed).unwrap());
        let min = xs.iter().cloned().fold(f64::MAX, f64::min);
        let max = xs.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert!(min <= lo && lo <= hi && hi <= max);
    }
}

#[test]
fn bootstrap_interval_covers_population_median() {
    // 200 samples of size 40 from U(0, 1): the 95% interval should cover
    // the population median 0.5 in roughly 95% of them
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
    let mut covered = 0;
    for k in 0..200 {
        let xs: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..1.0)).collect();
        let (lo, hi) = bootstrap_ci_median(&xs, 2000, 0.95, k).unwrap();
        assert!(lo <= median(&xs).unwrap() && median(&xs).unwrap() <= hi);
        if lo <= 0.5 && 0.5 <= hi {
            covered += 1;
        }
    }
    assert!((176..=200).contains(&covered), "{covered}");
}

#[test]
fn rest_state_without_force_is_steady() {
    let mut solid = vec![false; 100];
    solid[44] = true;
    solid[45] = true;
    let grid = StructureGrid::from_solid(10, solid).unwrap();
    let params = LbmParams {
        force: [0.0, 0.0],
        ..LbmParams::default()
    };
    let mut state = init_cold(&grid, &params).unwrap();
    let mass = state.total_mass();
    for _ in 0..50 {
        state.step().unwrap();
    }
    assert!((state.total_mass() - mass).abs() <= 1e-12 * mass);
    let (_, u) = state.moments().unwrap();
    assert!(u.ux().iter().chain(u.uy()).all(|v| v.abs() < 1e-15));
}
