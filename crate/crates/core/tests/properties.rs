//! Randomized invariants. Anything here must hold for every input, not just
//! the pinned fixtures.

use proptest::prelude::*;

use tristencil::ecm::{self, CoreModelKind, LcFixture, MachineModel};
use tristencil::fields::{Fill, P2Function, P2Operator};
use tristencil::grid::{self, ArrayId, Orientation};
use tristencil::kernels::{self, KernelKind};
use tristencil::sparse;

fn any_kernel() -> impl Strategy<Value = KernelKind> {
    prop::sample::select(KernelKind::ALL.to_vec())
}

fn any_array() -> impl Strategy<Value = ArrayId> {
    prop::sample::select(vec![
        ArrayId::Vertex,
        ArrayId::Edge(Orientation::X),
        ArrayId::Edge(Orientation::Y),
        ArrayId::Edge(Orientation::Xy),
    ])
}

proptest! {
    /// Flat indices walk each row contiguously and rows chain without gaps.
    #[test]
    fn index_is_dense_row_major(array in any_array(), level in 1u32..=8, y_frac in 0.0f64..1.0, x_frac in 0.0f64..1.0) {
        let rows = match array {
            ArrayId::Vertex => grid::edges_per_side(level) + 1,
            ArrayId::Edge(_) => grid::edges_per_side(level),
        };
        let y = ((rows as f64 - 1.0) * y_frac) as u32;
        let row_len = match array {
            ArrayId::Vertex => grid::vertex_row_len(y, level),
            ArrayId::Edge(_) => grid::edge_row_len(y, level),
        };
        let x = ((row_len as f64 - 1.0) * x_frac) as u32;
        let idx = match array {
            ArrayId::Vertex => grid::vertex_index(x, y, level).unwrap(),
            ArrayId::Edge(_) => grid::edge_index(x, y, level).unwrap(),
        };
        let start = grid::row_start(array, y, level);
        prop_assert_eq!(idx, start + x as u64);
        if (x as u64) + 1 == row_len {
            // the next row begins right after the last entry of this one
            prop_assert_eq!(idx + 1, grid::row_start(array, y + 1, level));
        }
    }

    /// Packing all four arrays into one flat vector and back loses nothing.
    #[test]
    fn flat_round_trip(level in 1u32..=5, seed in any::<u64>()) {
        let f = P2Function::new(level, Fill::PseudoRandom(seed)).unwrap();
        let flat = sparse::p2_to_flat(&f);
        let back = sparse::flat_to_p2(&flat, level).unwrap();
        prop_assert_eq!(f.max_abs_diff(&back).unwrap(), 0.0);
    }

    /// The binary dump format round-trips bit for bit.
    #[test]
    fn dump_round_trip(level in 1u32..=5, seed in any::<u64>()) {
        let f = P2Function::new(level, Fill::PseudoRandom(seed)).unwrap();
        let mut buf = Vec::new();
        f.write_to(&mut buf).unwrap();
        let back = P2Function::read_from(buf.as_slice()).unwrap();
        for id in [ArrayId::Vertex, ArrayId::Edge(Orientation::X), ArrayId::Edge(Orientation::Y), ArrayId::Edge(Orientation::Xy)] {
            let a = f.component(id);
            let b = back.component(id);
            prop_assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    /// Scaling the source by a power of two scales every output exactly,
    /// since each product and partial sum scales without rounding.
    #[test]
    fn apply_is_two_power_homogeneous(level in 2u32..=4, seed in any::<u64>(), k in -6i32..=6) {
        let op = P2Operator::pseudo_random(seed);
        let src = P2Function::new(level, Fill::PseudoRandom(seed ^ 0xa5a5)).unwrap();
        let factor = (2.0f64).powi(k);
        let mut scaled = src.clone();
        for id in [ArrayId::Vertex, ArrayId::Edge(Orientation::X), ArrayId::Edge(Orientation::Y), ArrayId::Edge(Orientation::Xy)] {
            for v in scaled.component_mut(id) {
                *v *= factor;
            }
        }
        let mut dst = P2Function::new(level, Fill::Zeros).unwrap();
        kernels::apply_p2(&op, &src, &mut dst).unwrap();
        let mut dst_scaled = P2Function::new(level, Fill::Zeros).unwrap();
        kernels::apply_p2(&op, &scaled, &mut dst_scaled).unwrap();
        for id in [ArrayId::Vertex, ArrayId::Edge(Orientation::X), ArrayId::Edge(Orientation::Y), ArrayId::Edge(Orientation::Xy)] {
            let plain = dst.component(id);
            let scaled_out = dst_scaled.component(id);
            prop_assert!(plain
                .iter()
                .zip(scaled_out)
                .all(|(p, s)| (p * factor).to_bits() == s.to_bits()));
        }
    }

    /// The assembled matrix applies the operator the kernels apply, for any
    /// weights, once boundary sources are zeroed.
    #[test]
    fn spmv_matches_apply(level in 2u32..=4, seed in any::<u64>()) {
        let op = P2Operator::pseudo_random(seed);
        let mut src = P2Function::new(level, Fill::PseudoRandom(!seed)).unwrap();
        sparse::zero_identity_slots(&mut src).unwrap();
        let mat = sparse::assemble(&op, level).unwrap();
        let mut y = vec![0.0; sparse::flat_len(level)];
        mat.spmv(&sparse::p2_to_flat(&src), &mut y).unwrap();
        let mut dst = P2Function::new(level, Fill::Zeros).unwrap();
        kernels::apply_p2(&op, &src, &mut dst).unwrap();
        prop_assert!(sparse::max_rel_diff(&sparse::p2_to_flat(&dst), &y) <= 1e-13);
    }

    /// The chosen bandwidth entry is a nearest neighbor in log ratio space;
    /// ties go to the entry with the larger store share.
    #[test]
    fn bandwidth_pick_is_nearest(loads in 1u32..=8, stores in 1u32..=8) {
        let m = MachineModel::skx_8174();
        let picked = m.select_bandwidth(loads, stores);
        let want = (loads as f64 / stores as f64).ln();
        let dist = |l: u32, s: u32| ((l as f64 / s as f64).ln() - want).abs();
        let best = m
            .bandwidths
            .iter()
            .map(|e| dist(e.loads, e.stores))
            .fold(f64::INFINITY, f64::min);
        let picked_dist = dist(picked.loads, picked.stores);
        prop_assert!((picked_dist - best).abs() <= 1e-12);
        for e in &m.bandwidths {
            if (dist(e.loads, e.stores) - best).abs() <= 1e-12 {
                let share = |l: u32, s: u32| s as f64 / (l + s) as f64;
                prop_assert!(share(picked.loads, picked.stores) >= share(e.loads, e.stores) - 1e-12);
            }
        }
    }

    /// Row reuse that fits at some refinement level also fits at every
    /// coarser one.
    #[test]
    fn layer_condition_is_downward_closed(kind in any_kernel(), cache in 1024u64..=(64 << 20), level in 1u32..=14) {
        let spec = kind.spec();
        if ecm::layer_condition(&spec, level, cache) {
            for coarser in 0..level {
                prop_assert!(ecm::layer_condition(&spec, coarser, cache));
            }
        }
    }

    /// Predicted scaling never decreases with more threads, never exceeds the
    /// thread count, and a single thread is the baseline.
    #[test]
    fn scaling_curve_is_sane(kind in any_kernel(), level in 7u32..=14) {
        let m = MachineModel::skx_8174();
        let fx = LcFixture::reference();
        let p = ecm::predict_at(kind, level, &m, Some(&fx), CoreModelKind::Measured);
        prop_assert_eq!(ecm::scaling_multiple(&p, &m, 1), 1.0);
        let mut prev = 0.0;
        for t in 1..=m.total_cores() {
            let s = ecm::scaling_multiple(&p, &m, t);
            prop_assert!(s >= prev);
            prop_assert!(s <= t as f64 + 1e-12);
            prev = s;
        }
    }
}
