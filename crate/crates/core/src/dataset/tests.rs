use super::*;
use crate::voxgrid::{TravKey, TrialCount};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn total_is_the_mean() {
    let l = marginalize(&[(0, 0, 1.0), (3, 2, 0.5)], Head::Total, 0).unwrap();
    assert_eq!(l.values, vec![0.75]);
    assert_eq!(l.present, vec![true]);
    assert!(marginalize(&[], Head::Total, 0).is_err());
    assert!(marginalize(&[(0, 6, 1.0)], Head::Total, 0).is_err());
}

#[test]
fn dir4_bins() {
    // heading 90 degrees moving forward lands in the second bin
    let l = marginalize(&[(9, Action::Forward.index(), 0.3)], Head::Dir4, 0).unwrap();
    assert_eq!(l.present, vec![false, true, false, false]);
    assert_eq!(l.values[1], 0.3);
    assert_eq!(dir4_bin(0), 0);
    assert_eq!(dir4_bin(44), 0);
    assert_eq!(dir4_bin(-40), 0);
    assert_eq!(dir4_bin(45), 1);
    assert_eq!(dir4_bin(180), 2);
    assert_eq!(dir4_bin(270), 3);
    assert_eq!(dir4_bin(315), 0);
    // rotations have no direction
    let r = marginalize(&[(0, Action::YawPlus45.index(), 1.0)], Head::Dir4, 0).unwrap();
    assert!(r.present.iter().all(|&p| !p));
    // heading 0, moving left in a frame turned by 90 degrees points backward
    let f = marginalize(&[(0, Action::Left.index(), 1.0)], Head::Dir4, 9).unwrap();
    assert_eq!(f.present, vec![true, false, false, false]);
}

#[test]
fn orient_folds_opposite_headings() {
    let e = [(2, 0, 1.0), (20, 1, 0.0), (5, 3, 0.5)];
    let l = marginalize(&e, Head::Orient, 0).unwrap();
    assert_eq!(l.values[2], 0.5);
    assert_eq!(l.values[5], 0.5);
    assert_eq!(l.present.iter().filter(|&&p| p).count(), 2);
    let shifted = marginalize(&e, Head::Orient, 3).unwrap();
    assert_eq!(shifted.values[17], 0.5);
    assert_eq!(shifted.values[2], 0.5);
}

#[test]
fn orient_channels_agree_on_oracle_data() {
    use crate::oracle::{collect, CollectConfig, StartSampling};
    let m = GridMeta::new([24, 24, 12], [0.0; 3], 0.1).unwrap();
    let mut g = OccupancyGrid::new(m);
    for i in 0..24 {
        for j in 0..24 {
            g.insert(Voxel::new(i, j, 0)).unwrap();
            if i > 13 && j > 8 {
                g.insert(Voxel::new(i, j, 1)).unwrap();
            }
        }
    }
    let cfg = CollectConfig {
        n_total: 5,
        sampling: StartSampling {
            xy_step: 3,
            heading_step: 3,
        },
        ..Default::default()
    };
    let (trav, _) = collect(&g, &cfg, 2).unwrap();
    let mut checked = 0;
    for entries in trav.by_voxel().values() {
        for h in (0..18).step_by(3) {
            let a: Vec<_> = entries.iter().copied().filter(|e| e.0 == h).collect();
            let b: Vec<_> = entries.iter().copied().filter(|e| e.0 == h + 18).collect();
            if a.is_empty() || b.is_empty() {
                continue;
            }
            let la = marginalize(&a, Head::Orient, 0).unwrap();
            let lb = marginalize(&b, Head::Orient, 0).unwrap();
            assert_eq!(la.values[h as usize], lb.values[h as usize]);
            checked += 1;
        }
    }
    assert!(checked > 50);
}

proptest! {
    #[test]
    fn total_within_score_range(scores in prop::collection::vec(0.0f64..=1.0, 1..40)) {
        let e: Vec<_> = scores.iter().enumerate().map(|(n, &s)| ((n % 36) as u8, (n % 6) as u8, s)).collect();
        let v = marginalize(&e, Head::Total, 0).unwrap().values[0] as f64;
        let lo = scores.iter().cloned().fold(f64::MAX, f64::min);
        let hi = scores.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert!(v >= lo - 1e-6 && v <= hi + 1e-6);
    }
}

/// A 12 m floor with a few pillars and random scores on every start key.
fn scene(seed: u64) -> (OccupancyGrid, TravTensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = GridMeta::new([120, 110, 50], [-1.0, 2.0, -0.5], 0.1).unwrap();
    let mut g = OccupancyGrid::new(m);
    for i in 0..120 {
        for j in 0..110 {
            g.insert(Voxel::new(i, j, 4)).unwrap();
        }
    }
    for _ in 0..30 {
        let (i, j) = (rng.gen_range(0..120), rng.gen_range(0..110));
        for k in 5..rng.gen_range(6..30) {
            g.insert(Voxel::new(i, j, k)).unwrap();
        }
    }
    let mut t = TravTensor::new(m);
    for i in (0..120).step_by(2) {
        for j in (0..110).step_by(3) {
            for h in (0..36).step_by(4) {
                for a in 0..6 {
                    let n_suc = rng.gen_range(0..=10);
                    let key = TravKey {
                        voxel: Voxel::new(i, j, 7),
                        heading_idx: h,
                        action_idx: a,
                    };
                    t.insert(key, TrialCount { n_suc, n_total: 10 }).unwrap();
                }
            }
        }
    }
    (g, t)
}

fn pose_at(g: &OccupancyGrid, v: Voxel, h: u8) -> Pose {
    Pose {
        p: g.meta().index_to_center(v).unwrap(),
        heading_idx: h,
        roll: 0.0,
        pitch: 0.0,
    }
}

#[test]
fn zero_yaw_is_a_crop() {
    let (g, t) = scene(1);
    let base = Voxel::new(60, 51, 7);
    let w = extract_window(&g, &t, &pose_at(&g, base, 0), Head::Total).unwrap();
    let shift = |v: Voxel| v.offset(WINDOW_CENTER.i - base.i, WINDOW_CENTER.j - base.j, WINDOW_CENTER.k - base.k);
    let crop: BTreeSet<Voxel> = g.iter().map(shift).filter(|&v| window_contains(v)).collect();
    assert_eq!(w.input, crop);
    let by = t.by_voxel();
    let want: BTreeSet<Voxel> = by.keys().map(|&v| shift(v)).filter(|&v| window_contains(v)).collect();
    assert_eq!(w.labels.keys().copied().collect::<BTreeSet<_>>(), want);
    for (v, e) in &by {
        if let Some(l) = w.labels.get(&shift(*v)) {
            assert_eq!(*l, marginalize(e, Head::Total, 0).unwrap());
        }
    }
    assert!(w.labels.contains_key(&WINDOW_CENTER));
    assert_eq!(w.center, base);
}

#[test]
fn quarter_turn_shifts_orient_channels() {
    let (g, t) = scene(2);
    let base = Voxel::new(60, 51, 7);
    let w0 = extract_window(&g, &t, &pose_at(&g, base, 0), Head::Orient).unwrap();
    let w9 = extract_window(&g, &t, &pose_at(&g, base, 9), Head::Orient).unwrap();
    let mut n = 0;
    for (v, l0) in &w0.labels {
        let (di, dj) = (v.i - WINDOW_CENTER.i, v.j - WINDOW_CENTER.j);
        let r = Voxel::new(WINDOW_CENTER.i + dj, WINDOW_CENTER.j - di, v.k);
        let Some(l9) = w9.labels.get(&r) else {
            assert!(!window_contains(r));
            continue;
        };
        for k in 0..18 {
            assert_eq!(l9.values[k], l0.values[(k + 9) % 18]);
            assert_eq!(l9.present[k], l0.present[(k + 9) % 18]);
        }
        n += 1;
    }
    assert!(n > 100);
}

#[test]
fn window_bounds() {
    let (g, t) = scene(3);
    for h in [0, 4, 13, 27] {
        let w = extract_window(&g, &t, &pose_at(&g, Voxel::new(10, 100, 7), h), Head::Dir4).unwrap();
        assert!(w.input.iter().chain(w.labels.keys()).all(|&v| window_contains(v)));
        assert!(w.labels.values().all(|l| l.values.len() == 4 && l.values.iter().all(|&x| (0.0..=1.0).contains(&x))));
    }
    let bad = Pose {
        p: [100.0, 0.0, 0.0],
        heading_idx: 0,
        roll: 0.0,
        pitch: 0.0,
    };
    assert!(matches!(extract_window(&g, &t, &bad, Head::Total), Err(Error::Usage(_))));
}

#[test]
fn label_support_comes_from_evaluated_voxels() {
    let (g, t) = scene(4);
    let w = extract_window(&g, &t, &pose_at(&g, Voxel::new(40, 30, 7), 5), Head::Total).unwrap();
    let (dst, center) = window_frame(g.meta(), w.center).unwrap();
    let mapped = crate::voxgrid::rotate_coords_about_z(t.by_voxel().into_keys(), g.meta(), 50f64.to_radians(), center, &dst);
    assert!(w.labels.keys().all(|v| mapped.contains(v)));
}

fn flat_window(layers: i32) -> Window {
    let mut input = BTreeSet::new();
    let mut labels = BTreeMap::new();
    for i in 0..80 {
        for j in 0..80 {
            for k in 0..layers {
                input.insert(Voxel::new(i, j, k));
            }
            labels.insert(
                Voxel::new(i, j, 20),
                Label {
                    values: vec![((i + j) % 10) as f32 / 10.0 + 0.05],
                    present: vec![true],
                },
            );
        }
    }
    Window {
        head: Head::Total,
        yaw: 0.0,
        center: Voxel::new(0, 0, 0),
        input,
        labels,
    }
}

#[test]
fn no_op_augment_only_restricts() {
    let w = flat_window(2);
    let a = augment(&w, 1, &AugmentConfig::none());
    assert_eq!(a, w);
    let mut cut = w.clone();
    // a ring of zero scores isolates the outer labels
    for (v, l) in cut.labels.iter_mut() {
        let d = (v.i - 40).abs().max((v.j - 40).abs());
        if d == 10 {
            l.values[0] = 0.0;
        }
    }
    let a = augment(&cut, 1, &AugmentConfig::none());
    assert_eq!(a.labels.len(), cut.labels.len());
    for (v, l) in &a.labels {
        let d = (v.i - 40).abs().max((v.j - 40).abs());
        if d < 10 {
            assert_eq!(l, &cut.labels[v]);
        } else {
            assert_eq!(l.values[0], 0.0);
        }
    }
}

#[test]
fn dropout_follows_radial_profile() {
    let w = flat_window(16);
    let cfg = AugmentConfig {
        noise_prob: 0.0,
        ..Default::default()
    };
    let a = augment(&w, 7, &cfg);
    assert!(a.input.is_subset(&w.input));
    let edges = [0.0, 10.0, 20.0, 30.0, 40.0, 60.0];
    for b in 0..5 {
        let (mut n, mut dropped, mut expected) = (0usize, 0usize, 0.0);
        for v in &w.input {
            let r = ((v.i - 40) as f64).hypot((v.j - 40) as f64);
            if r >= edges[b] && r < edges[b + 1] {
                n += 1;
                dropped += !a.input.contains(v) as usize;
                expected += cfg.dropout_at(r, 40.0);
            }
        }
        let (rate, want) = (dropped as f64 / n as f64, expected / n as f64);
        assert!((rate - want).abs() <= 0.01, "bin {b}: {rate} vs {want}");
    }
    assert_eq!(a.labels, w.labels);
}

#[test]
fn surface_noise_adds_adjacent_voxels() {
    let w = flat_window(1);
    let cfg = AugmentConfig {
        dropout_min: 0.0,
        dropout_max: 0.0,
        noise_prob: 0.02,
    };
    let a = augment(&w, 3, &cfg);
    assert!(w.input.is_subset(&a.input));
    let added: Vec<_> = a.input.difference(&w.input).copied().collect();
    let rate = added.len() as f64 / w.input.len() as f64;
    assert!(rate > 0.014 && rate < 0.026, "{rate}");
    for v in added {
        assert_eq!(v.k, 1);
    }
    assert_eq!(a.labels, w.labels);
    assert_eq!(augment(&w, 3, &cfg), a);
}

fn random_window(rng: &mut ChaCha8Rng, head: Head) -> Window {
    let c = head.channels();
    let coord = |rng: &mut ChaCha8Rng| Voxel::new(rng.gen_range(0..80), rng.gen_range(0..80), rng.gen_range(0..40));
    let input = (0..rng.gen_range(0..200)).map(|_| coord(rng)).collect();
    let labels = (0..rng.gen_range(0..50))
        .map(|_| {
            let l = Label {
                values: (0..c).map(|_| rng.gen_range(0.0..=1.0f32)).collect(),
                present: (0..c).map(|_| rng.gen_bool(0.7)).collect(),
            };
            (coord(rng), l)
        })
        .collect();
    Window {
        head,
        yaw: rng.gen_range(-3.2..3.2),
        center: Voxel::new(rng.gen_range(0..500), rng.gen_range(0..500), rng.gen_range(0..100)),
        input,
        labels,
    }
}

#[test]
fn empty_dataset_round_trip() {
    let ds = Dataset::new(Head::Dir4, vec![]).unwrap();
    assert_eq!(decode_dataset(&encode_dataset(&ds)).unwrap(), ds);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn dataset_round_trip(seed in any::<u64>(), h in 0usize..3) {
        let head = [Head::Total, Head::Dir4, Head::Orient][h];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let windows = (0..rng.gen_range(0..5)).map(|_| random_window(&mut rng, head)).collect();
        let ds = Dataset::new(head, windows).unwrap();
        let bytes = encode_dataset(&ds);
        let back = decode_dataset(&bytes).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(encode_dataset(&back), bytes);
    }
}

#[test]
fn corrupt_files_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ds = Dataset::new(Head::Total, vec![random_window(&mut rng, Head::Total)]).unwrap();
    let bytes = encode_dataset(&ds);
    let mut v = bytes.clone();
    v[4] = 2;
    match decode_dataset(&v) {
        Err(Error::Format { offset, msg }) => {
            assert_eq!(offset, 4);
            assert!(msg.contains("version"));
        }
        other => panic!("{other:?}"),
    }
    let mut m = bytes.clone();
    m[0] = b'X';
    assert!(matches!(decode_dataset(&m), Err(Error::Format { offset: 0, .. })));
    for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(decode_dataset(&bytes[..cut]), Err(Error::Format { .. })));
    }
    let mut h = bytes.clone();
    h[8] = 5;
    assert!(decode_dataset(&h).is_err());
    let mut trailing = bytes;
    trailing.push(0);
    assert!(decode_dataset(&trailing).is_err());
}

#[test]
fn build_windows_is_deterministic() {
    let (g, t) = scene(5);
    let cfg = WindowConfig {
        count: 4,
        seed: 11,
        ..Default::default()
    };
    let a = build_windows(&g, &t, &cfg, 1).unwrap();
    let b = build_windows(&g, &t, &cfg, 3).unwrap();
    assert_eq!(a.len(), 4);
    assert_eq!(a, b);
    let ds = Dataset::new(Head::Total, a).unwrap();
    assert_eq!(decode_dataset(&encode_dataset(&ds)).unwrap(), ds);
}
