use nalgebra::{Matrix2, SymmetricEigen};
use proptest::prelude::*;

use railloc_core::eval::{improvement, Cdf};
use railloc_core::filters::{
    imm_step, GnssMeasurement, ImmConfig, ImmState, ImuBatch, KinematicState, Mat5, SensorModel, Vec5,
};
use railloc_core::geom::{element_pose_at, normalize_angle, Chain, GeoPoint, LocalFrame, Pose2, TrackElement};
use railloc_core::trackmap::{map_from_str, map_to_string, TrackMap};

fn curvature() -> impl Strategy<Value = f64> {
    (150.0..3000.0f64, any::<bool>()).prop_map(|(r, left)| if left { 1.0 / r } else { -1.0 / r })
}

fn pose() -> impl Strategy<Value = Pose2> {
    (-1e4..1e4f64, -1e4..1e4f64, -3.14..3.14f64).prop_map(|(x, y, h)| Pose2::new(x, y, h, 0.0))
}

fn map_strategy() -> impl Strategy<Value = TrackMap> {
    (
        -60.0..60.0f64,
        -170.0..170.0f64,
        0.0..360.0f64,
        prop::collection::vec((curvature(), 5.0..400.0f64, 5.0..150.0f64, 5.0..150.0f64, 5.0..500.0f64), 1..5),
        5.0..500.0f64,
    )
        .prop_map(|(lat, lon, heading, arcs, lead)| {
            let mut elements = vec![TrackElement::straight(lead)];
            for (k, arc, ta_in, ta_out, st) in arcs {
                elements.push(TrackElement::transitional_arc(ta_in, 0.0, k));
                elements.push(TrackElement::circular_arc(arc, k));
                elements.push(TrackElement::transitional_arc(ta_out, k, 0.0));
                elements.push(TrackElement::straight(st));
            }
            TrackMap::new(GeoPoint::new(lat, lon).unwrap(), heading, elements).unwrap()
        })
}

fn psd(p: &Mat5) -> bool {
    let scale = p.diagonal().abs().max().max(1e-300);
    (p - p.transpose()).abs().max() <= 1e-9 * scale
        && SymmetricEigen::new(0.5 * (p + p.transpose())).eigenvalues.min() >= -1e-12 * scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn clothoid_pose_composes(start in pose(), k0 in -0.01..0.01f64, k1 in -0.01..0.01f64,
                              len in 1.0..600.0f64, frac in 0.0..1.0f64) {
        let start = Pose2::new(start.x, start.y, start.heading, k0);
        let e = TrackElement::transitional_arc(len, k0, k1);
        let s = frac * len;
        let mid = element_pose_at(&start, &e, s).unwrap();
        let direct = element_pose_at(&start, &e, len).unwrap();
        let via = element_pose_at(&mid, &e.remainder_from(s), len - s).unwrap();
        prop_assert!((direct.x - via.x).hypot(direct.y - via.y) < 1e-9);
        prop_assert!(normalize_angle(direct.heading - via.heading).abs() < 1e-12);
        let expected = normalize_angle(start.heading + 0.5 * (k0 + k1) * len);
        prop_assert!(normalize_angle(direct.heading - expected).abs() < 1e-12);
        prop_assert!((direct.curvature - k1).abs() < 1e-15);
    }

    #[test]
    fn projection_recovers_offset_points(start in pose(), k0 in -0.004..0.004f64, k1 in -0.004..0.004f64,
                                         len in 20.0..500.0f64, frac in 0.02..0.98f64, d in -40.0..40.0f64) {
        let start = Pose2::new(start.x, start.y, start.heading, k0);
        let e = TrackElement::transitional_arc(len, k0, k1);
        let foot = element_pose_at(&start, &e, frac * len).unwrap();
        let n = foot.normal();
        let q = [foot.x + d * n[0], foot.y + d * n[1]];
        let chain = Chain::new(start, &[e]).unwrap();
        let p = chain.project(q).unwrap();
        prop_assert!((p.arclength - frac * len).abs() < 1e-6, "{} vs {}", p.arclength, frac * len);
        prop_assert!((p.signed_distance - d).abs() < 1e-6);
        prop_assert!(p.arclength >= 0.0 && p.arclength <= len);
        let gap = (q[0] - p.foot_point.x).hypot(q[1] - p.foot_point.y);
        prop_assert!((gap - p.signed_distance.abs()).abs() < 1e-9);
    }

    #[test]
    fn geodetic_round_trip(lat in -80.0..80.0f64, lon in -179.0..179.0f64, e in -2e4..2e4f64, n in -2e4..2e4f64) {
        let frame = LocalFrame::new(GeoPoint::new(lat, lon).unwrap()).unwrap();
        let back = frame.to_local(frame.to_geo([e, n]));
        prop_assert!((back[0] - e).abs() < 1e-6 && (back[1] - n).abs() < 1e-6);
    }

    #[test]
    fn normalized_angles_stay_in_range(a in -100.0..100.0f64) {
        let b = normalize_angle(a);
        prop_assert!(b > -std::f64::consts::PI && b <= std::f64::consts::PI);
        let turns = (a - b) / std::f64::consts::TAU;
        prop_assert!((turns - turns.round()).abs() < 1e-9);
    }

    #[test]
    fn map_csv_round_trip(map in map_strategy()) {
        let first = map_to_string(&map);
        let loaded = map_from_str(&first).unwrap();
        prop_assert_eq!(&map_to_string(&loaded), &first);
        prop_assert_eq!(loaded.elements.len(), map.elements.len());
        for (a, b) in loaded.elements.iter().zip(&map.elements) {
            prop_assert!((a.length - b.length).abs() <= 5e-4);
            prop_assert_eq!(a.shape, b.shape);
        }
    }

    #[test]
    fn cdf_quantiles_are_monotone(values in prop::collection::vec(0.0..100.0f64, 1..200), p in 0.0..1.0f64, q in 0.0..1.0f64) {
        let cdf = Cdf::from_values(values);
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        prop_assert!(cdf.quantile(lo) <= cdf.quantile(hi));
        prop_assert!(cdf.at(cdf.quantile(hi)) >= hi - 1e-12);
        let table = cdf.table();
        prop_assert!(table.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
    }

    #[test]
    fn improvement_is_relative_reduction(base in 0.1..500.0f64, new in 0.0..500.0f64) {
        let i = improvement(base, new).unwrap();
        prop_assert!((i - 100.0 * (base - new) / base).abs() < 1e-9);
        prop_assert!(improvement(base, base).unwrap().abs() < 1e-12);
        prop_assert!(improvement(0.0, new).is_none());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn imm_probabilities_and_covariances_stay_valid(
        steps in prop::collection::vec((-0.5..0.5f64, -0.05..0.05f64, any::<bool>(), -20.0..20.0f64, -20.0..20.0f64), 50..300),
        mu0 in (0.01..1.0f64, 0.01..1.0f64, 0.01..1.0f64),
    ) {
        let total = mu0.0 + mu0.1 + mu0.2;
        let init = KinematicState::new(
            Vec5::from_column_slice(&[0.0, 0.0, 12.0, 0.3, 0.0]),
            Mat5::from_diagonal(&Vec5::from_column_slice(&[25.0, 25.0, 0.1, 0.01, 1e-4])),
        );
        let mut imm = ImmState::new(init, [mu0.0 / total, mu0.1 / total, mu0.2 / total]);
        let cfg = ImmConfig::default();
        let sensors = SensorModel::default();
        for (k, (accel, yaw, fix, dx, dy)) in steps.into_iter().enumerate() {
            let t = k as f64 * 0.1;
            let m = GnssMeasurement {
                position: [12.0 * t * 0.3f64.cos() + dx, 12.0 * t * 0.3f64.sin() + dy],
                cov: Matrix2::new(25.0, 2.0, 2.0, 16.0),
                speed: 12.0,
                speed_var: 0.01,
            };
            imm = imm_step(&imm, &ImuBatch { accel, yaw_rate: yaw }, fix.then_some(&m), 0.1, &cfg, &sensors).state;
            prop_assert!((imm.mu.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(imm.mu.iter().all(|m| (0.0..=1.0).contains(m)));
            prop_assert!(psd(&imm.fused.p));
            for model in &imm.models {
                prop_assert!(psd(&model.p));
            }
        }
    }
}
