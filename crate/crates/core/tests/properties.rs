use proptest::prelude::*;

use robustsplat::robust::{absorb_color_into_sh, motion_blur_transform};
use robustsplat::sh::coeff_count;
use robustsplat::synth::{generate_scene, orbit_cameras};
use robustsplat::{
    read_ply, render, select_test_views, write_ply, ColorParams, ConflictMode, DefocusParams, GaussianPrimitive, Mat3, Mechanisms,
    PerImageParams, Quaternion, RenderOptions, Rgb, Scene, SelectionRule, SpdMat3, Vec3, ViewRecord,
};

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn params() -> impl Strategy<Value = PerImageParams> {
    (vec3(0.03), vec3(0.03), vec3(1.5), vec3(1.5), 0.0..20.0f64, 0.2..0.6f64, vec3(0.1), vec3(0.05)).prop_map(
        |(rot, trans, lr, lt, aperture, rho, wn, q)| {
            let mut p = PerImageParams::identity();
            p.enabled = Mechanisms::ALL;
            p.motion.rotation = Quaternion::from_rotation_vector(&rot);
            p.motion.translation = trans;
            p.motion.log_std_rotation = lr.add_scalar(-5.0);
            p.motion.log_std_translation = lt.add_scalar(-5.0);
            p.defocus = DefocusParams { aperture, focus_inv_depth: rho };
            p.color = ColorParams { matrix: Mat3::identity() + Mat3::from_diagonal(&wn), offset: q };
            p
        },
    )
}

fn spd() -> impl Strategy<Value = Mat3> {
    (proptest::array::uniform9(-0.2..0.2f64), 1e-6..1e-3f64).prop_map(|(a, d)| {
        let a = Mat3::from_row_slice(&a);
        a * a.transpose() + Mat3::identity() * d
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn renders_are_finite_and_in_unit_range(seed in 0u64..1000, view in 0usize..8, p in params()) {
        let scene = generate_scene(12, 1.0, 2, seed);
        let cam = &orbit_cameras(8, 1.0, 0.1, 24, 24)[view];
        let img = render(&scene, cam, &p, &RenderOptions::default());
        prop_assert!(img.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v)));
    }

    #[test]
    fn blurred_covariance_is_spd_and_mass_preserving(mean in vec3(1.0), cov in spd(), alpha in 0.01..0.99f64, p in params()) {
        let out = motion_blur_transform(&mean, &SpdMat3::new_unchecked(cov), alpha, &p.motion);
        let m = out.cov.matrix();
        prop_assert!(m.symmetric_eigenvalues().iter().all(|e| *e > 0.0));
        let before = alpha * cov.determinant().sqrt();
        let after = out.opacity * m.determinant().sqrt();
        prop_assert!((after - before).abs() <= 1e-9 * before);
    }

    #[test]
    fn absorbed_scene_renders_like_color_transform(seed in 0u64..1000, view in 0usize..8, wn in vec3(0.15), q in vec3(0.08)) {
        let scene = generate_scene(10, 1.0, 3, seed);
        let cam = &orbit_cameras(8, 1.0, 0.4, 20, 20)[view];
        let color = ColorParams { matrix: Mat3::identity() + Mat3::from_diagonal(&wn), offset: q };
        let mut absorbed = scene.clone();
        for prim in &mut absorbed.primitives {
            prim.sh = absorb_color_into_sh(&prim.sh, &color);
        }
        let with = PerImageParams { color, enabled: Mechanisms { color: true, ..Mechanisms::NONE }, ..PerImageParams::identity() };
        let opts = RenderOptions::default();
        let a = render(&scene, cam, &with, &opts);
        let b = render(&absorbed, cam, &PerImageParams::identity(), &opts);
        let worst = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(worst < 1e-9, "max difference {worst}");
    }

    #[test]
    fn ply_round_trip_is_exact_at_f32(seed in 0u64..10_000, n in 1usize..40, degree in 0usize..=3) {
        let scene = generate_scene(n, 1.0, degree, seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ply");
        write_ply(&scene, &path).unwrap();
        let back = read_ply(&path).unwrap();
        let q = |v: f64| v as f32 as f64;
        prop_assert_eq!(back.sh_degree, degree);
        for (a, b) in scene.primitives.iter().zip(&back.primitives) {
            prop_assert_eq!(a.position.map(q), b.position);
            prop_assert_eq!(a.log_scale.map(q), b.log_scale);
            prop_assert_eq!(q(a.opacity_logit), b.opacity_logit);
            prop_assert_eq!(a.sh.len(), coeff_count(degree));
            prop_assert!(a.sh.iter().zip(&b.sh).all(|(x, y)| x.map(q) == *y));
        }
    }

    #[test]
    fn selection_is_admissible_and_maximal(
        raw in proptest::collection::vec((vec3(1.0), vec3(1.0), 0u8..6), 1..25),
        k in 1usize..8,
        disjunctive in any::<bool>(),
    ) {
        let views: Vec<ViewRecord> = raw
            .iter()
            .enumerate()
            .map(|(i, (c, a, s))| ViewRecord {
                id: format!("v{i:02}"),
                center: *c,
                axis: if a.norm() > 1e-6 { a.normalize() } else { Vec3::z() },
                score: *s as f64,
                selected: false,
            })
            .collect();
        let mode = if disjunctive { ConflictMode::Disjunctive } else { ConflictMode::Conjunctive };
        let rule = SelectionRule { k, min_dist: 0.5, min_angle: 60.0, mode };
        let chosen = select_test_views(&views, &rule);
        prop_assert!(chosen.len() <= k);
        prop_assert!(chosen.iter().all(|v| v.selected));
        for (i, a) in chosen.iter().enumerate() {
            for b in &chosen[i + 1..] {
                prop_assert!(!rule.conflicts(a, b));
            }
        }
        for w in chosen.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
        if chosen.len() < k {
            for v in &views {
                let taken = chosen.iter().any(|c| c.id == v.id);
                prop_assert!(taken || chosen.iter().any(|c| rule.conflicts(c, v)), "{} could still be added", v.id);
            }
        }
    }
}

#[test]
fn unnormalized_quaternion_is_stored_as_given() {
    // A non-normalized rotation is stored as given; normalization is the renderer's job.
    let prim = GaussianPrimitive {
        position: Vec3::new(0.125, -0.25, 0.375),
        log_scale: Vec3::repeat(-3.0),
        rotation: Quaternion { w: 2.0, x: 0.0, y: 0.0, z: 0.0 },
        opacity_logit: 0.5,
        sh: vec![Rgb::new(0.5, -0.75, 1.5)],
    };
    let scene = Scene { primitives: vec![prim], sh_degree: 0 };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("q.ply");
    write_ply(&scene, &path).unwrap();
    assert_eq!(read_ply(&path).unwrap(), scene);
}
