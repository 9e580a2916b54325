use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::Quaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use v3dg_core::build::{build_bundle, BuildParams};
use v3dg_core::io::{sphere_key, Bundle};
use v3dg_core::model::{BoundingSphere, Camera, Instance, Scene, Vec3};
use v3dg_core::select::{
    footprint, gather, select, select_recursive, select_scene, select_vanilla, CullMode, LoadedScene, Tolerance,
};
use v3dg_core::synthetic::{blob, sphere_shell};

fn fixtures() -> Vec<Bundle> {
    let params = |cluster_size| BuildParams {
        cluster_size,
        iterations: 0,
        ..Default::default()
    };
    vec![
        build_bundle(&blob(8192, 1.0, 1), &params(256)).unwrap(),
        build_bundle(&sphere_shell(6000, 2.0, 2), &params(300)).unwrap(),
        build_bundle(&blob(5000, 1.5, 3), &BuildParams { group_size: 3, ..params(200) }).unwrap(),
    ]
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        if v.norm() > 0.1 && v.norm() <= 1.0 {
            return v.normalize();
        }
    }
}

/// A camera outside `outer` (radius of everything the instance can select),
/// looking roughly at it.
fn exterior_camera(rng: &mut ChaCha8Rng, center: Vec3, outer: f64) -> Camera {
    let eye = center + random_unit(rng) * outer * rng.random_range(1.05..30.0);
    let target = center + random_unit(rng) * outer * rng.random_range(0.0..0.8);
    let w = rng.random_range(64..1024);
    let h = rng.random_range(64..1024);
    let f = rng.random_range(0.5..2.0) * w as f64;
    Camera::look_at(eye, target, Vec3::z(), w, h, f, f).unwrap()
}

fn random_instance(rng: &mut ChaCha8Rng) -> Instance {
    let q = Quaternion::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let t = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
    Instance::new("a", t, q, rng.random_range(0.5..2.0)).unwrap()
}

/// Radius around the instance origin enclosing every finite sphere.
fn outer_radius(b: &Bundle, inst: &Instance) -> f64 {
    b.clusters
        .iter()
        .flat_map(|c| [c.own, c.parent])
        .filter(|s| s.radius.is_finite())
        .map(|s| {
            let t = inst.transform_sphere(&s);
            (t.center - inst.translation).norm() + t.radius
        })
        .fold(0.0, f64::max)
        * 1.01
        + 1e-3
}

fn random_tau(rng: &mut ChaCha8Rng) -> Tolerance {
    Tolerance::new(2f64.powf(rng.random_range(-2.0..20.0))).unwrap()
}

#[test]
fn predicate_matches_recursive_traversal() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut compared = 0;
    for b in fixtures() {
        for _ in 0..50 {
            let inst = random_instance(&mut rng);
            let cam = exterior_camera(&mut rng, inst.translation, outer_radius(&b, &inst));
            for _ in 0..10 {
                let tau = random_tau(&mut rng);
                assert_eq!(select(&b, &inst, &cam, tau), select_recursive(&b, &inst, &cam, tau));
                compared += 1;
            }
        }
    }
    assert_eq!(compared, 1500);
}

/// Every path from a layer-0 cluster up through the clusters its group
/// produced, and so on to the top layer.
fn chains(b: &Bundle) -> Vec<Vec<usize>> {
    let mut by_own: BTreeMap<(u32, [u64; 4]), Vec<usize>> = BTreeMap::new();
    for (i, c) in b.clusters.iter().enumerate() {
        by_own.entry((c.layer, sphere_key(&c.own))).or_default().push(i);
    }
    let mut out = Vec::new();
    let mut stack: Vec<Vec<usize>> = b.layer_clusters(0).map(|(i, _)| vec![i]).collect();
    while let Some(path) = stack.pop() {
        let c = &b.clusters[*path.last().unwrap()];
        if c.parent.radius.is_infinite() {
            out.push(path);
            continue;
        }
        let ups = &by_own[&(c.layer + 1, sphere_key(&c.parent))];
        for &u in ups {
            let mut next = path.clone();
            next.push(u);
            stack.push(next);
        }
    }
    out
}

#[test]
fn exactly_one_cluster_per_chain_and_never_empty() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for b in fixtures() {
        let paths = chains(&b);
        assert!(paths.len() >= b.layer_clusters(0).count());
        for _ in 0..40 {
            let inst = random_instance(&mut rng);
            let cam = exterior_camera(&mut rng, inst.translation, outer_radius(&b, &inst));
            for _ in 0..10 {
                let tau = random_tau(&mut rng);
                let chosen = select(&b, &inst, &cam, tau);
                assert!(!chosen.is_empty());
                for p in &paths {
                    let hits = p.iter().filter(|i| chosen.binary_search(i).is_ok()).count();
                    assert_eq!(hits, 1, "chain {p:?} at tau {}", tau.get());
                }
            }
        }
    }
}

#[test]
fn footprint_never_grows_into_a_contained_sphere() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut finite = 0;
    for _ in 0..10_000 {
        let outer = BoundingSphere::new(
            Vec3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)),
            rng.random_range(0.01..5.0),
        );
        let r = outer.radius * rng.random_range(0.0..1.0);
        let offset = random_unit(&mut rng) * (outer.radius - r) * rng.random_range(0.0..1.0);
        let inner = BoundingSphere::new(outer.center + offset, r);
        assert!(outer.encloses(&inner, 1e-9));
        let cam = exterior_camera(&mut rng, outer.center, outer.radius);
        let (fi, fo) = (footprint(&inner, &cam), footprint(&outer, &cam));
        assert!(fi <= fo, "inner {fi} > outer {fo}");
        if fo.is_finite() {
            finite += 1;
        }
    }
    assert!(finite > 5_000);
}

#[test]
fn footprint_edge_cases() {
    let cam = Camera::look_at(Vec3::new(0.0, 0.0, -10.0), Vec3::zeros(), Vec3::y(), 100, 100, 50.0, 50.0).unwrap();
    assert_eq!(footprint(&BoundingSphere::new(Vec3::zeros(), 0.0), &cam), 0.0);
    assert_eq!(footprint(&BoundingSphere::unbounded(Vec3::zeros()), &cam), f64::INFINITY);
    assert_eq!(footprint(&BoundingSphere::new(Vec3::zeros(), 11.0), &cam), f64::INFINITY);
    let f = footprint(&BoundingSphere::new(Vec3::zeros(), 1.0), &cam);
    assert!((f - std::f64::consts::PI * 2500.0 / 100.0).abs() < 1e-9);
    assert!(Tolerance::new(-1.0).is_err());
    assert!(Tolerance::new(f64::NAN).is_err());
    assert_eq!(Tolerance::new(0.0).unwrap().get(), 0.0);
}

fn two_instance_scene() -> LoadedScene {
    let b = build_bundle(&blob(4096, 1.0, 20), &BuildParams { cluster_size: 256, iterations: 0, ..Default::default() })
        .unwrap();
    let scene = Scene {
        assets: [("a".to_string(), PathBuf::from("a.v3dg"))].into(),
        instances: vec![
            Instance::new("a", Vec3::new(-2.0, 0.0, 0.0), Quaternion::identity(), 1.0).unwrap(),
            Instance::new("a", Vec3::new(2.0, 0.0, 0.0), Quaternion::new(0.0, 0.0, 0.0, 1.0), 0.5).unwrap(),
        ],
    };
    LoadedScene::new(scene, BTreeMap::from([("a".to_string(), b)])).unwrap()
}

#[test]
fn tau_zero_selects_everything_at_layer_zero() {
    let scene = two_instance_scene();
    let cam = Camera::look_at(Vec3::new(0.0, -12.0, 3.0), Vec3::zeros(), Vec3::z(), 320, 240, 300.0, 300.0).unwrap();
    let lod = select_scene(&scene, &cam, Tolerance::new(0.0).unwrap(), CullMode::Instance).unwrap();
    let vanilla = select_vanilla(&scene, &cam, CullMode::Instance).unwrap();
    assert_eq!(lod.instances, vanilla.instances);
    assert_eq!(lod.selected_count, 2 * 4096);
    assert_eq!(lod.resident_count, scene.resident_count());
    assert!((vanilla.percentage() - 100.0 * 8192.0 / scene.resident_count() as f64).abs() < 1e-9);
}

#[test]
fn gather_places_each_instance_in_world_space() {
    let scene = two_instance_scene();
    let cam = Camera::look_at(Vec3::new(0.0, -30.0, 0.0), Vec3::zeros(), Vec3::z(), 320, 240, 300.0, 300.0).unwrap();
    let sel = select_scene(&scene, &cam, Tolerance::new(4096.0).unwrap(), CullMode::Instance).unwrap();
    let gs = gather(&scene, &sel);
    assert_eq!(gs.len(), sel.selected_count);
    gs.validate().unwrap();
    let left = sel.instances[0].gaussians;
    assert!(gs.positions[..left].iter().all(|p| (p - Vec3::new(-2.0, 0.0, 0.0)).norm() < 1.01));
    assert!(gs.positions[left..].iter().all(|p| (p - Vec3::new(2.0, 0.0, 0.0)).norm() < 0.51));
}

#[test]
fn culling_drops_instances_behind_the_camera() {
    let scene = two_instance_scene();
    let cam = Camera::look_at(Vec3::new(10.0, 0.0, 0.0), Vec3::new(20.0, 0.0, 0.0), Vec3::z(), 320, 240, 300.0, 300.0)
        .unwrap();
    let tau = Tolerance::new(64.0).unwrap();
    assert_eq!(select_scene(&scene, &cam, tau, CullMode::Instance).unwrap().selected_count, 0);
    assert_eq!(select_scene(&scene, &cam, tau, CullMode::Cluster).unwrap().selected_count, 0);
    assert!(select_scene(&scene, &cam, tau, CullMode::Off).unwrap().selected_count > 0);
    assert_eq!(select_vanilla(&scene, &cam, CullMode::Instance).unwrap().selected_count, 0);
}
