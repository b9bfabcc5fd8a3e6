use icuau_core::align::{
    align_frame, alignment_rmse, cached_transform, estimate_similarity, warp_crop, AlignmentCache, CanonicalTemplate,
    LandmarkSet, Raster, SimilarityTransform,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn moved_template(t: &SimilarityTransform, id: &str) -> LandmarkSet {
    let pts = CanonicalTemplate::standard()
        .points()
        .iter()
        .map(|p| t.apply(*p))
        .collect();
    LandmarkSet::new(id, pts).unwrap()
}

#[test]
fn template_maps_to_identity() {
    let tpl = CanonicalTemplate::standard();
    let l = LandmarkSet::new("x", tpl.points().to_vec()).unwrap();
    let t = estimate_similarity(&l, &tpl).unwrap();
    for (a, b) in t.to_array().iter().zip(SimilarityTransform::IDENTITY.to_array()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn shifted_template_gives_opposite_translation() {
    let tpl = CanonicalTemplate::standard();
    let shift = SimilarityTransform::new(1.0, 0.0, 5.0, -3.0).unwrap();
    let l = moved_template(&shift, "s");
    let t = estimate_similarity(&l, &tpl).unwrap();
    assert!((t.tx + 5.0).abs() < 1e-10 && (t.ty - 3.0).abs() < 1e-10);
    assert!((t.a - 1.0).abs() < 1e-12 && t.b.abs() < 1e-12);
    assert!(alignment_rmse(&t, l.points(), tpl.points()) < 1e-10);
}

#[test]
fn rotated_scaled_template_is_undone() {
    let tpl = CanonicalTemplate::standard();
    let fwd = SimilarityTransform::from_params(2.0, std::f64::consts::FRAC_PI_2, 10.0, -4.0).unwrap();
    let l = moved_template(&fwd, "r");
    let t = estimate_similarity(&l, &tpl).unwrap();
    assert!((t.rotation() + std::f64::consts::FRAC_PI_2).abs() < 1e-10);
    assert!((t.scale() - 0.5).abs() < 1e-10);
    assert!(alignment_rmse(&t, l.points(), tpl.points()) < 1e-8);
}

#[test]
fn random_similarities_are_recovered() {
    let tpl = CanonicalTemplate::standard();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for i in 0..100 {
        let truth = SimilarityTransform::from_params(
            rng.random_range(0.2..5.0),
            rng.random_range(-3.1..3.1),
            rng.random_range(-500.0..500.0),
            rng.random_range(-500.0..500.0),
        )
        .unwrap();
        let l = moved_template(&truth, &format!("f{i}"));
        let t = estimate_similarity(&l, &tpl).unwrap();
        let expected = truth.inverse();
        for (a, b) in t.to_array().iter().zip(expected.to_array()) {
            assert!((a - b).abs() < 1e-8, "{i}: {t:?} vs {expected:?}");
        }
        assert!(alignment_rmse(&t, l.points(), tpl.points()) < 1e-8);
    }
}

fn smooth_image(size: usize) -> Raster {
    let mut px = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64 / size as f64, y as f64 / size as f64);
            px.push((40.0 + 160.0 * fx) as u8);
            px.push((30.0 + 180.0 * fy) as u8);
            px.push((120.0 + 60.0 * (fx * 6.0).sin() * (fy * 5.0).cos()) as u8);
        }
    }
    Raster::new(size, size, px).unwrap()
}

#[test]
fn warp_and_inverse_warp_reproduce_interior() {
    let img = smooth_image(64);
    let t = SimilarityTransform::from_params(1.0, 0.3, 12.0, -6.0).unwrap();
    let there = warp_crop(&img, &t, 96).unwrap();
    let back = warp_crop(&there, &t.inverse(), 64).unwrap();
    let mut checked = 0;
    for y in 16..48 {
        for x in 16..48 {
            let (a, b) = (img.get(x, y), back.get(x, y));
            for c in 0..3 {
                assert!((a[c] as i32 - b[c] as i32).abs() <= 2, "({x},{y}) {a:?} {b:?}");
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 32 * 32);
}

#[test]
fn cache_replay_is_bit_exact_with_full_hit_rate() {
    let tpl = CanonicalTemplate::with_size(32).unwrap();
    let img = smooth_image(80);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let frames: Vec<LandmarkSet> = (0..20)
        .map(|i| {
            let fwd =
                SimilarityTransform::from_params(rng.random_range(1.5..2.5), rng.random_range(-0.3..0.3), 5.0, 5.0)
                    .unwrap();
            moved_template(&fwd, &format!("frame{i}"))
        })
        .collect();

    let cache = AlignmentCache::new();
    let first: Vec<Raster> = frames
        .iter()
        .map(|l| align_frame(&img, l, &tpl, &cache).unwrap())
        .collect();
    assert_eq!(cache.stats().misses, 20);
    assert_eq!(cache.stats().hits, 0);
    cache.reset_stats();
    let second: Vec<Raster> = frames
        .iter()
        .map(|l| align_frame(&img, l, &tpl, &cache).unwrap())
        .collect();
    assert_eq!(cache.stats().hits, 20);
    assert_eq!(cache.stats().hit_rate(), 1.0);
    assert_eq!(first, second);

    // uncached crops match too, and a cached transform equals a fresh estimate
    for (l, crop) in frames.iter().zip(&first) {
        let fresh = estimate_similarity(l, &tpl).unwrap();
        assert_eq!(cached_transform(&cache, l, &tpl).unwrap(), fresh);
        assert_eq!(&warp_crop(&img, &fresh, 32).unwrap(), crop);
    }
}

#[test]
fn cache_supports_concurrent_readers() {
    let cache = AlignmentCache::new();
    let tpl = CanonicalTemplate::standard();
    let sets: Vec<LandmarkSet> = (0..8)
        .map(|i| {
            moved_template(
                &SimilarityTransform::new(1.0, 0.0, i as f64, 0.0).unwrap(),
                &format!("c{i}"),
            )
        })
        .collect();
    std::thread::scope(|s| {
        for _ in 0..4 {
            s.spawn(|| {
                for l in &sets {
                    cached_transform(&cache, l, &tpl).unwrap();
                }
            });
        }
    });
    let st = cache.stats();
    assert_eq!(st.lookups(), 32);
    assert!(st.misses >= 8);
    assert_eq!(cache.len(), 8);
}
