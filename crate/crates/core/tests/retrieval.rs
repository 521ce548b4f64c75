mod common;

use common::{crop_corpus, rng};
use ots_core::extract::{ExtractorBinding, ImageSource};
use ots_core::retrieval::{
    build_index, multi_level_patches, patch_count, patch_grid, patch_to_ref_distance, query_distance, IndexEntry,
    SpatialSearchConfig,
};
use ots_core::{FeatureVector, PixelGrid, Rect, RetrievalIndex};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn grid_examples() {
    assert_eq!(patch_grid(300, 200, 1).unwrap(), vec![Rect::new(0, 0, 300, 200)]);
    let l2 = patch_grid(300, 300, 2).unwrap();
    assert_eq!(
        l2,
        vec![
            Rect::new(0, 0, 200, 200),
            Rect::new(100, 0, 200, 200),
            Rect::new(0, 100, 200, 200),
            Rect::new(100, 100, 200, 200),
        ]
    );
    let l3 = patch_grid(300, 300, 3).unwrap();
    let xs: Vec<(u32, u32)> = l3.iter().map(|r| (r.x, r.y)).collect();
    assert_eq!(xs, vec![(0, 0), (75, 0), (150, 0), (0, 75), (75, 75), (150, 75), (0, 150), (75, 150), (150, 150)]);
    assert!(l3.iter().all(|r| r.w == 150 && r.h == 150));
}

#[test]
fn patch_totals() {
    assert_eq!(patch_count(4), 30);
    assert_eq!(patch_count(3), 14);
    assert_eq!(multi_level_patches(50, 40, 4).unwrap().len(), 30);
}

proptest! {
    #[test]
    fn levels_cover_the_image(w in 1u32..=64, h in 1u32..=64, level in 1u32..=6) {
        let Ok(rects) = patch_grid(w, h, level) else {
            // only when a side rounds to zero
            prop_assert!((2.0 * w.min(h) as f64 / (level + 1) as f64).round() == 0.0);
            return Ok(());
        };
        prop_assert_eq!(rects.len(), (level * level) as usize);
        let mut covered = vec![false; (w * h) as usize];
        for r in &rects {
            prop_assert!(r.fits_in(w, h));
            prop_assert_eq!((r.w, r.h), (rects[0].w, rects[0].h));
            for y in r.y..r.y + r.h {
                for x in r.x..r.x + r.w {
                    covered[(y * w + x) as usize] = true;
                }
            }
        }
        prop_assert!(covered.iter().all(|&c| c));
    }
}

fn random_entry(r: &mut impl Rng, patches: usize, dim: usize) -> IndexEntry<f64> {
    IndexEntry {
        id: "e".into(),
        rects: vec![Rect::new(0, 0, 1, 1); patches],
        vectors: (0..patches)
            .map(|_| FeatureVector::new((0..dim).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap())
            .collect(),
    }
}

#[test]
fn distances_match_nested_loops() {
    let mut r = rng(100);
    for _ in 0..100 {
        let entry = random_entry(&mut r, 30, 8);
        let queries = random_entry(&mut r, 14, 8).vectors;
        let mut total = 0.0;
        for q in &queries {
            let mut best = f64::INFINITY;
            for v in &entry.vectors {
                let d: f64 = q.iter().zip(v.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                best = best.min(d);
            }
            assert!((patch_to_ref_distance(q, &entry).unwrap() - best).abs() < 1e-12);
            total += best;
        }
        assert!((query_distance(&queries, &entry).unwrap() - total / 14.0).abs() < 1e-9);
    }
}

#[test]
fn adding_a_patch_never_increases_distance() {
    let mut r = rng(3);
    for _ in 0..50 {
        let mut entry = random_entry(&mut r, 10, 5);
        let q = random_entry(&mut r, 1, 5).vectors.remove(0);
        let before = patch_to_ref_distance(&q, &entry).unwrap();
        entry.vectors.push(random_entry(&mut r, 1, 5).vectors.remove(0));
        assert!(patch_to_ref_distance(&q, &entry).unwrap() <= before);
        entry.vectors.push(q.clone());
        assert_eq!(patch_to_ref_distance(&q, &entry).unwrap(), 0.0);
    }
}

fn textured(seed: u64, n: usize, side: u32) -> Vec<ImageSource> {
    let mut r = rng(seed);
    (0..n)
        .map(|i| {
            let data = common::texture(&mut r, side, side);
            ImageSource::from_pixels(format!("img{i}"), PixelGrid::new(side, side, data).unwrap())
        })
        .collect()
}

#[test]
fn built_index_shape_and_self_match() {
    let refs = textured(1, 6, 40);
    let binding = ExtractorBinding::<f64>::toy(4).unwrap();
    let cfg = SpatialSearchConfig::default();
    let (index, report) = build_index(&refs, &cfg, &binding).unwrap();
    assert!(report.max_pre_power_norm_error < 1e-12);
    assert_eq!(index.model().k(), 16);
    for e in index.entries() {
        assert_eq!(e.vectors.len(), 30);
        assert!(e.vectors.iter().all(|v| v.dim() == 16));
    }
    // the same image as a query with h_q = h_r: every query patch is in the entry
    for img in &refs {
        let hits = index.search(img, 4, 100, &binding).unwrap();
        assert_eq!(hits.hits.len(), refs.len());
        assert_eq!(hits.hits[0], (img.id.clone(), 0.0));
        assert!(hits.hits.windows(2).all(|w| w[0].1 <= w[1].1));
    }
}

#[test]
fn one_level_is_whole_image_retrieval() {
    let refs = textured(2, 5, 32);
    let binding = ExtractorBinding::<f64>::toy(3).unwrap();
    let cfg = SpatialSearchConfig {
        h_r: 1,
        ..SpatialSearchConfig::default()
    };
    let (index, _) = build_index(&refs, &cfg, &binding).unwrap();
    for img in &refs {
        let q = index.query_vectors(img, 1, &binding).unwrap();
        assert_eq!(q.len(), 1);
        for e in index.entries() {
            let direct: f64 = q[0].iter().zip(e.vectors[0].iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert_eq!(query_distance(&q, e).unwrap(), direct);
        }
    }
}

#[test]
fn crops_retrieve_their_source() {
    let (refs, queries) = crop_corpus(42, 20, 48, 0.7);
    let binding = ExtractorBinding::<f64>::toy(4).unwrap();
    let (index, _) = build_index(&refs, &SpatialSearchConfig::default(), &binding).unwrap();
    for q in &queries {
        let ranked = index.search(q, 3, 4, &binding).unwrap();
        assert_eq!(ranked.hits[0].0, q.id, "{:?}", ranked.hits);
    }
}

#[test]
fn ranking_depends_only_on_distance_order() {
    let (refs, queries) = crop_corpus(5, 8, 40, 0.7);
    let binding = ExtractorBinding::<f64>::toy(4).unwrap();
    let (index, _) = build_index(&refs, &SpatialSearchConfig::default(), &binding).unwrap();
    for q in &queries {
        let patches = index.query_vectors(q, 3, &binding).unwrap();
        let ranked = index.rank(&patches, 100).unwrap();
        let mut transformed: Vec<(String, f64)> = index
            .entries()
            .iter()
            .map(|e| (e.id.clone(), (query_distance(&patches, e).unwrap() * 3.0 + 1.0).ln()))
            .collect();
        transformed.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
        let order: Vec<&str> = transformed.iter().map(|(id, _)| id.as_str()).collect();
        assert_eq!(ranked.ids(), order);
    }
}

#[test]
fn index_bytes_are_deterministic_and_round_trip() {
    let refs = textured(8, 4, 36);
    let binding = ExtractorBinding::<f64>::toy(3).unwrap();
    let cfg = SpatialSearchConfig::default();
    let (a, _) = build_index(&refs, &cfg, &binding).unwrap();
    let (b, _) = build_index(&refs, &cfg, &binding).unwrap();
    let bytes = a.to_bytes().unwrap();
    assert_eq!(bytes, b.to_bytes().unwrap());
    let back = RetrievalIndex::from_bytes(&bytes).unwrap();
    assert_eq!(back, a);
    for q in &refs {
        let x = a.search(q, 3, 10, &binding).unwrap();
        let y = back.search(q, 3, 10, &binding).unwrap();
        assert_eq!(x, y);
    }
    for cut in [3, 40, bytes.len() / 2, bytes.len() - 1] {
        assert!(RetrievalIndex::from_bytes(&bytes[..cut]).is_err());
    }
}

#[test]
fn single_reference_is_rejected() {
    let refs = textured(1, 1, 20);
    let binding = ExtractorBinding::<f64>::toy(2).unwrap();
    assert!(build_index(&refs, &SpatialSearchConfig::default(), &binding).is_err());
}

#[test]
fn single_precision_index() {
    let refs = textured(4, 4, 30);
    let binding = ExtractorBinding::<f32>::toy(3).unwrap();
    let (index, _) = build_index(&refs, &SpatialSearchConfig::default(), &binding).unwrap();
    let back = ots_core::RetrievalIndexF32::from_bytes(&index.to_bytes().unwrap()).unwrap();
    assert_eq!(back, index);
    assert_eq!(index.search(&refs[2], 4, 1, &binding).unwrap().hits[0].0, "img2");
}
