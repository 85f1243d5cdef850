use lfs_core::captioner::fuse_features;
use lfs_core::embeddings::EmbeddingSequence;
use lfs_core::evaluation::{global_topk, temporal_dispersion, uniform_sample};
use lfs_core::selector::{entropy, segment_bounds, soft_distribution, stratified_topk, truncate_renormalize};
use lfs_core::tsnet::{decode_checkpoint, encode_checkpoint, normalize_logits, tsnet_init, TSNetConfig};
use proptest::collection::vec;
use proptest::prelude::*;

/// Scores on a 1/64 grid: exact under `3x + 7` and distinct after `tanh`.
fn grid_scores(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    vec(-192i32..192, 1..max_len).prop_map(|v| v.into_iter().map(|i| f64::from(i) / 64.0).collect())
}

fn scores_and_budget(max_len: usize) -> impl Strategy<Value = (Vec<f64>, usize)> {
    grid_scores(max_len).prop_flat_map(|s| {
        let n = s.len();
        (Just(s), 1..=n)
    })
}

fn distribution(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    vec(-6.0f64..6.0, 1..max_len).prop_map(|s| soft_distribution(&s, 1.0).unwrap().p)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn lfse_round_trip_is_bit_exact(
        id in "[a-z0-9_-]{0,12}",
        (n, d, data) in (1usize..12, 1usize..9).prop_flat_map(|(n, d)| {
            (Just(n), Just(d), vec(any::<f32>().prop_filter("finite", |v| v.is_finite()), n * d))
        }),
    ) {
        let seq = EmbeddingSequence::new(id.clone(), n, d, data.clone()).unwrap();
        let bytes = seq.to_bytes();
        prop_assert_eq!(bytes.len(), 4 + 2 + 2 + 4 + id.len() + 4 + 4 + 4 * n * d);
        let back = EmbeddingSequence::from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.video_id(), id.as_str());
        let a: Vec<u32> = back.data().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = data.iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(a, b);
        prop_assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn lfsp_round_trip_is_bit_exact(
        dim in 1usize..6, hidden in 1usize..10, seed in any::<u64>(),
        flags in 0u8..16, k1 in prop::sample::select(vec![1usize, 3, 5, 7]),
    ) {
        let mut cfg = TSNetConfig::with_hidden(dim, hidden);
        cfg.k1 = k1;
        cfg.gating = flags & 1 != 0;
        cfg.normalize = flags & 2 != 0;
        cfg.event_conv = flags & 4 != 0;
        cfg.mlp_gelu = flags & 8 != 0;
        let params = tsnet_init(&cfg, seed).unwrap();
        let bytes = encode_checkpoint(&cfg, &params).unwrap();
        let (cfg2, params2) = decode_checkpoint(&bytes).unwrap();
        prop_assert_eq!(&cfg2, &cfg);
        prop_assert_eq!(params2.checksum(), params.checksum());
        prop_assert_eq!(encode_checkpoint(&cfg2, &params2).unwrap(), bytes);
    }

    #[test]
    fn stratified_selection_is_invariant_under_increasing_maps(
        (s, k) in scores_and_budget(96), retain in any::<bool>(),
    ) {
        let base = stratified_topk(&s, k, retain).unwrap();
        let affine: Vec<f64> = s.iter().map(|v| 3.0 * v + 7.0).collect();
        let squashed: Vec<f64> = s.iter().map(|v| v.tanh()).collect();
        prop_assert_eq!(&stratified_topk(&affine, k, retain).unwrap().indices, &base.indices);
        prop_assert_eq!(&stratified_topk(&squashed, k, retain).unwrap().indices, &base.indices);
        prop_assert_eq!(&global_topk(&affine, k).unwrap(), &global_topk(&s, k).unwrap());
    }

    #[test]
    fn stratified_selection_structure((s, k) in scores_and_budget(200), retain in any::<bool>()) {
        let n = s.len();
        let r = stratified_topk(&s, k, retain).unwrap();
        r.validate(n).unwrap();
        prop_assert_eq!(r.k(), k);
        prop_assert_eq!(&r.segments, &segment_bounds(n, k));
        let longest = r.segments.iter().map(|(a, b)| b - a).max().unwrap();
        prop_assert!(longest <= n.div_ceil(k));
        for w in r.indices.windows(2) {
            prop_assert!(w[1] - w[0] < 2 * n.div_ceil(k));
        }
        for (j, (&i, &(lo, hi))) in r.indices.iter().zip(&r.segments).enumerate() {
            let overridden = retain && k >= 2 && (j == 0 || j == k - 1);
            if !overridden {
                prop_assert!((lo..hi).all(|t| s[t] <= s[i]));
                prop_assert!((lo..i).all(|t| s[t] < s[i]));
            }
        }
        if retain && k >= 2 {
            prop_assert_eq!(r.endpoint_retained, [true, true]);
        }
    }

    #[test]
    fn softmax_is_a_distribution(s in vec(-50.0f64..50.0, 1..300), tau in 0.05f64..5.0) {
        let f = soft_distribution(&s, tau).unwrap();
        let total: f64 = f.p.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(f.p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let argmax = (0..s.len()).fold(0, |b, t| if s[t] > s[b] { t } else { b });
        prop_assert!(f.p.iter().all(|&v| v <= f.p[argmax]));
    }

    #[test]
    fn entropy_bounds(p in distribution(64)) {
        let h = entropy(&p).unwrap();
        prop_assert!(h >= -1e-12);
        prop_assert!(h <= (p.len() as f64).ln() + 1e-12);
    }

    #[test]
    fn renormalized_weights_keep_the_top_mass(p in distribution(80), m in 1usize..40) {
        let fw = truncate_renormalize(&p, m).unwrap();
        let kept = m.min(p.len());
        prop_assert_eq!(fw.candidates.len(), kept);
        prop_assert!((fw.w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!((fw.mass() - fw.pre_norm.iter().sum::<f64>()).abs() == 0.0);
        for (j, &t) in fw.candidates.iter().enumerate() {
            prop_assert_eq!(fw.pre_norm[j], p[t]);
            prop_assert!((fw.w[j] * fw.mass() - p[t]).abs() <= 1e-15);
        }
        let smallest_kept = fw.pre_norm.iter().copied().fold(f64::INFINITY, f64::min);
        for t in 0..p.len() {
            if !fw.candidates.contains(&t) {
                prop_assert!(p[t] <= smallest_kept);
            }
        }
        prop_assert!(fw.w_uni.iter().all(|&u| u == 1.0 / kept as f64));
    }

    #[test]
    fn fusion_is_linear_in_the_weights(
        (rows, d, frames) in (1usize..8, 1usize..6).prop_flat_map(|(r, d)| (Just(r), Just(d), vec(-3.0f64..3.0, r * d))),
        a_raw in vec(0.01f64..1.0, 8), b_raw in vec(0.01f64..1.0, 8), lam in 0.0f64..1.0,
    ) {
        let norm = |v: &[f64]| {
            let s: f64 = v[..rows].iter().sum();
            v[..rows].iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let (a, b) = (norm(&a_raw), norm(&b_raw));
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| lam * x + (1.0 - lam) * y).collect();
        let fa = fuse_features(&frames, d, &a).unwrap().value;
        let fb = fuse_features(&frames, d, &b).unwrap().value;
        let fm = fuse_features(&frames, d, &mix).unwrap().value;
        for j in 0..d {
            prop_assert!((fm[j] - (lam * fa[j] + (1.0 - lam) * fb[j])).abs() < 1e-12);
        }
    }

    #[test]
    fn normalized_logits_are_standardized(s in vec(-1e3f64..1e3, 2..200)) {
        let eps = 1e-5;
        let (z, _, var) = normalize_logits(&s, eps);
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let msq = z.iter().map(|v| v * v).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        if var > 0.0 {
            prop_assert!(msq <= 1.0 + 1e-12);
            prop_assert!(msq >= 1.0 - 10.0 * eps / var - 1e-12);
        }
    }

    #[test]
    fn baselines_are_well_formed((s, k) in scores_and_budget(150)) {
        let n = s.len();
        let u = uniform_sample(n, k).unwrap();
        prop_assert_eq!(u.len(), k);
        prop_assert!(u.windows(2).all(|w| w[0] < w[1]));
        prop_assert_eq!(u[0], 0);
        if k >= 2 {
            prop_assert_eq!(*u.last().unwrap(), n - 1);
            let d = temporal_dispersion(&u, n).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
        }
        let g = global_topk(&s, k).unwrap();
        prop_assert_eq!(g.len(), k);
        prop_assert!(g.windows(2).all(|w| w[0] < w[1]));
    }
}
