use naq_core::annotations::{Narration, VideoTimeline};
use naq_core::naqgen::{generate_naq, subsample};
use naq_core::trj::{apply_jitter, clamp_window, jitter_window, seed_window, TrjConfig};
use naq_core::{seed, Parallelism};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn jitter_contains_seed_and_respects_bounds(
        t in 0.0f64..1000.0,
        beta in 0.0f64..30.0,
        alpha in 0.05f64..10.0,
        scale in 1.0f64..30.0,
        duration_pad in 0.0f64..50.0,
        rng_seed in any::<u64>(),
    ) {
        let duration = t + duration_pad;
        let seed_w = seed_window(t, beta, alpha).unwrap();
        let cfg = TrjConfig::new(scale, alpha).unwrap();
        let (w, draw) = jitter_window(&seed_w, &cfg, &mut seed::rng(rng_seed));
        prop_assert!(w.start_sec <= seed_w.start_sec && seed_w.end_sec <= w.end_sec);
        prop_assert!((1.0..=scale).contains(&draw.s));
        prop_assert!(draw.delta_t.abs() <= draw.t_max);
        let half = seed_w.half_width();
        prop_assert!(w.width() <= 2.0 * scale * half * (1.0 + 1e-12) + 1e-12);
        prop_assert!((w.width() - 2.0 * draw.s * half).abs() <= 1e-9 * (1.0 + w.width()));
        prop_assert!(((w.center() - seed_w.center()).abs() - draw.delta_t.abs()).abs() <= 1e-9 * (1.0 + t));

        let clamped = clamp_window(&w, duration).window;
        let inside = (seed_w.start_sec.max(0.0), seed_w.end_sec.min(duration));
        prop_assert!(clamped.start_sec <= inside.0 && inside.1 <= clamped.end_sec);
        prop_assert!(clamped.start_sec >= 0.0 && clamped.end_sec <= duration);

        let (again, draw2) = jitter_window(&seed_w, &cfg, &mut seed::rng(rng_seed));
        prop_assert_eq!(again, w);
        prop_assert_eq!(draw2, draw);
        prop_assert_eq!(apply_jitter(&seed_w, draw.s, draw.delta_t), w);
    }
}

fn corpus(n_videos: usize, per_video: usize, duration: f64) -> Vec<VideoTimeline> {
    let mut rng = seed::rng(5);
    (0..n_videos)
        .map(|v| {
            let uid = format!("vid{v:03}");
            let narrs = (0..per_video)
                .map(|i| Narration {
                    video_uid: uid.clone(),
                    timestamp_sec: rand::Rng::random_range(&mut rng, 0.0..duration),
                    text: format!("C opens the drawer {i}"),
                    index: 0,
                })
                .collect();
            VideoTimeline::new(uid, duration, narrs).unwrap()
        })
        .collect()
}

#[test]
fn generation_is_pure_and_parallel_invariant() {
    let c = corpus(30, 40, 300.0);
    let cfg = TrjConfig::for_corpus(&c, 5.0).unwrap();
    let a = generate_naq(&c, &cfg, 11, Parallelism::Sequential).unwrap();
    let b = generate_naq(&c, &cfg, 11, Parallelism::Parallel).unwrap();
    assert_eq!(a, b);
    let mut reversed = c.clone();
    reversed.reverse();
    assert_eq!(generate_naq(&reversed, &cfg, 11, Parallelism::Parallel).unwrap().samples, a.samples);
    assert_ne!(generate_naq(&c, &cfg, 12, Parallelism::Parallel).unwrap().samples, a.samples);
}

#[test]
fn mean_expansion_is_three_at_s5() {
    // Windows far from the video ends so clamping never applies.
    let c = corpus(50, 400, 100_000.0);
    let cfg = TrjConfig::for_corpus(&c, 5.0).unwrap();
    let ds = generate_naq(&c, &cfg, 3, Parallelism::Parallel).unwrap();
    let mut out_width = 0.0;
    let mut seed_width = 0.0;
    for s in &ds.samples {
        let tl = c.iter().find(|v| v.video_uid == s.video_uid).unwrap();
        let t = tl.narrations[s.narration_index].timestamp_sec;
        let seed_w = seed_window(t, tl.beta_sec.unwrap(), cfg.alpha_sec).unwrap();
        if seed_w.start_sec < 0.0 || seed_w.end_sec > tl.duration_sec {
            continue;
        }
        out_width += s.window.width();
        seed_width += seed_w.width();
    }
    let ratio = out_width / seed_width;
    assert!((1.0..=5.0).contains(&ratio));
    assert!((ratio - 3.0).abs() / 3.0 < 0.02, "ratio {ratio}");
}

#[test]
fn subsample_is_nested() {
    let c = corpus(10, 50, 200.0);
    let cfg = TrjConfig::for_corpus(&c, 2.5).unwrap();
    let ds = generate_naq(&c, &cfg, 0, Parallelism::Sequential).unwrap();
    let fractions = [0.0, 0.1, 0.25, 0.5, 0.9, 1.0];
    let subsets: Vec<_> = fractions.iter().map(|&f| subsample(&ds, f, 9).unwrap().samples).collect();
    for (f, s) in fractions.iter().zip(&subsets) {
        assert_eq!(s.len(), (f * ds.len() as f64).floor() as usize);
    }
    for pair in subsets.windows(2) {
        assert!(pair[0].iter().all(|x| pair[1].contains(x)));
    }
    assert_eq!(subsets.last().unwrap(), &ds.samples);
}
