use dcl3d::video::{
    crop_offsets, generate_synthetic, load_dataset, save_dataset, split_clips, train_test_split, ClipSet, ClipSource,
    CropMode, Motion, SyntheticSpec, VideoRecord,
};
use dcl3d::Tensor;
use proptest::prelude::*;

fn spec(noise: f64, jitter: bool) -> SyntheticSpec {
    SyntheticSpec { classes: 6, height: 24, width: 32, frames: 17, videos_per_class: 5, noise, jitter, seed: 9 }
}

fn frame_value(v: &VideoRecord, f: usize, c: usize, y: usize, x: usize) -> f32 {
    v.frames.get(&[f, c, y, x]).unwrap()
}

#[test]
fn synthetic_is_deterministic_and_balanced() {
    let a = generate_synthetic(&spec(0.03, true)).unwrap();
    let b = generate_synthetic(&spec(0.03, true)).unwrap();
    assert_eq!(a, b);
    for c in 0..6 {
        assert_eq!(a.iter().filter(|v| v.label == c).count(), 5);
    }
    let other = generate_synthetic(&SyntheticSpec { seed: 10, ..spec(0.03, true) }).unwrap();
    assert_ne!(a[0].frames, other[0].frames);
    assert!(a.iter().all(|v| v.frames.shape() == [17, 3, 24, 32]));
    assert!(a.iter().all(|v| v.frames.data().iter().all(|p| (0.0..=1.0).contains(p))));
}

#[test]
fn noiseless_videos_follow_their_motion_template() {
    let videos = generate_synthetic(&spec(0.0, false)).unwrap();
    for v in &videos {
        let twin = videos.iter().find(|w| w.label == v.label).unwrap();
        assert_eq!(v.frames, twin.frames);
        let (cy, cx, r) = Motion::for_class(v.label).unwrap().state(0.0);
        let sigma = r * 24.0;
        for (y, x) in [(3usize, 5usize), (12, 16), (20, 30)] {
            let d2 = (y as f64 + 0.5 - cy * 24.0).powi(2) + (x as f64 + 0.5 - cx * 32.0).powi(2);
            let want = (0.1 + 0.8 * (-d2 / (2.0 * sigma * sigma)).exp()).clamp(0.0, 1.0) as f32;
            for c in 0..3 {
                assert!((frame_value(v, 0, c, y, x) - want).abs() < 1e-6);
            }
        }
    }
    let brightest = |v: &VideoRecord, f: usize| {
        let plane = v.frames.index_axis0(f).unwrap();
        let d = plane.data();
        let i = (0..24 * 32).max_by(|&a, &b| d[a].total_cmp(&d[b])).unwrap();
        (i / 32, i % 32)
    };
    let right = videos.iter().find(|v| v.label == 0).unwrap();
    assert!(brightest(right, 16).1 > brightest(right, 0).1);
    let left = videos.iter().find(|v| v.label == 1).unwrap();
    assert!(brightest(left, 16).1 < brightest(left, 0).1);
}

#[test]
fn split_is_disjoint_and_per_class() {
    let videos = generate_synthetic(&spec(0.03, true)).unwrap();
    let (train, test) = train_test_split(&videos, 3, 4).unwrap();
    assert_eq!(train.len(), 18);
    assert_eq!(test.len(), 12);
    for c in 0..6 {
        assert_eq!(train.iter().filter(|v| v.label == c).count(), 3);
    }
    assert!(train.iter().all(|a| test.iter().all(|b| a.id != b.id)));
    assert_eq!(train_test_split(&videos, 3, 4).unwrap(), (train, test));
    assert!(train_test_split(&videos, 5, 4).is_err());
}

#[test]
fn dataset_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let videos = generate_synthetic(&SyntheticSpec { videos_per_class: 2, ..spec(0.03, true) }).unwrap();
    save_dataset(dir.path(), &videos).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), videos);
    assert!(load_dataset(&dir.path().join("missing")).is_err());
}

#[test]
fn random_crop_offsets_are_uniform() {
    let (frame, crop) = ((24, 32), (20, 28));
    let mut counts = [[0usize; 5]; 5];
    let draws = 10_000u64;
    for seed in 0..draws {
        let (y, x) = crop_offsets(frame, crop, CropMode::Random { seed }).unwrap();
        counts[y][x] += 1;
    }
    let expected = draws as f64 / 25.0;
    let chi2: f64 = counts.iter().flatten().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 24 degrees of freedom, upper 0.001 quantile.
    assert!(chi2 < 51.18, "chi-square {chi2}");
}

#[test]
fn clipset_delivers_network_layout() {
    let videos = generate_synthetic(&SyntheticSpec { videos_per_class: 1, ..spec(0.03, true) }).unwrap();
    let set = ClipSet::from_videos(&videos, 8, (20, 28), false).unwrap();
    assert_eq!(set.len(), 12);
    assert_eq!(set.shape(), vec![3, 8, 20, 28]);
    let clip = set.clip(3, 0).unwrap();
    assert_eq!(clip.shape(), [3, 8, 20, 28]);
    assert_eq!(clip.get(&[2, 0, 0, 0]).unwrap(), frame_value(&videos[1], 8, 2, 2, 2));
    let norm = set.channel_stats(1e-3);
    let normed = set.clone().with_norm(norm).clip(3, 0).unwrap();
    let want = (frame_value(&videos[1], 8, 0, 2, 2) - norm.mean[0]) / norm.std[0];
    assert!((normed.get(&[0, 0, 0, 0]).unwrap() - want).abs() < 1e-6);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn split_then_concat_is_prefix(frames in 1usize..40, t in 1usize..17) {
        let data = Tensor::from_fn(&[frames, 3, 2, 2], |i| i as f32);
        let v = VideoRecord::new(data.clone(), 0, "v").unwrap();
        match split_clips(&v, t) {
            Ok(clips) => {
                prop_assert_eq!(clips.len(), frames / t);
                let joined: Vec<f32> = clips.iter().flat_map(|c| c.data().to_vec()).collect();
                prop_assert_eq!(&joined[..], &data.data()[..joined.len()]);
                prop_assert_eq!(joined.len(), (frames / t) * t * 12);
            }
            Err(_) => prop_assert!(frames < t),
        }
    }
}
