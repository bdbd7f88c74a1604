use adaptseg::data::{
    apply_domain_shift, generate_domain, generate_scene, load_dataset, write_dataset, Dataset, Domain, SceneParams,
    ShiftParams, MANIFEST, NUM_CLASSES,
};
use adaptseg::Tensor;

fn params(seed: u64) -> SceneParams {
    SceneParams { seed, ..SceneParams::default() }
}

fn mean(t: &Tensor<f32>) -> f64 {
    t.data().iter().map(|v| *v as f64).sum::<f64>() / t.len() as f64
}

#[test]
fn scenes_are_deterministic_and_distinct() {
    let a = generate_scene(&params(1), 0).unwrap();
    let b = generate_scene(&params(1), 0).unwrap();
    assert!(a.image.bit_eq(&b.image));
    assert_eq!(a.label, b.label);
    let c = generate_scene(&params(1), 1).unwrap();
    assert!(!a.image.bit_eq(&c.image));
    assert_eq!(a.image.dims(), &[3, 49, 25]);
    assert_eq!(a.label.as_ref().unwrap().dims(), &[49, 25]);
}

#[test]
fn every_scene_has_every_class_and_classes_are_balanced() {
    let p = params(3);
    let mut area = [0usize; NUM_CLASSES];
    let mut total = 0;
    for i in 0..100 {
        let s = generate_scene(&p, i).unwrap();
        assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let mut seen = [false; NUM_CLASSES];
        for &c in s.label.unwrap().data() {
            seen[c as usize] = true;
            area[c as usize] += 1;
            total += 1;
        }
        assert!(seen.iter().all(|s| *s), "sample {i} misses a class");
    }
    for (c, a) in area.iter().enumerate() {
        assert!(*a as f64 >= 0.01 * total as f64, "class {c} covers {a} of {total} pixels");
    }
}

#[test]
fn small_canvas_is_rejected_and_minimum_canvas_works() {
    let mut p = params(0);
    p.canvas_hw = (15, 25);
    assert!(generate_scene(&p, 0).is_err());
    p.canvas_hw = (16, 16);
    for i in 0..20 {
        generate_scene(&p, i).unwrap();
    }
}

#[test]
fn identity_shift_is_bitwise_identity() {
    let s = generate_scene(&params(4), 2).unwrap();
    let out = apply_domain_shift(&s.image, &ShiftParams::identity(), 9).unwrap();
    assert!(out.bit_eq(&s.image));
}

#[test]
fn brightness_halves_the_mean() {
    let s = generate_scene(&params(5), 0).unwrap();
    let shift = ShiftParams { brightness_factor: 0.5, ..ShiftParams::identity() };
    let out = apply_domain_shift(&s.image, &shift, 0).unwrap();
    assert_eq!(mean(&out), mean(&s.image) / 2.0);
}

#[test]
fn gaussian_blur_preserves_impulse_mass() {
    let (h, w) = (21, 21);
    let mut data = vec![0.0f32; 3 * h * w];
    for c in 0..3 {
        data[c * h * w + 10 * w + 10] = 1.0;
    }
    let img = Tensor::new(vec![3, h, w], data).unwrap();
    let shift = ShiftParams { blur_sigma: 1.0, ..ShiftParams::identity() };
    let out = apply_domain_shift(&img, &shift, 0).unwrap();
    for c in 0..3 {
        let mass: f64 = out.data()[c * h * w..(c + 1) * h * w].iter().map(|v| *v as f64).sum();
        assert!((mass - 1.0).abs() < 1e-6, "{mass}");
    }
    // Radius 3σ: nothing beyond 3 pixels from the impulse.
    assert_eq!(out.data()[10 * w + 14], 0.0);
    assert!(out.data()[10 * w + 13] > 0.0);
}

#[test]
fn motion_blur_and_downscale() {
    let (h, w) = (4, 8);
    let data: Vec<f32> = (0..3 * h * w).map(|i| ((i * 37) % 11) as f32 / 10.0).collect();
    let img = Tensor::new(vec![3, h, w], data).unwrap();

    let down = apply_domain_shift(&img, &ShiftParams { downscale_factor: 2, ..ShiftParams::identity() }, 0).unwrap();
    let d = down.data();
    for y in (0..h).step_by(2) {
        for x in (0..w).step_by(2) {
            let block = [d[y * w + x], d[y * w + x + 1], d[(y + 1) * w + x], d[(y + 1) * w + x + 1]];
            assert!(block.iter().all(|v| *v == block[0]));
            let src = img.data();
            let m =
                (src[y * w + x] + src[y * w + x + 1] + src[(y + 1) * w + x] + src[(y + 1) * w + x + 1]) as f64 / 4.0;
            assert!((block[0] as f64 - m).abs() < 1e-6);
        }
    }

    let blurred = apply_domain_shift(&img, &ShiftParams { motion_blur_len: 3, ..ShiftParams::identity() }, 0).unwrap();
    let (s, b) = (img.data(), blurred.data());
    let expect = (s[w + 2] + s[w + 3] + s[w + 4]) as f64 / 3.0;
    assert!((b[w + 3] as f64 - expect).abs() < 1e-6);
    // Vertical structure is untouched.
    let col_const =
        Tensor::new(vec![1, 3, 5], vec![0.2f32, 0.2, 0.2, 0.2, 0.2, 0.7, 0.7, 0.7, 0.7, 0.7, 0.1, 0.1, 0.1, 0.1, 0.1])
            .unwrap();
    let out =
        apply_domain_shift(&col_const, &ShiftParams { motion_blur_len: 3, ..ShiftParams::identity() }, 0).unwrap();
    assert!(out.max_abs_diff(&col_const) < 1e-7);
}

#[test]
fn default_shift_keeps_range_and_labels() {
    let shift = ShiftParams::default_target();
    assert_eq!(
        (shift.brightness_factor, shift.blur_sigma, shift.noise_std, shift.downscale_factor, shift.motion_blur_len),
        (0.5, 1.0, 0.05, 2, 3)
    );
    let p = params(6);
    let ds = generate_domain(&p, &shift, Domain::Target, 0, 10, true).unwrap();
    for (i, s) in ds.samples.iter().enumerate() {
        assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let clean = generate_scene(&p, i as u64).unwrap();
        assert_eq!(s.label, clean.label);
        assert!(mean(&s.image) < mean(&clean.image));
    }
    let again = generate_domain(&p, &shift, Domain::Target, 0, 10, true).unwrap();
    assert_eq!(ds, again);
}

#[test]
fn dataset_round_trip_and_missing_sample() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_domain(&params(7), &ShiftParams::identity(), Domain::Source, 0, 10, true).unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), 10);
    for (a, b) in ds.samples.iter().zip(&back.samples) {
        assert_eq!(a.id, b.id);
        assert!(a.image.bit_eq(&b.image));
        assert_eq!(a.label, b.label);
    }
    let ids = |d: &Dataset| d.samples.iter().map(|s| s.id.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&back), ids(&load_dataset(dir.path()).unwrap()));

    std::fs::remove_file(dir.path().join("images/00004.tsr")).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().contains("missing sample `00004`"), "{err}");
}

#[test]
fn unlabeled_split_has_empty_label_column() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_domain(&params(8), &ShiftParams::default_target(), Domain::Target, 0, 5, false).unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    let manifest = std::fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
    assert_eq!(manifest.lines().count(), 5);
    for line in manifest.lines() {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 4);
        assert_eq!(cols[2], "");
        assert_eq!(cols[3], "target");
    }
    let back = load_dataset(dir.path()).unwrap();
    assert!(!back.is_labeled());
    assert!(back.labels(&[0]).is_err());
}

#[test]
fn shape_mismatch_names_the_sample() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_domain(&params(9), &ShiftParams::identity(), Domain::Source, 0, 3, true).unwrap();
    write_dataset(&ds, dir.path()).unwrap();
    let wrong = Tensor::<u8>::zeros(&[48, 25]);
    adaptseg::tensor::tensor_write(&wrong, dir.path().join("labels/00001.tsr")).unwrap();
    let err = load_dataset(dir.path()).unwrap_err();
    assert!(err.to_string().contains("`00001`"), "{err}");
}
