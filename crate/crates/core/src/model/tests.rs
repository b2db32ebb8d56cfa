use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn small_config() -> ModelConfig {
    ModelConfig {
        n_in: 32,
        n_out: 24,
        encoder1: vec![8, 16],
        encoder2: vec![16, 20],
        hidden_dim: 12,
        shape_decoder: vec![16],
        pose_decoder: vec![8],
    }
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| Point3::new(rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..1.5)))
            .collect(),
    )
    .unwrap()
}

#[test]
fn encode_is_permutation_and_duplication_invariant() {
    let cfg = small_config();
    let w = ModelWeights::init(&cfg, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cloud = random_cloud(&mut rng, 32);
    let f = encode(&w, &cloud).unwrap();
    let mut pts = cloud.points().to_vec();
    pts.reverse();
    pts.swap(3, 17);
    let g = encode(&w, &PointCloud::new(pts.clone()).unwrap()).unwrap();
    assert!(f.iter().zip(&g).all(|(a, b)| a.to_bits() == b.to_bits()));
    let mut doubled = pts.clone();
    doubled.extend(pts);
    assert_eq!(encode(&w, &PointCloud::new(doubled).unwrap()).unwrap(), f);
    assert_eq!(f.len(), cfg.feat_dim());

    let zero = ModelWeights::zeros(&cfg).unwrap();
    assert!(encode(&zero, &cloud).unwrap().iter().all(|&v| v == 0.0));
    assert!(matches!(encode(&w, &PointCloud::empty()), Err(Error::DegenerateInput(_))));
}

#[test]
fn fuse_special_cases() {
    let cfg = small_config();
    let zero = ModelWeights::zeros(&cfg).unwrap();
    let f = vec![0.7; cfg.feat_dim()];
    let h = fuse(&zero, &HiddenState::zeros(cfg.hidden_dim), &f).unwrap();
    assert!(h.h.iter().all(|&v| v == 0.0));

    let mut w = ModelWeights::init(&cfg, 4).unwrap();
    w.gru.b_z.data_mut().iter_mut().for_each(|b| *b = 20.0);
    let prev = HiddenState {
        h: (0..cfg.hidden_dim).map(|i| (i as f64 / 20.0) - 0.3).collect(),
    };
    let next = fuse(&w, &prev, &f).unwrap();
    for (a, b) in next.h.iter().zip(&prev.h) {
        assert!((a - b).abs() < 1e-7, "{a} vs {b}");
    }
}

#[test]
fn fuse_matches_scalar_oracle() {
    let cfg = small_config();
    let w = ModelWeights::init(&cfg, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (fd, hd) = (cfg.feat_dim(), cfg.hidden_dim);
    let f: Vec<f64> = (0..fd).map(|_| rng.random_range(-1.0..1.0)).collect();
    let h: Vec<f64> = (0..hd).map(|_| rng.random_range(-0.9..0.9)).collect();
    let got = fuse(&w, &HiddenState { h: h.clone() }, &f).unwrap();
    let g = &w.gru;
    let lin = |wm: &Tensor, um: &Tensor, j: usize| {
        let mut a = 0.0;
        for i in 0..fd {
            a += f[i] * wm.data()[i * hd + j];
        }
        let mut b = 0.0;
        for i in 0..hd {
            b += h[i] * um.data()[i * hd + j];
        }
        (a, b)
    };
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    for j in 0..hd {
        let (a, b) = lin(&g.w_z, &g.u_z, j);
        let z = sig(a + b + g.b_z.data()[j]);
        let (a, b) = lin(&g.w_r, &g.u_r, j);
        let r = sig(a + b + g.b_r.data()[j]);
        let (a, b) = lin(&g.w_n, &g.u_n, j);
        let n = (a + r * b + g.b_n.data()[j]).tanh();
        let expected = (1.0 - z) * n + z * h[j];
        assert!((got.h[j] - expected).abs() < 1e-12);
    }
}

#[test]
fn decode_contracts() {
    let cfg = small_config();
    let zero = ModelWeights::zeros(&cfg).unwrap();
    let h = HiddenState {
        h: vec![0.3; cfg.hidden_dim],
    };
    assert!(matches!(decode(&zero, &h), Err(Error::DegenerateRotation { .. })));
    let w = ModelWeights::init(&cfg, 6).unwrap();
    let (x, t) = decode(&w, &h).unwrap();
    assert_eq!(x.len(), cfg.n_out);
    assert_eq!(t.z_offset, 0.0);
    let (x2, t2) = decode(&w, &h).unwrap();
    assert_eq!((x, t), (x2, t2));
}

#[test]
fn init_is_seeded() {
    let cfg = small_config();
    assert_eq!(ModelWeights::init(&cfg, 9).unwrap(), ModelWeights::init(&cfg, 9).unwrap());
    assert_ne!(ModelWeights::init(&cfg, 9).unwrap(), ModelWeights::init(&cfg, 10).unwrap());
    let w = ModelWeights::init(&cfg, 9).unwrap();
    assert_eq!((w.sigma_cd(), w.sigma_p()), (1.0, 1.0));
    assert!(w.gru.b_z.data().iter().all(|&b| b == 0.0));
}

fn track(rng: &mut ChaCha8Rng, sizes: &[usize]) -> Vec<PointCloud> {
    sizes
        .iter()
        .map(|&n| random_cloud(rng, n).translated(&Vector3::new(8.0, -3.0, 0.5)))
        .collect()
}

#[test]
fn modes_agree_on_first_frame() {
    let cfg = small_config();
    let w = ModelWeights::init(&cfg, 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let frames = track(&mut rng, &[40, 50, 20]);
    let seq = estimate_sequence(&w, &frames, Mode::Sequential).unwrap();
    let per = estimate_sequence(&w, &frames, Mode::PerFrame).unwrap();
    assert_eq!(seq[0], per[0]);
    assert_ne!(seq[1], per[1]);
    let single = estimate_sequence(&w, &frames[..1], Mode::Sequential).unwrap();
    assert_eq!(single[0], per[0]);
    for est in &seq {
        assert!(est.hidden.h.iter().all(|v| v.abs() < 1.0));
        assert_eq!(est.cloud.len(), cfg.n_out);
    }
    assert!(matches!(estimate_sequence(&w, &[], Mode::Sequential), Err(Error::DegenerateInput(_))));
}

#[test]
fn translation_equivariance() {
    let cfg = small_config();
    let w = ModelWeights::init(&cfg, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let frames = track(&mut rng, &[40, 3, 50, 35]);
    let delta = Vector3::new(13.5, -7.25, 0.8);
    let moved: Vec<PointCloud> = frames.iter().map(|f| f.translated(&delta)).collect();
    let a = estimate_sequence(&w, &frames, Mode::Sequential).unwrap();
    let b = estimate_sequence(&w, &moved, Mode::Sequential).unwrap();
    for (ea, eb) in a.iter().zip(&b) {
        assert!((ea.pose.theta - eb.pose.theta).abs() < 1e-9);
        assert!((ea.pose.t[0] + delta.x - eb.pose.t[0]).abs() < 1e-9);
        assert!((ea.pose.t[1] + delta.y - eb.pose.t[1]).abs() < 1e-9);
        assert!((ea.pose.z_offset + delta.z - eb.pose.z_offset).abs() < 1e-9);
        for (p, q) in ea.cloud.iter().zip(eb.cloud.iter()) {
            assert!((p + delta - q).norm() < 1e-9);
        }
    }
}

#[test]
fn sequence_matches_manual_composition() {
    let cfg = small_config();
    let w = ModelWeights::init(&cfg, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let frames = track(&mut rng, &[40, 20, 60]);
    let got = estimate_sequence(&w, &frames, Mode::Sequential).unwrap();
    let mut h = HiddenState::zeros(cfg.hidden_dim);
    for (i, frame) in frames.iter().enumerate() {
        let (centered, centroid) = demean(frame).unwrap();
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(RESAMPLE_SEED, i as u64));
        let input = centered.resample(cfg.n_in, &mut r).unwrap();
        let f = encode(&w, &input).unwrap();
        h = fuse(&w, &h, &f).unwrap();
        let (x, t) = decode(&w, &h).unwrap();
        let (x, t) = reattach(&x, &t, &centroid);
        assert_eq!(got[i].cloud, x);
        assert_eq!(got[i].pose, t);
        assert_eq!(got[i].hidden, h);
    }
}

#[test]
fn sparse_frames_carry_state_and_shift_estimate() {
    let cfg = small_config();
    let w = ModelWeights::init(&cfg, 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut frames = track(&mut rng, &[40, 4]);
    frames.push(PointCloud::empty());
    let est = estimate_sequence(&w, &frames, Mode::Sequential).unwrap();
    assert!(!est[0].skipped && est[1].skipped && est[2].skipped);
    assert_eq!(est[1].hidden, est[0].hidden);
    let delta = frames[1].mean().unwrap() - frames[0].mean().unwrap();
    assert!((est[1].pose.t[0] - est[0].pose.t[0] - delta.x).abs() < 1e-12);
    assert_eq!(est[2].cloud, est[1].cloud);

    let first_sparse = estimate_sequence(&w, &frames[1..], Mode::Sequential).unwrap();
    assert!(first_sparse[0].skipped);
    assert!(first_sparse[0].hidden.h.iter().all(|&v| v == 0.0));
}

#[test]
fn checkpoint_round_trip() {
    let cfg = small_config();
    let w = ModelWeights::init(&cfg, 13).unwrap();
    let meta = CheckpointMeta { step: 42, stage: 2 };
    let bytes = encode_checkpoint(&w, meta);
    let back = decode_checkpoint(&bytes).unwrap();
    assert_eq!(back.weights, w);
    assert_eq!(back.meta, meta);
    assert_eq!(encode_checkpoint(&back.weights, back.meta), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.sqf");
    save_checkpoint(&path, &w, meta).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(load_checkpoint(&path).unwrap().weights, w);

    for cut in [0, 3, 7, 20, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::CorruptCheckpoint(_))));
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(decode_checkpoint(&extra), Err(Error::CorruptCheckpoint(_))));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad), Err(Error::CorruptCheckpoint(_))));
    let mut bad = bytes;
    bad[4] = 9;
    assert!(matches!(decode_checkpoint(&bad), Err(Error::CorruptCheckpoint(_))));
}

#[test]
fn default_checkpoint_size_follows_parameter_count() {
    let cfg = ModelConfig::default();
    let w = ModelWeights::zeros(&cfg).unwrap();
    let named = w.named_tensors();
    let overhead: usize = named.iter().map(|(n, _, t)| 8 + n.len() + 8 + 8 * t.shape().len()).sum();
    let header = serde_json::to_vec(&serde_json::json!({"model": cfg, "meta": CheckpointMeta::default()})).unwrap();
    let bytes = encode_checkpoint(&w, CheckpointMeta::default());
    assert_eq!(bytes.len(), 16 + header.len() + overhead + 8 * w.parameter_count());
    // 3->64->128, 256->256->512, GRU 512, 512->512->1024->3072, 512->256->64->4, two scalars
    let expected = (3 * 64 + 64) + (64 * 128 + 128) + (256 * 256 + 256) + (256 * 512 + 512)
        + 3 * (512 * 512) * 2 + 3 * 512
        + (512 * 512 + 512) + (512 * 1024 + 1024) + (1024 * 3072 + 3072)
        + (512 * 256 + 256) + (256 * 64 + 64) + (64 * 4 + 4)
        + 2;
    assert_eq!(w.parameter_count(), expected);
}

#[test]
fn config_json_rejects_unknown_keys() {
    let cfg: ModelConfig = serde_json::from_str(r#"{"n_in": 64}"#).unwrap();
    assert_eq!(cfg.n_in, 64);
    assert_eq!(cfg.n_out, 1024);
    assert!(serde_json::from_str::<ModelConfig>(r#"{"n_inn": 64}"#).is_err());
    let bad = ModelConfig {
        hidden_dim: 0,
        ..ModelConfig::default()
    };
    assert!(matches!(bad.validate(), Err(Error::Config(_))));
}
