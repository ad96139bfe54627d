use netsurgery::net::{
    decode_checkpoint, encode_checkpoint, forward, init_params, load_checkpoint, load_checkpoint_for, run_forward,
    save_checkpoint, small_reference_spec, EndpointMode, ForwardOptions,
};
use netsurgery::{Error, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn batch(n: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::randn(&[n, 3, 64, 64], 1.0, &mut rng)
}

#[test]
fn checkpoint_file_round_trip() {
    let spec = small_reference_spec(2);
    let mut ckpt = init_params(&spec, 3).unwrap();
    ckpt.set_meta("note", "hello");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.nsrg");
    save_checkpoint(&ckpt, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
    assert_eq!(load_checkpoint_for(&path, &spec).unwrap(), ckpt);
    assert!(matches!(load_checkpoint_for(&path, &small_reference_spec(3)), Err(Error::ParamMismatch { .. })));
}

#[test]
fn every_truncation_is_an_error() {
    let spec = small_reference_spec(2);
    let bytes = encode_checkpoint(&init_params(&spec, 0).unwrap()).unwrap();
    // every prefix up to the first tensor payload, then a coarse sweep
    for cut in (0..64).chain((64..bytes.len()).step_by(997)) {
        assert!(decode_checkpoint(&bytes[..cut]).is_err(), "prefix {cut} decoded");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(decode_checkpoint(&bad), Err(Error::BadMagic)));
}

#[test]
fn endpoints_match_inferred_shapes() {
    let spec = small_reference_spec(2);
    let ckpt = init_params(&spec, 1).unwrap();
    let shapes = spec.infer_shapes().unwrap();
    let names = spec.probe_endpoints();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let acts = forward(&spec, &ckpt, &batch(2, 0), &refs).unwrap();
    for name in &names {
        assert_eq!(&acts[name.as_str()].shape()[1..], shapes[name.as_str()].as_slice(), "{name}");
    }
}

#[test]
fn post_activation_endpoints_are_rectified() {
    let spec = small_reference_spec(2);
    let ckpt = init_params(&spec, 1).unwrap();
    let x = batch(2, 5);
    let mut opts = ForwardOptions::endpoints(&["conv1"]);
    let post = run_forward(&spec, &ckpt, &x, &opts).unwrap();
    opts.mode = EndpointMode::PreActivation;
    let pre = run_forward(&spec, &ckpt, &x, &opts).unwrap();
    let (post, pre) = (&post.activations["conv1"], &pre.activations["conv1"]);
    assert!(post.data().iter().all(|&v| v >= 0.0));
    assert!(pre.data().iter().any(|&v| v < 0.0));
    for (a, b) in post.data().iter().zip(pre.data()) {
        assert_eq!(*a, b.max(0.0));
    }
}

#[test]
fn batch_rows_are_independent() {
    let spec = small_reference_spec(2);
    let ckpt = init_params(&spec, 2).unwrap();
    let x = batch(3, 9);
    let all = run_forward(&spec, &ckpt, &x, &ForwardOptions::default()).unwrap().output;
    let one = run_forward(&spec, &ckpt, &Tensor::stack(&[x.row(1)]).unwrap(), &ForwardOptions::default()).unwrap().output;
    assert_eq!(all.row(1).data(), one.row(0).data());
}

#[test]
fn wrong_input_shape_is_rejected() {
    let spec = small_reference_spec(2);
    let ckpt = init_params(&spec, 2).unwrap();
    assert!(run_forward(&spec, &ckpt, &Tensor::zeros(&[1, 3, 32, 32]), &ForwardOptions::default()).is_err());
}
