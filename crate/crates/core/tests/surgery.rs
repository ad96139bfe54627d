use netsurgery::net::{forward, init_params, small_reference_spec, EndpointMode};
use netsurgery::surgery::{ablation_plan, apply, apply_preset, AblationMode, Preset, SurgeryAction, SurgeryPlan, NEW_LAYER_LR_MULT};
use netsurgery::{Error, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn activations_below_the_cut_are_bit_identical() {
    let spec = small_reference_spec(4);
    let source = init_params(&spec, 8).unwrap();
    let x = Tensor::randn(&[2, 3, 64, 64], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    let names = spec.probe_endpoints();
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let before = forward(&spec, &source, &x, &refs).unwrap();
    for p in Preset::ALL {
        let (new_spec, ckpt, report, _) = apply_preset(p, &spec, &source, 2).unwrap();
        // first layer whose name or parameters differ
        let cut = spec
            .layers
            .iter()
            .zip(&new_spec.layers)
            .position(|(a, b)| a.name != b.name || report.new.contains(&b.name))
            .unwrap_or(spec.layers.len().min(new_spec.layers.len()));
        let below: Vec<&str> = refs
            .iter()
            .copied()
            .filter(|n| spec.resolve_endpoint(n, EndpointMode::PostActivation).unwrap() < cut)
            .collect();
        assert!(below.contains(&"pool5"), "{p}");
        let after = forward(&new_spec, &ckpt, &x, &below).unwrap();
        for n in below {
            let (a, b) = (&before[n], &after[n]);
            assert!(a.data().iter().zip(b.data()).all(|(u, v)| u.to_bits() == v.to_bits()), "{p}: {n}");
        }
    }
}

#[test]
fn new_layers_learn_faster() {
    let spec = small_reference_spec(4);
    let source = init_params(&spec, 8).unwrap();
    for p in Preset::ALL {
        let (new_spec, _, report, _) = apply_preset(p, &spec, &source, 2).unwrap();
        for l in &new_spec.layers {
            let want = if report.new.contains(&l.name) { NEW_LAYER_LR_MULT } else { 1.0 };
            if l.kind.has_params() {
                assert_eq!(l.lr_mult, want, "{p}: {}", l.name);
            }
        }
        assert_eq!(report.params_after, new_spec.param_count().unwrap());
    }
}

#[test]
fn fresh_layers_depend_on_seed_only() {
    let spec = small_reference_spec(4);
    let source = init_params(&spec, 8).unwrap();
    let (_, a, _, _) = apply_preset(Preset::Fc9x2, &spec, &source, 5).unwrap();
    let (_, b, _, _) = apply_preset(Preset::Fc9x2, &spec, &source, 5).unwrap();
    let (_, c, _, _) = apply_preset(Preset::Fc9x2, &spec, &source, 6).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.get("fc9"), c.get("fc9"));
}

#[test]
fn impossible_plans_are_surgery_errors() {
    let spec = small_reference_spec(4);
    let source = init_params(&spec, 8).unwrap();
    assert!(matches!(ablation_plan(&spec, 3, AblationMode::Raw), Err(Error::Surgery(_))));
    let plan = SurgeryPlan::new(vec![SurgeryAction::RemoveTop { layer: "fc6".into() }]);
    assert!(matches!(apply(&plan, &spec, &source, 0), Err(Error::Surgery(_))));
}

#[test]
fn presets_round_trip_through_text() {
    for p in Preset::ALL {
        assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<Preset>(&json).unwrap(), p);
    }
    let plan = SurgeryPlan::new(vec![SurgeryAction::Append { name: "fc9".into(), units: 2, init_seed: Some(1) }]);
    let back: SurgeryPlan = serde_json::from_str(&serde_json::to_string(&plan).unwrap()).unwrap();
    assert_eq!(back, plan);
}
