//! Pure transformations of `(NetworkSpec, Checkpoint)` pairs: head replacement,
//! top-layer ablation and layer addition.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{init_layer, Checkpoint, LayerKind, LayerSpec, NetworkSpec};

/// Learning-rate multiplier given to layers created by surgery.
pub const NEW_LAYER_LR_MULT: f32 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum SurgeryAction {
    /// Drop the current top FC layer (which must be named `layer`) and any ReLU left dangling below the output.
    RemoveTop { layer: String },
    /// Swap the current top FC layer for a fresh one with `units` outputs, keeping its name.
    ReplaceTop { units: usize, init_seed: Option<u64> },
    /// Add a fresh FC layer directly above the current top FC layer.
    Append {
        name: String,
        units: usize,
        init_seed: Option<u64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurgeryPlan {
    pub actions: Vec<SurgeryAction>,
    pub new_layer_lr_mult: f32,
    /// Base learning rate this architecture should train with unless configured otherwise.
    pub base_lr: Option<f64>,
}

impl Default for SurgeryPlan {
    fn default() -> Self {
        SurgeryPlan {
            actions: Vec::new(),
            new_layer_lr_mult: NEW_LAYER_LR_MULT,
            base_lr: None,
        }
    }
}

impl SurgeryPlan {
    pub fn new(actions: Vec<SurgeryAction>) -> Self {
        SurgeryPlan {
            actions,
            ..Default::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    /// Keep the remaining stack as it is.
    Raw,
    /// Replace the last remaining FC layer with a fresh 2-unit layer.
    Replace2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdditionMode {
    KeepTop,
    Append2,
}

/// Replace the top FC layer with a fresh `num_classes`-way layer.
pub fn finetune_plan(num_classes: usize) -> SurgeryPlan {
    SurgeryPlan::new(vec![SurgeryAction::ReplaceTop {
        units: num_classes,
        init_seed: None,
    }])
}

/// Remove `depth` FC layers from the top of `spec`.
pub fn ablation_plan(spec: &NetworkSpec, depth: usize, mode: AblationMode) -> Result<SurgeryPlan> {
    let fcs = spec.fc_layers();
    if depth == 0 || depth >= fcs.len() {
        return Err(Error::Surgery(format!(
            "cannot remove {depth} of {} FC layers and keep an FC layer below the output",
            fcs.len()
        )));
    }
    let mut actions: Vec<SurgeryAction> = fcs
        .iter()
        .rev()
        .take(depth)
        .map(|l| SurgeryAction::RemoveTop { layer: l.name.clone() })
        .collect();
    if mode == AblationMode::Replace2 {
        actions.push(SurgeryAction::ReplaceTop {
            units: 2,
            init_seed: None,
        });
    }
    Ok(SurgeryPlan::new(actions))
}

/// Name for a layer appended above the FC layer `top`: `fc8` becomes `fc9`.
fn next_fc_name(top: &str) -> String {
    match top.strip_prefix("fc").and_then(|n| n.parse::<u32>().ok()) {
        Some(n) => format!("fc{}", n + 1),
        None => format!("{top}_added"),
    }
}

/// Keep the original head, or stack a new 2-unit layer on top of it.
pub fn addition_plan(spec: &NetworkSpec, mode: AdditionMode) -> Result<SurgeryPlan> {
    match mode {
        AdditionMode::KeepTop => Ok(SurgeryPlan::default()),
        AdditionMode::Append2 => {
            let top = spec
                .top_fc()
                .ok_or_else(|| Error::Surgery("network has no FC layer".into()))?;
            Ok(SurgeryPlan::new(vec![SurgeryAction::Append {
                name: next_fc_name(&top.name),
                units: 2,
                init_seed: None,
            }]))
        }
    }
}

/// The named architectures available from configuration files and the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Preset {
    Finetune,
    Fc7x4096,
    Fc6x4096,
    Fc7x2,
    Fc6x2,
    Fc8x1000,
    Fc9x2,
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::Finetune,
        Preset::Fc7x4096,
        Preset::Fc6x4096,
        Preset::Fc7x2,
        Preset::Fc6x2,
        Preset::Fc8x1000,
        Preset::Fc9x2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Finetune => "finetune",
            Preset::Fc7x4096 => "fc7-4096",
            Preset::Fc6x4096 => "fc6-4096",
            Preset::Fc7x2 => "fc7-2",
            Preset::Fc6x2 => "fc6-2",
            Preset::Fc8x1000 => "fc8-1000",
            Preset::Fc9x2 => "fc9-2",
        }
    }

    /// Report family the preset belongs to.
    pub fn family(self) -> &'static str {
        match self {
            Preset::Finetune => "finetune",
            Preset::Fc7x4096 | Preset::Fc6x4096 | Preset::Fc7x2 | Preset::Fc6x2 => "ablation",
            Preset::Fc8x1000 | Preset::Fc9x2 => "addition",
        }
    }

    /// Whether the source checkpoint's top layer weights are carried over.
    pub fn keeps_source_top(self) -> bool {
        matches!(self, Preset::Fc8x1000 | Preset::Fc9x2)
    }

    pub fn plan(self, spec: &NetworkSpec) -> Result<SurgeryPlan> {
        match self {
            Preset::Finetune => Ok(finetune_plan(2)),
            Preset::Fc7x4096 => ablation_plan(spec, 1, AblationMode::Raw),
            Preset::Fc6x4096 => ablation_plan(spec, 2, AblationMode::Raw),
            Preset::Fc7x2 => ablation_plan(spec, 1, AblationMode::Replace2),
            Preset::Fc6x2 => {
                let mut plan = ablation_plan(spec, 2, AblationMode::Replace2)?;
                plan.base_lr = Some(0.0001);
                Ok(plan)
            }
            Preset::Fc8x1000 => addition_plan(spec, AdditionMode::KeepTop),
            Preset::Fc9x2 => addition_plan(spec, AdditionMode::Append2),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Preset::ALL.iter().map(|p| p.name()).collect();
                Error::Config(format!("unknown preset `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

impl Serialize for Preset {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Preset {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurgeryReport {
    pub retained: Vec<String>,
    pub new: Vec<String>,
    pub removed: Vec<String>,
    pub params_before: usize,
    pub params_after: usize,
    pub retained_bit_exact: bool,
}

fn top_fc_index(layers: &[LayerSpec]) -> Result<usize> {
    layers
        .iter()
        .rposition(|l| matches!(l.kind, LayerKind::Fc { .. }))
        .ok_or_else(|| Error::Surgery("network has no FC layer".into()))
}

/// Position where the output stage begins: the top SOFTMAX, or the end of the stack.
fn output_slot(layers: &[LayerSpec]) -> usize {
    match layers.last() {
        Some(l) if l.kind == LayerKind::Softmax => layers.len() - 1,
        _ => layers.len(),
    }
}

/// Applies `plan`, returning a new pair; the inputs are never modified.
///
/// Fresh layers are drawn with `seed` (or the action's own seed) keyed by layer name.
pub fn apply(
    plan: &SurgeryPlan,
    spec: &NetworkSpec,
    checkpoint: &Checkpoint,
    seed: u64,
) -> Result<(NetworkSpec, Checkpoint, SurgeryReport)> {
    let mut layers = spec.layers.clone();
    let mut fresh: Vec<(String, u64)> = Vec::new();
    let mut removed = Vec::new();
    for action in &plan.actions {
        match action {
            SurgeryAction::RemoveTop { layer } => {
                let i = top_fc_index(&layers)?;
                if layers[i].name != *layer {
                    return Err(Error::Surgery(format!(
                        "`{layer}` is not the top FC layer (found `{}`)",
                        layers[i].name
                    )));
                }
                let end = output_slot(&layers);
                for l in layers.drain(i..end) {
                    fresh.retain(|(n, _)| *n != l.name);
                    removed.push(l.name);
                }
                while let Some(j) = output_slot(&layers).checked_sub(1) {
                    if layers[j].kind != LayerKind::Relu {
                        break;
                    }
                    removed.push(layers.remove(j).name);
                }
            }
            SurgeryAction::ReplaceTop { units, init_seed } => {
                if *units == 0 {
                    return Err(Error::Surgery("replacement layer needs at least one unit".into()));
                }
                let i = top_fc_index(&layers)?;
                let name = layers[i].name.clone();
                layers[i] = LayerSpec::fc(&name, *units).with_lr_mult(plan.new_layer_lr_mult);
                fresh.retain(|(n, _)| *n != name);
                fresh.push((name, init_seed.unwrap_or(seed)));
            }
            SurgeryAction::Append {
                name,
                units,
                init_seed,
            } => {
                if *units == 0 {
                    return Err(Error::Surgery("appended layer needs at least one unit".into()));
                }
                if layers.iter().any(|l| l.name == *name) {
                    return Err(Error::Surgery(format!("layer `{name}` already exists")));
                }
                let i = top_fc_index(&layers)?;
                if i + 1 != output_slot(&layers) {
                    return Err(Error::Surgery(format!(
                        "cannot append above `{}`: it is not directly below the output",
                        layers[i].name
                    )));
                }
                layers.insert(i + 1, LayerSpec::fc(name, *units).with_lr_mult(plan.new_layer_lr_mult));
                fresh.push((name.clone(), init_seed.unwrap_or(seed)));
            }
        }
    }
    let new_spec = NetworkSpec::new(spec.input_shape.clone(), layers);
    let shapes = new_spec.param_shapes()?;

    let mut out = Checkpoint {
        entries: Default::default(),
        metadata: checkpoint.metadata.clone(),
    };
    let (mut retained, mut new) = (Vec::new(), Vec::new());
    for (name, [w, b]) in &shapes {
        if let Some((_, s)) = fresh.iter().find(|(n, _)| n == name) {
            out.entries.insert(name.clone(), init_layer(w, b, *s, name));
            new.push(name.clone());
        } else {
            let src = checkpoint
                .get(name)
                .ok_or_else(|| Error::Surgery(format!("source checkpoint lacks weights for retained layer `{name}`")))?;
            out.entries.insert(name.clone(), src.clone());
            retained.push(name.clone());
        }
    }
    out.validate_against(&new_spec).map_err(|e| Error::Surgery(e.to_string()))?;
    out.set_meta("spec_fingerprint", new_spec.fingerprint());
    if !plan.actions.is_empty() {
        out.set_meta("surgery_seed", seed);
    }

    let retained_bit_exact = retained
        .iter()
        .all(|n| checkpoint.get(n).is_some_and(|src| src.bit_identical(&out.entries[n])));
    let report = SurgeryReport {
        retained,
        new,
        removed,
        params_before: spec.param_count()?,
        params_after: new_spec.param_count()?,
        retained_bit_exact,
    };
    Ok((new_spec, out, report))
}

/// Applies a named preset; the returned plan carries the preset's learning-rate default.
pub fn apply_preset(
    preset: Preset,
    spec: &NetworkSpec,
    checkpoint: &Checkpoint,
    seed: u64,
) -> Result<(NetworkSpec, Checkpoint, SurgeryReport, SurgeryPlan)> {
    let plan = preset.plan(spec)?;
    let (s, c, r) = apply(&plan, spec, checkpoint, seed)?;
    s.validate_for_training()?;
    Ok((s, c, r, plan))
}
