use std::collections::{HashMap, HashSet};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{shape_summary, DatasetError, Sample};
use crate::ir::{emit_text, emit_text_with_names, Def, GraphFunction, ValueId};
use crate::oracle::MachineConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentPolicy {
    /// Rename SSA values; labels are copied unchanged.
    RenameOnly,
    /// Reschedule independent ops; labels are recomputed.
    ReorderRecompute,
}

const ATTEMPTS_PER_VARIANT: usize = 8;

fn renamed(f: &GraphFunction, rng: &mut ChaCha8Rng) -> GraphFunction {
    let mut arg_names: Vec<u32> = (0..(f.args.len() as u32 * 4 + 4)).collect();
    arg_names.shuffle(rng);
    let mut result_names: Vec<u32> = (0..(f.body.len() as u32 * 8 + 8)).collect();
    result_names.shuffle(rng);
    let mut map: HashMap<ValueId, ValueId> = HashMap::new();
    for (i, (id, _)) in f.args.iter().enumerate() {
        map.insert(*id, ValueId::Arg(arg_names[i]));
    }
    for (i, op) in f.body.iter().enumerate() {
        map.insert(op.result, ValueId::Result(result_names[i]));
    }
    let mut g = f.clone();
    for (id, _) in g.args.iter_mut() {
        *id = map[id];
    }
    for op in g.body.iter_mut() {
        op.result = map[&op.result];
        for id in op.operands.iter_mut() {
            *id = map[id];
        }
    }
    for id in g.returns.iter_mut() {
        *id = map[id];
    }
    g
}

/// A uniformly-chosen-at-each-step topological order of the body.
fn random_schedule(f: &GraphFunction, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let sites = f.def_sites();
    let n = f.body.len();
    let mut users: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut pending = vec![0usize; n];
    for (i, op) in f.body.iter().enumerate() {
        let mut deps: Vec<usize> = op
            .operands
            .iter()
            .filter_map(|id| match sites[id] {
                Def::Op(j) => Some(j),
                Def::Arg(_) => None,
            })
            .collect();
        deps.sort_unstable();
        deps.dedup();
        pending[i] = deps.len();
        for j in deps {
            users[j].push(i);
        }
    }
    let mut ready: Vec<usize> = (0..n).filter(|&i| pending[i] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while !ready.is_empty() {
        let pick = *ready.choose(rng).expect("non-empty");
        ready.retain(|&i| i != pick);
        order.push(pick);
        for &u in &users[pick] {
            pending[u] -= 1;
            if pending[u] == 0 {
                ready.push(u);
            }
        }
        ready.sort_unstable();
    }
    order
}

fn reordered(f: &GraphFunction, order: &[usize]) -> GraphFunction {
    GraphFunction {
        name: f.name.clone(),
        args: f.args.clone(),
        body: order.iter().map(|&i| f.body[i].clone()).collect(),
        returns: f.returns.clone(),
    }
}

/// Returns each input sample followed by up to `factor - 1` variants of it.
pub fn augment(
    samples: &[Sample],
    policy: AugmentPolicy,
    factor: usize,
    machine: &MachineConfig,
    seed: u64,
) -> Result<Vec<Sample>, DatasetError> {
    if factor == 0 {
        return Err(DatasetError::Config("augmentation factor must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(samples.len() * factor);
    for (row, s) in samples.iter().enumerate() {
        out.push(s.clone());
        if factor == 1 {
            continue;
        }
        let f = s.function().map_err(|e| DatasetError::Validation {
            row: row + 1,
            message: e.to_string(),
        })?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(row as u64);
        let mut seen: HashSet<String> = HashSet::new();
        seen.insert(s.ir_text.clone());
        let identity: Vec<usize> = (0..f.body.len()).collect();
        let mut made = 0;
        for _ in 0..(factor - 1) * ATTEMPTS_PER_VARIANT {
            if made == factor - 1 {
                break;
            }
            let (text, value) = match policy {
                AugmentPolicy::RenameOnly => {
                    let g = renamed(&f, &mut rng);
                    (emit_text_with_names(&g).expect("renaming keeps validity"), s.target_value)
                }
                AugmentPolicy::ReorderRecompute => {
                    let order = random_schedule(&f, &mut rng);
                    if order == identity {
                        continue;
                    }
                    let g = reordered(&f, &order);
                    let value = s.target_kind.label(&g, machine).expect("reordering keeps validity");
                    (emit_text(&g).expect("reordering keeps validity"), value)
                }
            };
            if !seen.insert(text.clone()) {
                continue;
            }
            out.push(Sample {
                ir_text: text,
                shape_summary: shape_summary(&f),
                target_kind: s.target_kind,
                target_value: value,
            });
            made += 1;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate, GeneratorConfig, TargetKind};
    use crate::ir::parse_function;
    use crate::oracle::register_pressure;

    fn corpus() -> Vec<Sample> {
        let cfg = GeneratorConfig {
            num_samples: 40,
            seed: 21,
            ..GeneratorConfig::default()
        };
        generate(&cfg, &MachineConfig::default()).unwrap()
    }

    #[test]
    fn rename_only_preserves_labels() {
        let m = MachineConfig::default();
        let input = corpus();
        let out = augment(&input, AugmentPolicy::RenameOnly, 2, &m, 1).unwrap();
        assert!(out.len() <= 2 * input.len());
        assert!(out.len() > input.len());
        for s in &out {
            s.check().unwrap();
            assert!(s.label_matches(&m));
        }
        let variants: Vec<_> = out.iter().filter(|s| !input.contains(s)).collect();
        assert!(!variants.is_empty());
        for v in variants {
            let canonical = crate::ir::emit_text(&v.function().unwrap()).unwrap();
            assert_ne!(canonical, v.ir_text);
        }
    }

    #[test]
    fn factor_one_is_identity() {
        let input = corpus();
        for p in [AugmentPolicy::RenameOnly, AugmentPolicy::ReorderRecompute] {
            assert_eq!(augment(&input, p, 1, &MachineConfig::default(), 3).unwrap(), input);
        }
    }

    #[test]
    fn reorder_recomputes_schedule_sensitive_labels() {
        let m = MachineConfig::default();
        let (a, b, big, small) = ("tensor<64x1xf32>", "tensor<1x64xf32>", "tensor<64x64xf32>", "tensor<64xf32>");
        // Two independent outer-product-then-reduce chains. Run back to back
        // only one large intermediate is live; interleaved, both are.
        let src = format!(
            "func @two(%arg0: {a}, %arg1: {b}) -> ({small}, {small}) {{\n\
             %0 = xpu.matmul %arg0, %arg1 : ({a}, {b}) -> {big}\n\
             %1 = xpu.reduce_sum %0 : ({big}) -> {small}\n\
             %2 = xpu.matmul %arg0, %arg1 : ({a}, {b}) -> {big}\n\
             %3 = xpu.reduce_sum %2 : ({big}) -> {small}\n\
             return %1, %3\n}}"
        );
        let f = parse_function(&src).unwrap();
        let s = Sample::labelled(&f, TargetKind::RegisterPressure, &m).unwrap();
        let out = augment(std::slice::from_ref(&s), AugmentPolicy::ReorderRecompute, 6, &m, 0).unwrap();
        assert!(out.len() > 1 && out.len() <= 6);
        let original = register_pressure(&f, &m).unwrap() as f64;
        assert!(out[1..].iter().any(|v| v.target_value != original));
        for v in &out {
            assert!(v.label_matches(&m));
        }
    }

    #[test]
    fn deterministic_by_seed() {
        let m = MachineConfig::default();
        let input = corpus();
        for p in [AugmentPolicy::RenameOnly, AugmentPolicy::ReorderRecompute] {
            assert_eq!(augment(&input, p, 3, &m, 9).unwrap(), augment(&input, p, 3, &m, 9).unwrap());
        }
        let out = augment(&input, AugmentPolicy::ReorderRecompute, 3, &m, 9).unwrap();
        assert!(out.iter().all(|s| s.label_matches(&m)));
    }
}
