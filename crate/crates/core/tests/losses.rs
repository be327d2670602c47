//! The five objectives, their combination and the masking procedures.

mod common;

use common::{example, fixture, random_params, random_roi, tiny_config, uniform_model_losses};
use proptest::prelude::*;
use viscom::config::{Preset, RunConfig, Stage};
use viscom::data::make_batches;
use viscom::model::{assemble_input, ModelConfig, ModelParams, Network};
use viscom::rng::seeded;
use viscom::tasks::{
    batch_losses, combine_losses, loss_ap, loss_kcg, loss_mlm, loss_mrm, loss_rp, plan_mlm_mask, plan_mrm_mask,
    BatchItem, LossTerms, LossWeights, MaskPlan, Objective,
};
use viscom::tensor::{Tape, Tensor};
use viscom::train::{Group, Trainer};
use viscom::vocab::{TaskType, Vocabulary};

fn vocab() -> Vocabulary {
    Vocabulary::build(["a dog sits near the red ball", "he wants to play"], 1).unwrap()
}

#[test]
fn zero_model_is_calibrated() {
    let (l, [v, n_attr, n_rel]) = uniform_model_losses();
    let ln = |n: usize| (n as f64).ln();
    assert!((l[&Objective::Kcg] - ln(v)).abs() < 1e-4);
    assert!((l[&Objective::Mlm] - ln(v)).abs() < 1e-4);
    assert!((l[&Objective::Ap] - ln(n_attr)).abs() < 1e-4);
    assert!((l[&Objective::Rp] - ln(n_rel)).abs() < 1e-4);
    assert!(l[&Objective::Mrm].abs() < 1e-6, "{l:?}");
}

/// Decoder hidden states for a caption with three RoIs, in the region layout.
fn region_hidden(params: &ModelParams, tape: &mut Tape<f64>) -> (viscom::tensor::Var, Vec<usize>) {
    let v = vocab();
    let mut rng = seeded(11, 0);
    let ex = example(TaskType::Caption, None, "a dog", (0..3).map(|_| random_roi(&mut rng, 4, 5)).collect());
    let input = assemble_input(&ex, &v, &[Objective::Ap], true, 16, &mut rng).unwrap();
    let net = Network::bind(params, tape);
    let h = net.forward(tape, &input, &ex.rois, &mut rng).unwrap();
    (h, input.visual_slots.clone())
}

#[test]
fn attribute_and_relation_losses_decompose_into_singletons() {
    let cfg = tiny_config(vocab().len());
    let params = random_params(&cfg, 12);
    let mut tape = Tape::<f64>::new();
    let (h, slots) = region_hidden(&params, &mut tape);
    let net = Network::bind(&params, &mut tape);
    let labels = [0usize, 2, 1];
    let rows = tape.gather_rows(h, &slots).unwrap();
    let all = loss_ap(&net, &mut tape, Some(rows), &labels).unwrap().unwrap();
    let mut singles = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let r = tape.gather_rows(h, &[slots[i]]).unwrap();
        let one = loss_ap(&net, &mut tape, Some(r), &[l]).unwrap().unwrap();
        singles += tape.value(one).item();
    }
    assert!((tape.value(all).item() - singles / 3.0).abs() < 1e-12);
    assert!(loss_ap(&net, &mut tape, Some(rows), &[]).unwrap().is_none());

    let pairs = [(0usize, 1usize, 2usize), (2, 0, 1)];
    let s = tape.gather_rows(h, &pairs.map(|p| slots[p.0])).unwrap();
    let o = tape.gather_rows(h, &pairs.map(|p| slots[p.1])).unwrap();
    let both = loss_rp(&net, &mut tape, Some(s), Some(o), &pairs.map(|p| p.2)).unwrap().unwrap();
    let mut singles = 0.0;
    let mut swapped = 0.0;
    for p in pairs {
        let s = tape.gather_rows(h, &[slots[p.0]]).unwrap();
        let o = tape.gather_rows(h, &[slots[p.1]]).unwrap();
        let one = loss_rp(&net, &mut tape, Some(s), Some(o), &[p.2]).unwrap().unwrap();
        singles += tape.value(one).item();
        let rev = loss_rp(&net, &mut tape, Some(o), Some(s), &[p.2]).unwrap().unwrap();
        swapped += tape.value(rev).item();
    }
    assert!((tape.value(both).item() - singles / 2.0).abs() < 1e-12);
    assert!((singles - swapped).abs() > 1e-9, "relation loss should depend on pair order");
}

#[test]
fn mlm_is_kcg_restricted_to_masked_positions() {
    let cfg = tiny_config(vocab().len());
    let params = random_params(&cfg, 13);
    let mut tape = Tape::<f64>::new();
    let (h, _) = region_hidden(&params, &mut tape);
    let net = Network::bind(&params, &mut tape);
    let n = tape.shape(h)[0];
    let masked = [(1usize, 19u32), (4, 22)];
    let rows = tape.gather_rows(h, &masked.map(|m| m.0)).unwrap();
    let mlm = loss_mlm(&net, &mut tape, Some(rows), &masked.map(|m| m.1)).unwrap().unwrap();
    let logits = net.lm_head(&mut tape, h).unwrap();
    let mut targets = vec![None; n];
    for (p, t) in masked {
        targets[p] = Some(t);
    }
    let kcg = loss_kcg(&mut tape, logits, &targets).unwrap();
    assert!((tape.value(mlm).item() - tape.value(kcg).item()).abs() < 1e-12);

    // perturbing logits at unmasked rows leaves the loss alone
    let bump: Vec<f64> = (0..n * vocab().len())
        .map(|i| if masked.iter().any(|m| m.0 == i / vocab().len()) { 0.0 } else { 3.0 })
        .collect();
    let bump = tape.constant(Tensor::new(vec![n, vocab().len()], bump).unwrap());
    let moved = tape.add(logits, bump).unwrap();
    let again = loss_kcg(&mut tape, moved, &targets).unwrap();
    assert!((tape.value(again).item() - tape.value(kcg).item()).abs() < 1e-12);
    assert!(loss_kcg(&mut tape, logits, &vec![None; n]).is_err());
}

#[test]
fn region_modeling_closed_forms() {
    let mut cfg = tiny_config(vocab().len());
    cfg.n_classes = 10;
    let zeros = ModelParams::zeros(&cfg).unwrap();
    let mut tape = Tape::<f64>::new();
    let net = Network::bind(&zeros, &mut tape);
    let h = tape.constant(Tensor::zeros(&[1, 16]));
    let mut one_hot = vec![0.0; 10];
    one_hot[3] = 1.0;
    let p = Tensor::new(vec![1, 10], one_hot).unwrap();
    let l = loss_mrm(&net, &mut tape, Some(h), &p).unwrap().unwrap();
    assert!((tape.value(l).item() - 10f64.ln()).abs() < 1e-12);

    // q = p when the output bias is ln p and everything else is zero
    let p: Vec<f32> = (1..=10).map(|i| i as f32 / 55.0).collect();
    let mut params = zeros.clone();
    params
        .get_mut("heads.mrm.out.bias")
        .unwrap()
        .data_mut()
        .iter_mut()
        .zip(&p)
        .for_each(|(b, p)| *b = p.ln());
    let mut tape = Tape::<f64>::new();
    let net = Network::bind(&params, &mut tape);
    let h = tape.constant(Tensor::zeros(&[2, 16]));
    let pt = Tensor::new(vec![2, 10], p.iter().chain(&p).map(|&x| x as f64).collect()).unwrap();
    let l = loss_mrm(&net, &mut tape, Some(h), &pt).unwrap().unwrap();
    assert!(tape.value(l).item().abs() < 1e-6);
    assert!(loss_mrm(&net, &mut tape, None, &pt).unwrap().is_none());
}

#[test]
fn combination_examples() {
    let w = LossWeights::default();
    let all = LossTerms {
        kcg: Some(1.0),
        ap: Some(1.0),
        rp: Some(1.0),
        mlm: Some(1.0),
        mrm: Some(1.0),
    };
    assert_eq!(combine_losses(all, w).unwrap().total, 9.0);
    let mlm = LossTerms {
        mlm: Some(2.0),
        ..Default::default()
    };
    assert_eq!(combine_losses(mlm, w).unwrap().total, 10.0);
    let zero = LossWeights {
        kcg: 0.0,
        ap: 0.0,
        rp: 0.0,
        mlm: 0.0,
        mrm: 0.0,
    };
    assert_eq!(combine_losses(all, zero).unwrap().total, 0.0);
    assert!(combine_losses(LossTerms::default(), w).is_err());
}

proptest! {
    #[test]
    fn combination_is_linear_in_each_term(
        terms in prop::array::uniform5(prop::option::of(0.0f32..10.0)),
        k in 0usize..5,
        c in 0.0f32..4.0,
    ) {
        prop_assume!(terms.iter().any(Option::is_some) && terms[k].is_some());
        let mk = |t: [Option<f32>; 5]| LossTerms { kcg: t[0], ap: t[1], rp: t[2], mlm: t[3], mrm: t[4] };
        let w = LossWeights::default();
        let base = combine_losses(mk(terms), w).unwrap();
        let mut bumped = terms;
        bumped[k] = bumped[k].map(|x| x + c);
        let b = combine_losses(mk(bumped), w).unwrap();
        let wk = w.get(Objective::ALL[k]);
        prop_assert!((b.total - base.total - wk * c).abs() <= 1e-4 * (1.0 + b.total.abs()));
        // the total is the f32 sum in objective order
        let mut want = 0.0f32;
        for (i, t) in terms.iter().enumerate() {
            if let Some(v) = t { want += w.get(Objective::ALL[i]) * v; }
        }
        prop_assert_eq!(base.total, want);
    }

    #[test]
    fn mask_plans_are_deterministic_and_stay_on_eligible_positions(
        positions in prop::collection::btree_set(0usize..64, 0..40),
        seed in any::<u64>(),
        n in 0usize..20,
    ) {
        let positions: Vec<usize> = positions.into_iter().collect();
        let a = plan_mlm_mask(&positions, 40, &mut seeded(seed, 3));
        let b = plan_mlm_mask(&positions, 40, &mut seeded(seed, 3));
        prop_assert_eq!(&a, &b);
        prop_assert!(a.tokens.iter().all(|t| positions.contains(&t.position)));
        let r = plan_mrm_mask(n, &mut seeded(seed, 3));
        prop_assert_eq!(&r, &plan_mrm_mask(n, &mut seeded(seed, 3)));
        prop_assert!(r.regions.iter().all(|&i| i < n));
    }
}

#[test]
fn no_regions_means_empty_plan() {
    assert_eq!(plan_mrm_mask(0, &mut seeded(0, 3)), MaskPlan::default());
}

/// The plan for a fixed 20-token sequence is pinned to a committed trace.
/// Regenerate with `VISCOM_REGEN_FIXTURES=1` only when the draw order
/// changes on purpose.
#[test]
fn mlm_plan_matches_committed_trace() {
    let positions: Vec<usize> = (5..25).collect();
    let plans: Vec<MaskPlan> = (0..8).map(|s| plan_mlm_mask(&positions, 30, &mut seeded(s, 3))).collect();
    let path = fixture("mlm_plan_trace.json");
    let text = serde_json::to_string_pretty(&plans).unwrap() + "\n";
    if std::env::var_os("VISCOM_REGEN_FIXTURES").is_some() {
        std::fs::write(&path, &text).unwrap();
    }
    let want: Vec<MaskPlan> = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(plans, want);
    assert!(plans.iter().map(|p| p.tokens.len()).sum::<usize>() > 0);
}

#[test]
fn masking_rates_and_special_tokens() {
    let s = common::masking_stats(100_000, 1);
    let rate = s.mlm_masked as f64 / s.mlm_units as f64;
    assert!((0.14..=0.16).contains(&rate), "mlm rate {rate}");
    let m = s.mlm_masked as f64;
    assert!((s.mask as f64 / m - 0.8).abs() <= 0.02);
    assert!((s.random as f64 / m - 0.1).abs() <= 0.02);
    assert!((s.keep as f64 / m - 0.1).abs() <= 0.02);
    let rrate = s.mrm_masked as f64 / s.mrm_units as f64;
    assert!((0.14..=0.16).contains(&rrate), "mrm rate {rrate}");
    assert_eq!(s.special_masked, 0);
    assert_eq!(s.special_drawn, 0);
}

fn step_config(cfg: &ModelConfig) -> RunConfig {
    let mut rc = RunConfig::preset(Preset::Desk, Stage::Pretrain);
    rc.model = cfg.clone();
    rc.optimizer.lr = 1e-3;
    rc
}

fn synthetic_items(cfg: &ModelConfig, v: &Vocabulary, objectives: &[Objective], seed: u64) -> Vec<BatchItem> {
    let mut rng = seeded(seed, 0);
    let words = ["a", "dog", "sits", "near", "the", "red", "ball"];
    (0..4)
        .map(|i| {
            let n = 1 + i % 3;
            let text: Vec<&str> = (0..3 + i).map(|k| words[(k * 3 + i) % words.len()]).collect();
            let task = if objectives.contains(&Objective::Kcg) { TaskType::After } else { TaskType::Caption };
            let mut e = example(task, Some("he wants"), &text.join(" "), (0..n).map(|_| random_roi(&mut rng, 4, 5)).collect());
            e.attributes = (0..n).map(|r| (r, (r + i) % cfg.n_attr)).collect();
            if n > 1 {
                e.relations = vec![(0, 1, i % cfg.n_rel)];
            }
            let input = (0..50)
                .map(|_| assemble_input(&e, v, objectives, true, cfg.max_positions, &mut rng).unwrap())
                .find(|a| !objectives.contains(&Objective::Mlm) || !a.mlm.is_empty())
                .unwrap();
            BatchItem { example: e, input }
        })
        .collect()
}

fn eval_total(params: &ModelParams, groups: &[Group]) -> f64 {
    let mut tape = Tape::<f64>::new();
    let net = Network::bind(params, &mut tape);
    let mut total = 0.0;
    for g in groups {
        let lv = batch_losses(&net, &mut tape, &g.items, &g.objectives, &mut seeded(0, 0)).unwrap();
        let t = lv.combine(&mut tape, &LossWeights::default()).unwrap();
        total += tape.value(t).item();
    }
    total
}

#[test]
fn one_small_step_lowers_the_combined_loss() {
    let v = vocab();
    let cfg = tiny_config(v.len());
    for seed in 0..5 {
        let rc = step_config(&cfg);
        let params = ModelParams::init(&cfg, viscom::model::InitScheme::Normal, seed).unwrap();
        let groups = vec![
            Group {
                objectives: vec![Objective::Kcg],
                items: synthetic_items(&cfg, &v, &[Objective::Kcg], seed),
            },
            Group {
                objectives: vec![Objective::Mlm, Objective::Mrm],
                items: synthetic_items(&cfg, &v, &[Objective::Mlm, Objective::Mrm], seed),
            },
            Group {
                objectives: vec![Objective::Ap, Objective::Rp],
                items: synthetic_items(&cfg, &v, &[Objective::Ap, Objective::Rp], seed),
            },
        ];
        let before = eval_total(&params, &groups);
        let mut t = Trainer::new(&rc, &v, params).unwrap();
        t.step(&groups).unwrap().unwrap();
        let after = eval_total(&t.params, &groups);
        assert!(after < before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn batch_padding_does_not_change_losses() {
    let v = vocab();
    let cfg = tiny_config(v.len());
    let params = random_params(&cfg, 21);
    for objectives in [vec![Objective::Kcg], vec![Objective::Mlm, Objective::Mrm], vec![Objective::Ap, Objective::Rp]] {
        let items = synthetic_items(&cfg, &v, &objectives, 21);
        // singleton batches: per-item unit counts and losses
        let mut sums = std::collections::BTreeMap::<Objective, (f64, f64)>::new();
        for b in make_batches(items.clone(), 1, 0, 0, false) {
            let mut tape = Tape::<f64>::new();
            let net = Network::bind(&params, &mut tape);
            let lv = batch_losses(&net, &mut tape, &b.items, &objectives, &mut seeded(0, 0)).unwrap();
            let it = &b.items[0];
            for &o in &objectives {
                let units = match o {
                    Objective::Kcg => it.input.dec_targets.iter().flatten().count(),
                    Objective::Mlm => it.input.mlm.len(),
                    Objective::Mrm => it.input.mrm_regions.len(),
                    Objective::Ap => it.example.attributes.len(),
                    Objective::Rp => it.example.relations.len(),
                } as f64;
                if let Some(l) = lv.get(o) {
                    let e = sums.entry(o).or_default();
                    e.0 += tape.value(l).item() * units;
                    e.1 += units;
                }
            }
        }
        let batch = make_batches(items, 4, 0, 0, false).remove(0);
        assert!(batch.items.iter().any(|i| !i.input.enc_valid.iter().all(|&x| x)), "some padding expected");
        let mut tape = Tape::<f64>::new();
        let net = Network::bind(&params, &mut tape);
        let lv = batch_losses(&net, &mut tape, &batch.items, &objectives, &mut seeded(0, 0)).unwrap();
        for (o, (sum, n)) in sums {
            let got = tape.value(lv.get(o).unwrap()).item();
            assert!((got - sum / n).abs() < 1e-4, "{o}: padded {got} vs singleton {}", sum / n);
        }
    }
}
