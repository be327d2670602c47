//! Templated synthetic corpora with class-prototype RoI features.
//!
//! Every image gets 1..=`max_rois` regions. A region's feature is its class
//! prototype plus a scaled attribute prototype plus Gaussian noise; its
//! detector distribution is Dirichlet-distributed and peaked on the true
//! class. Captions name the regions, and the three inference targets depend
//! on the event verb and the first region's class, so they are learnable
//! from the inputs (and better with the event than without).

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use super::MultimodalExample;
use crate::model::{ModelConfig, RoIFeature};
use crate::rng::{seeded, streams, SeededRng};
use crate::vocab::TaskType;

const CLASSES: [&str; 16] = [
    "dog", "cat", "horse", "car", "bike", "cup", "ball", "book", "chair", "phone", "bag", "kite",
    "boat", "cake", "hat", "lamp",
];
const ATTRS: [&str; 8] = ["red", "small", "old", "wooden", "shiny", "green", "large", "striped"];
const RELS: [&str; 8] = ["near", "on", "under", "behind", "beside", "above", "with", "inside"];
const PEOPLE: [&str; 4] = ["a man", "a woman", "a child", "a person"];
/// `(event verb, before, after)`
const VERBS: [(&str, &str, &str); 4] = [
    ("holds", "pick up the", "put down the"),
    ("sees", "walk toward the", "look closely at the"),
    ("finds", "search for the", "keep the"),
    ("carries", "lift the", "set down the"),
];
const WANTS: [&str; 4] = ["feed", "clean", "move", "sell"];
const REACTS: [&str; 2] = ["feel happy", "feel tired"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_images: usize,
    pub max_rois: usize,
    pub d_visual: usize,
    pub n_classes: usize,
    pub n_attr: usize,
    pub n_rel: usize,
    /// Standard deviation of the feature noise.
    pub noise: f32,
    /// Dirichlet concentration on the true class (others get 0.5).
    pub peak: f32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::for_model(&ModelConfig::desk(), 16, 0)
    }
}

impl SynthConfig {
    pub fn for_model(cfg: &ModelConfig, n_images: usize, seed: u64) -> Self {
        Self {
            n_images,
            max_rois: 3,
            d_visual: cfg.d_visual,
            n_classes: cfg.n_classes,
            n_attr: cfg.n_attr,
            n_rel: cfg.n_rel,
            noise: 0.1,
            peak: 8.0,
            seed,
        }
    }
}

fn class_name(c: usize) -> String {
    CLASSES.get(c).map_or_else(|| format!("thing{c}"), |s| s.to_string())
}

fn attr_name(a: usize) -> String {
    ATTRS.get(a).map_or_else(|| format!("kind{a}"), |s| s.to_string())
}

fn rel_name(r: usize) -> String {
    RELS.get(r).map_or_else(|| format!("by{r}"), |s| s.to_string())
}

struct Scene {
    id: String,
    rois: Vec<RoIFeature>,
    classes: Vec<usize>,
    attrs: Vec<usize>,
    person: usize,
    verb: usize,
}

struct Generator {
    cfg: SynthConfig,
    rng: SeededRng,
    class_protos: Vec<Vec<f32>>,
    attr_protos: Vec<Vec<f32>>,
}

impl Generator {
    fn new(cfg: &SynthConfig) -> Self {
        let mut rng = seeded(cfg.seed, streams::SYNTH);
        let std = Normal::new(0.0f32, 1.0).expect("valid normal");
        let mut proto = |n: usize| -> Vec<Vec<f32>> {
            (0..n)
                .map(|_| (0..cfg.d_visual).map(|_| std.sample(&mut rng)).collect())
                .collect()
        };
        let class_protos = proto(cfg.n_classes);
        let attr_protos = proto(cfg.n_attr);
        Self {
            cfg: cfg.clone(),
            rng,
            class_protos,
            attr_protos,
        }
    }

    fn class_probs(&mut self, true_class: usize) -> Vec<f32> {
        let mut draws: Vec<f64> = (0..self.cfg.n_classes)
            .map(|c| {
                let alpha = if c == true_class { self.cfg.peak } else { 0.5 };
                Gamma::new(alpha as f64, 1.0)
                    .expect("positive shape")
                    .sample(&mut self.rng)
                    .max(1e-12)
            })
            .collect();
        let sum: f64 = draws.iter().sum();
        draws.iter_mut().for_each(|d| *d /= sum);
        draws.into_iter().map(|d| d as f32).collect()
    }

    fn scene(&mut self, i: usize) -> Scene {
        let noise = Normal::new(0.0f32, self.cfg.noise.max(0.0)).expect("valid normal");
        let n = self.rng.random_range(1..=self.cfg.max_rois.max(1));
        let mut classes = Vec::with_capacity(n);
        let mut attrs = Vec::with_capacity(n);
        let mut rois = Vec::with_capacity(n);
        for _ in 0..n {
            let c = self.rng.random_range(0..self.cfg.n_classes);
            let a = self.rng.random_range(0..self.cfg.n_attr);
            let feat = (0..self.cfg.d_visual)
                .map(|k| self.class_protos[c][k] + 0.5 * self.attr_protos[a][k] + noise.sample(&mut self.rng))
                .collect();
            let class_probs = self.class_probs(c);
            classes.push(c);
            attrs.push(a);
            rois.push(RoIFeature { feat, class_probs });
        }
        Scene {
            id: format!("img{i:05}"),
            rois,
            classes,
            attrs,
            person: self.rng.random_range(0..PEOPLE.len()),
            verb: self.rng.random_range(0..VERBS.len()),
        }
    }
}

impl Scene {
    fn event(&self) -> String {
        format!("{} {} the {}", PEOPLE[self.person], VERBS[self.verb].0, class_name(self.classes[0]))
    }

    fn relation_label(&self, n_rel: usize) -> usize {
        (self.classes[0] + self.classes[1]) % n_rel
    }

    fn caption(&self, n_rel: usize) -> String {
        let mut s = format!("a {} {}", attr_name(self.attrs[0]), class_name(self.classes[0]));
        if self.classes.len() > 1 {
            s.push_str(&format!(
                " {} a {} {}",
                rel_name(self.relation_label(n_rel)),
                attr_name(self.attrs[1]),
                class_name(self.classes[1])
            ));
        }
        s
    }

    fn inference(&self, task: TaskType) -> String {
        let obj = class_name(self.classes[0]);
        let (_, before, after) = VERBS[self.verb];
        match task {
            TaskType::Before => format!("{before} {obj}"),
            TaskType::After => format!("{after} {obj}"),
            _ => format!("to {} the {obj}", WANTS[(self.classes[0] + self.verb) % WANTS.len()]),
        }
    }

    fn record(&self, task: TaskType, target: String) -> MultimodalExample {
        MultimodalExample {
            task,
            event_text: task.is_generation().then(|| self.event()),
            target_text: target,
            rois: self.rois.clone(),
            attributes: Vec::new(),
            relations: Vec::new(),
            source_id: self.id.clone(),
            relation: None,
        }
    }
}

/// Four records per image: an annotated caption and the three inferences.
pub fn generate_corpus(cfg: &SynthConfig) -> Vec<MultimodalExample> {
    let mut g = Generator::new(cfg);
    let mut out = Vec::with_capacity(cfg.n_images * 4);
    for i in 0..cfg.n_images {
        let s = g.scene(i);
        let mut cap = s.record(TaskType::Caption, s.caption(cfg.n_rel));
        cap.attributes = s.attrs.iter().copied().enumerate().collect();
        if s.classes.len() > 1 {
            cap.relations = vec![(0, 1, s.relation_label(cfg.n_rel))];
        }
        out.push(cap);
        for task in [TaskType::Before, TaskType::After, TaskType::Intent] {
            out.push(s.record(task, s.inference(task)));
        }
    }
    out
}

/// Relation-tagged candidate descriptions, one per relation per image. A
/// `noise_frac` share get a shuffled-word target that a good scorer should
/// reject.
pub fn generate_candidates(cfg: &SynthConfig, noise_frac: f32) -> Vec<MultimodalExample> {
    let mut g = Generator::new(cfg);
    let mut out = Vec::new();
    for i in 0..cfg.n_images {
        let s = g.scene(i);
        for (rel, task) in super::COMET_RELATIONS {
            let mut target = match rel {
                "xWant" => format!("to have the {}", class_name(s.classes[0])),
                "xReact" => REACTS[s.verb % REACTS.len()].to_string(),
                _ => s.inference(task),
            };
            if g.rng.random::<f32>() < noise_frac {
                let mut words: Vec<String> = (0..4)
                    .map(|_| match g.rng.random_range(0..3) {
                        0 => class_name(g.rng.random_range(0..cfg.n_classes)),
                        1 => attr_name(g.rng.random_range(0..cfg.n_attr)),
                        _ => rel_name(g.rng.random_range(0..cfg.n_rel)),
                    })
                    .collect();
                words.dedup();
                target = words.join(" ");
            }
            let mut ex = s.record(task, target);
            ex.relation = Some(rel.to_string());
            out.push(ex);
        }
    }
    out
}

/// Splits off every `k`-th image (by position) as held-out data, keeping all
/// records of an image on the same side.
pub fn split_by_source(examples: &[MultimodalExample], k: usize) -> (Vec<MultimodalExample>, Vec<MultimodalExample>) {
    let mut ids: Vec<&str> = examples.iter().map(|e| e.source_id.as_str()).collect();
    ids.dedup();
    let held: std::collections::BTreeSet<&str> = ids.iter().copied().skip(k.saturating_sub(1)).step_by(k.max(1)).collect();
    examples.iter().cloned().partition(|e| !held.contains(e.source_id.as_str()))
}
