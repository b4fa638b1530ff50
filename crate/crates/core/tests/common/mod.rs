//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use hdbn::dataset::synth::{synth_generate, SynthConfig, SynthTruth};
use hdbn::experiment::{assign_groups, new_model, prepare, Prepared};
use hdbn::mood_model::{BnnPosterior, GroupBnnSet};
use hdbn::numerics::{grad_check_at, GradCheckReport, Rng};
use hdbn::recommender::{objective, BatchNoise, HdbnModel, HyperParams, ObjectiveWeights, Tuple};

/// `∫ q log(q/p)` for one dimension by the trapezoid rule over `μ_q ± 10σ_q`.
pub fn kl_quadrature_1d(qm: f64, qs: f64, pm: f64, ps: f64) -> f64 {
    const N: usize = 20_000;
    let (lo, hi) = (qm - 10.0 * qs, qm + 10.0 * qs);
    let h = (hi - lo) / N as f64;
    let log_pdf = |x: f64, m: f64, s: f64| -0.5 * ((x - m) / s).powi(2) - s.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
    let f = |x: f64| {
        let lq = log_pdf(x, qm, qs);
        lq.exp() * (lq - log_pdf(x, pm, ps))
    };
    let mut acc = 0.5 * (f(lo) + f(hi));
    for i in 1..N {
        acc += f(lo + i as f64 * h);
    }
    acc * h
}

pub fn gaussian_kl_quadrature(qm: &[f64], qs: &[f64], pm: &[f64], ps: &[f64]) -> f64 {
    (0..qm.len()).map(|i| kl_quadrature_1d(qm[i], qs[i], pm[i], ps[i])).sum()
}

/// `Σ o_i ln o_i − Σ o_i ln l_i` with `0 ln 0 = 0`.
pub fn categorical_kl_sum(o: &[f64], l: &[f64]) -> f64 {
    let mut entropy = 0.0;
    let mut cross = 0.0;
    for (&oi, &li) in o.iter().zip(l) {
        if oi > 0.0 {
            entropy += oi * oi.ln();
            cross += oi * li.ln();
        }
    }
    entropy - cross
}

pub fn random_simplex(rng: &mut Rng, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| (2.0 * rng.normal()).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// `[HR, Precision, NDCG, MRR]@t` by scanning a ranked list: DCG with one
/// relevant item, reciprocal rank truncated at `t`.
pub fn scan_metrics(list: &[usize], target: usize, t: usize) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (i, &v) in list.iter().enumerate().take(t) {
        if v == target {
            out[0] = 1.0;
            out[1] = 1.0 / t as f64;
            out[2] = 1.0 / ((i + 2) as f64).log2();
            out[3] = 1.0 / (i + 1) as f64;
        }
    }
    out
}

/// Candidates sorted by descending score, ties to the lower id.
pub fn sort_candidates(scores: &[f64], candidates: &[usize]) -> Vec<usize> {
    let mut c = candidates.to_vec();
    c.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    c
}

pub fn synth(config: SynthConfig, latent_dim: usize, seed: u64) -> (Prepared, SynthTruth) {
    let (ds, truth) = synth_generate(&config, seed).unwrap();
    (prepare(ds, latent_dim, seed).unwrap(), truth)
}

/// A small model whose every parameter carries gradient: perturbed LED heads,
/// non-trivial embeddings and distinct group networks.
pub fn objective_fixture(hp: HyperParams, seed: u64) -> (Prepared, HdbnModel) {
    let cfg = SynthConfig {
        users: 40,
        music: 30,
        groups: 3,
        genres: 3,
        records_per_user: 8,
        ..SynthConfig::default()
    };
    let (p, _) = synth(cfg, hp.latent_dim, seed);
    let groups = assign_groups(&p, hp.groups, seed).unwrap();
    let mut rng = Rng::new(seed).substream("fixture");
    let global = BnnPosterior::new(hp.latent_dim, &mut rng);
    let mut bnns = GroupBnnSet::shared(global, hp.groups);
    for net in bnns.groups.iter_mut().chain(std::iter::once(&mut bnns.global)) {
        for m in net.mu_mut() {
            *m += 0.05 * rng.normal();
        }
        for r in net.rho_mut() {
            *r += 0.5 * rng.normal();
        }
    }
    let mut model = new_model(&p, groups, bnns, &hp, seed).unwrap();
    for net in [&mut model.nets.theta1, &mut model.nets.theta2] {
        for x in net.params.iter_mut() {
            *x += 0.1 * rng.normal();
        }
    }
    for x in model.user_emb.iter_mut().chain(model.music_emb.iter_mut()) {
        *x = 0.3 * rng.normal();
    }
    (p, model)
}

/// `n` train tuples whose users all fall in `allowed` groups, each with an
/// unlistened negative.
pub fn batch_from(p: &Prepared, model: &HdbnModel, n: usize, allowed: &[usize], seed: u64) -> Vec<Tuple> {
    let mut rng = Rng::new(seed).substream("batch");
    let mut out = Vec::new();
    for r in &p.split.train {
        if out.len() == n {
            break;
        }
        if !allowed.contains(&model.groups.group_of[r.user]) {
            continue;
        }
        let neg = loop {
            let v = rng.below(p.n_music());
            if !p.split.listened.contains(r.user, v) {
                break v;
            }
        };
        out.push(Tuple {
            user: r.user,
            emotion: r.emotion,
            pos: r.music,
            neg,
        });
    }
    assert_eq!(out.len(), n, "not enough records in the allowed groups");
    out
}

/// Which block of the model a gradient check perturbs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Block {
    Theta1,
    Theta2,
    Phi1,
    Phi2,
    Users,
    Music,
    /// μ and ρ of one mood network slot (groups, then global).
    Bnn(usize),
}

fn slot_net(model: &mut HdbnModel, s: usize) -> &mut BnnPosterior {
    if s == model.bnns.n_groups() {
        &mut model.bnns.global
    } else {
        &mut model.bnns.groups[s]
    }
}

fn read_block(model: &HdbnModel, block: Block, users: &[usize], music: &[usize]) -> Vec<f64> {
    let d = model.emb_dim();
    match block {
        Block::Theta1 => model.nets.theta1.params.clone(),
        Block::Theta2 => model.nets.theta2.params.clone(),
        Block::Phi1 => model.nets.phi1.params.clone(),
        Block::Phi2 => model.nets.phi2.params.clone(),
        Block::Users => users.iter().flat_map(|&u| model.user_emb[u * d..(u + 1) * d].to_vec()).collect(),
        Block::Music => music.iter().flat_map(|&v| model.music_emb[v * d..(v + 1) * d].to_vec()).collect(),
        Block::Bnn(s) => {
            let net = if s == model.bnns.n_groups() { &model.bnns.global } else { &model.bnns.groups[s] };
            let mut p = net.mu().to_vec();
            p.extend_from_slice(net.rho());
            p
        }
    }
}

fn write_block(model: &mut HdbnModel, block: Block, users: &[usize], music: &[usize], p: &[f64]) {
    let d = model.emb_dim();
    match block {
        Block::Theta1 => model.nets.theta1.params.copy_from_slice(p),
        Block::Theta2 => model.nets.theta2.params.copy_from_slice(p),
        Block::Phi1 => model.nets.phi1.params.copy_from_slice(p),
        Block::Phi2 => model.nets.phi2.params.copy_from_slice(p),
        Block::Users => {
            for (j, &u) in users.iter().enumerate() {
                model.user_emb[u * d..(u + 1) * d].copy_from_slice(&p[j * d..(j + 1) * d]);
            }
        }
        Block::Music => {
            for (j, &v) in music.iter().enumerate() {
                model.music_emb[v * d..(v + 1) * d].copy_from_slice(&p[j * d..(j + 1) * d]);
            }
        }
        Block::Bnn(s) => {
            let net = slot_net(model, s);
            let n = net.num_weights();
            net.mu_mut().copy_from_slice(&p[..n]);
            net.rho_mut().copy_from_slice(&p[n..]);
        }
    }
}

fn grad_block(g: &hdbn::recommender::ObjectiveGrads, block: Block, len: usize) -> Vec<f64> {
    match block {
        Block::Theta1 => g.nets.theta1.clone(),
        Block::Theta2 => g.nets.theta2.clone(),
        Block::Phi1 => g.nets.phi1.clone(),
        Block::Phi2 => g.nets.phi2.clone(),
        Block::Users => g.user_grads.concat(),
        Block::Music => g.music_grads.concat(),
        Block::Bnn(s) => match &g.bnn[s] {
            Some(b) => {
                let mut v = b.mu.clone();
                v.extend_from_slice(&b.rho);
                v
            }
            None => vec![0.0; len],
        },
    }
}

/// Central-difference check of one block of the objective's gradient.
/// `sample` caps the number of checked entries; they are drawn without
/// replacement from a seeded stream.
pub fn check_block(
    model: &HdbnModel,
    batch: &[Tuple],
    noise: &BatchNoise,
    w: ObjectiveWeights,
    block: Block,
    sample: Option<usize>,
    step: f64,
) -> GradCheckReport {
    let (_, g0) = objective(model, batch, noise, w).unwrap();
    let (users, music) = (g0.users.clone(), g0.music.clone());
    let params = read_block(model, block, &users, &music);
    let mut idx: Vec<usize> = (0..params.len()).collect();
    if let Some(k) = sample {
        Rng::new(params.len() as u64).substream("coords").shuffle(&mut idx);
        idx.truncate(k);
    }
    let mut m = model.clone();
    grad_check_at(
        |p| {
            write_block(&mut m, block, &users, &music, p);
            let (terms, g) = objective(&m, batch, noise, w).unwrap();
            (terms.total, grad_block(&g, block, p.len()))
        },
        &params,
        step,
        &idx,
    )
}

/// The blocks a batch touches under `w`: every LED net, the batch's users
/// and tracks and, when joint, the mood network slots the batch routes
/// through plus the global network once a mood term is weighted.
pub fn touched_blocks(model: &HdbnModel, batch: &[Tuple], w: &ObjectiveWeights) -> Vec<Block> {
    let mut blocks = vec![Block::Theta1, Block::Theta2, Block::Phi1, Block::Phi2, Block::Users, Block::Music];
    if w.joint {
        let global = model.bnns.n_groups();
        let mut slots: Vec<usize> = batch.iter().map(|t| model.bnn_group(t.user).unwrap_or(global)).collect();
        if w.bnn_global != 0.0 || w.bnn_groups != 0.0 {
            slots.push(global);
        }
        slots.sort_unstable();
        slots.dedup();
        blocks.extend(slots.into_iter().map(Block::Bnn));
    }
    blocks
}
