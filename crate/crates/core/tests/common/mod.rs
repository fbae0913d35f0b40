//! Straight-line scalar reference implementations, written against plain
//! slices so they share no code with the library.

#![allow(dead_code)]

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..a.len() {
        out.push(a[i] - b[i]);
    }
    out
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let c = dot / (na.sqrt() * nb.sqrt());
    c.clamp(-1.0, 1.0)
}

pub fn scaled(a: &[f64], b: &[f64]) -> f64 {
    (cosine(a, b) + 1.0) / 2.0
}

/// Vanilla gossip merge: returns the new parameters and experience.
pub fn gossip_merge(theta: &[f64], mu: f64, remote: &[f64], mu_remote: f64) -> (Vec<f64>, f64) {
    let alpha = if mu + mu_remote == 0.0 {
        0.0
    } else {
        mu_remote / (mu + mu_remote)
    };
    let mut out = Vec::new();
    for i in 0..theta.len() {
        out.push((1.0 - alpha) * theta[i] + alpha * remote[i]);
    }
    (out, if mu > mu_remote { mu } else { mu_remote })
}

/// Experience influence against a table of (client, experience) entries
/// after the sender's entry has been written.
pub fn influence(table: &[(usize, f64)], sender: usize, mu_remote: f64) -> f64 {
    let mut total = 0.0;
    let mut seen = false;
    for &(id, mu) in table {
        if id == sender {
            total += mu_remote;
            seen = true;
        } else {
            total += mu;
        }
    }
    if !seen {
        total += mu_remote;
    }
    if total == 0.0 {
        0.0
    } else {
        mu_remote / total
    }
}

pub fn omega(s: f64) -> f64 {
    s / (1.0 + s)
}

pub fn eta(alpha: f64, s: f64) -> f64 {
    let w = omega(s);
    let top = alpha * w;
    let bottom = (1.0 - alpha) * (1.0 - w) + alpha * w;
    if bottom == 0.0 {
        0.0
    } else {
        top / bottom
    }
}

pub struct ChismeOut {
    pub theta: Vec<f64>,
    pub mu: f64,
    pub table: Vec<(usize, f64)>,
    pub alpha: f64,
    pub s: f64,
    pub eta: f64,
}

/// Full Chisme receive step for client `me`.
#[allow(clippy::too_many_arguments)]
pub fn chisme_receive(
    me: usize,
    theta: &[f64],
    checkpoint: &[f64],
    mu: f64,
    table: &[(usize, f64)],
    sender: usize,
    remote: &[f64],
    mu_remote: f64,
) -> ChismeOut {
    let alpha = influence(table, sender, mu_remote);
    let own = sub(theta, checkpoint);
    let theirs = sub(remote, checkpoint);
    let s = scaled(&own, &theirs);
    let e = eta(alpha, s);
    let mut out = Vec::new();
    for i in 0..theta.len() {
        out.push((1.0 - e) * theta[i] + e * remote[i]);
    }
    let new_mu = (1.0 - e) * mu + e * mu_remote;
    let mut new_table: Vec<(usize, f64)> = table
        .iter()
        .copied()
        .filter(|&(id, _)| id != sender && id != me)
        .collect();
    new_table.push((sender, mu_remote));
    new_table.push((me, new_mu));
    new_table.sort_by_key(|&(id, _)| id);
    ChismeOut {
        theta: out,
        mu: new_mu,
        table: new_table,
        alpha,
        s,
        eta: e,
    }
}

/// Size-weighted mean of `(params, size)` pairs.
pub fn weighted_average(items: &[(Vec<f64>, f64)]) -> Vec<f64> {
    let mut total = 0.0;
    for (_, w) in items {
        total += w;
    }
    let mut out = vec![0.0; items[0].0.len()];
    for (v, w) in items {
        for i in 0..out.len() {
            out[i] += w / total * v[i];
        }
    }
    out
}

/// Similarity-weighted aggregation with our own weight fixed at `|D_i|`.
pub fn cossim_dfl(checkpoint: &[f64], own: &[f64], own_size: f64, others: &[(Vec<f64>, f64)]) -> Vec<f64> {
    let own_delta = sub(own, checkpoint);
    let mut items = vec![(own.to_vec(), own_size)];
    for (v, size) in others {
        let w = scaled(&own_delta, &sub(v, checkpoint));
        items.push((v.clone(), size * w));
    }
    let mut total = 0.0;
    for (_, w) in &items {
        total += w;
    }
    if total == 0.0 {
        return own.to_vec();
    }
    weighted_average(&items)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..a.len() {
        m = m.max((a[i] - b[i]).abs());
    }
    m
}
