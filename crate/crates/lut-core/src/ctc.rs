//! Alignment-free transcription supervision. A length-T frame sequence emits a
//! distribution over `V` labels plus a blank at every frame; the loss is the
//! negative log marginal probability of the target under the collapse mapping
//! (merge consecutive duplicates, then drop blanks). The marginal is computed
//! by the standard two/three-transition lattice recursion, entirely in log
//! space, built out of tape operations so the gradient comes from the same
//! reverse pass as everything else. A path-enumeration oracle provides the
//! ground truth for tests.
//!
//! Blank is always label id 0; real labels are `1..width`.

use crate::error::{LutError, Result};
use crate::graph::{log_add_exp, Graph, NodeId};
use crate::tensor::Tensor;
use std::collections::HashMap;

pub const BLANK: usize = 0;

/// Merge consecutive duplicate labels, then remove blanks.
pub fn collapse(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(path.len());
    let mut prev = None;
    for &p in path {
        if Some(p) != prev {
            if p != BLANK {
                out.push(p);
            }
            prev = Some(p);
        }
    }
    out
}

/// Minimum number of frames needed for any path to collapse to `z`.
pub fn min_frames(z: &[usize]) -> usize {
    let dups = z.windows(2).filter(|w| w[0] == w[1]).count();
    z.len() + dups
}

fn validate_target(width: usize, z: &[usize]) -> Result<()> {
    if let Some(&bad) = z.iter().find(|&&t| t == BLANK || t >= width) {
        return Err(LutError::shape(
            "ctc",
            format!("target label {bad} outside 1..{width}"),
        ));
    }
    Ok(())
}

/// Negative log probability that the emissions `log_probs` (a `[t, width]`
/// node, blank in column 0) collapse to `z`, as a differentiable scalar node.
///
/// Errors with an infeasible-alignment error when no path of length `t` can
/// produce `z`.
pub fn ctc_loss(g: &mut Graph, log_probs: NodeId, z: &[usize]) -> Result<NodeId> {
    let (t_x, width) = match g.shape(log_probs) {
        [t, w] if *w >= 2 => (*t, *w),
        s => {
            return Err(LutError::shape(
                "ctc_loss",
                format!("log_probs must be [t, width>=2], got {s:?}"),
            ))
        }
    };
    validate_target(width, z)?;
    if t_x == 0 {
        return Err(LutError::EmptyInput("ctc_loss over zero frames"));
    }
    let required = min_frames(z);
    if t_x < required {
        return Err(LutError::CtcInfeasible { frames: t_x, required });
    }

    // expanded target [blk, z1, blk, z2, ..., blk]
    let l = 2 * z.len() + 1;
    let labels: Vec<usize> = (0..l)
        .map(|s| if s % 2 == 0 { BLANK } else { z[s / 2] })
        .collect();

    let neg_inf = f64::NEG_INFINITY;
    let emit_at = |g: &mut Graph, t: usize| -> Result<NodeId> {
        let idx: Vec<i64> = labels.iter().map(|&lab| (t * width + lab) as i64).collect();
        g.gather(log_probs, idx, 0.0)
    };

    // alpha at frame 0: only the first blank and the first real label can start
    let mut init = vec![neg_inf; l];
    init[0] = 0.0;
    if l > 1 {
        init[1] = 0.0;
    }
    let init = g.constant_from(vec![l], init);
    let e0 = emit_at(g, 0)?;
    let mut alpha = g.add(e0, init)?;

    // transition index maps, fixed across frames
    let shift1: Vec<i64> = (0..l).map(|s| s as i64 - 1).collect();
    let shift2: Vec<i64> = (0..l)
        .map(|s| {
            if s >= 2 && labels[s] != BLANK && labels[s] != labels[s - 2] {
                s as i64 - 2
            } else {
                -1
            }
        })
        .collect();

    for t in 1..t_x {
        let stay = alpha;
        let s1 = g.gather(alpha, shift1.clone(), neg_inf)?;
        let s2 = g.gather(alpha, shift2.clone(), neg_inf)?;
        let two = g.logaddexp(stay, s1)?;
        let three = g.logaddexp(two, s2)?;
        let emit = emit_at(g, t)?;
        alpha = g.add(three, emit)?;
    }

    let total = if l >= 2 {
        let last_two = g.gather(alpha, vec![l as i64 - 1, l as i64 - 2], neg_inf)?;
        let a = g.gather(last_two, vec![0], neg_inf)?;
        let b = g.gather(last_two, vec![1], neg_inf)?;
        g.logaddexp(a, b)?
    } else {
        g.gather(alpha, vec![0], neg_inf)?
    };
    let total = g.reshape(total, vec![])?;
    Ok(g.scale(total, -1.0))
}

/// Convenience wrapper: evaluate [`ctc_loss`] on plain values.
pub fn ctc_loss_value(log_probs: &Tensor, z: &[usize]) -> Result<f64> {
    let mut g = Graph::new();
    let lp = g.constant(log_probs);
    let loss = ctc_loss(&mut g, lp, z)?;
    Ok(g.scalar_value(loss))
}

fn brute_force_guard(t_x: usize, width: usize) -> Result<()> {
    let paths = (width as f64).powi(t_x as i32);
    if paths > 1e7 {
        return Err(LutError::Config(format!(
            "brute-force enumeration refused: {width}^{t_x} = {paths:.3e} paths exceeds 1e7"
        )));
    }
    Ok(())
}

/// Enumerate every raw path and return the total log-probability of each
/// collapsed label sequence. Guarded to at most 1e7 paths.
pub fn ctc_brute_force_all(log_probs: &Tensor) -> Result<HashMap<Vec<usize>, f64>> {
    let (t_x, width) = log_probs.dims2("ctc_brute_force")?;
    brute_force_guard(t_x, width)?;
    let mut map: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut path = vec![0usize; t_x];
    fn rec(
        log_probs: &Tensor,
        t_x: usize,
        width: usize,
        t: usize,
        logp: f64,
        path: &mut Vec<usize>,
        map: &mut HashMap<Vec<usize>, f64>,
    ) {
        if t == t_x {
            let key = collapse(path);
            let slot = map.entry(key).or_insert(f64::NEG_INFINITY);
            *slot = log_add_exp(*slot, logp);
            return;
        }
        for lab in 0..width {
            path[t] = lab;
            rec(log_probs, t_x, width, t + 1, logp + log_probs.row(t)[lab], path, map);
        }
    }
    rec(log_probs, t_x, width, 0, 0.0, &mut path, &mut map);
    Ok(map)
}

/// Oracle loss by explicit enumeration: `-log` of the summed probability of
/// all paths collapsing to `z`. Returns `+inf` when no path produces `z`.
pub fn ctc_brute_force(log_probs: &Tensor, z: &[usize]) -> Result<f64> {
    let (_, width) = log_probs.dims2("ctc_brute_force")?;
    validate_target(width, z)?;
    let map = ctc_brute_force_all(log_probs)?;
    Ok(map.get(z).map(|&lp| -lp).unwrap_or(f64::INFINITY))
}

/// Per-frame argmax (lowest label id wins ties) followed by [`collapse`].
pub fn ctc_greedy_decode(log_probs: &Tensor) -> Result<Vec<usize>> {
    let (t_x, width) = log_probs.dims2("ctc_greedy_decode")?;
    let mut path = Vec::with_capacity(t_x);
    for t in 0..t_x {
        let row = log_probs.row(t);
        let mut best = 0usize;
        for j in 1..width {
            if row[j] > row[best] {
                best = j;
            }
        }
        path.push(best);
    }
    Ok(collapse(&path))
}
