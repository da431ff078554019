use crate::agent::best_response_node;
use crate::diffrank::{dr_gini_node, dr_ndcg_node, RelaxConfig};
use crate::grad::{Gradients, Tape, Var};
use crate::linalg::{self, Matrix};
use crate::simulator::{RelevanceModel, TapeModel};
use crate::types::{GroundTruthPref, HyperParams, ItemFeatures, UserRep};
use crate::Result;

/// Which training objective a user's loss term uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossVariant {
    /// Relaxed NDCG on current items plus λ·relaxed Gini on the items'
    /// anticipated best responses.
    AgentBased,
    /// Both terms on current items.
    NonAgent,
    /// Relaxed NDCG only.
    AccuracyOnly,
}

/// Read-only data every loss term needs. `users` is the snapshot taken at the
/// start of the batch; it supplies the audience means of the agent path.
pub struct LossContext<'a> {
    pub items: &'a [ItemFeatures],
    pub users: &'a [UserRep],
    pub audiences: &'a [Vec<usize>],
    pub prefs: &'a [GroundTruthPref],
    pub model: &'a RelevanceModel,
    pub hyper: &'a HyperParams,
}

impl LossContext<'_> {
    fn ndcg_cfg(&self) -> RelaxConfig {
        RelaxConfig {
            k: self.hyper.k,
            tau: self.hyper.tau1,
            sinkhorn_iters: self.hyper.sinkhorn_iters,
        }
    }

    fn gini_cfg(&self) -> RelaxConfig {
        RelaxConfig {
            k: self.hyper.k,
            tau: self.hyper.tau2,
            sinkhorn_iters: self.hyper.sinkhorn_iters,
        }
    }

    /// Anticipated features of item `j` as a tape node. The audience mean
    /// carries gradient to every audience member unless `detach_agent` is set;
    /// degenerate responses fall back to the current features.
    fn anticipated_item(&self, tape: &mut Tape, j: usize, user: usize, u: Var) -> Var {
        let x = &self.items[j].x;
        let members = &self.audiences[j];
        let own = tape.value(u).data.clone();
        let values: Vec<&[f64]> = members
            .iter()
            .map(|&m| if m == user { own.as_slice() } else { self.users[m].u.as_slice() })
            .collect();
        let d = x.len();
        let mut mean = vec![0.0; d];
        for v in &values {
            mean.iter_mut().zip(v.iter()).for_each(|(a, b)| *a += b);
        }
        mean.iter_mut().for_each(|a| *a /= members.len() as f64);
        let Some(w_hat) = linalg::normalized(&mean, crate::agent::DEGENERATE_NORM) else {
            return tape.const_vec(x);
        };
        let v: Vec<f64> = w_hat.iter().zip(x).map(|(w, xi)| w + 2.0 * self.hyper.alpha * xi).collect();
        if linalg::norm(&v) < crate::agent::DEGENERATE_NORM {
            return tape.const_vec(x);
        }
        let mean_node = if self.hyper.detach_agent {
            tape.const_vec(&mean)
        } else {
            tape.param_mean(members, &values)
        };
        best_response_node(tape, x, mean_node, self.hyper.alpha)
    }
}

/// Records the negated objective of one user on `tape`:
/// `-(DR-NDCG@k(τ₁) + λ·DR-Gini@k(τ₂))`, with the Gini term on anticipated
/// items for [`LossVariant::AgentBased`]. `u` is the user's representation
/// node (parameter id = user index); `subset` lists the item ids trained on.
pub fn user_loss(
    tape: &mut Tape,
    ctx: &LossContext,
    user: usize,
    u: Var,
    subset: &[usize],
    variant: LossVariant,
) -> Result<Var> {
    let u_star = &ctx.prefs[user].u_star;
    let rows: Vec<Vec<f64>> = subset.iter().map(|&j| ctx.items[j].x.clone()).collect();
    let r_true: Vec<f64> = rows
        .iter()
        .map(|x| ctx.model.score_pair(x, u_star))
        .collect::<Result<_>>()?;
    let x_mat = tape.constant(Matrix::from_rows(&rows));
    let pred = tape.matvec(x_mat, u);
    let ndcg = dr_ndcg_node(tape, pred, &r_true, ctx.ndcg_cfg());

    let lambda = ctx.hyper.lambda;
    let objective = match variant {
        LossVariant::AccuracyOnly => ndcg,
        _ if lambda == 0.0 => ndcg,
        LossVariant::NonAgent => {
            let rel = tape.const_vec(&r_true);
            let gini = dr_gini_node(tape, pred, rel, ctx.gini_cfg());
            let gini = tape.scale(gini, lambda);
            tape.add(ndcg, gini)
        }
        LossVariant::AgentBased => {
            let moved: Vec<Var> = subset.iter().map(|&j| ctx.anticipated_item(tape, j, user, u)).collect();
            let net = TapeModel::new(tape, ctx.model);
            let rel = net.forward_many(tape, &moved, u_star);
            let moved_mat = tape.stack_rows(&moved);
            let moved_pred = tape.matvec(moved_mat, u);
            let gini = dr_gini_node(tape, moved_pred, rel, ctx.gini_cfg());
            let gini = tape.scale(gini, lambda);
            tape.add(ndcg, gini)
        }
    };
    Ok(tape.scale(objective, -1.0))
}

/// Loss value and gradients of one user's term.
pub fn user_loss_and_grad(
    ctx: &LossContext,
    user: usize,
    subset: &[usize],
    variant: LossVariant,
) -> Result<(f64, Gradients)> {
    let mut tape = Tape::new();
    let u = tape.param(user, &ctx.users[user].u);
    let loss = user_loss(&mut tape, ctx, user, u, subset, variant)?;
    let grads = tape.backward(loss)?;
    Ok((tape.scalar(loss), grads))
}
