use nalgebra::{DMatrix, DVector, SMatrix, Vector3};

use super::graph::{huber, PoseGraph};
use super::{AlignmentError, AlignmentOptions};
use crate::lie::{alignment_residual_and_jacobians, sim3_manifold_update, Matrix3x7, Sim3Tangent, Vector7};

type Matrix7 = SMatrix<f64, 7, 7>;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationReport {
    /// Total cost before optimization and after every accepted step.
    pub cost_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl OptimizationReport {
    pub fn final_cost(&self) -> f64 {
        *self.cost_trace.last().unwrap_or(&0.0)
    }
}

/// Cost restricted to one component.
struct Component {
    nodes: Vec<usize>,
    /// Free nodes in solve order; `slot[node]` is its block index.
    free: Vec<usize>,
    slot: Vec<Option<usize>>,
    /// Landmarks seen by more than one edge.
    landmarks: Vec<usize>,
}

fn component_cost(graph: &PoseGraph, c: &Component, by_landmark: &[Vec<usize>], opts: &AlignmentOptions) -> f64 {
    let mut cost = 0.0;
    for &j in &c.landmarks {
        for &e in &by_landmark[j] {
            let edge = &graph.edges[e];
            let r = graph.nodes[edge.node].state.group.apply(&edge.local) - graph.landmarks[j].position;
            cost += huber(r.norm(), opts.huber_delta);
        }
    }
    if opts.lambda_a > 0.0 {
        for &n in &c.nodes {
            cost += (opts.lambda_a * graph.nodes[n].state.tangent.mu).powi(2);
        }
    }
    cost
}

/// Levenberg-Marquardt over every component: free submap tangents and
/// merged landmark positions, landmarks eliminated by Schur complement and
/// the reduced system solved by dense Cholesky. Landmarks seen by a single
/// submap are placed at their transformed local position afterwards, which
/// is their exact optimum.
pub fn optimize_graph(graph: &PoseGraph, opts: &AlignmentOptions) -> Result<(PoseGraph, OptimizationReport), AlignmentError> {
    opts.validate()?;
    let mut g = graph.clone();
    let by_landmark = g.edges_by_landmark();
    let mut components: Vec<Component> = (0..g.component_count)
        .map(|_| Component {
            nodes: Vec::new(),
            free: Vec::new(),
            slot: vec![None; g.nodes.len()],
            landmarks: Vec::new(),
        })
        .collect();
    for (n, node) in g.nodes.iter().enumerate() {
        let c = &mut components[node.component];
        c.nodes.push(n);
        if !node.fixed {
            c.slot[n] = Some(c.free.len());
            c.free.push(n);
        }
    }
    for (j, edges) in by_landmark.iter().enumerate() {
        if edges.len() > 1 {
            components[g.nodes[g.edges[edges[0]].node].component].landmarks.push(j);
        }
    }

    let costs: Vec<f64> = components.iter().map(|c| component_cost(&g, c, &by_landmark, opts)).collect();
    let mut total = costs.iter().sum::<f64>() + singleton_cost(&g, &by_landmark, opts);
    let mut trace = vec![total];
    let mut iterations = 0;
    let mut converged = true;
    for (ci, c) in components.iter().enumerate() {
        if c.free.is_empty() {
            continue;
        }
        let (its, ok) = optimize_component(&mut g, c, ci, &by_landmark, opts, costs[ci], &mut total, &mut trace)?;
        iterations += its;
        converged &= ok;
    }
    // Singletons sit exactly on their single observation.
    for (j, edges) in by_landmark.iter().enumerate() {
        if let [e] = edges[..] {
            let edge = g.edges[e];
            g.landmarks[j].position = g.nodes[edge.node].state.group.apply(&edge.local);
        }
    }
    let final_total = evaluate_total(&g, opts);
    if final_total < *trace.last().unwrap() {
        trace.push(final_total);
    }
    Ok((
        g,
        OptimizationReport {
            cost_trace: trace,
            iterations,
            converged,
        },
    ))
}

fn singleton_cost(g: &PoseGraph, by_landmark: &[Vec<usize>], opts: &AlignmentOptions) -> f64 {
    by_landmark
        .iter()
        .enumerate()
        .filter(|(_, e)| e.len() == 1)
        .map(|(j, e)| {
            let edge = &g.edges[e[0]];
            huber((g.nodes[edge.node].state.group.apply(&edge.local) - g.landmarks[j].position).norm(), opts.huber_delta)
        })
        .sum()
}

fn evaluate_total(g: &PoseGraph, opts: &AlignmentOptions) -> f64 {
    super::graph::evaluate_cost(g, opts)
}

#[allow(clippy::too_many_arguments)]
fn optimize_component(
    g: &mut PoseGraph,
    c: &Component,
    ci: usize,
    by_landmark: &[Vec<usize>],
    opts: &AlignmentOptions,
    start: f64,
    total: &mut f64,
    trace: &mut Vec<f64>,
) -> Result<(usize, bool), AlignmentError> {
    let np = c.free.len();
    let mut cost = start;
    let mut damping = 1e-4;
    let delta = opts.huber_delta;
    let lam2 = opts.lambda_a * opts.lambda_a;
    for it in 0..opts.max_iterations {
        if cost <= 0.0 {
            return Ok((it, true));
        }
        // Normal equations with IRLS Huber weights.
        let mut hpp = vec![Matrix7::zeros(); np];
        let mut gp = vec![Vector7::zeros(); np];
        let mut h_l = Vec::with_capacity(c.landmarks.len());
        let mut g_l = Vec::with_capacity(c.landmarks.len());
        // Per landmark: (slot, w·J_pᵀ) for the coupling blocks H_pl = −w J_pᵀ.
        let mut couplings: Vec<Vec<(usize, Matrix3x7)>> = Vec::with_capacity(c.landmarks.len());
        for &j in &c.landmarks {
            let mut a = 0.0;
            let mut gl = Vector3::zeros();
            let mut coup = Vec::new();
            for &e in &by_landmark[j] {
                let edge = &g.edges[e];
                let jac = alignment_residual_and_jacobians(&g.nodes[edge.node].state.group, &edge.local, &g.landmarks[j].position);
                let norm = jac.residual.norm();
                let w = if norm <= delta { 1.0 } else { delta / norm };
                a += w;
                gl -= w * jac.residual;
                if let Some(s) = c.slot[edge.node] {
                    hpp[s] += w * jac.pose.transpose() * jac.pose;
                    gp[s] += w * jac.pose.transpose() * jac.residual;
                    coup.push((s, w * jac.pose));
                }
            }
            h_l.push(a);
            g_l.push(gl);
            couplings.push(coup);
        }
        for (s, &n) in c.free.iter().enumerate() {
            let mu = g.nodes[n].state.tangent.mu;
            if opts.lambda_a > 0.0 {
                hpp[s][(6, 6)] += lam2;
                gp[s][6] += lam2 * mu;
            }
        }

        loop {
            // Reduced system S dp = b.
            let mut s_mat = DMatrix::<f64>::zeros(7 * np, 7 * np);
            let mut b = DVector::<f64>::zeros(7 * np);
            for s in 0..np {
                let mut block = hpp[s];
                for k in 0..7 {
                    block[(k, k)] += damping * block[(k, k)].max(1e-9);
                }
                s_mat.fixed_view_mut::<7, 7>(7 * s, 7 * s).copy_from(&block);
                b.fixed_view_mut::<7, 1>(7 * s, 0).copy_from(&(-gp[s]));
            }
            for (li, coup) in couplings.iter().enumerate() {
                let inv = 1.0 / (h_l[li] * (1.0 + damping));
                for &(s, wj) in coup {
                    // H_pl = −(w J)ᵀ, so H_pl H_ll⁻¹ g_l = −inv (w J)ᵀ g_l.
                    let rhs = -(wj.transpose() * g_l[li]) * inv;
                    let mut bs = b.fixed_view_mut::<7, 1>(7 * s, 0);
                    bs += rhs;
                    for &(t, wk) in coup {
                        let blk = wj.transpose() * wk * inv;
                        let mut v = s_mat.fixed_view_mut::<7, 7>(7 * s, 7 * t);
                        v -= blk;
                    }
                }
            }
            let Some(chol) = s_mat.clone().cholesky() else {
                damping *= 10.0;
                if damping > 1e12 {
                    return Err(AlignmentError::LinearSolve { component: ci });
                }
                continue;
            };
            let dp = chol.solve(&b);

            // Trial state.
            let mut trial = g.clone();
            for (s, &n) in c.free.iter().enumerate() {
                let v = Sim3Tangent::from_vector(&dp.fixed_rows::<7>(7 * s).into_owned());
                trial.nodes[n].state = sim3_manifold_update(&g.nodes[n].state, &v).unwrap_or(g.nodes[n].state);
            }
            for (li, &j) in c.landmarks.iter().enumerate() {
                // dl = H_ll⁻¹ (−g_l − H_lp dp), H_lp = −(w J).
                let mut rhs = -g_l[li];
                for &(s, wj) in &couplings[li] {
                    rhs += wj * dp.fixed_rows::<7>(7 * s);
                }
                trial.landmarks[j].position += rhs / (h_l[li] * (1.0 + damping));
            }
            let new_cost = component_cost(&trial, c, by_landmark, opts);
            if new_cost.is_finite() && new_cost < cost {
                let reduction = (cost - new_cost) / cost;
                *total += new_cost - cost;
                trace.push(*total);
                cost = new_cost;
                *g = trial;
                damping = (damping / 10.0).max(1e-12);
                if reduction < opts.function_tolerance {
                    return Ok((it + 1, true));
                }
                break;
            }
            damping *= 10.0;
            if damping > 1e12 {
                // No further decrease possible from here.
                return Ok((it + 1, true));
            }
        }
    }
    Ok((opts.max_iterations, false))
}
