use super::{Algorithm, EcosystemGraph, RiskError, ScoreConfig, ScoreKind, ScoreVector};

/// PageRank by synchronous power iteration, starting from `1/N` everywhere.
///
/// `PagerankStandard`: `x'[u] = (1-d)/N + d * (sum_{v->u} x[v] w(v,u) / W(v) + D/N)`
/// where `W(v)` is the total out-weight of `v` on the configured channel and
/// `D` is the mass sitting on nodes with `W(v) = 0`.
///
/// `PagerankLiteral`: `x'[u] = sum_{v->u} d * x[v] / outdeg(v)`, weights
/// ignored and no teleport. Mass leaks every sweep, so the iteration decays
/// to the zero vector.
///
/// Stops once the largest per-node change is `<= epsilon`. Hitting
/// `max_iterations` first is reported via `converged = false`.
pub fn pagerank(graph: &EcosystemGraph, config: &ScoreConfig) -> Result<ScoreVector, RiskError> {
    config.validate()?;
    let n = graph.node_count();
    if n == 0 {
        return Err(RiskError::EmptyGraph);
    }
    let literal = match config.algorithm {
        Algorithm::PagerankStandard => false,
        Algorithm::PagerankLiteral => true,
        other => return Err(RiskError::WrongAlgorithm(other)),
    };
    let d = config.damping;
    let channel = config.channel;

    // Per-edge transition share out of its source.
    let shares: Vec<f64> = if literal {
        graph
            .edges()
            .iter()
            .map(|e| 1.0 / graph.out_edges(e.source).len() as f64)
            .collect()
    } else {
        let out_weight: Vec<f64> = (0..n)
            .map(|v| graph.out_edges(v).iter().map(|&e| graph.edge(e).weight(channel)).sum())
            .collect();
        graph
            .edges()
            .iter()
            .map(|e| {
                let total = out_weight[e.source];
                if total > 0.0 {
                    e.weight(channel) / total
                } else {
                    0.0
                }
            })
            .collect()
    };
    let dangling: Vec<usize> = if literal {
        Vec::new()
    } else {
        (0..n)
            .filter(|&v| graph.out_edges(v).iter().all(|&e| graph.edge(e).weight(channel) <= 0.0))
            .collect()
    };

    let mut scores = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iterations {
        let base = if literal {
            0.0
        } else {
            let dangling_mass: f64 = dangling.iter().map(|&v| scores[v]).sum();
            (1.0 - d) / n as f64 + d * dangling_mass / n as f64
        };
        for (u, slot) in next.iter_mut().enumerate() {
            let inflow: f64 = graph
                .in_edges(u)
                .iter()
                .map(|&e| scores[graph.edge(e).source] * shares[e])
                .sum();
            *slot = base + d * inflow;
        }
        iterations += 1;
        let delta = scores
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut scores, &mut next);
        if delta <= config.epsilon {
            converged = true;
            break;
        }
    }

    let kind = if literal {
        ScoreKind::PagerankLiteral
    } else {
        ScoreKind::PagerankStandard
    };
    Ok(ScoreVector::from_dense(graph, &scores, kind, channel, iterations, converged))
}
